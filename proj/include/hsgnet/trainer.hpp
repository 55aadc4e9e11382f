#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "hsgnet/evaluator.hpp"
#include "hsgnet/losses.hpp"
#include "hsgnet/network.hpp"

namespace hsg {

// ---------------------------------------------------------------------------
// Learning-rate schedule

enum class DecayMode {
  /// Multiply by 0.1 at each step.
  tenfold,
  /// Multiply by 0.9 at each step (a literal 10% decrease).
  ten_percent,
};

std::string to_string(DecayMode mode);
DecayMode parse_decay_mode(const std::string& text);

/// Linear warm-up from `warmup_start` to `base` over `warmup_epochs`, hold
/// until `hold_until`, then one decay step every `decay_every` epochs
/// counted from `hold_until`. Epochs are 0-based.
struct LrSchedule {
  double warmup_start = 0.001;
  double base = 0.01;
  std::size_t warmup_epochs = 10;
  std::size_t hold_until = 30;
  std::size_t decay_every = 20;
  DecayMode decay = DecayMode::tenfold;

  double lr(std::size_t epoch) const;
  bool operator==(const LrSchedule&) const = default;
};

struct TrainConfig {
  std::size_t epochs = 30;
  LrSchedule schedule{};
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t p = 8;  // identities per batch
  std::size_t k = 4;  // instances per identity
  bool flip_augment = true;
  /// Evaluate on probe/gallery every this many epochs (0 disables).
  std::size_t eval_every = 1;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Synthetic re-identification data

struct SyntheticReidSpec {
  std::size_t train_identities = 16;
  std::size_t test_identities = 8;
  std::size_t images_per_identity = 8;
  std::size_t height = 32;
  std::size_t width = 16;
  /// Brightness multiplier drawn from [1 - illumination, 1 + illumination].
  double illumination = 0.2;
  double flip_probability = 0.5;
  /// Standard deviation of additive Gaussian pixel noise.
  double noise = 0.05;

  void validate() const;
  bool operator==(const SyntheticReidSpec&) const = default;
};

/// Images are N x H x W x 3; labels are identity indices local to the split
/// (train labels 0..train_identities-1; probe and gallery share ids).
struct ImageSet {
  Tensor images;
  std::vector<std::size_t> labels;
  std::size_t size() const { return labels.size(); }
};

struct ReidDataset {
  ImageSet train;
  ImageSet probe;
  ImageSet gallery;
};

/// Deterministic given (spec, seed). Train and test identities are disjoint;
/// every image of an identity shares its latent appearance and differs only
/// by nuisance draws. One random image per test identity forms the probe
/// set, the remaining test images form the gallery.
ReidDataset generate_dataset(const SyntheticReidSpec& spec, std::uint64_t seed);

/// Copies the given rows of an image set.
ImageSet gather(const ImageSet& set, const std::vector<std::size_t>& rows);

// ---------------------------------------------------------------------------
// PK sampling

struct PKBatch {
  std::vector<std::size_t> indices;  // rows into the training set
  std::vector<std::size_t> labels;
};

/// Splits each identity's images into shuffled groups of K (re-drawing with
/// replacement when an identity has fewer than K) and fills batches with P
/// distinct identities, always preferring identities with the most unused
/// groups. Every identity appears at least once per epoch.
class PkSampler {
 public:
  PkSampler(std::vector<std::size_t> labels, std::size_t p, std::size_t k);
  std::vector<PKBatch> epoch(std::mt19937_64& rng) const;

 private:
  std::vector<std::size_t> labels_;
  std::vector<std::vector<std::size_t>> by_identity_;
  std::size_t p_;
  std::size_t k_;
};

// ---------------------------------------------------------------------------
// Optimisation

/// SGD with momentum: v = momentum * v + (g + wd * w), w -= lr * v.
/// Weight decay only touches parameters flagged for it.
class Sgd {
 public:
  Sgd(std::vector<NamedParameter> params, double momentum, double weight_decay);
  void step(double lr);

 private:
  std::vector<NamedParameter> params_;
  std::vector<Tensor> velocity_;
  double momentum_;
  double weight_decay_;
};

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_triplet = 0.0;
  double loss_lsce = 0.0;
  bool evaluated = false;
  double rank1 = 0.0;
  double map = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  RankingMetrics final_metrics;
  double best_map = -1.0;
  std::size_t best_epoch = 0;
};

struct TrainOptions {
  /// When set, the log and checkpoints are written here.
  std::filesystem::path out_dir;
  /// Configuration text stored in checkpoint manifests.
  std::string manifest;
  bool verbose = false;
};

/// Raised when a loss turns non-finite.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(std::size_t step, const std::string& what);
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// One optimisation step on a PK batch; returns (total, triplet, lsce).
struct StepLosses {
  double total = 0.0;
  double triplet = 0.0;
  double lsce = 0.0;
};
StepLosses train_step(HsgNet& model, Sgd& opt, const ImageSet& batch, const LossConfig& loss, double lr);

/// Full training run with the configured schedule. Writes `train_log.tsv`,
/// `checkpoint_final.hsgc` and `checkpoint_best.hsgc` (best probe/gallery
/// mAP) when `opts.out_dir` is set.
TrainResult train(HsgNet& model, const ReidDataset& data, const TrainConfig& cfg, const LossConfig& loss,
                  std::uint64_t seed, const TrainOptions& opts = {});

/// Probe/gallery retrieval metrics with eval-mode features.
RankingMetrics evaluate_model(HsgNet& model, const ReidDataset& data, std::size_t max_rank = 10);

/// Features for an image set, computed in chunks.
Tensor embed_all(HsgNet& model, const ImageSet& set, std::size_t chunk = 64);

/// "epoch\tlr\tloss_total\tloss_triplet\tloss_lsce" header and rows.
std::string format_train_log(const std::vector<EpochLog>& log);

}  // namespace hsg
