#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hsgnet/tensor.hpp"

namespace hsg {

struct RankingMetrics {
  double map = 0.0;
  /// cmc[r - 1]: fraction of probes with a relevant item within the top r.
  std::vector<double> cmc;
  std::size_t evaluated_probes = 0;
  /// Probes without any relevant gallery item; left out of mAP and CMC.
  std::size_t skipped_probes = 0;

  double rank(std::size_t r) const { return r == 0 || cmc.empty() ? 0.0 : cmc[std::min(r, cmc.size()) - 1]; }
};

/// Per probe row, gallery indices by descending cosine similarity; exact
/// ties go to the lower gallery index. Throws on zero-norm rows.
std::vector<std::vector<std::size_t>> rank_gallery(const Tensor& probe_features, const Tensor& gallery_features);

/// Optional predicate marking (probe, gallery) pairs to drop from a ranking,
/// e.g. same-camera matches.
using JunkMask = std::function<bool(std::size_t probe, std::size_t gallery)>;

RankingMetrics compute_metrics(const std::vector<std::vector<std::size_t>>& rankings,
                               std::span<const std::size_t> probe_labels, std::span<const std::size_t> gallery_labels,
                               std::size_t max_rank, const JunkMask& junk = nullptr);

RankingMetrics evaluate_retrieval(const Tensor& probe_features, std::span<const std::size_t> probe_labels,
                                  const Tensor& gallery_features, std::span<const std::size_t> gallery_labels,
                                  std::size_t max_rank = 10);

/// Feature files: "HSGF", u32 count, u32 dim, count*dim float32, all
/// little-endian and row-major.
void write_features(const std::filesystem::path& path, const Tensor& features);
Tensor read_features(const std::filesystem::path& path);
/// Sidecar labels, one integer per line.
void write_labels(const std::filesystem::path& path, std::span<const std::size_t> labels);
std::vector<std::size_t> read_labels(const std::filesystem::path& path);
std::filesystem::path labels_path_for(const std::filesystem::path& features_path);

/// "mAP\tcmc@1\tcmc@5\tcmc@10" header plus one value row.
std::string format_metrics_report(const RankingMetrics& m);

}  // namespace hsg
