#include "hsgnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

#include <fmt/format.h>

#include "hsgnet/checkpoint.hpp"

namespace hsg {

std::string to_string(DecayMode mode) { return mode == DecayMode::tenfold ? "tenfold" : "ten_percent"; }

DecayMode parse_decay_mode(const std::string& text) {
  if (text == "tenfold") return DecayMode::tenfold;
  if (text == "ten_percent") return DecayMode::ten_percent;
  throw Error(fmt::format("unknown decay mode '{}' (expected tenfold or ten_percent)", text));
}

double LrSchedule::lr(std::size_t epoch) const {
  if (epoch < warmup_epochs) {
    return warmup_start + (base - warmup_start) * static_cast<double>(epoch) / static_cast<double>(warmup_epochs);
  }
  if (epoch < hold_until) return base;
  const std::size_t steps = decay_every == 0 ? 0 : (epoch - hold_until) / decay_every;
  const double factor = decay == DecayMode::tenfold ? 0.1 : 0.9;
  double lr = base;
  for (std::size_t s = 0; s < steps; ++s) lr *= factor;
  return lr;
}

void TrainConfig::validate() const {
  if (p < 2) throw Error("train.p must be >= 2 so every batch has negatives");
  if (k < 2) throw Error("train.k must be >= 2 so every batch has positives");
  if (momentum < 0.0 || weight_decay < 0.0) throw Error("momentum and weight decay must be >= 0");
  if (schedule.base < 0.0 || schedule.warmup_start < 0.0) throw Error("learning rates must be >= 0");
  if (schedule.warmup_epochs > schedule.hold_until) throw Error("warm-up must end before the hold phase ends");
}

void SyntheticReidSpec::validate() const {
  if (train_identities == 0 || test_identities == 0) throw Error("synthetic dataset needs at least one identity per split");
  if (images_per_identity < 2) throw Error("synthetic dataset needs at least 2 images per identity");
  if (height < 8 || width < 8) throw Error("synthetic images must be at least 8x8");
  if (illumination < 0.0 || illumination >= 1.0) throw Error("illumination must lie in [0, 1)");
  if (flip_probability < 0.0 || flip_probability > 1.0) throw Error("flip probability must lie in [0, 1]");
  if (noise < 0.0) throw Error("noise level must be >= 0");
}

// ---------------------------------------------------------------------------

namespace {

struct Rgb {
  double r = 0, g = 0, b = 0;
};

struct IdentityLatent {
  std::size_t head_end = 0;
  std::size_t torso_end = 0;
  std::size_t margin = 0;
  Rgb head, torso, torso_alt, legs;
  int pattern = 0;  // 0 plain, 1 vertical stripes, 2 horizontal stripes
  std::size_t period = 2;
};

Rgb random_color(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Rgb c;
  c.r = u(rng);
  c.g = u(rng);
  c.b = u(rng);
  return c;
}

IdentityLatent draw_latent(const SyntheticReidSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  IdentityLatent id;
  const auto h = static_cast<double>(spec.height);
  id.head_end = static_cast<std::size_t>(std::lround(h * (0.15 + 0.10 * u(rng))));
  id.torso_end = static_cast<std::size_t>(std::lround(h * (0.45 + 0.15 * u(rng))));
  id.margin = 1 + static_cast<std::size_t>(u(rng) * 3.0) * spec.width / 16;
  id.head = random_color(rng);
  id.torso = random_color(rng);
  id.torso_alt = random_color(rng);
  id.legs = random_color(rng);
  id.pattern = static_cast<int>(u(rng) * 3.0) % 3;
  id.period = 2 + static_cast<std::size_t>(u(rng) * 3.0) % 3;
  return id;
}

void render(const IdentityLatent& id, const SyntheticReidSpec& spec, std::mt19937_64& rng, double* out) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double light = 1.0 + spec.illumination * (2.0 * u(rng) - 1.0);
  const bool flip = u(rng) < spec.flip_probability;
  const std::size_t h = spec.height, w = spec.width;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t sx = flip ? w - 1 - x : x;
      Rgb c{0.5, 0.5, 0.5};
      if (sx >= id.margin && sx + id.margin < w) {
        if (y < id.head_end) {
          c = id.head;
        } else if (y < id.torso_end) {
          const bool alt = (id.pattern == 1 && (sx / id.period) % 2 == 1) || (id.pattern == 2 && (y / id.period) % 2 == 1);
          c = alt ? id.torso_alt : id.torso;
        } else {
          c = id.legs;
        }
      }
      double* px = out + (y * w + x) * 3;
      const double ch[3] = {c.r, c.g, c.b};
      for (std::size_t k = 0; k < 3; ++k) {
        const double n = spec.noise > 0.0 ? spec.noise * gauss(rng) : 0.0;
        px[k] = light * ch[k] + n - 0.5;
      }
    }
}

}  // namespace

ReidDataset generate_dataset(const SyntheticReidSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  const std::size_t ids = spec.train_identities + spec.test_identities;
  std::vector<IdentityLatent> latents;
  for (std::size_t i = 0; i < ids; ++i) latents.push_back(draw_latent(spec, rng));

  const std::size_t per = spec.images_per_identity;
  const std::size_t pixels = spec.height * spec.width * 3;
  auto render_split = [&](std::size_t first, std::size_t count) {
    ImageSet set;
    set.images = Tensor(Shape{count * per, spec.height, spec.width, 3});
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t j = 0; j < per; ++j) {
        render(latents[first + i], spec, rng, &set.images[(i * per + j) * pixels]);
        set.labels.push_back(i);
      }
    return set;
  };
  ReidDataset data;
  data.train = render_split(0, spec.train_identities);
  const ImageSet test = render_split(spec.train_identities, spec.test_identities);

  std::vector<std::size_t> probe_rows, gallery_rows;
  std::uniform_int_distribution<std::size_t> pick(0, per - 1);
  for (std::size_t i = 0; i < spec.test_identities; ++i) {
    const std::size_t chosen = pick(rng);
    for (std::size_t j = 0; j < per; ++j) (j == chosen ? probe_rows : gallery_rows).push_back(i * per + j);
  }
  data.probe = gather(test, probe_rows);
  data.gallery = gather(test, gallery_rows);
  return data;
}

ImageSet gather(const ImageSet& set, const std::vector<std::size_t>& rows) {
  if (rows.empty()) throw Error("gather needs at least one row");
  Shape shape = set.images.shape();
  const std::size_t stride = set.images.size() / shape[0];
  shape[0] = rows.size();
  ImageSet out;
  out.images = Tensor(shape);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= set.size()) throw Error(fmt::format("gather: row {} out of range", rows[r]));
    std::copy_n(&set.images[rows[r] * stride], stride, &out.images[r * stride]);
    out.labels.push_back(set.labels[rows[r]]);
  }
  return out;
}

// ---------------------------------------------------------------------------

PkSampler::PkSampler(std::vector<std::size_t> labels, std::size_t p, std::size_t k)
    : labels_(std::move(labels)), p_(p), k_(k) {
  if (p_ == 0 || k_ == 0) throw Error("PK sampler needs P >= 1 and K >= 1");
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] >= by_identity_.size()) by_identity_.resize(labels_[i] + 1);
    by_identity_[labels_[i]].push_back(i);
  }
  std::size_t present = 0;
  for (const auto& rows : by_identity_) present += rows.empty() ? 0 : 1;
  if (present < p_) throw Error(fmt::format("PK sampler: {} identities cannot fill batches of P={}", present, p_));
}

std::vector<PKBatch> PkSampler::epoch(std::mt19937_64& rng) const {
  std::vector<std::vector<std::vector<std::size_t>>> groups(by_identity_.size());
  for (std::size_t id = 0; id < by_identity_.size(); ++id) {
    auto rows = by_identity_[id];
    if (rows.empty()) continue;
    if (rows.size() < k_) {
      std::uniform_int_distribution<std::size_t> pick(0, rows.size() - 1);
      while (rows.size() < k_) rows.push_back(by_identity_[id][pick(rng)]);
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    for (std::size_t start = 0; start + k_ <= rows.size(); start += k_) {
      groups[id].emplace_back(rows.begin() + static_cast<std::ptrdiff_t>(start),
                              rows.begin() + static_cast<std::ptrdiff_t>(start + k_));
    }
  }

  std::vector<PKBatch> batches;
  std::vector<bool> used(groups.size(), false);
  const auto take = [&](PKBatch& batch, std::size_t id, const std::vector<std::size_t>& rows) {
    for (auto row : rows) {
      batch.indices.push_back(row);
      batch.labels.push_back(id);
    }
    used[id] = true;
  };
  while (true) {
    std::vector<std::size_t> candidates;
    for (std::size_t id = 0; id < groups.size(); ++id)
      if (!groups[id].empty()) candidates.push_back(id);
    if (candidates.size() < p_) break;
    std::shuffle(candidates.begin(), candidates.end(), rng);
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](std::size_t a, std::size_t b) { return groups[a].size() > groups[b].size(); });
    PKBatch batch;
    for (std::size_t i = 0; i < p_; ++i) {
      const std::size_t id = candidates[i];
      take(batch, id, groups[id].back());
      groups[id].pop_back();
    }
    batches.push_back(std::move(batch));
  }

  // Identities still unseen get one last batch, topped up with fresh K-draws
  // from other identities.
  std::vector<std::size_t> unseen, others;
  for (std::size_t id = 0; id < groups.size(); ++id) {
    if (by_identity_[id].empty()) continue;
    (used[id] ? others : unseen).push_back(id);
  }
  if (!unseen.empty()) {
    PKBatch batch;
    for (auto id : unseen) take(batch, id, groups[id].back());
    std::shuffle(others.begin(), others.end(), rng);
    for (std::size_t i = 0; unseen.size() + i < p_; ++i) {
      const std::size_t id = others[i];
      std::vector<std::size_t> rows = by_identity_[id];
      std::shuffle(rows.begin(), rows.end(), rng);
      std::uniform_int_distribution<std::size_t> pick(0, by_identity_[id].size() - 1);
      while (rows.size() < k_) rows.push_back(by_identity_[id][pick(rng)]);
      rows.resize(k_);
      take(batch, id, rows);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

// ---------------------------------------------------------------------------

Sgd::Sgd(std::vector<NamedParameter> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& p : params_) velocity_.push_back(Tensor::zeros_like(p.var->value()));
}

void Sgd::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    const Tensor g = p.var->grad();
    Tensor& w = p.var->mutable_value();
    Tensor& v = velocity_[i];
    const double wd = p.decay ? weight_decay_ : 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = momentum_ * v[j] + g[j] + wd * w[j];
      w[j] -= lr * v[j];
    }
  }
}

TrainingDiverged::TrainingDiverged(std::size_t step, const std::string& what)
    : Error(fmt::format("training diverged at step {}: {}", step, what)), step_(step) {}

StepLosses train_step(HsgNet& model, Sgd& opt, const ImageSet& batch, const LossConfig& loss, double lr) {
  ForwardContext ctx;
  ctx.training = true;
  ctx.update_running_stats = true;
  const ForwardOutput out = model.forward(constant(batch.images), ctx);
  Var l_tri = triplet_loss(out.retrieval, batch.labels, loss.margin);
  Var l_ce = lsce_loss(out.logits, batch.labels, loss.gamma);
  Var total = total_loss(l_tri, l_ce, loss.alpha, loss.beta);
  StepLosses s{total->value()[0], l_tri->value()[0], l_ce->value()[0]};
  if (!std::isfinite(s.total)) return s;
  model.zero_grad();
  backward(total);
  opt.step(lr);
  return s;
}

Tensor embed_all(HsgNet& model, const ImageSet& set, std::size_t chunk) {
  const std::size_t n = set.size();
  std::vector<double> feats;
  std::size_t dim = 0;
  for (std::size_t start = 0; start < n; start += chunk) {
    std::vector<std::size_t> rows(std::min(chunk, n - start));
    std::iota(rows.begin(), rows.end(), start);
    const Tensor f = model.embed(gather(set, rows).images);
    dim = f.dim(1);
    feats.insert(feats.end(), f.data().begin(), f.data().end());
  }
  return Tensor(Shape{n, dim}, std::move(feats));
}

RankingMetrics evaluate_model(HsgNet& model, const ReidDataset& data, std::size_t max_rank) {
  return evaluate_retrieval(embed_all(model, data.probe), data.probe.labels, embed_all(model, data.gallery),
                            data.gallery.labels, max_rank);
}

std::string format_train_log(const std::vector<EpochLog>& log) {
  std::string out = "epoch\tlr\tloss_total\tloss_triplet\tloss_lsce\n";
  for (const auto& e : log) {
    out += fmt::format("{}\t{}\t{:.6f}\t{:.6f}\t{:.6f}\n", e.epoch, e.lr, e.loss_total, e.loss_triplet, e.loss_lsce);
  }
  return out;
}

namespace {

void flip_horizontal(ImageSet& set, std::size_t row) {
  const std::size_t h = set.images.dim(1), w = set.images.dim(2), c = set.images.dim(3);
  double* img = &set.images[row * h * w * c];
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w / 2; ++x)
      for (std::size_t k = 0; k < c; ++k) std::swap(img[(y * w + x) * c + k], img[(y * w + (w - 1 - x)) * c + k]);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw Error(fmt::format("cannot write {}", path.string()));
  os << text;
}

}  // namespace

TrainResult train(HsgNet& model, const ReidDataset& data, const TrainConfig& cfg, const LossConfig& loss,
                  std::uint64_t seed, const TrainOptions& opts) {
  cfg.validate();
  loss.validate();
  const BackboneConfig& bb = model.backbone();
  const Tensor& imgs = data.train.images;
  if (imgs.rank() != 4 || imgs.dim(1) != bb.input_height || imgs.dim(2) != bb.input_width ||
      imgs.dim(3) != bb.input_channels) {
    throw Error(fmt::format("training images {} do not fit a {}x{}x{} network", shape_str(imgs.shape()),
                            bb.input_height, bb.input_width, bb.input_channels));
  }
  for (auto l : data.train.labels)
    if (l >= bb.num_classes) throw Error(fmt::format("training label {} exceeds num_classes {}", l, bb.num_classes));
  if (!opts.out_dir.empty()) std::filesystem::create_directories(opts.out_dir);

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const PkSampler sampler(data.train.labels, cfg.p, cfg.k);
  Sgd opt(model.parameters(), cfg.momentum, cfg.weight_decay);
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  TrainResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochLog entry;
    entry.epoch = epoch;
    entry.lr = cfg.schedule.lr(epoch);
    const auto batches = sampler.epoch(rng);
    for (const auto& b : batches) {
      ImageSet batch = gather(data.train, b.indices);
      batch.labels = b.labels;
      if (cfg.flip_augment) {
        for (std::size_t r = 0; r < batch.size(); ++r)
          if (coin(rng) < 0.5) flip_horizontal(batch, r);
      }
      StepLosses s;
      try {
        s = train_step(model, opt, batch, loss, entry.lr);
      } catch (const Error& e) {
        // Shapes were checked above, so a failure here is numerical, such
        // as non-finite activations reaching the similarity graphs.
        throw TrainingDiverged(step, e.what());
      }
      if (!std::isfinite(s.total)) throw TrainingDiverged(step, fmt::format("total loss {}", s.total));
      entry.loss_total += s.total;
      entry.loss_triplet += s.triplet;
      entry.loss_lsce += s.lsce;
      ++step;
    }
    const auto nb = static_cast<double>(std::max<std::size_t>(1, batches.size()));
    entry.loss_total /= nb;
    entry.loss_triplet /= nb;
    entry.loss_lsce /= nb;

    const bool last = epoch + 1 == cfg.epochs;
    if ((cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0) || last) {
      const RankingMetrics m = evaluate_model(model, data);
      entry.evaluated = true;
      entry.rank1 = m.rank(1);
      entry.map = m.map;
      if (m.map > result.best_map) {
        result.best_map = m.map;
        result.best_epoch = epoch;
        if (!opts.out_dir.empty()) write_checkpoint(opts.out_dir / "checkpoint_best.hsgc", snapshot(model, opts.manifest));
      }
      if (last) result.final_metrics = m;
    }
    if (opts.verbose) {
      std::cerr << fmt::format("epoch {:3d} lr {:.6f} loss {:.4f} (triplet {:.4f}, lsce {:.4f})", epoch, entry.lr,
                               entry.loss_total, entry.loss_triplet, entry.loss_lsce);
      if (entry.evaluated) std::cerr << fmt::format(" rank1 {:.3f} mAP {:.3f}", entry.rank1, entry.map);
      std::cerr << '\n';
    }
    result.log.push_back(entry);
    if (!opts.out_dir.empty()) write_text(opts.out_dir / "train_log.tsv", format_train_log(result.log));
  }
  if (cfg.epochs == 0) result.final_metrics = evaluate_model(model, data);
  if (!opts.out_dir.empty()) write_checkpoint(opts.out_dir / "checkpoint_final.hsgc", snapshot(model, opts.manifest));
  return result;
}

}  // namespace hsg
