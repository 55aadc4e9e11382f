#include "hsgnet/commands.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include <fmt/format.h>

#include "hsgnet/checkpoint.hpp"
#include "hsgnet/evaluator.hpp"

namespace hsg {

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw Error(fmt::format("cannot write {}", path.string()));
  os << text;
}

std::filesystem::path prepare_out(const RunConfig& cfg) {
  const std::filesystem::path out(cfg.out);
  std::filesystem::create_directories(out);
  write_text(out / "config.txt", cfg.to_text());
  return out;
}

// Fixed pseudo-random weights so a reduction to a scalar exercises every
// output element with a distinct seed gradient.
Var weighted_sum(const Var& y) {
  Tensor w(y->value().shape());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::cos(0.37 * static_cast<double>(i) + 0.1);
  return sum(mul(y, constant(std::move(w))));
}

class InputFactory {
 public:
  explicit InputFactory(std::uint64_t seed) : rng_(seed) {}

  Var normal(Shape shape, double sd = 1.0, double mean = 0.0) {
    std::normal_distribution<double> d(mean, sd);
    Tensor t(std::move(shape));
    for (auto& v : t.mutable_data()) v = d(rng_);
    return parameter(std::move(t));
  }

 private:
  std::mt19937_64 rng_;
};

GradcheckCase make_case(std::string name, std::vector<Var> leaves, std::function<Var()> f) {
  return {std::move(name), [leaves = std::move(leaves), f = std::move(f)](const GradcheckOptions& o) {
            return gradcheck_leaves(f, leaves, o);
          }};
}

void add_bn_leaves(std::vector<Var>& leaves, const BatchNorm& bn) {
  leaves.push_back(bn.gamma);
  leaves.push_back(bn.beta);
}

void add_hsgm_leaves(std::vector<Var>& leaves, const HsgmParams& params) {
  for (const auto& [name, var] : params.named_parameters()) leaves.push_back(var);
}

HsgmParams hsgm_params_for_check(const HsgmConfig& cfg, std::size_t h, std::size_t w, std::size_t c,
                                 InputFactory& in) {
  HsgmParams params = HsgmParams::create(cfg, h, w, c, 0.5);
  // Move every parameter off its initial value so no gradient is trivially zero.
  for (auto& [name, var] : params.named_parameters()) {
    const Var jitter = in.normal(var->value().shape(), 0.2);
    Tensor& v = var->mutable_value();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += jitter->value()[i];
  }
  return params;
}

}  // namespace

HsgNet build_model(const RunConfig& cfg) { return HsgNet(cfg.backbone, cfg.hsgm, cfg.seed); }

std::vector<GradcheckCase> gradcheck_battery(std::uint64_t seed) {
  InputFactory in(seed);
  std::vector<GradcheckCase> cases;
  const ForwardContext train_ctx{true, false};

  // Tensor arithmetic.
  {
    auto a = in.normal({2, 3, 4}), b = in.normal({3, 1});
    cases.push_back(make_case("add (broadcast)", {a, b}, [=] { return weighted_sum(add(a, b)); }));
  }
  {
    auto a = in.normal({2, 3}), b = in.normal({3});
    cases.push_back(make_case("sub (broadcast)", {a, b}, [=] { return weighted_sum(sub(a, b)); }));
  }
  {
    auto a = in.normal({2, 3, 4}), b = in.normal({4});
    cases.push_back(make_case("mul (broadcast)", {a, b}, [=] { return weighted_sum(mul(a, b)); }));
  }
  {
    auto a = in.normal({3, 4}, 0.5);
    cases.push_back(make_case("exp", {a}, [=] { return weighted_sum(exp(a)); }));
  }
  {
    auto a = in.normal({3, 4});
    cases.push_back(make_case("leaky_relu", {a}, [=] { return weighted_sum(leaky_relu(a, 0.01)); }));
    cases.push_back(make_case("relu", {a}, [=] { return weighted_sum(relu(a)); }));
    cases.push_back(make_case("scale", {a}, [=] { return weighted_sum(scale(a, -1.7)); }));
    cases.push_back(make_case("mean", {a}, [=] { return mean(mul(a, a)); }));
  }
  {
    auto a = in.normal({3, 4}), b = in.normal({4, 2});
    cases.push_back(make_case("matmul", {a, b}, [=] { return weighted_sum(matmul(a, b)); }));
  }
  {
    auto a = in.normal({2, 3, 2});
    cases.push_back(make_case("slice/concat/reshape", {a}, [=] {
      Var parts = concat({slice(a, 1, 0, 2), slice(a, 1, 1, 3)}, 0);
      return weighted_sum(reshape(parts, Shape{4, 4}));
    }));
  }

  // Network layers.
  {
    auto x = in.normal({2, 4, 4, 2}), w = in.normal({3, 3, 3, 2});
    cases.push_back(make_case("conv2d (stride 1)", {x, w}, [=] { return weighted_sum(conv2d(x, w, 1, 1)); }));
    auto x5 = in.normal({2, 5, 5, 2});
    cases.push_back(make_case("conv2d (stride 2)", {x5, w}, [=] { return weighted_sum(conv2d(x5, w, 2, 1)); }));
    auto w1 = in.normal({3, 1, 1, 2});
    cases.push_back(make_case("conv2d (1x1)", {x, w1}, [=] { return weighted_sum(conv2d(x, w1, 1, 0)); }));
  }
  {
    auto x = in.normal({2, 3, 3, 2}, 1.0, 0.3);
    auto bn = std::make_shared<BatchNorm>(BatchNorm::create(2, 0.8));
    bn->beta->mutable_value()[1] = 0.4;
    std::vector<Var> leaves{x};
    add_bn_leaves(leaves, *bn);
    cases.push_back(make_case("batch_norm (train)", leaves, [=] { return weighted_sum(batch_norm(x, *bn, train_ctx)); }));
    auto bn_eval = std::make_shared<BatchNorm>(BatchNorm::create(2, 1.3));
    bn_eval->running_mean[0] = 0.2;
    bn_eval->running_var[1] = 2.5;
    std::vector<Var> eval_leaves{x};
    add_bn_leaves(eval_leaves, *bn_eval);
    cases.push_back(make_case("batch_norm (eval)", eval_leaves,
                              [=] { return weighted_sum(batch_norm(x, *bn_eval, ForwardContext{})); }));
  }
  {
    auto x = in.normal({3, 4}), w = in.normal({2, 4});
    cases.push_back(make_case("linear", {x, w}, [=] { return weighted_sum(linear(x, w)); }));
  }
  {
    auto x = in.normal({2, 3, 2, 3});
    cases.push_back(make_case("global_max_pool", {x}, [=] { return weighted_sum(global_max_pool(x)); }));
    auto y = in.normal({2, 4, 4, 2});
    cases.push_back(make_case("avg_pool2d", {y}, [=] { return weighted_sum(avg_pool2d(y, 2)); }));
    cases.push_back(make_case("upsample_nearest", {x}, [=] { return weighted_sum(upsample_nearest(x, 2)); }));
  }

  // Graph primitives.
  {
    auto x = in.normal({2, 3, 4, 5});
    cases.push_back(make_case("channel_squeeze", {x}, [=] { return weighted_sum(channel_squeeze(x)); }));
    cases.push_back(make_case("spatial_squeeze", {x}, [=] { return weighted_sum(spatial_squeeze(x)); }));
  }
  {
    auto s = in.normal({2, 4, 3});
    for (std::size_t k : {1, 2, 3}) {
      cases.push_back(make_case(fmt::format("multiscale_avg_pool (k={})", k), {s},
                                [=] { return weighted_sum(multiscale_avg_pool(s, k)); }));
    }
  }
  {
    auto v = in.normal({2, 12});
    const auto nb = spatial_neighborhood(4, 3, 3);
    cases.push_back(make_case("build_edges (spatial)", {v}, [=] { return weighted_sum(build_edges(v, nb)); }));
    cases.push_back(make_case("build_edges (spatial, as_written)", {v},
                              [=] { return weighted_sum(build_edges(v, nb, EdgeVariant::as_written)); }));
    auto c = in.normal({2, 7});
    const auto cnb = channel_neighborhood(7, 3, 2);
    cases.push_back(make_case("build_edges (channel)", {c}, [=] { return weighted_sum(build_edges(c, cnb)); }));
  }
  {
    auto e = in.normal({2, 5, 5}), v = in.normal({2, 5});
    cases.push_back(make_case("aggregate_nodes", {e, v}, [=] { return weighted_sum(aggregate_nodes(e, v)); }));
    auto u = in.normal({2, 6}), theta = in.normal({6});
    cases.push_back(make_case("apply_node_weights", {u, theta}, [=] { return weighted_sum(apply_node_weights(u, theta)); }));
  }
  {
    auto x = in.normal({2, 4, 3, 5});
    const std::vector<std::size_t> scales{1, 2, 3};
    std::vector<Var> thetas{in.normal({12}, 0.5, 1.0), in.normal({12}, 0.5, 1.0), in.normal({12}, 0.5, 1.0)};
    std::vector<Var> leaves{x};
    leaves.insert(leaves.end(), thetas.begin(), thetas.end());
    for (auto variant : {EdgeVariant::neighbor_softmax, EdgeVariant::as_written}) {
      const std::string name = variant == EdgeVariant::neighbor_softmax ? "spatial_branch" : "spatial_branch (as_written)";
      cases.push_back(make_case(name, leaves, [=] {
        return weighted_sum(spatial_branch(x, NeighborSpec{}, scales, thetas, variant));
      }));
    }
  }
  {
    auto x = in.normal({2, 3, 3, 5}), delta = in.normal({5}, 0.5, 1.0);
    cases.push_back(make_case("channel_branch", {x, delta},
                              [=] { return weighted_sum(channel_branch(x, NeighborSpec{}, delta)); }));
    NeighborSpec dilated;
    dilated.channel_stride = 2;
    cases.push_back(make_case("channel_branch (stride 2)", {x, delta},
                              [=] { return weighted_sum(channel_branch(x, dilated, delta)); }));
  }
  {
    auto a_ms = in.normal({2, 3, 3, 1}), a_c = in.normal({2, 4}), x = in.normal({2, 3, 3, 4});
    auto bn = std::make_shared<BatchNorm>(BatchNorm::create(4, 0.7));
    std::vector<Var> leaves{a_ms, a_c, x};
    add_bn_leaves(leaves, *bn);
    cases.push_back(make_case("fuse_and_enhance", leaves,
                              [=] { return weighted_sum(fuse_and_enhance(a_ms, a_c, x, *bn, train_ctx)); }));
  }

  // HSGM.
  {
    HsgmConfig cfg;
    cfg.hierarchy_splits = {1};
    auto x = in.normal({2, 2, 3, 3});
    auto params = std::make_shared<HsgmParams>(hsgm_params_for_check(cfg, 2, 3, 3, in));
    const PieceParams& piece = params->levels[0][0];
    std::vector<Var> leaves{x};
    leaves.insert(leaves.end(), piece.thetas.begin(), piece.thetas.end());
    leaves.push_back(piece.delta);
    add_bn_leaves(leaves, piece.bn);
    cases.push_back(make_case("process_piece", leaves, [=] {
      return weighted_sum(process_piece(x, cfg, params->levels[0][0], train_ctx));
    }));
  }
  {
    HsgmConfig cfg;
    auto x = in.normal({2, 4, 2, 3});
    auto params = std::make_shared<HsgmParams>(hsgm_params_for_check(cfg, 4, 2, 3, in));
    std::vector<Var> leaves{x};
    add_hsgm_leaves(leaves, *params);
    cases.push_back(make_case("hsgm_forward (stripe_concat)", leaves,
                              [=] { return weighted_sum(hsgm_forward(x, cfg, *params, train_ctx)); }));
    cases.push_back(make_case("hsgm_forward (eval)", leaves,
                              [=] { return weighted_sum(hsgm_forward(x, cfg, *params, ForwardContext{})); }));
  }
  {
    HsgmConfig cfg;
    cfg.aggregation_mode = AggregationMode::pyramid;
    auto x = in.normal({2, 16, 4, 2});
    auto params = std::make_shared<HsgmParams>(hsgm_params_for_check(cfg, 16, 4, 2, in));
    std::vector<Var> leaves{x};
    add_hsgm_leaves(leaves, *params);
    cases.push_back(make_case("hsgm_forward (pyramid)", leaves,
                              [=] { return weighted_sum(hsgm_forward(x, cfg, *params, train_ctx)); }));
  }

  // Losses.
  {
    auto logits = in.normal({6, 4});
    const std::vector<std::size_t> labels{0, 3, 1, 1, 2, 0};
    cases.push_back(make_case("lsce_loss", {logits}, [=] { return lsce_loss(logits, labels, 0.1); }));
  }
  {
    auto emb = in.normal({8, 3});
    const std::vector<std::size_t> labels{0, 0, 1, 1, 2, 2, 3, 3};
    cases.push_back(make_case("triplet_loss (batch_hard)", {emb}, [=] { return triplet_loss(emb, labels, 1.2); }));
    cases.push_back(make_case("triplet_loss (all_pairs)", {emb},
                              [=] { return triplet_loss(emb, labels, 1.2, TripletMining::all_pairs); }));
    cases.push_back(make_case("triplet_loss (negated_reverse)", {emb}, [=] {
      return triplet_loss(emb, labels, 0.1, TripletMining::all_pairs, TripletForm::negated_reverse);
    }));
    auto logits = in.normal({8, 4});
    cases.push_back(make_case("total_loss", {emb, logits}, [=] {
      return total_loss(triplet_loss(emb, labels, 1.2), lsce_loss(logits, labels, 0.1), 0.5, 1.0);
    }));
  }

  // Micro network: 8x8x3 images, two channels per stage, HSGM after stage 3.
  {
    BackboneConfig bb;
    bb.stage_channels = {2, 2, 2, 2};
    bb.stage_strides = {1, 2, 1, 1};
    bb.hsgm_stage = HsgmStage::s3;
    bb.feature_dim = 4;
    bb.num_classes = 2;
    bb.input_height = 8;
    bb.input_width = 8;
    auto net = std::make_shared<HsgNet>(bb, HsgmConfig{}, seed);
    for (auto& level : net->hsgm_params()->levels)
      for (auto& piece : level) piece.bn.gamma->mutable_value() = Tensor(piece.bn.gamma->value().shape(), 0.5);
    auto images = in.normal({4, 8, 8, 3});
    const std::vector<std::size_t> labels{0, 0, 1, 1};
    std::vector<Var> leaves{images};
    for (const auto& p : net->parameters()) leaves.push_back(p.var);
    cases.push_back(make_case("micro network", leaves, [=] {
      const ForwardOutput out = net->forward(images, train_ctx);
      return total_loss(triplet_loss(out.retrieval, labels, 1.2), lsce_loss(out.logits, labels, 0.1), 0.5, 1.0);
    }));
  }
  return cases;
}

int run_gradcheck_cases(const std::vector<GradcheckCase>& cases, const GradcheckOptions& opts, std::ostream& os) {
  std::size_t passed = 0;
  os << fmt::format("gradcheck: step {} tol {}\n", opts.step, opts.tol);
  for (const auto& c : cases) {
    try {
      const GradcheckReport r = c.run(opts);
      os << fmt::format("{:<36} max_err {:.3e}  {}\n", c.name, r.max_error, r.passed ? "PASS" : "FAIL");
      if (!r.passed) {
        os << fmt::format("    worst: input {} element {} analytic {:.10g} numeric {:.10g}\n", r.worst_input,
                          r.worst_index, r.worst_analytic, r.worst_numeric);
      }
      passed += r.passed ? 1 : 0;
    } catch (const std::exception& e) {
      os << fmt::format("{:<36} error: {}  FAIL\n", c.name, e.what());
    }
  }
  os << fmt::format("gradcheck: {}/{} passed\n", passed, cases.size());
  return passed == cases.size() ? kExitOk : kExitVerificationFailed;
}

int cmd_gradcheck(const RunConfig& cfg, std::ostream& os) {
  prepare_out(cfg);
  return run_gradcheck_cases(gradcheck_battery(cfg.seed), cfg.gradcheck, os);
}

int cmd_train(const RunConfig& cfg, std::ostream& os) {
  const auto out = prepare_out(cfg);
  const ReidDataset data = generate_dataset(cfg.data, cfg.seed);
  HsgNet model = build_model(cfg);
  TrainOptions opts;
  opts.out_dir = out;
  opts.manifest = cfg.to_text();
  const TrainResult result = train(model, data, cfg.train, cfg.loss, cfg.seed, opts);
  const std::string report = format_metrics_report(result.final_metrics);
  write_text(out / "metrics.tsv", report);
  os << format_train_log(result.log) << '\n' << report;
  os << fmt::format("best mAP {:.6f} at epoch {}\n", result.best_map, result.best_epoch);
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, const EvalInputs& inputs, std::ostream& os) {
  RankingMetrics metrics;
  if (inputs.probe_features || inputs.gallery_features) {
    if (!inputs.probe_features || !inputs.gallery_features) {
      throw ConfigError("feature-file evaluation needs both --probe and --gallery");
    }
    const Tensor probe = read_features(*inputs.probe_features);
    const Tensor gallery = read_features(*inputs.gallery_features);
    const auto probe_labels = read_labels(labels_path_for(*inputs.probe_features));
    const auto gallery_labels = read_labels(labels_path_for(*inputs.gallery_features));
    if (probe_labels.size() != probe.dim(0) || gallery_labels.size() != gallery.dim(0)) {
      throw Error(fmt::format("label sidecars hold {} probe and {} gallery labels for {} and {} feature rows",
                              probe_labels.size(), gallery_labels.size(), probe.dim(0), gallery.dim(0)));
    }
    metrics = evaluate_retrieval(probe, probe_labels, gallery, gallery_labels);
  } else {
    if (!inputs.checkpoint) throw ConfigError("eval needs --checkpoint, or --probe and --gallery feature files");
    if (!std::filesystem::exists(*inputs.checkpoint)) {
      throw Error(fmt::format("checkpoint {} does not exist", inputs.checkpoint->string()));
    }
    HsgNet model = build_model(cfg);
    restore(model, read_checkpoint(*inputs.checkpoint));
    metrics = evaluate_model(model, generate_dataset(cfg.data, cfg.seed));
  }
  const auto out = prepare_out(cfg);
  const std::string report = format_metrics_report(metrics);
  write_text(out / "metrics.tsv", report);
  os << report;
  if (metrics.skipped_probes > 0) os << fmt::format("skipped probes without a relevant gallery item: {}\n", metrics.skipped_probes);
  return kExitOk;
}

namespace {

AblationRow train_variant(const RunConfig& cfg, const ReidDataset& data, const std::string& name,
                          const std::filesystem::path& dir) {
  cfg.validate();
  HsgNet model = build_model(cfg);
  TrainOptions opts;
  opts.out_dir = dir;
  opts.manifest = cfg.to_text();
  const TrainResult r = train(model, data, cfg.train, cfg.loss, cfg.seed, opts);
  return {name, r.final_metrics.rank(1), r.final_metrics.map, model.parameter_count()};
}

std::string scales_name(const std::vector<std::size_t>& scales) {
  std::string s;
  for (std::size_t i = 0; i < scales.size(); ++i) s += (i ? "," : "") + std::to_string(scales[i]);
  return s;
}

}  // namespace

std::string format_ablation(const std::string& first_column, const std::vector<AblationRow>& rows) {
  std::string out = fmt::format("{}\trank1\tmAP\tparams\n", first_column);
  for (const auto& r : rows) out += fmt::format("{}\t{:.4f}\t{:.4f}\t{}\n", r.variant, r.rank1, r.map, r.parameters);
  return out;
}

std::vector<AblationRow> ablate_stage(const RunConfig& cfg) {
  const auto out = prepare_out(cfg);
  const ReidDataset data = generate_dataset(cfg.data, cfg.seed);
  std::vector<AblationRow> rows;
  for (auto stage : {HsgmStage::none, HsgmStage::s1, HsgmStage::s2, HsgmStage::s3, HsgmStage::s4}) {
    RunConfig variant = cfg;
    variant.backbone.hsgm_stage = stage;
    rows.push_back(train_variant(variant, data, to_string(stage), out / "ablate_stage" / to_string(stage)));
  }
  write_text(out / "ablate_stage.tsv", format_ablation("stage", rows));
  return rows;
}

std::vector<AblationRow> ablate_scales(const RunConfig& cfg) {
  if (cfg.backbone.hsgm_stage == HsgmStage::none) {
    throw ConfigError("ablate-scales needs backbone.hsgm_stage set to one of S1..S4");
  }
  const auto out = prepare_out(cfg);
  const ReidDataset data = generate_dataset(cfg.data, cfg.seed);
  std::vector<AblationRow> rows;
  const std::vector<std::vector<std::size_t>> sets{{1}, {2}, {3}, {1, 2, 3}};
  for (const auto& scales : sets) {
    RunConfig variant = cfg;
    variant.hsgm.scales = scales;
    const std::string name = scales_name(scales);
    rows.push_back(train_variant(variant, data, name, out / "ablate_scales" / ("k" + name)));
  }
  write_text(out / "ablate_scales.tsv", format_ablation("scales", rows));
  return rows;
}

int cmd_ablate_stage(const RunConfig& cfg, std::ostream& os) {
  os << format_ablation("stage", ablate_stage(cfg));
  return kExitOk;
}

int cmd_ablate_scales(const RunConfig& cfg, std::ostream& os) {
  os << format_ablation("scales", ablate_scales(cfg));
  return kExitOk;
}

int cmd_params(const RunConfig& cfg, const ParamsShape& shape, std::ostream& os) {
  prepare_out(cfg);
  const bool custom = shape.channels || shape.height || shape.width;
  if (cfg.backbone.hsgm_stage == HsgmStage::none && !custom) {
    os << fmt::format("network_params\t{}\n", build_model(cfg).parameter_count());
    os << "hsgm\tnone\n";
    return kExitOk;
  }
  std::size_t c = 0, h = 0, w = 0;
  if (cfg.backbone.hsgm_stage != HsgmStage::none) {
    const auto idx = static_cast<std::size_t>(cfg.backbone.hsgm_stage) - 1;
    c = cfg.backbone.stage_channels[idx];
    std::tie(h, w) = cfg.backbone.stage_extents()[idx];
  }
  c = shape.channels.value_or(c);
  h = shape.height.value_or(h);
  w = shape.width.value_or(w);
  if (c == 0 || h == 0 || w == 0) throw ConfigError("params needs --channels, --height and --width when no HSGM stage is set");
  try {
    cfg.hsgm.validate_for(h, w);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }

  const ParamCount closed = count_params(cfg.hsgm, c, h, w);
  const std::size_t enumerated = HsgmParams::create(cfg.hsgm, h, w, c).enumerate_parameters();
  os << fmt::format("insertion\tc={}\th={}\tw={}\n", c, h, w);
  for (std::size_t l = 0; l < closed.per_piece.size(); ++l) {
    std::size_t level_total = 0;
    for (auto n : closed.per_piece[l]) level_total += n;
    os << fmt::format("level{}\tpieces={}\tparams={}\n", l + 1, closed.per_piece[l].size(), level_total);
  }
  os << fmt::format("hsgm_params_closed_form\t{}\n", closed.total);
  os << fmt::format("hsgm_params_enumerated\t{}\n", enumerated);
  os << fmt::format("hsgm_flops_per_sample\t{:.0f}\n", estimate_flops(cfg.hsgm, c, h, w));
  if (!custom) {
    RunConfig baseline = cfg;
    baseline.backbone.hsgm_stage = HsgmStage::none;
    os << fmt::format("network_params_baseline\t{}\n", build_model(baseline).parameter_count());
    os << fmt::format("network_params_with_hsgm\t{}\n", build_model(cfg).parameter_count());
  }
  if (closed.total != enumerated) {
    os << "closed-form and enumerated counts differ\n";
    return kExitVerificationFailed;
  }
  return kExitOk;
}

int cmd_gen_data(const RunConfig& cfg, std::ostream& os) {
  const auto out = prepare_out(cfg);
  const ReidDataset data = generate_dataset(cfg.data, cfg.seed);
  const auto dump = [&](const ImageSet& set, const std::string& name) {
    const std::size_t n = set.size();
    const Tensor rows = set.images.reshaped(Shape{n, set.images.size() / n});
    const auto path = out / (name + ".hsgf");
    write_features(path, rows);
    write_labels(labels_path_for(path), set.labels);
    os << fmt::format("{}\t{} images\t{}\n", name, n, path.string());
  };
  dump(data.train, "train");
  dump(data.probe, "probe");
  dump(data.gallery, "gallery");
  return kExitOk;
}

}  // namespace hsg
