// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: acceptance [output directory]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "hsgnet/commands.hpp"
#include "support.hpp"

using namespace hsg;
using testing_support::random_tensor;
using testing_support::to_map;
using testing_support::values;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// --- 1: gradients ---------------------------------------------------------

Outcome gradients() {
  const auto start = Clock::now();
  GradcheckOptions opts;
  opts.step = 1e-5;
  opts.tol = 1e-5;
  std::size_t passed = 0, total = 0;
  double worst = 0.0;
  std::string worst_name;
  for (const auto& c : gradcheck_battery(0)) {
    ++total;
    const GradcheckReport r = c.run(opts);
    if (r.passed) ++passed;
    if (r.max_error >= worst) {
      worst = r.max_error;
      worst_name = c.name;
    }
  }
  const double secs = seconds_since(start);
  return {passed == total && secs < 120.0,
          fmt::format("{}/{} operations pass, worst {:.3g} ({}), {:.1f} s", passed, total, worst, worst_name, secs)};
}

// --- 2: edge rows sum to one -----------------------------------------------

Outcome edge_rows() {
  std::mt19937_64 rng(2);
  double worst = 0.0;
  std::size_t graphs = 0;
  for (int trial = 0; trial < 100; ++trial) {
    for (GraphKind kind : {GraphKind::spatial, GraphKind::channel}) {
      NeighborSpec spec;
      spec.spatial_window = trial % 2 ? 3 : 5;
      spec.channel_window = trial % 3 ? 3 : 5;
      spec.channel_stride = 1 + trial % 3;
      Tensor nodes = kind == GraphKind::spatial ? random_tensor({1 + rng() % 8, 1 + rng() % 8}, rng, 5.0)
                                                : random_tensor({2 + rng() % 30}, rng, 5.0);
      const SimilarityGraph g = build_graph(nodes, spec, kind);
      const std::size_t d = g.edges.dim(0);
      const Neighborhood nb = kind == GraphKind::spatial ? spatial_neighborhood(nodes.dim(0), nodes.dim(1), spec.spatial_window)
                                                         : channel_neighborhood(d, spec.channel_window, spec.channel_stride);
      for (std::size_t i = 0; i < d; ++i) {
        if (nb.lists[i].empty()) continue;
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += g.edges[i * d + j];
        worst = std::max(worst, std::abs(s - 1.0));
      }
      ++graphs;
    }
  }
  return {worst <= 1e-12, fmt::format("{} graphs, max |row sum - 1| = {:.3g}", graphs, worst)};
}

// --- 3: identity at initialisation ------------------------------------------

Outcome identity_at_init() {
  std::mt19937_64 rng(3);
  int modules_ok = 0;
  const std::vector<std::vector<std::size_t>> split_sets{{1}, {1, 2}, {1, 2, 4}, {2, 4}};
  for (int trial = 0; trial < 20; ++trial) {
    HsgmConfig cfg;
    cfg.hierarchy_splits = split_sets[trial % split_sets.size()];
    cfg.scales = trial % 2 ? std::vector<std::size_t>{1, 2, 3} : std::vector<std::size_t>{2};
    const std::size_t h = 4 * (1 + rng() % 2), w = 1 + rng() % 4, c = 1 + rng() % 8;
    const Tensor x = random_tensor({2, h, w, c}, rng, 2.0);
    HsgmParams p = HsgmParams::create(cfg, h, w, c);
    bool ok = true;
    for (bool training : {false, true}) ok = ok && hsgm_forward(constant(x), cfg, p, ForwardContext{training, false})->value().bit_equal(x);
    modules_ok += ok ? 1 : 0;
  }

  BackboneConfig base;
  base.hsgm_stage = HsgmStage::none;
  const Tensor images = random_tensor({4, 32, 16, 3}, rng);
  HsgNet baseline(base, HsgmConfig{}, 0);
  const Tensor ref_train = baseline.forward(constant(images), ForwardContext{true, false}).logits->value();
  const Tensor ref_eval = baseline.embed(images);
  int nets_ok = 0;
  for (auto stage : {HsgmStage::s1, HsgmStage::s2, HsgmStage::s3, HsgmStage::s4}) {
    BackboneConfig b = base;
    b.hsgm_stage = stage;
    HsgNet net(b, HsgmConfig{}, 0);
    const bool ok = net.forward(constant(images), ForwardContext{true, false}).logits->value().bit_equal(ref_train) &&
                    net.embed(images).bit_equal(ref_eval);
    nets_ok += ok ? 1 : 0;
  }
  return {modules_ok == 20 && nets_ok == 4,
          fmt::format("{}/20 module shapes bitwise identical, {}/4 insertion stages match the baseline", modules_ok, nets_ok)};
}

// --- 4: oracle equivalence -------------------------------------------------

Outcome oracle_equivalence() {
  std::mt19937_64 rng(4);
  double spatial = 0.0, channel = 0.0, fuse = 0.0, module = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 2, h = 8, w = 1 + rng() % 4, c = 1 + rng() % 8;
    const Tensor x = random_tensor({n, h, w, c}, rng);
    const bool as_written = trial % 4 == 3;
    const auto variant = as_written ? EdgeVariant::as_written : EdgeVariant::neighbor_softmax;
    NeighborSpec spec;
    spec.channel_stride = 1 + trial % 2;

    const std::vector<std::size_t> scales{1, 2, 3};
    std::vector<Var> thetas;
    std::vector<oracle::Vec> raw;
    for (std::size_t s = 0; s < 3; ++s) {
      thetas.push_back(parameter(random_tensor({h * w}, rng, 0.5, 1.0)));
      raw.push_back(values(thetas.back()->value()));
    }
    const Tensor a_ms = spatial_branch(constant(x), spec, scales, thetas, variant)->value();
    spatial = std::max(spatial, testing_support::max_abs(oracle::spatial_branch(to_map(x), 3, scales, raw, as_written), a_ms.data()));

    const Var delta = parameter(random_tensor({c}, rng, 0.5, 1.0));
    const Tensor a_c = channel_branch(constant(x), spec, delta, variant)->value();
    channel = std::max(channel, testing_support::max_abs(
                                    oracle::channel_branch(to_map(x), 3, spec.channel_stride, values(delta->value()), as_written),
                                    a_c.data()));

    BatchNorm bn = BatchNorm::create(c, 0.7);
    bn.running_mean = random_tensor({c}, rng);
    for (auto& v : bn.running_var.mutable_data()) v = 0.5 + std::abs(std::normal_distribution<double>()(rng));
    for (bool training : {false, true}) {
      const Tensor got = fuse_and_enhance(constant(a_ms.reshaped(Shape{n, h, w, 1})), constant(a_c), constant(x), bn,
                                          ForwardContext{training, false})->value();
      fuse = std::max(fuse, testing_support::max_abs(
                                oracle::fuse(values(a_ms), values(a_c), to_map(x), testing_support::to_norm(bn), training, 0.01).v,
                                got.data()));
    }

    HsgmConfig cfg;
    cfg.edge_variant = variant;
    cfg.neighbor_spec = spec;
    HsgmParams p = HsgmParams::create(cfg, h, w, c);
    testing_support::jitter(p, rng);
    for (bool training : {false, true}) {
      const Tensor got = hsgm_forward(constant(x), cfg, p, ForwardContext{training, false})->value();
      module = std::max(module, testing_support::max_abs(
                                    oracle::module(to_map(x), testing_support::to_spec(cfg), testing_support::to_weights(p), training).v,
                                    got.data()));
    }
  }
  const double worst = std::max({spatial, channel, fuse, module});
  return {worst <= 1e-12, fmt::format("max abs deviation: spatial {:.2g}, channel {:.2g}, fuse {:.2g}, module {:.2g}",
                                      spatial, channel, fuse, module)};
}

// --- 5: loss values ---------------------------------------------------------

Outcome loss_values() {
  double uniform = 0.0;
  for (std::size_t k : {2, 4, 10}) {
    const std::vector<std::size_t> labels{0, k - 1};
    const double v = lsce_loss(constant(Tensor(Shape{2, k}, 0.3)), labels, 0.1)->value()[0];
    uniform = std::max(uniform, std::abs(v - std::log(static_cast<double>(k))));
  }
  const std::vector<std::size_t> zero{0};
  const double worked = lsce_loss(constant(Tensor::matrix({{2, 0}})), zero, 0.1)->value()[0];
  const double worked_expected = 0.95 * std::log1p(std::exp(-2.0)) + 0.05 * (2.0 + std::log1p(std::exp(-2.0)));
  const double worked_err = std::abs(worked - worked_expected);

  const std::vector<std::size_t> sep{0, 0, 1, 1}, mixed{0, 1, 0, 1};
  const double t0 = triplet_loss(constant(Tensor(Shape{4, 1}, std::vector<double>{0, 1, 4, 5})), sep, 1.2)->value()[0];
  const double t1 = triplet_loss(constant(Tensor(Shape{4, 1}, std::vector<double>{0, 1, 2, 3})), mixed, 1.2)->value()[0];
  const double triplet_err = std::max(std::abs(t0), std::abs(t1 - 2.2));
  return {uniform <= 1e-9 && worked_err <= 1e-6 && triplet_err <= 1e-9,
          fmt::format("uniform |L - ln K| {:.2g}; worked example {:.7f} (err {:.2g}); triplet cases {:.3g}, {:.3g}", uniform,
                      worked, worked_err, t0, t1)};
}

// --- 6: metric oracle -------------------------------------------------------

Outcome metric_oracle() {
  const RankingMetrics hand = compute_metrics({{4, 2, 7, 1}}, std::vector<std::size_t>{5},
                                              std::vector<std::size_t>{0, 0, 9, 0, 5, 0, 0, 5}, 3);
  const bool hand_ok = std::abs(hand.map - 5.0 / 6.0) < 1e-15;
  std::mt19937_64 rng(6);
  int exact = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t np = 1 + rng() % 10, ng = 1 + rng() % 20, ids = 1 + rng() % 5;
    std::vector<std::size_t> pl(np), gl(ng);
    for (auto& l : pl) l = rng() % ids;
    for (auto& l : gl) l = rng() % ids;
    const auto rankings = rank_gallery(random_tensor({np, 4}, rng), random_tensor({ng, 4}, rng));
    const RankingMetrics m = compute_metrics(rankings, pl, gl, 10);
    const oracle::Metrics o = oracle::metrics(rankings, pl, gl, 10);
    exact += m.map == o.map && m.cmc == o.cmc && m.evaluated_probes == o.evaluated ? 1 : 0;
  }
  return {hand_ok && exact == 100, fmt::format("AP hand case {:.6f}; {}/100 random instances exact", hand.map, exact)};
}

// --- 7 and 9: toy training --------------------------------------------------

struct ToyRun {
  TrainResult result;
  double seconds = 0.0;
  std::filesystem::path log;
};

ToyRun toy_training(const std::filesystem::path& out) {
  RunConfig cfg;
  cfg.seed = 0;
  cfg.out = out.string();
  cfg.resolve();
  cfg.validate();
  const auto start = Clock::now();
  const ReidDataset data = generate_dataset(cfg.data, cfg.seed);
  HsgNet model = build_model(cfg);
  TrainOptions opts;
  opts.out_dir = out / "toy";
  opts.manifest = cfg.to_text();
  ToyRun run;
  run.result = train(model, data, cfg.train, cfg.loss, cfg.seed, opts);
  run.seconds = seconds_since(start);
  run.log = opts.out_dir / "train_log.tsv";
  return run;
}

Outcome toy_end_to_end(const ToyRun& run, const std::filesystem::path& out, std::string& table) {
  const RankingMetrics& m = run.result.final_metrics;
  RunConfig cfg;
  cfg.out = (out / "ablation").string();
  cfg.resolve();
  const auto start = Clock::now();
  const auto rows = ablate_stage(cfg);
  table = format_ablation("stage", rows);
  const bool table_ok = rows.size() == 5 && std::filesystem::exists(out / "ablation" / "ablate_stage.tsv");
  return {m.rank(1) >= 0.9 && m.map >= 0.8 && run.seconds < 600.0 && table_ok,
          fmt::format("30 epochs in {:.1f} s: Rank1 {:.4f}, mAP {:.4f}; ablate-stage table with {} rows in {:.1f} s",
                      run.seconds, m.rank(1), m.map, rows.size(), seconds_since(start))};
}

// Expected rate written out independently of LrSchedule.
double expected_lr(std::size_t e, double factor) {
  if (e < 10) return 0.001 + (0.01 - 0.001) * static_cast<double>(e) / 10.0;
  if (e < 30) return 0.01;
  return 0.01 * std::pow(factor, static_cast<double>((e - 30) / 20));
}

// Reads the lr column of a written training log.
std::vector<double> logged_rates(const std::filesystem::path& path) {
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  std::vector<double> out;
  while (std::getline(is, line)) {
    std::istringstream row(line);
    std::size_t epoch;
    std::string lr;
    row >> epoch >> lr;
    out.push_back(std::strtod(lr.c_str(), nullptr));
  }
  return out;
}

Outcome schedule(const ToyRun& run, const std::filesystem::path& out) {
  const auto toy = logged_rates(run.log);
  bool ok = toy.size() == 30;
  for (std::size_t e = 0; ok && e < toy.size(); ++e) ok = std::abs(toy[e] - expected_lr(e, 0.1)) <= 1e-15;
  ok = ok && toy[0] == 0.001 && toy[10] == 0.01 && toy[29] == 0.01;

  // A small model run long enough to pass two decay steps in each mode.
  std::size_t long_checked = 0;
  for (auto mode : {DecayMode::tenfold, DecayMode::ten_percent}) {
    RunConfig cfg;
    cfg.data.train_identities = 4;
    cfg.data.test_identities = 2;
    cfg.data.images_per_identity = 2;
    cfg.backbone.stage_channels = {2, 2, 4, 4};
    cfg.backbone.feature_dim = 4;
    cfg.train.p = 2;
    cfg.train.k = 2;
    cfg.train.epochs = 75;
    cfg.train.eval_every = 0;
    cfg.train.schedule.decay = mode;
    cfg.resolve();
    cfg.validate();
    HsgNet model = build_model(cfg);
    TrainOptions opts;
    opts.out_dir = out / ("schedule_" + to_string(mode));
    train(model, generate_dataset(cfg.data, cfg.seed), cfg.train, cfg.loss, cfg.seed, opts);
    const auto rates = logged_rates(opts.out_dir / "train_log.tsv");
    const double factor = mode == DecayMode::tenfold ? 0.1 : 0.9;
    ok = ok && rates.size() == 75;
    for (std::size_t e = 0; ok && e < rates.size(); ++e) ok = std::abs(rates[e] - expected_lr(e, factor)) <= 1e-15;
    long_checked += rates.size();
  }
  return {ok, fmt::format("toy log lr {} / {} / {} at epochs 0 / 10 / 29; {} further epochs checked through two decay steps in both modes",
                          toy.empty() ? 0.0 : toy[0], toy.size() > 10 ? toy[10] : 0.0, toy.size() > 29 ? toy[29] : 0.0,
                          long_checked)};
}

// --- 8: parameter accounting ----------------------------------------------

Outcome accounting() {
  std::mt19937_64 rng(8);
  int exact = 0;
  for (int trial = 0; trial < 20; ++trial) {
    HsgmConfig cfg;
    const std::vector<std::vector<std::size_t>> split_sets{{1}, {1, 2}, {1, 2, 4}, {2, 4}, {4}};
    const std::vector<std::vector<std::size_t>> scale_sets{{1}, {2}, {3}, {1, 2, 3}};
    cfg.hierarchy_splits = split_sets[rng() % split_sets.size()];
    cfg.scales = scale_sets[rng() % scale_sets.size()];
    if (trial % 4 == 0) cfg.aggregation_mode = AggregationMode::pyramid;
    const std::size_t h = 16, w = 4 * (1 + rng() % 2), c = 1 + rng() % 128;
    exact += count_params(cfg, c, h, w).total == HsgmParams::create(cfg, h, w, c).enumerate_parameters() ? 1 : 0;
  }
  HsgmConfig small;
  small.hierarchy_splits = {1};
  small.scales = {1};
  const std::size_t example = count_params(small, 4, 2, 2).total;
  return {exact == 20 && example == 16, fmt::format("{}/20 random configs exact; c=4 h=2 w=2 single piece gives {}", exact, example)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::filesystem::path out = argc > 1 ? argv[1] : "acceptance_out";
  std::filesystem::create_directories(out);
  int failures = 0;
  std::string lines;
  const auto report = [&](int number, const std::string& title, const std::function<Outcome()>& check) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, fmt::format("threw: {}", e.what())};
    }
    failures += o.pass ? 0 : 1;
    const std::string line = fmt::format("criterion {} {:<26} {}  {}\n", number, title, o.pass ? "PASS" : "FAIL", o.detail);
    std::fputs(line.c_str(), stdout);
    std::fflush(stdout);
    lines += line;
  };

  report(1, "gradient correctness", gradients);
  report(2, "edge normalisation", edge_rows);
  report(3, "identity at init", identity_at_init);
  report(4, "oracle equivalence", oracle_equivalence);
  report(5, "loss values", loss_values);
  report(6, "metric oracle", metric_oracle);

  ToyRun run;
  std::string table;
  bool trained = false;
  report(7, "toy end-to-end", [&] {
    run = toy_training(out);
    trained = true;
    return toy_end_to_end(run, out, table);
  });
  report(8, "parameter accounting", accounting);
  report(9, "schedule conformance", [&] {
    if (!trained) return Outcome{false, "toy training did not complete"};
    return schedule(run, out);
  });

  if (!table.empty()) std::printf("\nablate-stage (seed 0, 30 epochs)\n%s", table.c_str());
  const std::string summary = fmt::format("acceptance: {}/9 criteria pass\n", 9 - failures);
  std::printf("\n%s", summary.c_str());
  std::ofstream(out / "report.txt") << lines << (table.empty() ? "" : "\n" + table) << "\n" << summary;
  return failures == 0 ? 0 : 1;
}
