#include <doctest.h>

#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "hsgnet/commands.hpp"
#include "hsgnet/trainer.hpp"

using namespace hsg;

namespace {

std::vector<Tensor> parameter_values(const HsgNet& net) {
  std::vector<Tensor> out;
  for (const auto& p : net.parameters()) out.push_back(p.var->value());
  return out;
}

RunConfig tiny_run() {
  RunConfig cfg;
  cfg.data.train_identities = 4;
  cfg.data.test_identities = 3;
  cfg.data.images_per_identity = 4;
  cfg.backbone.stage_channels = {4, 4, 8, 8};
  cfg.backbone.feature_dim = 8;
  cfg.train.p = 2;
  cfg.train.k = 2;
  cfg.train.epochs = 2;
  cfg.resolve();
  cfg.validate();
  return cfg;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  LrSchedule s;
  CHECK(s.lr(0) == 0.001);
  CHECK(s.lr(5) == doctest::Approx(0.0055).epsilon(1e-15));
  for (std::size_t e = 0; e < 10; ++e) CHECK(s.lr(e) == doctest::Approx(0.001 + 0.009 * e / 10.0).epsilon(1e-15));
  CHECK(s.lr(10) == 0.01);
  CHECK(s.lr(29) == 0.01);
  CHECK(s.lr(30) == 0.01);
  CHECK(s.lr(49) == 0.01);
  CHECK(s.lr(50) == doctest::Approx(0.001).epsilon(1e-15));
  CHECK(s.lr(70) == doctest::Approx(0.0001).epsilon(1e-15));
  s.decay = DecayMode::ten_percent;
  CHECK(s.lr(50) == doctest::Approx(0.009).epsilon(1e-15));
  CHECK(s.lr(70) == doctest::Approx(0.0081).epsilon(1e-15));
  CHECK(parse_decay_mode(to_string(DecayMode::tenfold)) == DecayMode::tenfold);
  CHECK_THROWS_AS(parse_decay_mode("half"), Error);
}

TEST_CASE("synthetic dataset") {
  SyntheticReidSpec spec;
  SUBCASE("counts and label ranges") {
    const ReidDataset d = generate_dataset(spec, 0);
    CHECK(d.train.size() == 128);
    CHECK(d.train.images.shape() == Shape{128, 32, 16, 3});
    CHECK(d.probe.size() == 8);
    CHECK(d.gallery.size() == 56);
    CHECK(std::set<std::size_t>(d.train.labels.begin(), d.train.labels.end()).size() == 16);
    CHECK(std::set<std::size_t>(d.probe.labels.begin(), d.probe.labels.end()).size() == 8);
    std::map<std::size_t, int> per;
    for (auto l : d.gallery.labels) ++per[l];
    for (const auto& [id, n] : per) CHECK(n == 7);
  }
  SUBCASE("deterministic in the seed") {
    const ReidDataset a = generate_dataset(spec, 5), b = generate_dataset(spec, 5), c = generate_dataset(spec, 6);
    CHECK(a.train.images.bit_equal(b.train.images));
    CHECK(a.gallery.images.bit_equal(b.gallery.images));
    CHECK(a.probe.labels == b.probe.labels);
    CHECK_FALSE(a.train.images.bit_equal(c.train.images));
  }
  SUBCASE("without nuisance every image of an identity is the same") {
    spec.illumination = 0.0;
    spec.flip_probability = 0.0;
    spec.noise = 0.0;
    const ReidDataset d = generate_dataset(spec, 1);
    const std::size_t per_image = 32 * 16 * 3;
    std::map<std::size_t, std::size_t> first;
    bool distinct_ids_differ = false;
    for (std::size_t i = 0; i < d.train.size(); ++i) {
      const auto [it, fresh] = first.emplace(d.train.labels[i], i);
      const std::size_t j = it->second;
      bool same = true;
      for (std::size_t t = 0; t < per_image; ++t) same = same && d.train.images[i * per_image + t] == d.train.images[j * per_image + t];
      if (!fresh) CHECK(same);
      if (fresh && i > 0) {
        bool same_as_first = true;
        for (std::size_t t = 0; t < per_image; ++t) same_as_first = same_as_first && d.train.images[i * per_image + t] == d.train.images[t];
        distinct_ids_differ = distinct_ids_differ || !same_as_first;
      }
    }
    CHECK(distinct_ids_differ);
  }
  SUBCASE("errors") {
    spec.train_identities = 0;
    CHECK_THROWS_AS(generate_dataset(spec, 0), Error);
    spec = {};
    spec.images_per_identity = 1;
    CHECK_THROWS_AS(generate_dataset(spec, 0), Error);
  }
}

TEST_CASE("PK sampler") {
  const auto check_epochs = [](const std::vector<std::size_t>& counts, std::size_t p, std::size_t k, std::uint64_t seed) {
    std::vector<std::size_t> labels;
    for (std::size_t id = 0; id < counts.size(); ++id)
      for (std::size_t j = 0; j < counts[id]; ++j) labels.push_back(id);
    PkSampler sampler(labels, p, k);
    std::mt19937_64 rng(seed);
    for (int round = 0; round < 5; ++round) {
      const auto batches = sampler.epoch(rng);
      std::set<std::size_t> seen;
      for (const auto& b : batches) {
        REQUIRE(b.indices.size() == p * k);
        std::map<std::size_t, std::size_t> per;
        for (std::size_t i = 0; i < b.indices.size(); ++i) {
          CHECK(labels[b.indices[i]] == b.labels[i]);
          ++per[b.labels[i]];
        }
        CHECK(per.size() == p);
        for (const auto& [id, n] : per) CHECK(n == k);
        for (auto l : b.labels) seen.insert(l);
      }
      CHECK(seen.size() == counts.size());
    }
  };
  check_epochs({8, 3, 5, 4, 12, 2}, 3, 4, 9);
  // One group per identity and a count that is not a multiple of P leaves
  // identities over after the full batches.
  check_epochs(std::vector<std::size_t>(6, 4), 4, 4, 1);
  check_epochs(std::vector<std::size_t>(7, 1), 3, 2, 2);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::size_t> counts(2 + rng() % 10);
    for (auto& c : counts) c = 1 + rng() % 9;
    const std::size_t p = 2 + rng() % (counts.size() - 1);
    check_epochs(counts, p, 1 + rng() % 4, rng());
  }
  CHECK_THROWS_AS(PkSampler(std::vector<std::size_t>{0, 0, 1, 1}, 3, 2), Error);
}

TEST_CASE("training steps") {
  const RunConfig cfg = tiny_run();
  const ReidDataset data = generate_dataset(cfg.data, cfg.seed);
  const ImageSet batch = gather(data.train, {0, 1, 4, 5});

  SUBCASE("zero learning rate and decay leave parameters unchanged") {
    HsgNet net = build_model(cfg);
    Sgd opt(net.parameters(), 0.9, 0.0);
    const auto before = parameter_values(net);
    const StepLosses s = train_step(net, opt, batch, cfg.loss, 0.0);
    CHECK(std::isfinite(s.total));
    CHECK(s.total == doctest::Approx(total_loss(s.triplet, s.lsce, cfg.loss.alpha, cfg.loss.beta)));
    const auto after = parameter_values(net);
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i].bit_equal(after[i]));
  }
  SUBCASE("a positive learning rate moves parameters") {
    HsgNet net = build_model(cfg);
    Sgd opt(net.parameters(), 0.9, 5e-4);
    const auto before = parameter_values(net);
    train_step(net, opt, batch, cfg.loss, 0.01);
    CHECK_FALSE(before[0].bit_equal(net.parameters()[0].var->value()));
  }
  SUBCASE("non-finite input aborts with the step index") {
    ReidDataset bad = data;
    for (auto& v : bad.train.images.mutable_data()) v = std::numeric_limits<double>::quiet_NaN();
    HsgNet net = build_model(cfg);
    try {
      train(net, bad, cfg.train, cfg.loss, cfg.seed);
      FAIL("expected divergence");
    } catch (const TrainingDiverged& e) {
      CHECK(e.step() == 0);
    }
    RunConfig plain = cfg;
    plain.backbone.hsgm_stage = HsgmStage::none;
    HsgNet baseline = build_model(plain);
    try {
      train(baseline, bad, cfg.train, cfg.loss, cfg.seed);
      FAIL("expected divergence");
    } catch (const TrainingDiverged& e) {
      CHECK(e.step() == 0);
      CHECK(std::string(e.what()).find("loss") != std::string::npos);
    }
  }
}

TEST_CASE("training is bit-deterministic") {
  const RunConfig cfg = tiny_run();
  const ReidDataset data = generate_dataset(cfg.data, cfg.seed);
  HsgNet a = build_model(cfg), b = build_model(cfg);
  const TrainResult ra = train(a, data, cfg.train, cfg.loss, cfg.seed);
  const TrainResult rb = train(b, data, cfg.train, cfg.loss, cfg.seed);
  CHECK(format_train_log(ra.log) == format_train_log(rb.log));
  const auto pa = parameter_values(a), pb = parameter_values(b);
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].bit_equal(pb[i]));
  for (std::size_t e = 0; e < ra.log.size(); ++e) CHECK(ra.log[e].lr == cfg.train.schedule.lr(e));
  const std::string text = format_train_log(ra.log);
  CHECK(text.rfind("epoch\tlr\tloss_total\tloss_triplet\tloss_lsce\n", 0) == 0);
}

TEST_CASE("toy training reduces the loss") {
  RunConfig cfg;
  cfg.train.epochs = 10;
  cfg.train.eval_every = 0;
  cfg.resolve();
  const ReidDataset data = generate_dataset(cfg.data, cfg.seed);
  HsgNet net = build_model(cfg);
  const TrainResult r = train(net, data, cfg.train, cfg.loss, cfg.seed);
  REQUIRE(r.log.size() == 10);
  CHECK(r.log[9].loss_total < r.log[0].loss_total);
}
