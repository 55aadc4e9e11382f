#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "hsgnet/commands.hpp"

using namespace hsg;

TEST_CASE("defaults resolve and validate") {
  RunConfig cfg;
  CHECK(cfg.backbone.num_classes == 0);
  cfg.resolve();
  CHECK(cfg.backbone.num_classes == cfg.data.train_identities);
  CHECK(cfg.backbone.input_height == cfg.data.height);
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("canonical text round trip") {
  RunConfig cfg;
  cfg.resolve();
  CHECK(parse_config(cfg.to_text()) == cfg);

  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    RunConfig c;
    c.seed = rng();
    c.loss.gamma = std::uniform_real_distribution<double>(0.0, 0.9)(rng);
    c.train.schedule.base = std::uniform_real_distribution<double>(1e-4, 1e-1)(rng);
    c.hsgm.scales = trial % 2 ? std::vector<std::size_t>{1, 3} : std::vector<std::size_t>{2};
    c.hsgm.edge_variant = trial % 3 ? EdgeVariant::neighbor_softmax : EdgeVariant::as_written;
    c.train.schedule.decay = trial % 2 ? DecayMode::ten_percent : DecayMode::tenfold;
    c.backbone.hsgm_stage = trial % 2 ? HsgmStage::none : HsgmStage::s2;
    c.out = "runs/x" + std::to_string(trial);
    c.resolve();
    CHECK(parse_config(c.to_text()) == c);
  }
  for (const auto& key : config_keys()) CHECK(cfg.to_text().find(key + " = ") != std::string::npos);
}

TEST_CASE("parsing") {
  const RunConfig c = parse_config("# comment\n\nseed = 7   # trailing\n hsgm.scales = 1,2\ntrain.decay = ten_percent\n");
  CHECK(c.seed == 7);
  CHECK(c.hsgm.scales == std::vector<std::size_t>{1, 2});
  CHECK(c.train.schedule.decay == DecayMode::ten_percent);

  const auto line_of = [](const std::string& text) -> std::size_t {
    try {
      parse_config(text);
    } catch (const ConfigError& e) {
      return e.line();
    }
    return 0;
  };
  CHECK(line_of("seed = 1\n\nbogus.key = 3\n") == 3);
  CHECK(line_of("seed = 1\nno equals sign\n") == 2);
  CHECK(line_of("seed = abc\n") == 1);
  CHECK(line_of("loss.gamma = 0.1x\n") == 1);
  CHECK(line_of("hsgm.edge_variant = other\n") == 1);
  try {
    parse_config("seed = 1\nbogus = 2\n", {}, "run.cfg");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("run.cfg:2") != std::string::npos);
    CHECK(std::string(e.what()).find("bogus") != std::string::npos);
  }
}

TEST_CASE("overrides and files") {
  const auto dir = std::filesystem::temp_directory_path() / "hsgnet_test_config";
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "a.cfg");
    f << "seed = 3\ntrain.epochs = 4\n";
  }
  const RunConfig c = load_config(dir / "a.cfg", {"train.epochs=6", "loss.margin = 0.5"});
  CHECK(c.seed == 3);
  CHECK(c.train.epochs == 6);
  CHECK(c.loss.margin == 0.5);
  CHECK(c.backbone.num_classes == 16);
  CHECK_THROWS_AS(load_config(dir / "missing.cfg", {}), Error);
  CHECK_THROWS_AS(load_config(std::nullopt, {"nokey"}), ConfigError);
  CHECK_THROWS_AS(load_config(std::nullopt, {"data.train_identities=4"}), ConfigError);  // P = 8 > 4
  CHECK_THROWS_AS(load_config(std::nullopt, {"backbone.num_classes=3"}), ConfigError);
  CHECK_THROWS_AS(load_config(std::nullopt, {"loss.gamma=1.5"}), ConfigError);
}

TEST_CASE("params command") {
  RunConfig cfg;
  cfg.hsgm.hierarchy_splits = {1};
  cfg.hsgm.scales = {1};
  cfg.resolve();
  std::ostringstream os;
  CHECK(cmd_params(cfg, ParamsShape{4, 2, 2}, os) == kExitOk);
  CHECK(os.str().find("hsgm_params_closed_form\t16") != std::string::npos);
  CHECK(os.str().find("hsgm_params_enumerated\t16") != std::string::npos);
}

TEST_CASE("gradcheck battery") {
  std::ostringstream os;
  const auto cases = gradcheck_battery(0);
  CHECK(cases.size() > 20);
  GradcheckOptions strict;
  strict.tol = 1e-12;
  // One cheap case is enough to see the failure path.
  std::vector<GradcheckCase> first{cases.front()};
  CHECK(run_gradcheck_cases(first, strict, os) == kExitVerificationFailed);
  CHECK(os.str().find("FAIL") != std::string::npos);
  CHECK(os.str().find(cases.front().name) != std::string::npos);

  std::vector<GradcheckCase> sabotaged{{"sabotaged op", [](const GradcheckOptions& o) {
                                          return gradcheck(
                                              [](const std::vector<Var>& in) {
                                                const Var& a = in[0];
                                                return sum(make_op("flipped", a->value(), {a}, [a](const Node& self) {
                                                  Tensor g = self.grad();
                                                  for (auto& v : g.mutable_data()) v = -v;
                                                  a->accumulate_grad(g);
                                                }));
                                              },
                                              {Tensor::vector({0.5, -0.25})}, o);
                                        }}};
  std::ostringstream os2;
  CHECK(run_gradcheck_cases(sabotaged, GradcheckOptions{}, os2) == kExitVerificationFailed);
  CHECK(os2.str().find("sabotaged op") != std::string::npos);
}
