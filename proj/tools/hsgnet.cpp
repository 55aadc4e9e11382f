// hsgnet: gradient checks, toy training, evaluation, ablations and
// parameter accounting for the hierarchical similarity graph module.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hsgnet/checkpoint.hpp"
#include "hsgnet/commands.hpp"

namespace {

struct CommonFlags {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "key = value configuration file");
  cmd->add_option("--seed", f.seed, "seed for every random draw");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--set", f.sets, "override one key (key=value); repeatable")->take_all();
}

hsg::RunConfig resolve(const CommonFlags& f, hsg::RunConfig base = {}) {
  std::vector<std::string> overrides = f.sets;
  if (f.seed) overrides.push_back("seed=" + std::to_string(*f.seed));
  if (f.out) overrides.push_back("out=" + *f.out);
  std::optional<std::filesystem::path> file;
  if (f.config) file = *f.config;
  return hsg::load_config(file, overrides, std::move(base));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical similarity graph module toolkit"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::optional<double> tol;
  hsg::EvalInputs eval_inputs;
  std::optional<std::string> checkpoint, probe, gallery;
  hsg::ParamsShape shape;

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every backward rule");
  add_common(gradcheck, flags);
  gradcheck->add_option("--tol", tol, "pass threshold on the min(abs, rel) error");

  auto* train = app.add_subcommand("train", "train on the synthetic dataset");
  add_common(train, flags);

  auto* eval = app.add_subcommand("eval", "retrieval metrics from a checkpoint or feature files");
  add_common(eval, flags);
  eval->add_option("--checkpoint", checkpoint, "checkpoint to evaluate on the synthetic test split");
  eval->add_option("--probe", probe, "probe feature file (labels in <file>.labels)");
  eval->add_option("--gallery", gallery, "gallery feature file (labels in <file>.labels)");

  auto* ablate_stage = app.add_subcommand("ablate-stage", "train with the module after each stage");
  add_common(ablate_stage, flags);
  auto* ablate_scales = app.add_subcommand("ablate-scales", "train with each pooling scale set");
  add_common(ablate_scales, flags);

  auto* params = app.add_subcommand("params", "closed-form and enumerated parameter counts");
  add_common(params, flags);
  params->add_option("--channels", shape.channels, "channels at the insertion point");
  params->add_option("--height", shape.height, "map height at the insertion point");
  params->add_option("--width", shape.width, "map width at the insertion point");

  auto* gen_data = app.add_subcommand("gen-data", "write the synthetic dataset as raw-pixel feature files");
  add_common(gen_data, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? hsg::kExitOk : hsg::kExitConfigError;
  }

  try {
    if (gradcheck->parsed()) {
      hsg::RunConfig cfg = resolve(flags);
      if (tol) {
        if (*tol <= 0.0) throw hsg::ConfigError("--tol must be > 0");
        cfg.gradcheck.tol = *tol;
      }
      return hsg::cmd_gradcheck(cfg, std::cout);
    }
    if (train->parsed()) return hsg::cmd_train(resolve(flags), std::cout);
    if (eval->parsed()) {
      if (checkpoint) eval_inputs.checkpoint = *checkpoint;
      if (probe) eval_inputs.probe_features = *probe;
      if (gallery) eval_inputs.gallery_features = *gallery;
      // Without an explicit config a checkpoint describes its own model.
      hsg::RunConfig base;
      if (checkpoint && !flags.config && std::filesystem::exists(*checkpoint)) {
        base = hsg::parse_config(hsg::read_checkpoint(*checkpoint).manifest, {}, *checkpoint + " manifest");
      }
      return hsg::cmd_eval(resolve(flags, base), eval_inputs, std::cout);
    }
    if (ablate_stage->parsed()) return hsg::cmd_ablate_stage(resolve(flags), std::cout);
    if (ablate_scales->parsed()) return hsg::cmd_ablate_scales(resolve(flags), std::cout);
    if (params->parsed()) return hsg::cmd_params(resolve(flags), shape, std::cout);
    if (gen_data->parsed()) return hsg::cmd_gen_data(resolve(flags), std::cout);
  } catch (const hsg::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return hsg::kExitConfigError;
  } catch (const hsg::TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << '\n';
    return hsg::kExitVerificationFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return hsg::kExitConfigError;
  }
  return hsg::kExitOk;
}
