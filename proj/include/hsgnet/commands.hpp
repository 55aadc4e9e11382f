#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "hsgnet/config.hpp"

namespace hsg {

enum ExitCode : int { kExitOk = 0, kExitVerificationFailed = 1, kExitConfigError = 2 };

// ---------------------------------------------------------------------------
// Gradient-check battery

struct GradcheckCase {
  std::string name;
  /// Runs the check with the given options.
  std::function<GradcheckReport(const GradcheckOptions&)> run;
};

/// Every differentiable operation of the library plus a micro network,
/// each on small seeded inputs.
std::vector<GradcheckCase> gradcheck_battery(std::uint64_t seed);

/// Prints one line per case and a summary; returns kExitVerificationFailed
/// if any case fails or throws.
int run_gradcheck_cases(const std::vector<GradcheckCase>& cases, const GradcheckOptions& opts, std::ostream& os);

// ---------------------------------------------------------------------------
// Commands. Each echoes the resolved configuration to `<out>/config.txt`.

int cmd_gradcheck(const RunConfig& cfg, std::ostream& os);
int cmd_train(const RunConfig& cfg, std::ostream& os);

struct EvalInputs {
  std::optional<std::filesystem::path> checkpoint;
  /// Feature-file mode: both set, labels read from the `.labels` sidecars.
  std::optional<std::filesystem::path> probe_features;
  std::optional<std::filesystem::path> gallery_features;
};
int cmd_eval(const RunConfig& cfg, const EvalInputs& inputs, std::ostream& os);

struct AblationRow {
  std::string variant;
  double rank1 = 0.0;
  double map = 0.0;
  std::size_t parameters = 0;
};
/// Trains {none, S1..S4} with one seed; writes ablate_stage.tsv.
std::vector<AblationRow> ablate_stage(const RunConfig& cfg);
/// Trains scale sets {1}, {2}, {3}, {1,2,3}; writes ablate_scales.tsv.
std::vector<AblationRow> ablate_scales(const RunConfig& cfg);
std::string format_ablation(const std::string& first_column, const std::vector<AblationRow>& rows);
int cmd_ablate_stage(const RunConfig& cfg, std::ostream& os);
int cmd_ablate_scales(const RunConfig& cfg, std::ostream& os);

/// Insertion-point extents for `params`; unset fields follow the backbone.
struct ParamsShape {
  std::optional<std::size_t> channels;
  std::optional<std::size_t> height;
  std::optional<std::size_t> width;
};
int cmd_params(const RunConfig& cfg, const ParamsShape& shape, std::ostream& os);

/// Writes train/probe/gallery images as raw-pixel feature files with label
/// sidecars.
int cmd_gen_data(const RunConfig& cfg, std::ostream& os);

/// The model a configuration describes, freshly initialised from its seed.
HsgNet build_model(const RunConfig& cfg);

}  // namespace hsg
