#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hsgnet/gradcheck.hpp"
#include "hsgnet/hsgm.hpp"
#include "hsgnet/losses.hpp"
#include "hsgnet/network.hpp"
#include "hsgnet/trainer.hpp"

namespace hsg {

/// Bad configuration text, an unknown key or an inconsistent combination.
/// `line` is 0 when the problem is not tied to a line.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, std::size_t line = 0) : Error(what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Everything a command needs. The backbone's input extents always follow
/// the dataset; `backbone.num_classes = 0` means one class per training
/// identity and is replaced by that number on `resolve`.
struct RunConfig {
  BackboneConfig backbone{};
  HsgmConfig hsgm{};
  LossConfig loss{};
  TrainConfig train{};
  SyntheticReidSpec data{};
  GradcheckOptions gradcheck{};
  std::uint64_t seed = 0;
  std::string out = "out";

  RunConfig();

  /// Fills derived fields (input extents, automatic class count).
  void resolve();
  /// Throws ConfigError for any invalid or inconsistent setting.
  void validate() const;
  /// Canonical `key = value` text covering every key; parses back to an
  /// equal configuration.
  std::string to_text() const;

  bool operator==(const RunConfig&) const = default;
};

/// Every recognised key, in canonical order.
std::vector<std::string> config_keys();

/// Applies `key = value` lines on top of `base`. `#` starts a comment.
/// Errors carry the 1-based line number and the source name.
RunConfig parse_config(const std::string& text, RunConfig base = {}, const std::string& source = "<config>");
/// One `key=value` assignment, as given to `--set`.
void apply_override(RunConfig& cfg, const std::string& assignment);
/// Sets a single key from its textual value.
void set_value(RunConfig& cfg, const std::string& key, const std::string& value);

/// Reads an optional file, applies overrides in order, then resolves and
/// validates.
RunConfig load_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides,
                      RunConfig base = {});

}  // namespace hsg
