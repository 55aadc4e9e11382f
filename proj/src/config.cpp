#include "hsgnet/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace hsg {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& text) {
  const std::string t = trim(text);
  T value{};
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    throw Error(fmt::format("'{}' is not a valid {}", text, std::is_floating_point_v<T> ? "number" : "non-negative integer"));
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(value)) throw Error(fmt::format("'{}' is not finite", text));
  }
  return value;
}

std::vector<std::size_t> parse_list(const std::string& text) {
  std::string t = trim(text);
  if (t.size() >= 2 && t.front() == '[' && t.back() == ']') t = t.substr(1, t.size() - 2);
  std::vector<std::size_t> out;
  std::stringstream ss(t);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<std::size_t>(item));
  if (out.empty()) throw Error(fmt::format("'{}' is not a comma-separated list", text));
  return out;
}

template <std::size_t N>
std::array<std::size_t, N> parse_array(const std::string& text) {
  const auto list = parse_list(text);
  if (list.size() != N) throw Error(fmt::format("expected {} comma-separated values, got {}", N, list.size()));
  std::array<std::size_t, N> out{};
  std::copy(list.begin(), list.end(), out.begin());
  return out;
}

bool parse_bool(const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1") return true;
  if (t == "false" || t == "0") return false;
  throw Error(fmt::format("'{}' is not a boolean (true/false)", text));
}

template <typename Range>
std::string join(const Range& r) {
  return fmt::format("{}", fmt::join(r, ","));
}

std::string edge_variant_name(EdgeVariant v) { return v == EdgeVariant::neighbor_softmax ? "neighbor_softmax" : "as_written"; }
EdgeVariant parse_edge_variant(const std::string& t) {
  if (t == "neighbor_softmax") return EdgeVariant::neighbor_softmax;
  if (t == "as_written") return EdgeVariant::as_written;
  throw Error(fmt::format("unknown edge variant '{}' (expected neighbor_softmax or as_written)", t));
}

std::string aggregation_name(AggregationMode m) { return m == AggregationMode::stripe_concat ? "stripe_concat" : "pyramid"; }
AggregationMode parse_aggregation(const std::string& t) {
  if (t == "stripe_concat") return AggregationMode::stripe_concat;
  if (t == "pyramid") return AggregationMode::pyramid;
  throw Error(fmt::format("unknown aggregation mode '{}' (expected stripe_concat or pyramid)", t));
}

struct Field {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define HSG_SIZE(KEY, MEMBER) \
  Field { KEY, [](const RunConfig& c) { return fmt::format("{}", c.MEMBER); }, \
          [](RunConfig& c, const std::string& v) { c.MEMBER = parse_number<std::size_t>(v); } }
#define HSG_REAL(KEY, MEMBER) \
  Field { KEY, [](const RunConfig& c) { return fmt::format("{}", c.MEMBER); }, \
          [](RunConfig& c, const std::string& v) { c.MEMBER = parse_number<double>(v); } }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"seed", [](const RunConfig& c) { return fmt::format("{}", c.seed); },
       [](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>(v); }},
      {"out", [](const RunConfig& c) { return c.out; },
       [](RunConfig& c, const std::string& v) {
         if (v.empty()) throw Error("output directory must not be empty");
         c.out = v;
       }},

      {"backbone.stage_channels", [](const RunConfig& c) { return join(c.backbone.stage_channels); },
       [](RunConfig& c, const std::string& v) { c.backbone.stage_channels = parse_array<4>(v); }},
      {"backbone.stage_strides", [](const RunConfig& c) { return join(c.backbone.stage_strides); },
       [](RunConfig& c, const std::string& v) { c.backbone.stage_strides = parse_array<4>(v); }},
      {"backbone.hsgm_stage", [](const RunConfig& c) { return to_string(c.backbone.hsgm_stage); },
       [](RunConfig& c, const std::string& v) { c.backbone.hsgm_stage = parse_hsgm_stage(v); }},
      HSG_SIZE("backbone.feature_dim", backbone.feature_dim),
      HSG_SIZE("backbone.num_classes", backbone.num_classes),

      {"hsgm.scales", [](const RunConfig& c) { return join(c.hsgm.scales); },
       [](RunConfig& c, const std::string& v) { c.hsgm.scales = parse_list(v); }},
      {"hsgm.splits", [](const RunConfig& c) { return join(c.hsgm.hierarchy_splits); },
       [](RunConfig& c, const std::string& v) { c.hsgm.hierarchy_splits = parse_list(v); }},
      HSG_SIZE("hsgm.spatial_window", hsgm.neighbor_spec.spatial_window),
      HSG_SIZE("hsgm.channel_window", hsgm.neighbor_spec.channel_window),
      HSG_SIZE("hsgm.channel_stride", hsgm.neighbor_spec.channel_stride),
      {"hsgm.edge_variant", [](const RunConfig& c) { return edge_variant_name(c.hsgm.edge_variant); },
       [](RunConfig& c, const std::string& v) { c.hsgm.edge_variant = parse_edge_variant(v); }},
      {"hsgm.aggregation", [](const RunConfig& c) { return aggregation_name(c.hsgm.aggregation_mode); },
       [](RunConfig& c, const std::string& v) { c.hsgm.aggregation_mode = parse_aggregation(v); }},
      HSG_REAL("hsgm.leaky_slope", hsgm.leaky_slope),

      HSG_REAL("loss.alpha", loss.alpha),
      HSG_REAL("loss.beta", loss.beta),
      HSG_REAL("loss.gamma", loss.gamma),
      HSG_REAL("loss.margin", loss.margin),

      HSG_SIZE("train.epochs", train.epochs),
      HSG_REAL("train.base_lr", train.schedule.base),
      HSG_REAL("train.warmup_lr", train.schedule.warmup_start),
      HSG_SIZE("train.warmup_epochs", train.schedule.warmup_epochs),
      HSG_SIZE("train.hold_until", train.schedule.hold_until),
      HSG_SIZE("train.decay_every", train.schedule.decay_every),
      {"train.decay", [](const RunConfig& c) { return to_string(c.train.schedule.decay); },
       [](RunConfig& c, const std::string& v) { c.train.schedule.decay = parse_decay_mode(v); }},
      HSG_REAL("train.momentum", train.momentum),
      HSG_REAL("train.weight_decay", train.weight_decay),
      HSG_SIZE("train.p", train.p),
      HSG_SIZE("train.k", train.k),
      {"train.flip", [](const RunConfig& c) { return std::string(c.train.flip_augment ? "true" : "false"); },
       [](RunConfig& c, const std::string& v) { c.train.flip_augment = parse_bool(v); }},
      HSG_SIZE("train.eval_every", train.eval_every),

      HSG_SIZE("data.train_identities", data.train_identities),
      HSG_SIZE("data.test_identities", data.test_identities),
      HSG_SIZE("data.images_per_identity", data.images_per_identity),
      HSG_SIZE("data.height", data.height),
      HSG_SIZE("data.width", data.width),
      HSG_REAL("data.illumination", data.illumination),
      HSG_REAL("data.flip_probability", data.flip_probability),
      HSG_REAL("data.noise", data.noise),

      HSG_REAL("gradcheck.step", gradcheck.step),
      HSG_REAL("gradcheck.tol", gradcheck.tol),
  };
  return table;
}

#undef HSG_SIZE
#undef HSG_REAL

const Field* find_field(const std::string& key) {
  for (const auto& f : fields())
    if (key == f.key) return &f;
  return nullptr;
}

}  // namespace

RunConfig::RunConfig() { backbone.num_classes = 0; }

void RunConfig::resolve() {
  backbone.input_height = data.height;
  backbone.input_width = data.width;
  backbone.input_channels = 3;
  if (backbone.num_classes == 0) backbone.num_classes = data.train_identities;
}

void RunConfig::validate() const {
  try {
    hsgm.validate();
    backbone.validate(hsgm);
    loss.validate();
    train.validate();
    data.validate();
    if (gradcheck.step <= 0.0 || gradcheck.tol <= 0.0) throw Error("gradcheck.step and gradcheck.tol must be > 0");
    if (backbone.input_height != data.height || backbone.input_width != data.width) {
      throw Error("backbone input extents differ from data.height/data.width; call resolve()");
    }
    if (backbone.num_classes < data.train_identities) {
      throw Error(fmt::format("backbone.num_classes = {} cannot label {} training identities", backbone.num_classes,
                              data.train_identities));
    }
    if (train.p > data.train_identities) {
      throw Error(fmt::format("train.p = {} exceeds data.train_identities = {}", train.p, data.train_identities));
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

std::string RunConfig::to_text() const {
  std::string out;
  std::string group;
  for (const auto& f : fields()) {
    const std::string key = f.key;
    const auto dot = key.find('.');
    const std::string g = dot == std::string::npos ? "" : key.substr(0, dot);
    if (g != group && !out.empty()) out += '\n';
    group = g;
    out += fmt::format("{} = {}\n", key, f.get(*this));
  }
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.emplace_back(f.key);
  return keys;
}

void set_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError(fmt::format("unknown key '{}'", key));
  try {
    f->set(cfg, value);
  } catch (const Error& e) {
    throw ConfigError(fmt::format("{}: {}", key, e.what()));
  }
}

RunConfig parse_config(const std::string& text, RunConfig base, const std::string& source) {
  std::istringstream is(text);
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(is, raw)) {
    ++lineno;
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(fmt::format("{}:{}: expected 'key = value', got '{}'", source, lineno, line), lineno);
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      set_value(base, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("{}:{}: {}", source, lineno, e.what()), lineno);
    }
  }
  return base;
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError(fmt::format("--set expects key=value, got '{}'", assignment));
  set_value(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

RunConfig load_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides,
                      RunConfig base) {
  RunConfig cfg = std::move(base);
  if (file) {
    std::ifstream is(*file);
    if (!is) throw ConfigError(fmt::format("cannot read config file {}", file->string()));
    std::stringstream ss;
    ss << is.rdbuf();
    cfg = parse_config(ss.str(), cfg, file->string());
  }
  for (const auto& o : overrides) apply_override(cfg, o);
  cfg.resolve();
  cfg.validate();
  return cfg;
}

}  // namespace hsg
