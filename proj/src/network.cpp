#include "hsgnet/network.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>

namespace hsg {

std::string to_string(HsgmStage stage) {
  switch (stage) {
    case HsgmStage::none: return "none";
    case HsgmStage::s1: return "S1";
    case HsgmStage::s2: return "S2";
    case HsgmStage::s3: return "S3";
    case HsgmStage::s4: return "S4";
  }
  return "none";
}

HsgmStage parse_hsgm_stage(const std::string& text) {
  if (text == "none") return HsgmStage::none;
  if (text == "S1" || text == "s1") return HsgmStage::s1;
  if (text == "S2" || text == "s2") return HsgmStage::s2;
  if (text == "S3" || text == "s3") return HsgmStage::s3;
  if (text == "S4" || text == "s4") return HsgmStage::s4;
  throw Error(fmt::format("unknown hsgm stage '{}' (expected none, S1, S2, S3 or S4)", text));
}

std::array<std::pair<std::size_t, std::size_t>, 4> BackboneConfig::stage_extents() const {
  std::array<std::pair<std::size_t, std::size_t>, 4> out{};
  std::size_t h = input_height, w = input_width;
  for (std::size_t s = 0; s < 4; ++s) {
    h = (h - 1) / stage_strides[s] + 1;
    w = (w - 1) / stage_strides[s] + 1;
    out[s] = {h, w};
  }
  return out;
}

void BackboneConfig::validate(const HsgmConfig& hsgm) const {
  for (std::size_t s = 0; s < 4; ++s) {
    if (stage_channels[s] == 0) throw Error(fmt::format("stage_channels[{}] must be positive", s));
    if (stage_strides[s] == 0) throw Error(fmt::format("stage_strides[{}] must be positive", s));
  }
  if (stage_strides[3] != 1) throw Error(fmt::format("the last stage stride must be 1, got {}", stage_strides[3]));
  if (feature_dim == 0 || num_classes == 0) throw Error("feature_dim and num_classes must be positive");
  if (input_height == 0 || input_width == 0 || input_channels == 0) throw Error("input extents must be positive");
  if (hsgm_stage == HsgmStage::none) return;
  const auto idx = static_cast<std::size_t>(hsgm_stage) - 1;
  const auto [h, w] = stage_extents()[idx];
  try {
    hsgm.validate_for(h, w);
  } catch (const Error& e) {
    throw Error(fmt::format("hsgm at {} sees a {}x{} map: {}", to_string(hsgm_stage), h, w, e.what()));
  }
}

namespace {

Tensor kaiming(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = dist(rng);
  return t;
}

}  // namespace

HsgNet::HsgNet(BackboneConfig backbone, HsgmConfig hsgm, std::uint64_t seed)
    : backbone_(std::move(backbone)), hsgm_cfg_(std::move(hsgm)) {
  backbone_.validate(hsgm_cfg_);
  std::mt19937_64 rng(seed);
  std::size_t cin = backbone_.input_channels;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t cout = backbone_.stage_channels[s];
    stages_[s].conv = parameter(kaiming(Shape{cout, 3, 3, cin}, 9 * cin, rng));
    stages_[s].bn = BatchNorm::create(cout);
    stages_[s].stride = backbone_.stage_strides[s];
    cin = cout;
  }
  cbr_conv_ = parameter(kaiming(Shape{backbone_.feature_dim, 1, 1, cin}, cin, rng));
  cbr_bn_ = BatchNorm::create(backbone_.feature_dim);
  std::normal_distribution<double> cls(0.0, 0.001);
  Tensor w(Shape{backbone_.num_classes, backbone_.feature_dim});
  for (auto& v : w.mutable_data()) v = cls(rng);
  classifier_ = parameter(std::move(w));

  if (backbone_.hsgm_stage != HsgmStage::none) {
    const auto idx = static_cast<std::size_t>(backbone_.hsgm_stage) - 1;
    const auto [h, w] = backbone_.stage_extents()[idx];
    hsgm_params_ = HsgmParams::create(hsgm_cfg_, h, w, backbone_.stage_channels[idx]);
  }
}

ForwardOutput HsgNet::forward(const Var& images, const ForwardContext& ctx) {
  const Tensor& in = images->value();
  if (in.rank() != 4 || in.dim(1) != backbone_.input_height || in.dim(2) != backbone_.input_width ||
      in.dim(3) != backbone_.input_channels) {
    throw Error(fmt::format("network expects N x {} x {} x {} images, got {}", backbone_.input_height,
                            backbone_.input_width, backbone_.input_channels, shape_str(in.shape())));
  }
  const std::size_t n = in.dim(0);
  Var x = images;
  for (std::size_t s = 0; s < 4; ++s) {
    x = relu(batch_norm(conv2d(x, stages_[s].conv, stages_[s].stride, 1), stages_[s].bn, ctx));
    if (hsgm_params_ && static_cast<std::size_t>(backbone_.hsgm_stage) == s + 1) {
      x = hsgm_forward(x, hsgm_cfg_, *hsgm_params_, ctx);
    }
  }
  ForwardOutput out;
  out.retrieval = global_max_pool(x);
  const std::size_t c = backbone_.stage_channels[3];
  Var cbr = conv2d(reshape(out.retrieval, Shape{n, 1, 1, c}), cbr_conv_, 1, 0);
  out.head = relu(batch_norm(reshape(cbr, Shape{n, backbone_.feature_dim}), cbr_bn_, ctx));
  out.logits = hsg::classify(out.head, classifier_);
  return out;
}

Tensor HsgNet::embed(const Tensor& images) {
  return forward(constant(images), ForwardContext{}).retrieval->value();
}

std::vector<NamedParameter> HsgNet::parameters() const {
  std::vector<NamedParameter> out;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string prefix = fmt::format("stage{}.", s + 1);
    out.push_back({prefix + "conv.weight", stages_[s].conv, true});
    out.push_back({prefix + "bn.gamma", stages_[s].bn.gamma, false});
    out.push_back({prefix + "bn.beta", stages_[s].bn.beta, false});
  }
  if (hsgm_params_) {
    for (auto& [name, var] : hsgm_params_->named_parameters()) out.push_back({"hsgm." + name, var, false});
  }
  out.push_back({"cbr.conv.weight", cbr_conv_, true});
  out.push_back({"cbr.bn.gamma", cbr_bn_.gamma, false});
  out.push_back({"cbr.bn.beta", cbr_bn_.beta, false});
  out.push_back({"classifier.weight", classifier_, true});
  return out;
}

std::vector<std::pair<std::string, Tensor*>> HsgNet::buffers() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string prefix = fmt::format("stage{}.bn.", s + 1);
    out.emplace_back(prefix + "running_mean", &stages_[s].bn.running_mean);
    out.emplace_back(prefix + "running_var", &stages_[s].bn.running_var);
  }
  if (hsgm_params_) {
    for (auto& [name, t] : hsgm_params_->named_buffers()) out.emplace_back("hsgm." + name, t);
  }
  out.emplace_back("cbr.bn.running_mean", &cbr_bn_.running_mean);
  out.emplace_back("cbr.bn.running_var", &cbr_bn_.running_var);
  return out;
}

void HsgNet::zero_grad() {
  for (auto& p : parameters()) p.var->zero_grad();
}

std::size_t HsgNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.var->value().size();
  return n;
}

Var classify(const Var& head, const Var& weight) { return linear(head, weight); }

}  // namespace hsg
