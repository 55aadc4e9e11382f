#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hsgnet/hsgm.hpp"
#include "hsgnet/nn_ops.hpp"

namespace hsg {

/// Where the HSGM sits: after the given backbone stage, or nowhere.
enum class HsgmStage { none, s1, s2, s3, s4 };

std::string to_string(HsgmStage stage);
HsgmStage parse_hsgm_stage(const std::string& text);

struct BackboneConfig {
  std::array<std::size_t, 4> stage_channels{16, 32, 64, 128};
  std::array<std::size_t, 4> stage_strides{2, 2, 2, 1};
  HsgmStage hsgm_stage = HsgmStage::s3;
  /// Width of the CBR head output that feeds the classifier.
  std::size_t feature_dim = 128;
  std::size_t num_classes = 16;
  std::size_t input_height = 32;
  std::size_t input_width = 16;
  std::size_t input_channels = 3;

  /// Spatial extent after each stage (3x3 conv, padding 1).
  std::array<std::pair<std::size_t, std::size_t>, 4> stage_extents() const;
  /// Checks the last stride, positive sizes and HSGM divisibility at the
  /// insertion point; throws before any computation happens.
  void validate(const HsgmConfig& hsgm) const;
  bool operator==(const BackboneConfig&) const = default;
};

struct NamedParameter {
  std::string name;
  Var var;
  /// Weight decay applies to conv and classifier weights only.
  bool decay = false;
};

struct ForwardOutput {
  /// Global-max-pooled backbone feature, N x stage_channels[3]; used for
  /// retrieval and the triplet loss.
  Var retrieval;
  /// CBR output, N x feature_dim.
  Var head;
  /// Classifier logits on the CBR output, N x num_classes.
  Var logits;
};

/// Four conv-BN-ReLU stages with an optional HSGM after one of them, global
/// max pooling, a 1x1 CBR head and a bias-free linear classifier.
class HsgNet {
 public:
  HsgNet(BackboneConfig backbone, HsgmConfig hsgm, std::uint64_t seed);

  const BackboneConfig& backbone() const { return backbone_; }
  const HsgmConfig& hsgm_config() const { return hsgm_cfg_; }

  /// images: N x H x W x C.
  ForwardOutput forward(const Var& images, const ForwardContext& ctx);
  /// Eval-mode retrieval features for a batch of images.
  Tensor embed(const Tensor& images);

  std::vector<NamedParameter> parameters() const;
  std::vector<std::pair<std::string, Tensor*>> buffers();
  void zero_grad();
  std::size_t parameter_count() const;

  /// HSGM parameters, present iff the stage is not `none`.
  std::optional<HsgmParams>& hsgm_params() { return hsgm_params_; }

 private:
  struct Stage {
    Var conv;
    BatchNorm bn;
    std::size_t stride = 1;
  };

  BackboneConfig backbone_;
  HsgmConfig hsgm_cfg_;
  std::array<Stage, 4> stages_;
  std::optional<HsgmParams> hsgm_params_;
  Var cbr_conv_;
  BatchNorm cbr_bn_;
  Var classifier_;
};

/// logits = head · Wᵀ, W of shape K x dim.
Var classify(const Var& head, const Var& weight);

}  // namespace hsg
