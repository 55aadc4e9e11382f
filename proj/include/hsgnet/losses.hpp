#pragma once

#include <cstddef>
#include <span>

#include "hsgnet/autodiff.hpp"

namespace hsg {

struct LossConfig {
  double alpha = 0.5;   // triplet weight
  double beta = 1.0;    // LSCE weight
  double gamma = 0.1;   // label smoothing degree
  double margin = 1.2;  // triplet margin

  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

enum class TripletMining { batch_hard, all_pairs };

/// `standard` is the usual hinge max(d_ap - d_an + margin, 0). `negated_reverse`
/// evaluates -max(d_an - d_ap - margin, 0); it is kept for inspection and
/// is not meant for training.
enum class TripletForm { standard, negated_reverse };

/// Distances below sqrt(kDistanceEps) are clamped so gradients stay finite.
inline constexpr double kDistanceEps = 1e-12;

/// Label-smoothed cross-entropy, mean over the batch. Labels are 0-based
/// class indices; the target puts 1 - gamma + gamma/K on the label and
/// gamma/K elsewhere.
Var lsce_loss(const Var& logits, std::span<const std::size_t> labels, double gamma);

/// Triplet loss on Euclidean distances. Every identity present needs at
/// least two instances and the batch needs at least two identities.
Var triplet_loss(const Var& embeddings, std::span<const std::size_t> labels, double margin,
                 TripletMining mining = TripletMining::batch_hard, TripletForm form = TripletForm::standard);

/// alpha * triplet + beta * lsce
Var total_loss(const Var& triplet, const Var& lsce, double alpha, double beta);
double total_loss(double triplet, double lsce, double alpha, double beta);

}  // namespace hsg
