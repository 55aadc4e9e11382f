#include "hsgnet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

namespace hsg {

void LossConfig::validate() const {
  if (alpha < 0.0 || beta < 0.0) throw Error("loss weights alpha and beta must be >= 0");
  if (gamma < 0.0 || gamma >= 1.0) throw Error(fmt::format("label smoothing gamma must lie in [0, 1), got {}", gamma));
  if (margin < 0.0) throw Error("triplet margin must be >= 0");
}

Var lsce_loss(const Var& logits, std::span<const std::size_t> labels, double gamma) {
  const Tensor& z = logits->value();
  if (z.rank() != 2) throw Error(fmt::format("lsce_loss needs batch x K logits, got {}", shape_str(z.shape())));
  const std::size_t n = z.dim(0), k = z.dim(1);
  if (labels.size() != n) throw Error(fmt::format("lsce_loss: {} labels for a batch of {}", labels.size(), n));
  if (gamma < 0.0 || gamma >= 1.0) throw Error(fmt::format("label smoothing gamma must lie in [0, 1), got {}", gamma));
  if (k < 2 && gamma > 0.0) throw Error("label smoothing needs at least 2 classes");
  const double off = gamma / static_cast<double>(k);
  const double on = 1.0 - gamma + off;

  Tensor prob(z.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= k) throw Error(fmt::format("label {} of sample {} outside [0, {})", labels[i], i, k));
    const double* row = &z[i * k];
    const double top = *std::max_element(row, row + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - top);
    const double lse = top + std::log(s);
    double loss = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double q = j == labels[i] ? on : off;
      loss -= q * (row[j] - lse);
      prob[i * k + j] = std::exp(row[j] - lse);
    }
    total += loss;
  }
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return make_op("lsce_loss", Tensor::scalar(total / static_cast<double>(n)), {logits},
                 [prob = std::move(prob), lab = std::move(lab), n, k, on, off](const Node& self) {
                   const double g = self.grad()[0] / static_cast<double>(n);
                   Tensor dz(Shape{n, k});
                   for (std::size_t i = 0; i < n; ++i)
                     for (std::size_t j = 0; j < k; ++j) dz[i * k + j] = g * (prob[i * k + j] - (j == lab[i] ? on : off));
                   self.parents()[0]->accumulate_grad(dz);
                 });
}

namespace {

struct Triplet {
  std::size_t a, p, n;
};

void check_triplet_batch(std::span<const std::size_t> labels) {
  std::map<std::size_t, std::size_t> counts;
  for (auto l : labels) ++counts[l];
  for (const auto& [id, cnt] : counts) {
    if (cnt < 2) throw Error(fmt::format("triplet_loss: identity {} has only {} instance in the batch", id, cnt));
  }
  if (counts.size() < 2) {
    throw Error(fmt::format("triplet_loss: identity {} has no negatives in the batch", counts.begin()->first));
  }
}

}  // namespace

Var triplet_loss(const Var& embeddings, std::span<const std::size_t> labels, double margin, TripletMining mining,
                 TripletForm form) {
  const Tensor& x = embeddings->value();
  if (x.rank() != 2) throw Error(fmt::format("triplet_loss needs batch x dim embeddings, got {}", shape_str(x.shape())));
  const std::size_t n = x.dim(0), dim = x.dim(1);
  if (labels.size() != n) throw Error(fmt::format("triplet_loss: {} labels for a batch of {}", labels.size(), n));
  check_triplet_batch(labels);

  Tensor dist(Shape{n, n});
  std::vector<bool> clamped(n * n, false);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double sq = 0.0;
      for (std::size_t t = 0; t < dim; ++t) {
        const double diff = x[i * dim + t] - x[j * dim + t];
        sq += diff * diff;
      }
      clamped[i * n + j] = sq < kDistanceEps;
      dist[i * n + j] = std::sqrt(std::max(sq, kDistanceEps));
    }

  std::vector<Triplet> triplets;
  if (mining == TripletMining::batch_hard) {
    for (std::size_t a = 0; a < n; ++a) {
      std::size_t hp = n, hn = n;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == a) continue;
        if (labels[j] == labels[a]) {
          if (hp == n || dist[a * n + j] > dist[a * n + hp]) hp = j;
        } else if (hn == n || dist[a * n + j] < dist[a * n + hn]) {
          hn = j;
        }
      }
      triplets.push_back({a, hp, hn});
    }
  } else {
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t p = 0; p < n; ++p) {
        if (p == a || labels[p] != labels[a]) continue;
        for (std::size_t q = 0; q < n; ++q)
          if (labels[q] != labels[a]) triplets.push_back({a, p, q});
      }
  }

  // Per triplet: value = sign * max(s * (d_ap - d_an) + offset, 0).
  const double s = form == TripletForm::standard ? 1.0 : -1.0;
  const double offset = form == TripletForm::standard ? margin : -margin;
  const double sign = form == TripletForm::standard ? 1.0 : -1.0;
  const double weight = 1.0 / static_cast<double>(triplets.size());

  double total = 0.0;
  std::vector<bool> active(triplets.size(), false);
  for (std::size_t t = 0; t < triplets.size(); ++t) {
    const auto& tr = triplets[t];
    const double hinge = s * (dist[tr.a * n + tr.p] - dist[tr.a * n + tr.n]) + offset;
    if (hinge > 0.0) {
      active[t] = true;
      total += sign * hinge;
    }
  }
  total *= weight;

  return make_op("triplet_loss", Tensor::scalar(total), {embeddings},
                 [triplets = std::move(triplets), active = std::move(active), dist = std::move(dist),
                  clamped = std::move(clamped), n, dim, s, sign, weight](const Node& self) {
                   const double g = self.grad()[0] * weight * sign;
                   const Tensor& x = self.parents()[0]->value();
                   Tensor dx(Shape{n, dim});
                   // d/dx_i ||x_i - x_j|| = (x_i - x_j) / d_ij
                   auto push = [&](std::size_t i, std::size_t j, double coef) {
                     if (clamped[i * n + j]) return;
                     const double inv = coef / dist[i * n + j];
                     for (std::size_t t = 0; t < dim; ++t) {
                       const double diff = (x[i * dim + t] - x[j * dim + t]) * inv;
                       dx[i * dim + t] += diff;
                       dx[j * dim + t] -= diff;
                     }
                   };
                   for (std::size_t t = 0; t < triplets.size(); ++t) {
                     if (!active[t]) continue;
                     push(triplets[t].a, triplets[t].p, g * s);
                     push(triplets[t].a, triplets[t].n, -g * s);
                   }
                   self.parents()[0]->accumulate_grad(dx);
                 });
}

Var total_loss(const Var& triplet, const Var& lsce, double alpha, double beta) {
  return add(scale(triplet, alpha), scale(lsce, beta));
}

double total_loss(double triplet, double lsce, double alpha, double beta) { return alpha * triplet + beta * lsce; }

}  // namespace hsg
