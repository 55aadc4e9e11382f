#include "hsgnet/nn_ops.hpp"

#include <cmath>

#include <fmt/format.h>

namespace hsg {

BatchNorm BatchNorm::create(std::size_t channels, double gamma_init) {
  BatchNorm bn;
  bn.gamma = parameter(Tensor(Shape{channels}, gamma_init));
  bn.beta = parameter(Tensor(Shape{channels}, 0.0));
  bn.running_mean = Tensor(Shape{channels}, 0.0);
  bn.running_var = Tensor(Shape{channels}, 1.0);
  return bn;
}

Var batch_norm(const Var& x, BatchNorm& bn, const ForwardContext& ctx) {
  const Tensor& in = x->value();
  const std::size_t c = in.shape().back();
  if (c != bn.channels()) {
    throw Error(fmt::format("batch_norm over {} channels applied to shape {}", bn.channels(), shape_str(in.shape())));
  }
  const std::size_t m = in.size() / c;
  const Tensor& gamma = bn.gamma->value();
  const Tensor& beta = bn.beta->value();

  Tensor out(in.shape());
  if (!ctx.training) {
    Tensor inv_std(Shape{c});
    for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(bn.running_var[ch] + bn.eps);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t k = r * c + ch;
        out[k] = gamma[ch] * ((in[k] - bn.running_mean[ch]) * inv_std[ch]) + beta[ch];
      }
    return make_op("batch_norm_eval", std::move(out), {x, bn.gamma, bn.beta},
                   [inv_std, mean = bn.running_mean, m, c](const Node& self) {
                     const Tensor g = self.grad();
                     const auto& px = self.parents()[0];
                     const auto& pg = self.parents()[1];
                     const auto& pb = self.parents()[2];
                     const Tensor& xin = px->value();
                     const Tensor& gam = pg->value();
                     Tensor dx(xin.shape()), dg(Shape{c}), db(Shape{c});
                     for (std::size_t r = 0; r < m; ++r)
                       for (std::size_t ch = 0; ch < c; ++ch) {
                         const std::size_t k = r * c + ch;
                         dx[k] = g[k] * gam[ch] * inv_std[ch];
                         dg[ch] += g[k] * (xin[k] - mean[ch]) * inv_std[ch];
                         db[ch] += g[k];
                       }
                     px->accumulate_grad(dx);
                     pg->accumulate_grad(dg);
                     pb->accumulate_grad(db);
                   });
  }

  if (m < 2) {
    throw Error(fmt::format("batch_norm in training mode needs at least 2 values per channel, shape {}",
                            shape_str(in.shape())));
  }
  Tensor mu(Shape{c}), var(Shape{c});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t ch = 0; ch < c; ++ch) mu[ch] += in[r * c + ch];
  for (std::size_t ch = 0; ch < c; ++ch) mu[ch] /= static_cast<double>(m);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double d = in[r * c + ch] - mu[ch];
      var[ch] += d * d;
    }
  for (std::size_t ch = 0; ch < c; ++ch) var[ch] /= static_cast<double>(m);

  Tensor inv_std(Shape{c});
  for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(var[ch] + bn.eps);
  Tensor xhat(in.shape());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t k = r * c + ch;
      xhat[k] = (in[k] - mu[ch]) * inv_std[ch];
      out[k] = gamma[ch] * xhat[k] + beta[ch];
    }

  if (ctx.update_running_stats) {
    const double unbias = static_cast<double>(m) / static_cast<double>(m - 1);
    for (std::size_t ch = 0; ch < c; ++ch) {
      bn.running_mean[ch] = (1.0 - bn.momentum) * bn.running_mean[ch] + bn.momentum * mu[ch];
      bn.running_var[ch] = (1.0 - bn.momentum) * bn.running_var[ch] + bn.momentum * var[ch] * unbias;
    }
  }

  return make_op("batch_norm_train", std::move(out), {x, bn.gamma, bn.beta},
                 [xhat = std::move(xhat), inv_std, m, c](const Node& self) {
                   const Tensor g = self.grad();
                   const auto& px = self.parents()[0];
                   const auto& pg = self.parents()[1];
                   const auto& pb = self.parents()[2];
                   const Tensor& gam = pg->value();
                   Tensor dg(Shape{c}), db(Shape{c});
                   for (std::size_t r = 0; r < m; ++r)
                     for (std::size_t ch = 0; ch < c; ++ch) {
                       const std::size_t k = r * c + ch;
                       dg[ch] += g[k] * xhat[k];
                       db[ch] += g[k];
                     }
                   if (px->requires_grad()) {
                     // dx = inv_std/M * (M*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat)), dxhat = g*gamma
                     Tensor dx(xhat.shape());
                     const double md = static_cast<double>(m);
                     for (std::size_t r = 0; r < m; ++r)
                       for (std::size_t ch = 0; ch < c; ++ch) {
                         const std::size_t k = r * c + ch;
                         dx[k] = gam[ch] * inv_std[ch] / md * (md * g[k] - db[ch] - xhat[k] * dg[ch]);
                       }
                     px->accumulate_grad(dx);
                   }
                   pg->accumulate_grad(dg);
                   pb->accumulate_grad(db);
                 });
}

Var conv2d(const Var& x, const Var& weight, std::size_t stride, std::size_t padding) {
  const Tensor& in = x->value();
  const Tensor& w = weight->value();
  if (in.rank() != 4 || w.rank() != 4 || w.dim(1) != w.dim(2) || w.dim(3) != in.dim(3)) {
    throw Error(fmt::format("conv2d: input {} incompatible with weight {}", shape_str(in.shape()), shape_str(w.shape())));
  }
  if (stride == 0) throw Error("conv2d stride must be >= 1");
  const std::size_t n = in.dim(0), h = in.dim(1), wd = in.dim(2), cin = in.dim(3);
  const std::size_t cout = w.dim(0), k = w.dim(1);
  if (h + 2 * padding < k || wd + 2 * padding < k) {
    throw Error(fmt::format("conv2d: kernel {} larger than padded input {}", k, shape_str(in.shape())));
  }
  const std::size_t ho = (h + 2 * padding - k) / stride + 1;
  const std::size_t wo = (wd + 2 * padding - k) / stride + 1;

  Tensor out(Shape{n, ho, wo, cout});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double* dst = &out[((b * ho + oy) * wo + ox) * cout];
        for (std::size_t ky = 0; ky < k; ++ky) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
            if (ix < 0 || ix >= static_cast<long>(wd)) continue;
            const double* src = &in[((b * h + iy) * wd + ix) * cin];
            for (std::size_t co = 0; co < cout; ++co) {
              const double* wk = &w[((co * k + ky) * k + kx) * cin];
              double s = 0.0;
              for (std::size_t ci = 0; ci < cin; ++ci) s += src[ci] * wk[ci];
              dst[co] += s;
            }
          }
        }
      }

  return make_op("conv2d", std::move(out), {x, weight},
                 [n, h, wd, cin, cout, k, ho, wo, stride, padding](const Node& self) {
                   const Tensor g = self.grad();
                   const auto& px = self.parents()[0];
                   const auto& pw = self.parents()[1];
                   const Tensor& in = px->value();
                   const Tensor& w = pw->value();
                   const bool need_x = px->requires_grad();
                   const bool need_w = pw->requires_grad();
                   Tensor dx = need_x ? Tensor(in.shape()) : Tensor();
                   Tensor dw = need_w ? Tensor(w.shape()) : Tensor();
                   for (std::size_t b = 0; b < n; ++b)
                     for (std::size_t oy = 0; oy < ho; ++oy)
                       for (std::size_t ox = 0; ox < wo; ++ox) {
                         const double* go = &g[((b * ho + oy) * wo + ox) * cout];
                         for (std::size_t ky = 0; ky < k; ++ky) {
                           const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
                           if (iy < 0 || iy >= static_cast<long>(h)) continue;
                           for (std::size_t kx = 0; kx < k; ++kx) {
                             const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
                             if (ix < 0 || ix >= static_cast<long>(wd)) continue;
                             const std::size_t xoff = ((b * h + iy) * wd + ix) * cin;
                             for (std::size_t co = 0; co < cout; ++co) {
                               const double gv = go[co];
                               if (gv == 0.0) continue;
                               const std::size_t woff = ((co * k + ky) * k + kx) * cin;
                               if (need_x)
                                 for (std::size_t ci = 0; ci < cin; ++ci) dx[xoff + ci] += gv * w[woff + ci];
                               if (need_w)
                                 for (std::size_t ci = 0; ci < cin; ++ci) dw[woff + ci] += gv * in[xoff + ci];
                             }
                           }
                         }
                       }
                   if (need_x) px->accumulate_grad(dx);
                   if (need_w) pw->accumulate_grad(dw);
                 });
}

Var linear(const Var& x, const Var& weight) {
  const Tensor& in = x->value();
  const Tensor& w = weight->value();
  if (in.rank() != 2 || w.rank() != 2 || in.dim(1) != w.dim(1)) {
    throw Error(fmt::format("linear: input {} incompatible with weight {}", shape_str(in.shape()), shape_str(w.shape())));
  }
  const std::size_t n = in.dim(0), d = in.dim(1), k = w.dim(0);
  Tensor out(Shape{n, k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < d; ++t) s += in[i * d + t] * w[j * d + t];
      out[i * k + j] = s;
    }
  return make_op("linear", std::move(out), {x, weight}, [n, d, k](const Node& self) {
    const Tensor g = self.grad();
    const auto& px = self.parents()[0];
    const auto& pw = self.parents()[1];
    const Tensor& in = px->value();
    const Tensor& w = pw->value();
    Tensor dx(Shape{n, d}), dw(Shape{k, d});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const double gv = g[i * k + j];
        for (std::size_t t = 0; t < d; ++t) {
          dx[i * d + t] += gv * w[j * d + t];
          dw[j * d + t] += gv * in[i * d + t];
        }
      }
    px->accumulate_grad(dx);
    pw->accumulate_grad(dw);
  });
}

Var global_max_pool(const Var& x) {
  const Tensor& in = x->value();
  if (in.rank() != 4) throw Error(fmt::format("global_max_pool needs N x H x W x C, got {}", shape_str(in.shape())));
  const std::size_t n = in.dim(0), hw = in.dim(1) * in.dim(2), c = in.dim(3);
  Tensor out(Shape{n, c});
  std::vector<std::size_t> argmax(n * c);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::size_t best = b * hw * c + ch;
      for (std::size_t p = 1; p < hw; ++p) {
        const std::size_t k = (b * hw + p) * c + ch;
        if (in[k] > in[best]) best = k;
      }
      argmax[b * c + ch] = best;
      out[b * c + ch] = in[best];
    }
  return make_op("global_max_pool", std::move(out), {x}, [argmax = std::move(argmax)](const Node& self) {
    const Tensor g = self.grad();
    Tensor dx(self.parents()[0]->value().shape());
    for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += g[i];
    self.parents()[0]->accumulate_grad(dx);
  });
}

Var avg_pool2d(const Var& x, std::size_t factor) {
  const Tensor& in = x->value();
  if (in.rank() != 4) throw Error(fmt::format("avg_pool2d needs N x H x W x C, got {}", shape_str(in.shape())));
  const std::size_t n = in.dim(0), h = in.dim(1), w = in.dim(2), c = in.dim(3);
  if (factor == 0 || h % factor != 0 || w % factor != 0) {
    throw Error(fmt::format("avg_pool2d factor {} does not divide {}x{}", factor, h, w));
  }
  const std::size_t ho = h / factor, wo = w / factor;
  const double inv = 1.0 / static_cast<double>(factor * factor);
  Tensor out(Shape{n, ho, wo, c});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx)
        for (std::size_t ch = 0; ch < c; ++ch)
          out[((b * ho + y / factor) * wo + xx / factor) * c + ch] += in[((b * h + y) * w + xx) * c + ch] * inv;
  return make_op("avg_pool2d", std::move(out), {x}, [n, h, w, c, ho, wo, factor, inv](const Node& self) {
    const Tensor g = self.grad();
    Tensor dx(Shape{n, h, w, c});
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx)
          for (std::size_t ch = 0; ch < c; ++ch)
            dx[((b * h + y) * w + xx) * c + ch] = g[((b * ho + y / factor) * wo + xx / factor) * c + ch] * inv;
    self.parents()[0]->accumulate_grad(dx);
  });
}

Var upsample_nearest(const Var& x, std::size_t factor) {
  const Tensor& in = x->value();
  if (in.rank() != 4) throw Error(fmt::format("upsample_nearest needs N x H x W x C, got {}", shape_str(in.shape())));
  if (factor == 0) throw Error("upsample factor must be >= 1");
  const std::size_t n = in.dim(0), h = in.dim(1), w = in.dim(2), c = in.dim(3);
  const std::size_t ho = h * factor, wo = w * factor;
  Tensor out(Shape{n, ho, wo, c});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t xx = 0; xx < wo; ++xx)
        for (std::size_t ch = 0; ch < c; ++ch)
          out[((b * ho + y) * wo + xx) * c + ch] = in[((b * h + y / factor) * w + xx / factor) * c + ch];
  return make_op("upsample_nearest", std::move(out), {x}, [n, h, w, c, ho, wo, factor](const Node& self) {
    const Tensor g = self.grad();
    Tensor dx(Shape{n, h, w, c});
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t xx = 0; xx < wo; ++xx)
          for (std::size_t ch = 0; ch < c; ++ch)
            dx[((b * h + y / factor) * w + xx / factor) * c + ch] += g[((b * ho + y) * wo + xx) * c + ch];
    self.parents()[0]->accumulate_grad(dx);
  });
}

}  // namespace hsg
