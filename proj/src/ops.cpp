#include "scoresync/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace scoresync {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                         ", got shape " + shape_to_string(t.shape()));
  }
}

void im2col(const double* image, std::size_t C, std::size_t H, std::size_t W, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t Ho, std::size_t Wo,
            double* cols) {
  const std::size_t P = Ho * Wo;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        double* row = cols + ((c * kh + ki) * kw + kj) * P;
        for (std::size_t oi = 0; oi < Ho; ++oi) {
          const long ii = static_cast<long>(oi * stride + ki) - static_cast<long>(pad);
          for (std::size_t oj = 0; oj < Wo; ++oj) {
            const long jj = static_cast<long>(oj * stride + kj) - static_cast<long>(pad);
            const bool inside = ii >= 0 && jj >= 0 && ii < static_cast<long>(H) && jj < static_cast<long>(W);
            row[oi * Wo + oj] = inside ? image[(c * H + ii) * W + jj] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, std::size_t C, std::size_t H, std::size_t W, std::size_t kh,
                std::size_t kw, std::size_t stride, std::size_t pad, std::size_t Ho, std::size_t Wo,
                double* image) {
  const std::size_t P = Ho * Wo;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const double* row = cols + ((c * kh + ki) * kw + kj) * P;
        for (std::size_t oi = 0; oi < Ho; ++oi) {
          const long ii = static_cast<long>(oi * stride + ki) - static_cast<long>(pad);
          if (ii < 0 || ii >= static_cast<long>(H)) continue;
          for (std::size_t oj = 0; oj < Wo; ++oj) {
            const long jj = static_cast<long>(oj * stride + kj) - static_cast<long>(pad);
            if (jj < 0 || jj >= static_cast<long>(W)) continue;
            image[(c * H + ii) * W + jj] += row[oi * Wo + oj];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shapes " + shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()));
  }
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return Tensor::make_result("add", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (auto& parent : self.parents) {
      if (!parent->requires_grad) continue;
      auto& g = parent->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v *= factor;
  return Tensor::make_result("scale", x.shape(), std::move(out), {x}, [factor](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return Tensor::make_result("sum", {1}, {total}, {x}, [](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_to_string(x.shape()) + " -> " + shape_to_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return Tensor::make_result("reshape", shape, std::move(out), {x}, [](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor flatten(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("flatten: need a batch axis, got " + shape_to_string(x.shape()));
  return reshape(x, {x.dim(0), x.numel() / x.dim(0)});
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank(input, 4, "conv2d", "input");
  require_rank(weight, 4, "conv2d", "weight");
  require_rank(bias, 1, "conv2d", "bias");
  if (stride == 0) throw ConfigError("conv2d: stride must be >= 1");
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t F = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != C) {
    throw DimensionError("conv2d: input channels (axis 1) " + std::to_string(C) +
                         " != weight channels (axis 1) " + std::to_string(weight.dim(1)));
  }
  if (bias.dim(0) != F) {
    throw DimensionError("conv2d: bias extent " + std::to_string(bias.dim(0)) + " != filters " + std::to_string(F));
  }
  if (kh > H + 2 * padding || kw > W + 2 * padding) {
    throw DimensionError("conv2d: kernel " + shape_to_string({kh, kw}) + " exceeds padded input " +
                         shape_to_string({H + 2 * padding, W + 2 * padding}) + " on axes 2,3");
  }
  const std::size_t Ho = (H + 2 * padding - kh) / stride + 1;
  const std::size_t Wo = (W + 2 * padding - kw) / stride + 1;
  const std::size_t K = C * kh * kw, P = Ho * Wo;

  const bool needs_grad = input.requires_grad() || weight.requires_grad() || bias.requires_grad();
  auto cols = std::make_shared<std::vector<double>>(N * K * P);
  std::vector<double> out(N * F * P);
  ConstMatrixMap wmat(weight.data().data(), F, K);
  for (std::size_t n = 0; n < N; ++n) {
    double* cn = cols->data() + n * K * P;
    im2col(input.data().data() + n * C * H * W, C, H, W, kh, kw, stride, padding, Ho, Wo, cn);
    MatrixMap on(out.data() + n * F * P, F, P);
    on.noalias() = wmat * ConstMatrixMap(cn, K, P);
    for (std::size_t f = 0; f < F; ++f) on.row(f).array() += bias.data()[f];
  }
  if (!needs_grad) cols.reset();

  return Tensor::make_result(
      "conv2d", {N, F, Ho, Wo}, std::move(out), {input, weight, bias},
      [=](detail::Node& self) {
        auto& in_node = *self.parents[0];
        auto& w_node = *self.parents[1];
        auto& b_node = *self.parents[2];
        ConstMatrixMap wm(w_node.data.data(), F, K);
        std::vector<double> dcols(in_node.requires_grad ? K * P : 0);
        for (std::size_t n = 0; n < N; ++n) {
          ConstMatrixMap gout(self.grad.data() + n * F * P, F, P);
          ConstMatrixMap cn(cols->data() + n * K * P, K, P);
          if (w_node.requires_grad) {
            MatrixMap gw(w_node.grad_buffer().data(), F, K);
            gw.noalias() += gout * cn.transpose();
          }
          if (b_node.requires_grad) {
            auto& gb = b_node.grad_buffer();
            for (std::size_t f = 0; f < F; ++f) gb[f] += gout.row(f).sum();
          }
          if (in_node.requires_grad) {
            MatrixMap dc(dcols.data(), K, P);
            dc.noalias() = wm.transpose() * gout;
            col2im_add(dcols.data(), C, H, W, kh, kw, stride, padding, Ho, Wo,
                       in_node.grad_buffer().data() + n * C * H * W);
          }
        }
      });
}

PoolResult maxpool2d_with_indices(const Tensor& input, std::size_t window) {
  require_rank(input, 4, "maxpool2d", "input");
  if (window == 0) throw ConfigError("maxpool2d: window must be positive");
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (H % window != 0 || W % window != 0) {
    throw DimensionError("maxpool2d: spatial extents (axes 2,3) " + shape_to_string({H, W}) +
                         " not divisible by window " + std::to_string(window));
  }
  const std::size_t h = H / window, w = W / window;
  IndexMask mask{input.shape(), {N, C, h, w}, std::vector<std::size_t>(N * C * h * w)};
  std::vector<double> out(N * C * h * w);
  const double* x = input.data().data();
  for (std::size_t plane = 0; plane < N * C; ++plane) {
    const double* xp = x + plane * H * W;
    for (std::size_t oi = 0; oi < h; ++oi) {
      for (std::size_t oj = 0; oj < w; ++oj) {
        std::size_t best = oi * window * W + oj * window;
        for (std::size_t di = 0; di < window; ++di) {
          for (std::size_t dj = 0; dj < window; ++dj) {
            const std::size_t idx = (oi * window + di) * W + oj * window + dj;
            if (xp[idx] > xp[best]) best = idx;  // strict: first maximum wins
          }
        }
        const std::size_t o = plane * h * w + oi * w + oj;
        out[o] = xp[best];
        mask.argmax[o] = best;
      }
    }
  }
  auto argmax = std::make_shared<std::vector<std::size_t>>(mask.argmax);
  Tensor result = Tensor::make_result(
      "maxpool2d", mask.output_shape, std::move(out), {input}, [=](detail::Node& self) {
        auto& g = self.parents[0]->grad_buffer();
        const std::size_t out_plane = h * w, in_plane = H * W;
        for (std::size_t o = 0; o < self.grad.size(); ++o) {
          g[(o / out_plane) * in_plane + (*argmax)[o]] += self.grad[o];
        }
      });
  return {std::move(result), std::move(mask)};
}

Tensor max_unpool2d(const Tensor& input, const IndexMask& mask, std::size_t out_h, std::size_t out_w) {
  require_rank(input, 4, "max_unpool2d", "input");
  if (input.shape() != mask.output_shape) {
    throw DimensionError("max_unpool2d: input shape " + shape_to_string(input.shape()) +
                         " does not match mask shape " + shape_to_string(mask.output_shape));
  }
  if (mask.input_shape.size() != 4 || mask.input_shape[2] != out_h || mask.input_shape[3] != out_w) {
    throw DimensionError("max_unpool2d: requested size " + shape_to_string({out_h, out_w}) +
                         " does not match pooled input " + shape_to_string(mask.input_shape));
  }
  const std::size_t N = input.dim(0), C = input.dim(1);
  const std::size_t in_plane = input.dim(2) * input.dim(3), out_plane = out_h * out_w;
  std::vector<double> out(N * C * out_plane, 0.0);
  for (std::size_t o = 0; o < input.numel(); ++o) {
    const std::size_t target = mask.argmax[o];
    if (target >= out_plane) throw DimensionError("max_unpool2d: mask index out of range");
    out[(o / in_plane) * out_plane + target] = input.data()[o];
  }
  auto argmax = std::make_shared<std::vector<std::size_t>>(mask.argmax);
  return Tensor::make_result("max_unpool2d", {N, C, out_h, out_w}, std::move(out), {input},
                             [=](detail::Node& self) {
                               auto& g = self.parents[0]->grad_buffer();
                               for (std::size_t o = 0; o < g.size(); ++o) {
                                 g[o] += self.grad[(o / in_plane) * out_plane + (*argmax)[o]];
                               }
                             });
}

Tensor softmax(const Tensor& input, std::size_t axis) {
  if (axis >= input.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_to_string(input.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= input.dim(a);
  for (std::size_t a = axis + 1; a < input.rank(); ++a) inner *= input.dim(a);
  const std::size_t extent = input.dim(axis);
  const double* x = input.data().data();
  std::vector<double> out(input.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * extent * inner + i;
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t e = 0; e < extent; ++e) top = std::max(top, x[base + e * inner]);
      double z = 0.0;
      for (std::size_t e = 0; e < extent; ++e) {
        out[base + e * inner] = std::exp(x[base + e * inner] - top);
        z += out[base + e * inner];
      }
      for (std::size_t e = 0; e < extent; ++e) out[base + e * inner] /= z;
    }
  }
  auto y = std::make_shared<std::vector<double>>(out);
  return Tensor::make_result("softmax", input.shape(), std::move(out), {input}, [=](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * extent * inner + i;
        double dot = 0.0;
        for (std::size_t e = 0; e < extent; ++e) dot += self.grad[base + e * inner] * (*y)[base + e * inner];
        for (std::size_t e = 0; e < extent; ++e) {
          const std::size_t k = base + e * inner;
          g[k] += (*y)[k] * (self.grad[k] - dot);
        }
      }
    }
  });
}

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "dense", "input");
  require_rank(weight, 2, "dense", "weight");
  require_rank(bias, 1, "dense", "bias");
  const std::size_t N = input.dim(0), D = input.dim(1), E = weight.dim(1);
  if (weight.dim(0) != D) {
    throw DimensionError("dense: input features (axis 1) " + std::to_string(D) + " != weight rows (axis 0) " +
                         std::to_string(weight.dim(0)));
  }
  if (bias.dim(0) != E) throw DimensionError("dense: bias extent != weight columns");
  std::vector<double> out(N * E);
  MatrixMap om(out.data(), N, E);
  om.noalias() = ConstMatrixMap(input.data().data(), N, D) * ConstMatrixMap(weight.data().data(), D, E);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t e = 0; e < E; ++e) out[n * E + e] += bias.data()[e];
  }
  return Tensor::make_result("dense", {N, E}, std::move(out), {input, weight, bias}, [=](detail::Node& self) {
    auto& in_node = *self.parents[0];
    auto& w_node = *self.parents[1];
    auto& b_node = *self.parents[2];
    ConstMatrixMap gout(self.grad.data(), N, E);
    if (in_node.requires_grad) {
      MatrixMap gi(in_node.grad_buffer().data(), N, D);
      gi.noalias() += gout * ConstMatrixMap(w_node.data.data(), D, E).transpose();
    }
    if (w_node.requires_grad) {
      MatrixMap gw(w_node.grad_buffer().data(), D, E);
      gw.noalias() += ConstMatrixMap(in_node.data.data(), N, D).transpose() * gout;
    }
    if (b_node.requires_grad) {
      auto& gb = b_node.grad_buffer();
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t e = 0; e < E; ++e) gb[e] += self.grad[n * E + e];
      }
    }
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return Tensor::make_result("relu", x.shape(), std::move(out), {x}, [](detail::Node& self) {
    auto& parent = *self.parents[0];
    auto& g = parent.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (parent.data[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

Tensor scaled_sigmoid(const Tensor& x, double upper) {
  std::vector<double> s(x.numel());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = 1.0 / (1.0 + std::exp(-x.data()[i]));
  std::vector<double> out(s);
  for (double& v : out) v *= upper;
  auto sig = std::make_shared<std::vector<double>>(std::move(s));
  return Tensor::make_result("scaled_sigmoid", x.shape(), std::move(out), {x}, [=](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * upper * (*sig)[i] * (1.0 - (*sig)[i]);
  });
}

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                   Mode mode) {
  require_rank(x, 4, "batchnorm2d", "input");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gamma.numel() != C || beta.numel() != C || stats.running_mean.size() != C ||
      stats.running_var.size() != C) {
    throw DimensionError("batchnorm2d: channel count (axis 1) " + std::to_string(C) +
                         " does not match affine parameters or running statistics");
  }
  const std::size_t count = N * HW;
  const double* xd = x.data().data();
  std::vector<double> mu(C), invstd(C);
  if (mode == Mode::train) {
    if (count < 2) throw DimensionError("batchnorm2d: train mode needs at least 2 values per channel");
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t k = 0; k < HW; ++k) s += xd[(n * C + c) * HW + k];
      }
      const double m = s / static_cast<double>(count);
      double v = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t k = 0; k < HW; ++k) {
          const double d = xd[(n * C + c) * HW + k] - m;
          v += d * d;
        }
      }
      v /= static_cast<double>(count);
      mu[c] = m;
      invstd[c] = 1.0 / std::sqrt(v + stats.eps);
      const double unbiased = v * static_cast<double>(count) / static_cast<double>(count - 1);
      stats.running_mean[c] = (1.0 - stats.momentum) * stats.running_mean[c] + stats.momentum * m;
      stats.running_var[c] = (1.0 - stats.momentum) * stats.running_var[c] + stats.momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = stats.running_mean[c];
      invstd[c] = 1.0 / std::sqrt(stats.running_var[c] + stats.eps);
    }
  }
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t k = 0; k < HW; ++k) {
        const std::size_t i = (n * C + c) * HW + k;
        (*xhat)[i] = (xd[i] - mu[c]) * invstd[c];
        out[i] = gamma.data()[c] * (*xhat)[i] + beta.data()[c];
      }
    }
  }
  const bool batch_stats = mode == Mode::train;
  return Tensor::make_result(
      "batchnorm2d", x.shape(), std::move(out), {x, gamma, beta}, [=](detail::Node& self) {
        auto& x_node = *self.parents[0];
        auto& g_node = *self.parents[1];
        auto& b_node = *self.parents[2];
        const double m = static_cast<double>(count);
        for (std::size_t c = 0; c < C; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t k = 0; k < HW; ++k) {
              const std::size_t i = (n * C + c) * HW + k;
              sum_dy += self.grad[i];
              sum_dy_xhat += self.grad[i] * (*xhat)[i];
            }
          }
          if (g_node.requires_grad) g_node.grad_buffer()[c] += sum_dy_xhat;
          if (b_node.requires_grad) b_node.grad_buffer()[c] += sum_dy;
          if (!x_node.requires_grad) continue;
          auto& gx = x_node.grad_buffer();
          const double gam = g_node.data[c];
          for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t k = 0; k < HW; ++k) {
              const std::size_t i = (n * C + c) * HW + k;
              if (batch_stats) {
                gx[i] += gam * invstd[c] / m * (m * self.grad[i] - sum_dy - (*xhat)[i] * sum_dy_xhat);
              } else {
                gx[i] += gam * invstd[c] * self.grad[i];
              }
            }
          }
        }
      });
}

Tensor dropout(const Tensor& x, double rate, Mode mode, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout: rate must lie in [0,1)");
  if (mode == Mode::eval || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = uniform01(rng) < rate ? 0.0 : keep_scale;
    out[i] = x.data()[i] * (*mask)[i];
  }
  return Tensor::make_result("dropout", x.shape(), std::move(out), {x}, [=](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
  });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& targets) {
  require_rank(logits, 2, "cross_entropy", "logits");
  const std::size_t R = logits.dim(0), K = logits.dim(1);
  if (targets.size() != R) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(R) + " rows (axis 0)");
  }
  auto probs = std::make_shared<std::vector<double>>(R * K);
  double total = 0.0;
  for (std::size_t r = 0; r < R; ++r) {
    if (targets[r] >= K) throw DimensionError("cross_entropy: target class out of range");
    const double* row = logits.data().data() + r * K;
    const double top = *std::max_element(row, row + K);
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(row[k] - top);
    const double log_z = top + std::log(z);
    for (std::size_t k = 0; k < K; ++k) (*probs)[r * K + k] = std::exp(row[k] - log_z);
    total += log_z - row[targets[r]];
  }
  return Tensor::make_result("cross_entropy", {1}, {total / static_cast<double>(R)}, {logits},
                             [=](detail::Node& self) {
                               auto& g = self.parents[0]->grad_buffer();
                               const double w = self.grad[0] / static_cast<double>(R);
                               for (std::size_t r = 0; r < R; ++r) {
                                 for (std::size_t k = 0; k < K; ++k) {
                                   const double onehot = k == targets[r] ? 1.0 : 0.0;
                                   g[r * K + k] += w * ((*probs)[r * K + k] - onehot);
                                 }
                               }
                             });
}

}  // namespace scoresync
