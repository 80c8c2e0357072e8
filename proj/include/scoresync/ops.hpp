#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "scoresync/random.hpp"
#include "scoresync/tensor.hpp"

namespace scoresync {

enum class Mode { train, eval };

// Elementwise and reduction helpers.
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, const Shape& shape);
/// [N, ...] -> [N, prod(...)]
Tensor flatten(const Tensor& x);

/// 2-D cross-correlation with zero padding. input [N,C,H,W], weight [F,C,kh,kw], bias [F].
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);

/// Locations of the pooled maxima: for every output cell, the flat offset
/// (row * W + col) of the winning input cell inside its (n, c) plane.
struct IndexMask {
  Shape input_shape;   // N,C,H,W
  Shape output_shape;  // N,C,H/2,W/2
  std::vector<std::size_t> argmax;
};

struct PoolResult {
  Tensor output;
  IndexMask mask;
};

/// 2x2 / stride 2 max pooling. Ties go to the first cell in row-major order.
PoolResult maxpool2d_with_indices(const Tensor& input, std::size_t window = 2);

/// Inverse of the pool above: each value goes back to its recorded location.
Tensor max_unpool2d(const Tensor& input, const IndexMask& mask, std::size_t out_h, std::size_t out_w);

/// Numerically stable softmax along `axis`.
Tensor softmax(const Tensor& input, std::size_t axis);

/// input [N,D] x weight [D,E] + bias [E].
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias);
Tensor relu(const Tensor& x);
/// upper * sigmoid(x), the bounded regression output.
Tensor scaled_sigmoid(const Tensor& x, double upper);

/// Running statistics owned by a batch-norm layer.
struct BatchNormStats {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormStats(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

/// Per-channel normalization of [N,C,H,W]. Train mode uses batch statistics
/// and updates `stats`; eval mode uses the running statistics.
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                   Mode mode);

/// Inverted dropout. Identity in eval mode.
Tensor dropout(const Tensor& x, double rate, Mode mode, std::mt19937_64& rng);

/// Mean cross-entropy of logits [R,K] against class indices, one per row.
Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& targets);

}  // namespace scoresync
