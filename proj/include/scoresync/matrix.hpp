#pragma once

#include <cstddef>
#include <vector>

#include "scoresync/errors.hpp"

namespace scoresync {

/// Row-major real matrix for features, similarity and cost data.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  const double* row(std::size_t r) const { return values.data() + r * cols; }
  double* row(std::size_t r) { return values.data() + r * cols; }

  bool operator==(const Matrix&) const = default;
};

/// Score-axis position for every performance frame. The performance axis is
/// implicit (index into y). Values are real to allow sub-frame positions.
struct AlignmentPath {
  std::vector<double> y;

  std::size_t size() const { return y.size(); }
  bool operator==(const AlignmentPath&) const = default;
};

}  // namespace scoresync
