#pragma once

#include <span>
#include <utility>
#include <vector>

#include "scoresync/matrix.hpp"

namespace scoresync {

enum class LocalCost { abs_diff, squared_diff };

struct SoftDtwParams {
  double lambda = 1.0;  // smoothing factor; 0 selects the hard minimum
  LocalCost cost = LocalCost::abs_diff;
};

/// Accumulated-cost table with a (rows+1) x (cols+1) layout: row 0 and
/// column 0 hold the boundary sentinel, except the origin which is 0.
struct DpTable {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> R;

  double at(std::size_t i, std::size_t j) const { return R[i * (cols + 1) + j]; }
  double& at(std::size_t i, std::size_t j) { return R[i * (cols + 1) + j]; }
};

/// Stand-in for +infinity on the table boundary.
inline constexpr double kDpBoundary = 1e30;

struct SoftDtwResult {
  double value = 0.0;
  DpTable table;
};

/// min_lambda: hard minimum at lambda == 0, otherwise
/// -lambda * log(sum(exp(-m / lambda))) evaluated with a max shift.
double soft_min(std::span<const double> values, double lambda);

double local_cost(double a, double b, LocalCost cost);

/// Soft-DTW over an explicit local cost matrix.
SoftDtwResult soft_dtw_costs(const Matrix& costs, double lambda);
SoftDtwResult soft_dtw(std::span<const double> a, std::span<const double> b, const SoftDtwParams& params);

/// d value / d cost(i,j) for the table produced by soft_dtw_costs.
/// Requires lambda > 0.
Matrix expected_alignment(const Matrix& costs, const DpTable& table, double lambda);

/// Normalized divergence D(a,b) - (D(a,a) + D(b,b)) / 2.
double divergence(std::span<const double> a, std::span<const double> b, const SoftDtwParams& params);

struct DivergenceGradients {
  std::vector<double> wrt_a;
  std::vector<double> wrt_b;
};

/// Gradient of the divergence with respect to every element of `a`.
/// Throws NumericError when lambda == 0.
std::vector<double> divergence_grad(std::span<const double> a, std::span<const double> b,
                                    const SoftDtwParams& params);
DivergenceGradients divergence_grads(std::span<const double> a, std::span<const double> b,
                                     const SoftDtwParams& params);

struct DtwResult {
  double cost = 0.0;
  /// Warping path cells (performance row, score column), origin first.
  std::vector<std::pair<std::size_t, std::size_t>> cells;
  /// Mean score column per performance row.
  AlignmentPath path;
};

/// Classic DTW with backtracking; ties prefer the diagonal step, then the
/// step that advances only the score axis.
DtwResult dtw_classic(const Matrix& costs);

}  // namespace scoresync
