#include "scoresync/softdtw.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

namespace scoresync {

namespace {

double cost_derivative(double x, double y, LocalCost cost) {
  const double d = x - y;
  if (cost == LocalCost::squared_diff) return 2.0 * d;
  return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
}

Matrix cost_matrix(std::span<const double> a, std::span<const double> b, LocalCost cost) {
  Matrix c(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) c(i, j) = local_cost(a[i], b[j], cost);
  }
  return c;
}

void require_non_empty(std::span<const double> a, std::span<const double> b, const char* op) {
  if (a.empty() || b.empty()) throw std::invalid_argument(std::string(op) + ": sequences must be non-empty");
}

void require_lambda(double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("soft-DTW: lambda must be finite and >= 0");
}

// Accumulates d D(x, y) / d x into gx and d D(x, y) / d y into gy, scaled by w.
void accumulate_pair_grads(std::span<const double> x, std::span<const double> y, const SoftDtwParams& params,
                           double w, std::vector<double>& gx, std::vector<double>& gy) {
  const Matrix costs = cost_matrix(x, y, params.cost);
  const SoftDtwResult r = soft_dtw_costs(costs, params.lambda);
  const Matrix e = expected_alignment(costs, r.table, params.lambda);
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < y.size(); ++j) {
      const double g = e(i, j) * cost_derivative(x[i], y[j], params.cost);
      gx[i] += w * g;
      gy[j] -= w * g;
    }
  }
}

}  // namespace

double local_cost(double a, double b, LocalCost cost) {
  const double d = a - b;
  return cost == LocalCost::squared_diff ? d * d : std::abs(d);
}

double soft_min(std::span<const double> values, double lambda) {
  if (values.empty()) throw std::invalid_argument("soft_min: empty value list");
  require_lambda(lambda);
  const double lowest = *std::min_element(values.begin(), values.end());
  if (lambda == 0.0 || values.size() == 1) return lowest;
  double z = 0.0;
  for (double m : values) z += std::exp(-(m - lowest) / lambda);
  return lowest - lambda * std::log(z);
}

SoftDtwResult soft_dtw_costs(const Matrix& costs, double lambda) {
  require_lambda(lambda);
  if (costs.rows == 0 || costs.cols == 0) throw std::invalid_argument("soft_dtw: empty cost matrix");
  SoftDtwResult result;
  DpTable& t = result.table;
  t.rows = costs.rows;
  t.cols = costs.cols;
  t.R.assign((t.rows + 1) * (t.cols + 1), kDpBoundary);
  t.at(0, 0) = 0.0;
  for (std::size_t i = 1; i <= t.rows; ++i) {
    for (std::size_t j = 1; j <= t.cols; ++j) {
      const std::array<double, 3> prev{t.at(i, j - 1), t.at(i - 1, j), t.at(i - 1, j - 1)};
      t.at(i, j) = costs(i - 1, j - 1) + soft_min(prev, lambda);
    }
  }
  result.value = t.at(t.rows, t.cols);
  return result;
}

SoftDtwResult soft_dtw(std::span<const double> a, std::span<const double> b, const SoftDtwParams& params) {
  require_non_empty(a, b, "soft_dtw");
  return soft_dtw_costs(cost_matrix(a, b, params.cost), params.lambda);
}

Matrix expected_alignment(const Matrix& costs, const DpTable& table, double lambda) {
  if (!(lambda > 0.0)) throw NumericError("soft-DTW gradient requires lambda > 0 (hard minimum is not differentiable)");
  const std::size_t p = table.rows, r = table.cols;
  Matrix e(p, r, 0.0);
  e(p - 1, r - 1) = 1.0;
  // Weight of cell (i,j) inside successor s: exp((R(s) - cost(s) - R(i,j)) / lambda).
  auto weight = [&](std::size_t i, std::size_t j, std::size_t si, std::size_t sj) {
    return std::exp((table.at(si, sj) - costs(si - 1, sj - 1) - table.at(i, j)) / lambda);
  };
  for (std::size_t i = p; i >= 1; --i) {
    for (std::size_t j = r; j >= 1; --j) {
      if (i == p && j == r) continue;
      double acc = 0.0;
      if (i < p) acc += e(i, j - 1) * weight(i, j, i + 1, j);
      if (j < r) acc += e(i - 1, j) * weight(i, j, i, j + 1);
      if (i < p && j < r) acc += e(i, j) * weight(i, j, i + 1, j + 1);
      e(i - 1, j - 1) = acc;
    }
  }
  return e;
}

double divergence(std::span<const double> a, std::span<const double> b, const SoftDtwParams& params) {
  require_non_empty(a, b, "divergence");
  const double ab = soft_dtw(a, b, params).value;
  const double aa = soft_dtw(a, a, params).value;
  const double bb = soft_dtw(b, b, params).value;
  return ab - 0.5 * (aa + bb);
}

DivergenceGradients divergence_grads(std::span<const double> a, std::span<const double> b,
                                     const SoftDtwParams& params) {
  require_non_empty(a, b, "divergence_grad");
  if (!(params.lambda > 0.0)) throw NumericError("divergence_grad: lambda must be > 0");
  DivergenceGradients g{std::vector<double>(a.size(), 0.0), std::vector<double>(b.size(), 0.0)};
  accumulate_pair_grads(a, b, params, 1.0, g.wrt_a, g.wrt_b);
  // Self terms: both arguments are the same sequence, so both halves land on it.
  accumulate_pair_grads(a, a, params, -0.5, g.wrt_a, g.wrt_a);
  accumulate_pair_grads(b, b, params, -0.5, g.wrt_b, g.wrt_b);
  return g;
}

std::vector<double> divergence_grad(std::span<const double> a, std::span<const double> b,
                                    const SoftDtwParams& params) {
  return divergence_grads(a, b, params).wrt_a;
}

DtwResult dtw_classic(const Matrix& costs) {
  if (costs.rows == 0 || costs.cols == 0) throw std::invalid_argument("dtw_classic: empty cost matrix");
  const SoftDtwResult hard = soft_dtw_costs(costs, 0.0);
  const DpTable& t = hard.table;
  DtwResult out;
  out.cost = hard.value;

  std::size_t i = t.rows, j = t.cols;
  out.cells.emplace_back(i - 1, j - 1);
  while (i > 1 || j > 1) {
    // Candidates in tie-break order: diagonal, score-axis step, performance-axis step.
    const std::array<std::pair<std::size_t, std::size_t>, 3> moves{
        {{i - 1, j - 1}, {i, j - 1}, {i - 1, j}}};
    std::pair<std::size_t, std::size_t> best{0, 0};
    double best_value = kDpBoundary;
    bool found = false;
    for (auto [mi, mj] : moves) {
      if (mi < 1 || mj < 1) continue;
      const double v = t.at(mi, mj);
      if (!found || v < best_value) {
        best = {mi, mj};
        best_value = v;
        found = true;
      }
    }
    i = best.first;
    j = best.second;
    out.cells.emplace_back(i - 1, j - 1);
  }
  std::reverse(out.cells.begin(), out.cells.end());

  std::vector<double> total(costs.rows, 0.0), count(costs.rows, 0.0);
  for (auto [r, c] : out.cells) {
    total[r] += static_cast<double>(c);
    count[r] += 1.0;
  }
  out.path.y.resize(costs.rows);
  for (std::size_t r = 0; r < costs.rows; ++r) out.path.y[r] = total[r] / count[r];
  return out;
}

}  // namespace scoresync
