#include "scoresync/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace scoresync {

GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& options) {
  for (auto& t : inputs) t.zero_grad();
  Tensor loss = f();
  loss.backward();

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t i = 0; i < inputs[t].numel(); ++i) coords.emplace_back(t, i);
  }
  if (options.samples > 0 && options.samples < coords.size()) {
    std::mt19937_64 rng(options.seed);
    for (std::size_t i = 0; i < options.samples; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng() % (coords.size() - i));
      std::swap(coords[i], coords[j]);
    }
    coords.resize(options.samples);
  }

  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    analytic.push_back(t.grad());
    require_finite(analytic.back(), "grad_check analytic gradient");
  }

  GradCheckResult result;
  for (auto [t, i] : coords) {
    auto values = inputs[t].mutable_data();
    const double saved = values[i];
    values[i] = saved + options.eps;
    const double up = f().item();
    values[i] = saved - options.eps;
    const double down = f().item();
    values[i] = saved;
    const double numeric = (up - down) / (2.0 * options.eps);
    const double a = analytic[t][i];
    const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
    ++result.coordinates_checked;
    if (err > result.max_rel_error || result.coordinates_checked == 1) {
      result.max_rel_error = std::max(result.max_rel_error, err);
      if (err >= result.max_rel_error) {
        result.worst_tensor = t;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  for (auto& t : inputs) t.zero_grad();
  return result;
}

}  // namespace scoresync
