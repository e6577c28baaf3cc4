#include "sprm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sprm/error.hpp"
#include "sprm/ops.hpp"

namespace sprm {

GradCheckResult check_gradients(const std::function<NdArray()>& fn, const std::vector<NdArray>& wrt,
                                const GradCheckOptions& options) {
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);

  NdArray out = fn();
  NdArray projection(out.shape());
  for (auto& v : projection.mutable_data()) v = u(rng);
  const auto objective = [&](const NdArray& y) { return sum(mul(y, projection)); };

  for (const auto& w : wrt) {
    if (!w.requires_grad()) throw UsageError("check_gradients: every input must require grad");
    NdArray(w).zero_grad();
  }
  objective(out).backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& w : wrt) {
    analytic.emplace_back(w.has_grad() ? std::vector<double>(w.grad().begin(), w.grad().end())
                                       : std::vector<double>(w.size(), 0.0));
  }

  GradCheckResult result;
  NoGradGuard guard;
  std::vector<double> worst(wrt.size(), 0.0), scale(wrt.size(), 0.0);
  for (std::size_t i = 0; i < wrt.size(); ++i) {
    NdArray w = wrt[i];
    std::vector<std::size_t> entries(w.size());
    std::iota(entries.begin(), entries.end(), 0);
    if (options.max_entries > 0 && entries.size() > options.max_entries) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(options.max_entries);
    }
    for (std::size_t k : entries) {
      auto data = w.mutable_data();
      const double saved = data[k];
      data[k] = saved + options.eps;
      const double plus = objective(fn()).item();
      data[k] = saved - options.eps;
      const double minus = objective(fn()).item();
      data[k] = saved;
      const double numeric = (plus - minus) / (2.0 * options.eps);
      worst[i] = std::max(worst[i], std::abs(numeric - analytic[i][k]));
      scale[i] = std::max(scale[i], std::abs(numeric));
      ++result.probed;
    }
  }
  const double overall = scale.empty() ? 0.0 : *std::max_element(scale.begin(), scale.end());
  for (std::size_t i = 0; i < wrt.size(); ++i) {
    const double rel = worst[i] / std::max({scale[i], options.relative_floor * overall, 1e-10});
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_input = i;
    }
  }
  for (const auto& w : wrt) NdArray(w).zero_grad();
  return result;
}

}  // namespace sprm
