#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "sprm/gradcheck.hpp"
#include "sprm/model.hpp"
#include "sprm/tensor.hpp"

namespace sprm::test {

inline NdArray random_array(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  NdArray a(std::move(shape), requires_grad);
  for (auto& v : a.mutable_data()) v = u(rng);
  return a;
}

inline NdArray param(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  return random_array(std::move(shape), rng, lo, hi, true);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double grad_error(const std::function<NdArray()>& fn, const std::vector<NdArray>& wrt,
                         std::uint64_t seed = 0, std::size_t max_entries = 0) {
  GradCheckOptions opt;
  opt.seed = seed;
  opt.max_entries = max_entries;
  return check_gradients(fn, wrt, opt).max_rel_error;
}

inline constexpr int kSeeds = 20;

// Hand count of one SRTM block: two instance norms and beta, the gate and SSM
// input projections, the depthwise conv, the selective SSM (x_proj to
// dt_rank + 2N, dt_proj back to E, a_log) and its layer norm, Q/K/V and the
// attention output projection, the fusion projection and the 2C-wide MLP.
inline std::size_t srtm_param_oracle(std::size_t c, std::size_t lambda, std::size_t n, std::size_t query_dim,
                                     BranchMode mode = BranchMode::full) {
  const std::size_t e = lambda * c, d = c / 2, r = (e + 15) / 16, qk = query_dim ? query_dim : c / 2;
  std::size_t total = 1 + 4 * c;
  if (mode != BranchMode::attention_only) {
    total += 2 * (c / 4 * e + e) + 4 * e + e * (r + 2 * n) + (r * e + e) + e * n + 2 * e;
  }
  if (mode != BranchMode::ssm_only) total += 2 * (qk * d + d) + (c / 2 * d + d) + (d * e + e);
  total += e * c + c + (c * 2 * c + 2 * c) + (2 * c * c + c);
  return total;
}

// Block: optional 3-tap C->C conv, two SRTM blocks, C->C output linear.
inline std::size_t block_param_oracle(std::size_t c, const ModelConfig& cfg, std::size_t query_dim) {
  const std::size_t conv = cfg.conv == ConvMode::none ? 0 : 3 * c * c + c;
  return conv + 2 * srtm_param_oracle(c, cfg.expand, cfg.state_dim, query_dim, cfg.branches) + c * c + c;
}

// Stage 1: D->stage1_dim, N blocks, optional stage1_dim->refine_dim, 1x1 head.
// Later stages: classes->refine_dim, N cross-attention blocks, head.
inline std::size_t model_param_oracle(const ModelConfig& cfg) {
  const std::size_t k = cfg.num_classes, r = cfg.refine_dim, c1 = cfg.stage1_dim;
  const std::size_t head = r * k + k;
  std::size_t total = cfg.input_dim * c1 + c1 + cfg.layers * block_param_oracle(c1, cfg, 0) + head;
  if (c1 != r) total += c1 * r + r;
  for (std::size_t s = 1; s < cfg.stages; ++s) total += k * r + r + cfg.layers * block_param_oracle(r, cfg, k) + head;
  return total;
}

}  // namespace sprm::test
