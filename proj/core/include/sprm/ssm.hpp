#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sprm/nn.hpp"
#include "sprm/segments.hpp"
#include "sprm/tensor.hpp"

namespace sprm::ssm {

/// Continuous single-input single-output diagonal SSM h' = A h + B x, y = C h.
/// A is stored through log_a with A = -exp(log_a), so every diagonal entry is
/// strictly negative.
struct SsmParams {
  std::vector<double> log_a;
  std::vector<double> b;
  std::vector<double> c;
  double delta = 0.0;

  /// Builds parameters from negative diagonal entries of A.
  static SsmParams from_diagonal(std::span<const double> a, std::vector<double> b,
                                 std::vector<double> c, double delta);

  std::size_t state_dim() const { return log_a.size(); }
  std::vector<double> a() const;
};

struct DiscreteSsm {
  std::vector<double> a_bar;
  std::vector<double> b_bar;
};

/// Below this |delta * a| the input gain falls back to its limit delta.
inline constexpr double kZohSeriesThreshold = 1e-8;

/// ZOH input gain (exp(delta a) - 1) / a for one diagonal entry, together with
/// its partial derivatives. a_bar = exp(delta a) must be supplied.
struct ZohGain {
  double value;
  double d_delta;
  double d_a;
};
ZohGain zoh_gain(double a, double delta, double a_bar);

/// A_bar = exp(delta A), B_bar = (delta A)^-1 (exp(delta A) - I) delta B.
/// Throws DomainError for delta <= 0.
DiscreteSsm discretize_zoh(const SsmParams& params);

/// h_t = A_bar h_{t-1} + B_bar x_t, y_t = C h_t with h_{-1} = 0.
std::vector<double> ssm_recurrence(const DiscreteSsm& disc, std::span<const double> c,
                                   std::span<const double> x);

/// (C B_bar, C A_bar B_bar, ..., C A_bar^{m-1} B_bar).
std::vector<double> ssm_conv_kernel(const DiscreteSsm& disc, std::span<const double> c, std::size_t m);

/// Causal convolution y_t = sum_{j <= t} kernel_j x_{t-j}. Positions beyond the
/// kernel length contribute nothing.
std::vector<double> apply_kernel(std::span<const double> kernel, std::span<const double> x);

/// Input-dependent scan over every channel independently.
///
///   x      [rows x E]   drive
///   delta  [rows x E]   positive step sizes
///   a_log  [E x N]      A = -exp(a_log)
///   b, c   [rows x N]   per-step input/output projections shared by channels
///
/// Each row is discretized with ZOH and fed through the diagonal recurrence.
/// Segments restart the state at zero; invalid rows neither update the state
/// nor produce output.
NdArray selective_scan(const NdArray& x, const NdArray& delta, const NdArray& a_log, const NdArray& b,
                       const NdArray& c, const Segments* segments = nullptr);

struct SelectiveSsmConfig {
  std::size_t channels = 0;
  std::size_t state_dim = 16;
  std::size_t dt_rank = 0;  // 0 picks ceil(channels / 16)
  double dt_min = 0.01;
  double dt_max = 0.1;
};

/// Selective SSM layer: projects each frame to (delta, B, C), then scans.
class SelectiveSsm {
 public:
  SelectiveSsm() = default;
  SelectiveSsm(const SelectiveSsmConfig& config, Rng& rng);

  NdArray forward(const NdArray& x, const Segments* segments = nullptr) const;
  void collect(ParamList& out, const std::string& prefix) const;

  const SelectiveSsmConfig& config() const { return config_; }

 private:
  SelectiveSsmConfig config_;
  NdArray x_proj_;   // [E x (dt_rank + 2N)], no bias
  Linear dt_proj_;   // dt_rank -> E
  NdArray a_log_;    // [E x N]
};

}  // namespace sprm::ssm
