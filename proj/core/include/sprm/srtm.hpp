#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sprm/nn.hpp"
#include "sprm/segments.hpp"
#include "sprm/ssm.hpp"
#include "sprm/tensor.hpp"

namespace sprm {

/// softmax(Q K^T / sqrt(d)) V computed independently inside every segment.
/// Invalid keys get zero weight; invalid query rows produce zero rows. In
/// causal mode query t only sees keys <= t. Throws ConfigError when d == 0.
NdArray attention(const NdArray& q, const NdArray& k, const NdArray& v, const Segments* segments = nullptr,
                  bool causal = false);

/// Attention weights as a [rows x length] matrix: row r holds the weights over
/// the keys of r's segment. Not differentiable; used for inspection.
std::vector<double> attention_weights(const NdArray& q, const NdArray& k, const Segments* segments = nullptr,
                                      bool causal = false);

/// Which TranMamba branches feed the output projection.
enum class BranchMode { full, attention_only, ssm_only };

BranchMode parse_branch_mode(std::string_view name);
std::string_view to_string(BranchMode mode);

struct SrtmConfig {
  std::size_t channels = 64;  // C, divisible by 4
  std::size_t expand = 2;     // lambda
  std::size_t state_dim = 16;
  double beta_init = 1.0;
  double dropout = 0.1;
  /// 0 for self-attention. Otherwise Q and K come from a separate
  /// [rows x query_dim] source (the previous stage's probabilities).
  std::size_t query_dim = 0;
  bool causal = false;
  BranchMode branches = BranchMode::full;
  double eps = 1e-5;

  std::size_t inner() const { return expand * channels; }
  std::size_t attention_dim() const { return channels / 2; }
  void validate() const;
};

/// Channel split of the TranMamba input: first quarter, second quarter, last half.
struct BranchSplit {
  NdArray b1;
  NdArray b2;
  NdArray b3;
};

BranchSplit split_branches(const NdArray& x);
NdArray merge_branches(const BranchSplit& split);

/// Scale Residual TranMamba block.
///
///   F     = beta * F_in + TranMamba(IN(F_in))
///   F_out = MLP(IN(F))
///
/// TranMamba fuses SiLU(Linear(b1)) * LN(SSM(Conv1d(Linear(b2)))) with
/// Dropout(Linear(GELU(Attention(b3)))) and projects back to C channels.
/// Conv, scan and attention run per segment so the block can be applied to
/// windowed or long-range sampled layouts directly. Both instance norms take
/// their statistics over the whole sequence: `time_order` lists the valid
/// rows in frame order (a layout's frame_to_row); when empty, valid rows are
/// taken in row order.
class SrtmBlock {
 public:
  SrtmBlock() = default;
  SrtmBlock(const SrtmConfig& config, Rng& rng);

  NdArray forward(const NdArray& x, const Segments& segments, const NdArray* query_source,
                  const RunMode& mode, std::span<const std::ptrdiff_t> time_order = {}) const;
  NdArray tranmamba(const NdArray& x, const Segments& segments, const NdArray* query_source,
                    const RunMode& mode) const;

  void collect(ParamList& out, const std::string& prefix) const;
  const SrtmConfig& config() const { return config_; }
  NdArray& beta() { return beta_; }

 private:
  bool uses_ssm() const { return config_.branches != BranchMode::attention_only; }
  bool uses_attention() const { return config_.branches != BranchMode::ssm_only; }

  SrtmConfig config_;
  NdArray beta_;
  NdArray norm_in_gamma_, norm_in_beta_;
  NdArray norm_mid_gamma_, norm_mid_beta_;
  // Branch 1.
  Linear gate_proj_;
  // Branch 2.
  Linear ssm_in_proj_;
  NdArray conv_kernel_;  // [3 x inner], depthwise
  NdArray conv_bias_;
  ssm::SelectiveSsm ssm_;
  NdArray ln_gamma_, ln_beta_;
  // Branch 3.
  Linear query_, key_, value_;
  Linear attn_out_;
  // Fusion and MLP.
  Linear out_proj_;
  Linear mlp_in_, mlp_out_;
};

}  // namespace sprm
