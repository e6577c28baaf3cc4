#include "sprm/srtm.hpp"

#include <array>
#include <cmath>

#include "autograd.hpp"
#include "sprm/error.hpp"
#include "sprm/ops.hpp"

namespace sprm {

using detail::input_data;
using detail::input_grad;
using detail::make_result;
using detail::Node;

namespace {

void check_attention_inputs(const NdArray& q, const NdArray& k, const Segments& seg) {
  if (q.ndim() != 2 || k.shape() != q.shape()) {
    throw DimensionError("attention: Q " + shape_str(q.shape()) + " and K " + shape_str(k.shape()) +
                         " must have equal shapes");
  }
  if (q.cols() == 0) throw ConfigError("attention: head dimension must be > 0");
  if (seg.rows() != q.rows()) throw DimensionError("attention: segment layout does not cover the rows");
}

// Fills `weights` ([rows x length]) with the per-segment softmax.
void compute_weights(const double* pq, const double* pk, std::size_t d, const Segments& seg, bool causal,
                     std::vector<double>& weights) {
  const std::size_t len = seg.length;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  weights.assign(seg.rows() * len, 0.0);
  for (std::size_t s = 0; s < seg.count; ++s) {
    const std::size_t base = s * len;
    for (std::size_t i = 0; i < len; ++i) {
      if (!seg.is_valid(base + i)) continue;
      double* w = weights.data() + (base + i) * len;
      const double* qi = pq + (base + i) * d;
      const std::size_t last = causal ? i + 1 : len;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < last; ++j) {
        if (!seg.is_valid(base + j)) continue;
        const double* kj = pk + (base + j) * d;
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += qi[c] * kj[c];
        w[j] = dot * scale;
        mx = std::max(mx, w[j]);
      }
      double total = 0.0;
      for (std::size_t j = 0; j < last; ++j) {
        if (!seg.is_valid(base + j)) continue;
        w[j] = std::exp(w[j] - mx);
        total += w[j];
      }
      for (std::size_t j = 0; j < last; ++j) w[j] /= total;
    }
  }
}

}  // namespace

std::vector<double> attention_weights(const NdArray& q, const NdArray& k, const Segments* segments, bool causal) {
  const Segments seg = segments ? *segments : Segments::whole(q.rows());
  check_attention_inputs(q, k, seg);
  std::vector<double> weights;
  compute_weights(q.data().data(), k.data().data(), q.cols(), seg, causal, weights);
  return weights;
}

NdArray attention(const NdArray& q, const NdArray& k, const NdArray& v, const Segments* segments, bool causal) {
  const Segments seg = segments ? *segments : Segments::whole(q.rows());
  check_attention_inputs(q, k, seg);
  if (v.ndim() != 2 || v.rows() != q.rows()) {
    throw DimensionError("attention: V " + shape_str(v.shape()) + " must have " + std::to_string(q.rows()) +
                         " rows");
  }
  const std::size_t d = q.cols(), dv = v.cols(), len = seg.length, rows = q.rows();
  std::vector<double> weights;
  compute_weights(q.data().data(), k.data().data(), d, seg, causal, weights);
  std::vector<double> out(rows * dv, 0.0);
  const double* pv = v.data().data();
  for (std::size_t s = 0; s < seg.count; ++s) {
    const std::size_t base = s * len;
    for (std::size_t i = 0; i < len; ++i) {
      const double* w = weights.data() + (base + i) * len;
      double* o = out.data() + (base + i) * dv;
      for (std::size_t j = 0; j < len; ++j) {
        if (w[j] == 0.0) continue;
        const double* vj = pv + (base + j) * dv;
        for (std::size_t c = 0; c < dv; ++c) o[c] += w[j] * vj[c];
      }
    }
  }
  return make_result(
      "attention", {rows, dv}, std::move(out), {&q, &k, &v},
      [d, dv, seg, weights = std::move(weights)](Node& self) {
        const std::size_t len = seg.length;
        const double scale = 1.0 / std::sqrt(static_cast<double>(d));
        const double* g = self.grad.data();
        const double* pq = input_data(self, 0);
        const double* pk = input_data(self, 1);
        const double* pv = input_data(self, 2);
        double* gq = input_grad(self, 0);
        double* gk = input_grad(self, 1);
        double* gv = input_grad(self, 2);
        std::vector<double> dscore(len);
        for (std::size_t s = 0; s < seg.count; ++s) {
          const std::size_t base = s * len;
          for (std::size_t i = 0; i < len; ++i) {
            if (!seg.is_valid(base + i)) continue;
            const double* w = weights.data() + (base + i) * len;
            const double* gi = g + (base + i) * dv;
            double dot = 0.0;
            for (std::size_t j = 0; j < len; ++j) {
              if (w[j] == 0.0) {
                dscore[j] = 0.0;
                continue;
              }
              const double* vj = pv + (base + j) * dv;
              double dp = 0.0;
              for (std::size_t c = 0; c < dv; ++c) dp += gi[c] * vj[c];
              dscore[j] = dp;
              dot += dp * w[j];
              if (gv) {
                double* gvj = gv + (base + j) * dv;
                for (std::size_t c = 0; c < dv; ++c) gvj[c] += w[j] * gi[c];
              }
            }
            const double* qi = pq + (base + i) * d;
            for (std::size_t j = 0; j < len; ++j) {
              if (w[j] == 0.0) continue;
              const double ds = w[j] * (dscore[j] - dot) * scale;
              const double* kj = pk + (base + j) * d;
              if (gq) {
                double* gqi = gq + (base + i) * d;
                for (std::size_t c = 0; c < d; ++c) gqi[c] += ds * kj[c];
              }
              if (gk) {
                double* gkj = gk + (base + j) * d;
                for (std::size_t c = 0; c < d; ++c) gkj[c] += ds * qi[c];
              }
            }
          }
        }
      });
}

BranchMode parse_branch_mode(std::string_view name) {
  if (name == "full") return BranchMode::full;
  if (name == "attention_only") return BranchMode::attention_only;
  if (name == "ssm_only") return BranchMode::ssm_only;
  throw ConfigError("unknown branch mode '" + std::string(name) + "' (full, attention_only, ssm_only)");
}

std::string_view to_string(BranchMode mode) {
  switch (mode) {
    case BranchMode::full:
      return "full";
    case BranchMode::attention_only:
      return "attention_only";
    case BranchMode::ssm_only:
      return "ssm_only";
  }
  return "full";
}

void SrtmConfig::validate() const {
  if (channels == 0 || channels % 4 != 0) {
    throw ConfigError("SRTM channels must be a positive multiple of 4, got " + std::to_string(channels));
  }
  if (expand < 1) throw ConfigError("SRTM expansion factor must be >= 1");
  if (state_dim < 1) throw ConfigError("SSM state_dim must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout rate must lie in [0, 1)");
}

BranchSplit split_branches(const NdArray& x) {
  if (x.ndim() != 2 || x.cols() % 4 != 0 || x.cols() == 0) {
    throw ConfigError("TranMamba input channels must be a positive multiple of 4, got " + shape_str(x.shape()));
  }
  const std::size_t c = x.cols();
  return {slice_cols(x, 0, c / 4), slice_cols(x, c / 4, c / 2), slice_cols(x, c / 2, c)};
}

NdArray merge_branches(const BranchSplit& split) {
  const std::array<NdArray, 3> parts{split.b1, split.b2, split.b3};
  return concat_cols(parts);
}

SrtmBlock::SrtmBlock(const SrtmConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const std::size_t c = config_.channels, e = config_.inner(), d = config_.attention_dim();
  beta_ = init_constant({1}, config_.beta_init);
  norm_in_gamma_ = init_constant({c}, 1.0);
  norm_in_beta_ = init_zeros({c});
  norm_mid_gamma_ = init_constant({c}, 1.0);
  norm_mid_beta_ = init_zeros({c});
  if (uses_ssm()) {
    gate_proj_ = Linear(c / 4, e, rng);
    ssm_in_proj_ = Linear(c / 4, e, rng);
    conv_kernel_ = init_uniform_fan_in({3, e}, 3, rng);
    conv_bias_ = init_zeros({e});
    ssm_ = ssm::SelectiveSsm(ssm::SelectiveSsmConfig{e, config_.state_dim, 0, 0.01, 0.1}, rng);
    ln_gamma_ = init_constant({e}, 1.0);
    ln_beta_ = init_zeros({e});
  }
  if (uses_attention()) {
    const std::size_t qk_in = config_.query_dim ? config_.query_dim : c / 2;
    query_ = Linear(qk_in, d, rng);
    key_ = Linear(qk_in, d, rng);
    value_ = Linear(c / 2, d, rng);
    attn_out_ = Linear(d, e, rng);
  }
  out_proj_ = Linear(e, c, rng);
  mlp_in_ = Linear(c, 2 * c, rng);
  mlp_out_ = Linear(2 * c, c, rng);
}

NdArray SrtmBlock::tranmamba(const NdArray& x, const Segments& segments, const NdArray* query_source,
                             const RunMode& mode) const {
  if (x.ndim() != 2 || x.cols() != config_.channels) {
    throw ConfigError("TranMamba expects " + std::to_string(config_.channels) + " channels, got " +
                      shape_str(x.shape()));
  }
  const BranchSplit split = split_branches(x);
  NdArray fused;
  if (uses_ssm()) {
    NdArray f1 = silu(gate_proj_.forward(split.b1));
    NdArray u = ssm_in_proj_.forward(split.b2);
    u = depthwise_conv1d(u, conv_kernel_, conv_bias_, 1, Padding::causal, &segments);
    NdArray f2 = layer_norm(ssm_.forward(u, &segments), ln_gamma_, ln_beta_, config_.eps);
    fused = mul(f1, f2);
  }
  if (uses_attention()) {
    const NdArray* qk_src = &split.b3;
    if (config_.query_dim) {
      if (!query_source || query_source->rows() != x.rows() || query_source->cols() != config_.query_dim) {
        throw ConfigError("cross-attention SRTM needs a [" + std::to_string(x.rows()) + " x " +
                          std::to_string(config_.query_dim) + "] query source");
      }
      qk_src = query_source;
    }
    NdArray att = attention(query_.forward(*qk_src), key_.forward(*qk_src), value_.forward(split.b3),
                            &segments, config_.causal);
    Rng fallback(0);
    NdArray f3 = dropout(attn_out_.forward(gelu(att)), config_.dropout, mode.training,
                         mode.rng ? *mode.rng : fallback);
    fused = fused.defined() ? add(fused, f3) : f3;
  }
  return out_proj_.forward(fused);
}

NdArray SrtmBlock::forward(const NdArray& x, const Segments& segments, const NdArray* query_source,
                           const RunMode& mode, std::span<const std::ptrdiff_t> time_order) const {
  if (x.ndim() != 2 || x.cols() != config_.channels) {
    throw ConfigError("SRTM block expects " + std::to_string(config_.channels) + " channels, got " +
                      shape_str(x.shape()));
  }
  std::vector<std::ptrdiff_t> row_order;
  if (time_order.empty()) {
    for (std::size_t r = 0; r < x.rows(); ++r) {
      if (segments.is_valid(r)) row_order.push_back(static_cast<std::ptrdiff_t>(r));
    }
    time_order = row_order;
  }
  const NdArray input = mask_rows(x, segments.valid);
  NdArray normed =
      instance_norm(input, norm_in_gamma_, norm_in_beta_, config_.eps, &segments, config_.causal, time_order);
  NdArray fused = add(scale_by(input, beta_), tranmamba(normed, segments, query_source, mode));
  NdArray mid = instance_norm(fused, norm_mid_gamma_, norm_mid_beta_, config_.eps, &segments, config_.causal, time_order);
  NdArray out = mlp_out_.forward(gelu(mlp_in_.forward(mid)));
  return mask_rows(out, segments.valid);
}

void SrtmBlock::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".beta", beta_});
  out.push_back({prefix + ".norm_in.gamma", norm_in_gamma_});
  out.push_back({prefix + ".norm_in.beta", norm_in_beta_});
  if (uses_ssm()) {
    gate_proj_.collect(out, prefix + ".gate_proj");
    ssm_in_proj_.collect(out, prefix + ".ssm_in_proj");
    out.push_back({prefix + ".conv.kernel", conv_kernel_});
    out.push_back({prefix + ".conv.bias", conv_bias_});
    ssm_.collect(out, prefix + ".ssm");
    out.push_back({prefix + ".ssm_norm.gamma", ln_gamma_});
    out.push_back({prefix + ".ssm_norm.beta", ln_beta_});
  }
  if (uses_attention()) {
    query_.collect(out, prefix + ".query");
    key_.collect(out, prefix + ".key");
    value_.collect(out, prefix + ".value");
    attn_out_.collect(out, prefix + ".attn_out");
  }
  out_proj_.collect(out, prefix + ".out_proj");
  out.push_back({prefix + ".norm_mid.gamma", norm_mid_gamma_});
  out.push_back({prefix + ".norm_mid.beta", norm_mid_beta_});
  mlp_in_.collect(out, prefix + ".mlp_in");
  mlp_out_.collect(out, prefix + ".mlp_out");
}

}  // namespace sprm
