#include "sprm/ssm.hpp"

#include <cmath>
#include <memory>

#include "autograd.hpp"
#include "sprm/error.hpp"
#include "sprm/ops.hpp"

namespace sprm::ssm {

using detail::input_data;
using detail::input_grad;
using detail::make_result;
using detail::Node;

namespace {
constexpr double kSeriesSwitch = 1e-3;
}  // namespace

SsmParams SsmParams::from_diagonal(std::span<const double> a, std::vector<double> b,
                                   std::vector<double> c, double delta) {
  SsmParams p;
  for (double v : a) {
    if (!(v < 0.0)) throw DomainError("diagonal A entries must be strictly negative");
    p.log_a.push_back(std::log(-v));
  }
  p.b = std::move(b);
  p.c = std::move(c);
  p.delta = delta;
  return p;
}

std::vector<double> SsmParams::a() const {
  std::vector<double> out(log_a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = -std::exp(log_a[i]);
  return out;
}

ZohGain zoh_gain(double a, double delta, double a_bar) {
  const double z = delta * a;
  const double az = std::abs(z);
  if (az < kZohSeriesThreshold) return {delta, 1.0, 0.5 * delta * delta};
  if (az < kSeriesSwitch) {
    // delta * sum z^k / (k+1)!, truncated after z^3.
    const double value = delta * (1.0 + z / 2.0 + z * z / 6.0 + z * z * z / 24.0);
    const double d_a = delta * delta * (0.5 + z / 3.0 + z * z / 8.0 + z * z * z / 30.0);
    return {value, a_bar, d_a};
  }
  const double value = (a_bar - 1.0) / a;
  return {value, a_bar, (delta * a_bar - value) / a};
}

DiscreteSsm discretize_zoh(const SsmParams& params) {
  if (!(params.delta > 0.0)) throw DomainError("ZOH discretization needs delta > 0");
  const std::size_t n = params.state_dim();
  if (params.b.size() != n) throw DimensionError("B must have one entry per state");
  DiscreteSsm out;
  out.a_bar.resize(n);
  out.b_bar.resize(n);
  const auto a = params.a();
  for (std::size_t i = 0; i < n; ++i) {
    out.a_bar[i] = std::exp(params.delta * a[i]);
    out.b_bar[i] = zoh_gain(a[i], params.delta, out.a_bar[i]).value * params.b[i];
  }
  return out;
}

std::vector<double> ssm_recurrence(const DiscreteSsm& disc, std::span<const double> c,
                                   std::span<const double> x) {
  const std::size_t n = disc.a_bar.size();
  if (c.size() != n || disc.b_bar.size() != n) throw DimensionError("C/B_bar size must equal state_dim");
  std::vector<double> h(n, 0.0), y(x.size(), 0.0);
  for (std::size_t t = 0; t < x.size(); ++t) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      h[i] = disc.a_bar[i] * h[i] + disc.b_bar[i] * x[t];
      acc += c[i] * h[i];
    }
    y[t] = acc;
  }
  return y;
}

std::vector<double> ssm_conv_kernel(const DiscreteSsm& disc, std::span<const double> c, std::size_t m) {
  if (m < 1) throw DimensionError("kernel length must be >= 1");
  const std::size_t n = disc.a_bar.size();
  if (c.size() != n) throw DimensionError("C size must equal state_dim");
  std::vector<double> kernel(m, 0.0);
  std::vector<double> power(disc.b_bar);  // A_bar^j B_bar
  for (std::size_t j = 0; j < m; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += c[i] * power[i];
      power[i] *= disc.a_bar[i];
    }
    kernel[j] = acc;
  }
  return kernel;
}

std::vector<double> apply_kernel(std::span<const double> kernel, std::span<const double> x) {
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t t = 0; t < x.size(); ++t) {
    const std::size_t reach = std::min(t + 1, kernel.size());
    double acc = 0.0;
    for (std::size_t j = 0; j < reach; ++j) acc += kernel[j] * x[t - j];
    y[t] = acc;
  }
  return y;
}

NdArray selective_scan(const NdArray& x, const NdArray& delta, const NdArray& a_log, const NdArray& b,
                       const NdArray& c, const Segments* segments) {
  if (x.ndim() != 2 || delta.shape() != x.shape()) {
    throw DimensionError("selective_scan: delta " + shape_str(delta.shape()) + " must match x " +
                         shape_str(x.shape()));
  }
  const std::size_t rows = x.rows(), channels = x.cols();
  if (a_log.ndim() != 2 || a_log.rows() != channels) {
    throw DimensionError("selective_scan: a_log must be [" + std::to_string(channels) + " x N], got " +
                         shape_str(a_log.shape()));
  }
  const std::size_t n = a_log.cols();
  if (b.shape() != Shape{rows, n} || c.shape() != Shape{rows, n}) {
    throw DimensionError("selective_scan: B/C must be [" + std::to_string(rows) + " x " +
                         std::to_string(n) + "]");
  }
  Segments seg = segments ? *segments : Segments::whole(rows);
  if (seg.rows() != rows) throw DimensionError("selective_scan: segment layout does not cover input rows");

  const double* px = x.data().data();
  const double* pd = delta.data().data();
  const double* pb = b.data().data();
  const double* pc = c.data().data();
  std::vector<double> a(channels * n);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = -std::exp(a_log.data()[i]);

  const std::size_t stride = channels * n;
  std::vector<double> y(rows * channels, 0.0);
  // Saved per row: state after the update, A_bar and the ZOH gain.
  // Only valid rows are written and read back, so the buffers stay uninitialized.
  std::shared_ptr<double[]> states(new double[rows * stride]);
  std::shared_ptr<double[]> abar(new double[rows * stride]);
  std::shared_ptr<double[]> gain(new double[rows * stride]);
  std::vector<double> h(stride);
  for (std::size_t s = 0; s < seg.count; ++s) {
    std::fill(h.begin(), h.end(), 0.0);
    for (std::size_t t = 0; t < seg.length; ++t) {
      const std::size_t r = s * seg.length + t;
      if (!seg.is_valid(r)) continue;
      const double* brow = pb + r * n;
      const double* crow = pc + r * n;
      for (std::size_t e = 0; e < channels; ++e) {
        const double dt = pd[r * channels + e];
        const double xv = px[r * channels + e];
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t k = e * n + i;
          const double ab = std::exp(dt * a[k]);
          const double z = std::abs(dt * a[k]);
          const double phi = z < kSeriesSwitch ? zoh_gain(a[k], dt, ab).value : (ab - 1.0) / a[k];
          h[k] = ab * h[k] + phi * brow[i] * xv;
          acc += crow[i] * h[k];
          abar[r * stride + k] = ab;
          gain[r * stride + k] = phi;
        }
        y[r * channels + e] = acc;
      }
      std::copy(h.begin(), h.end(), states.get() + r * stride);
    }
  }

  return make_result(
      "selective_scan", {rows, channels}, std::move(y), {&x, &delta, &a_log, &b, &c},
      [rows, channels, n, seg, a = std::move(a), states = std::move(states), abar = std::move(abar),
       gain = std::move(gain)](Node& self) {
        const std::size_t stride = channels * n;
        const double* gy = self.grad.data();
        const double* px = input_data(self, 0);
        const double* pd = input_data(self, 1);
        const double* pb = input_data(self, 3);
        const double* pc = input_data(self, 4);
        double* gx = input_grad(self, 0);
        double* gd = input_grad(self, 1);
        double* galog = input_grad(self, 2);
        double* gb = input_grad(self, 3);
        double* gc = input_grad(self, 4);
        std::vector<double> ga(stride, 0.0);
        std::vector<double> carry(stride);
        for (std::size_t s = 0; s < seg.count; ++s) {
          std::fill(carry.begin(), carry.end(), 0.0);
          // Previous valid row within the segment, for h_{t-1}.
          std::vector<std::ptrdiff_t> prev(seg.length, -1);
          std::ptrdiff_t last = -1;
          for (std::size_t t = 0; t < seg.length; ++t) {
            const std::size_t r = s * seg.length + t;
            if (!seg.is_valid(r)) continue;
            prev[t] = last;
            last = static_cast<std::ptrdiff_t>(r);
          }
          for (std::size_t t = seg.length; t-- > 0;) {
            const std::size_t r = s * seg.length + t;
            if (!seg.is_valid(r)) continue;
            const double* h_now = states.get() + r * stride;
            const double* h_prev = prev[t] >= 0 ? states.get() + prev[t] * stride : nullptr;
            const double* brow = pb + r * n;
            const double* crow = pc + r * n;
            for (std::size_t e = 0; e < channels; ++e) {
              const double dy = gy[r * channels + e];
              const double dt = pd[r * channels + e];
              const double xv = px[r * channels + e];
              double dx_acc = 0.0, dd_acc = 0.0;
              for (std::size_t i = 0; i < n; ++i) {
                const std::size_t k = e * n + i;
                const double ab = abar[r * stride + k];
                const double phi = gain[r * stride + k];
                const double dh = crow[i] * dy + carry[k];
                if (gc) gc[r * n + i] += dy * h_now[k];
                const double hp = h_prev ? h_prev[k] : 0.0;
                const double dab = dh * hp;
                const double dbbar = dh * xv;
                dx_acc += dh * phi * brow[i];
                if (gb) gb[r * n + i] += dbbar * phi;
                const double dphi = dbbar * brow[i];
                const ZohGain zg = zoh_gain(a[k], dt, ab);
                dd_acc += dab * a[k] * ab + dphi * zg.d_delta;
                ga[k] += dab * dt * ab + dphi * zg.d_a;
                carry[k] = ab * dh;
              }
              if (gx) gx[r * channels + e] += dx_acc;
              if (gd) gd[r * channels + e] += dd_acc;
            }
          }
        }
        if (galog) {
          for (std::size_t k = 0; k < stride; ++k) galog[k] += ga[k] * a[k];
        }
        (void)rows;
      });
}

SelectiveSsm::SelectiveSsm(const SelectiveSsmConfig& config, Rng& rng) : config_(config) {
  if (config_.channels == 0 || config_.state_dim == 0) throw ConfigError("selective SSM needs channels and state_dim > 0");
  if (config_.dt_rank == 0) config_.dt_rank = (config_.channels + 15) / 16;
  const std::size_t e = config_.channels, n = config_.state_dim, r = config_.dt_rank;
  x_proj_ = init_uniform_fan_in({e, r + 2 * n}, e, rng);
  dt_proj_ = Linear(r, e, rng);
  // Bias chosen so softplus(bias) spans [dt_min, dt_max] log-uniformly.
  std::uniform_real_distribution<double> u(std::log(config_.dt_min), std::log(config_.dt_max));
  for (auto& v : dt_proj_.bias().mutable_data()) {
    const double dt = std::exp(u(rng));
    v = dt + std::log(-std::expm1(-dt));
  }
  a_log_ = NdArray({e, n}, true);
  auto al = a_log_.mutable_data();
  for (std::size_t c = 0; c < e; ++c) {
    for (std::size_t i = 0; i < n; ++i) al[c * n + i] = std::log(static_cast<double>(i + 1));
  }
}

NdArray SelectiveSsm::forward(const NdArray& x, const Segments* segments) const {
  const std::size_t r = config_.dt_rank, n = config_.state_dim;
  NdArray proj = matmul(x, x_proj_);
  NdArray dt_in = slice_cols(proj, 0, r);
  NdArray b = slice_cols(proj, r, r + n);
  NdArray c = slice_cols(proj, r + n, r + 2 * n);
  NdArray delta = softplus(dt_proj_.forward(dt_in));
  return selective_scan(x, delta, a_log_, b, c, segments);
}

void SelectiveSsm::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".x_proj", x_proj_});
  dt_proj_.collect(out, prefix + ".dt_proj");
  out.push_back({prefix + ".a_log", a_log_});
}

}  // namespace sprm::ssm
