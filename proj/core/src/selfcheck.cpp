#include "sprm/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include <fmt/format.h>

#include "sprm/gradcheck.hpp"
#include "sprm/metrics.hpp"
#include "sprm/model.hpp"
#include "sprm/ops.hpp"
#include "sprm/sampling.hpp"
#include "sprm/srtm.hpp"
#include "sprm/ssm.hpp"

namespace sprm {

namespace {

NdArray random_array(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  NdArray a(std::move(shape), grad);
  for (auto& v : a.mutable_data()) v = u(rng);
  return a;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

CheckResult recurrence_vs_kernel(bool corrupt) {
  Rng rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t n = std::size_t{1} << (trial % 3 * 2);  // 1, 4, 16
    const std::size_t len = 8 << (trial % 3);
    std::vector<double> a(n), b(n), c(n), x(len);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = -(0.05 + 2.0 * u(rng));
      b[i] = 2.0 * u(rng) - 1.0;
      c[i] = 2.0 * u(rng) - 1.0;
    }
    for (auto& v : x) v = 2.0 * u(rng) - 1.0;
    const auto params = ssm::SsmParams::from_diagonal(a, b, c, 0.01 + 0.5 * u(rng));
    const auto disc = ssm::discretize_zoh(params);
    const auto rec = ssm::ssm_recurrence(disc, c, x);
    auto kernel = ssm::ssm_conv_kernel(disc, c, len);
    if (corrupt) kernel[len / 2] += 0.25;
    worst = std::max(worst, max_abs_diff(rec, ssm::apply_kernel(kernel, x)));
  }
  return {"ssm recurrence == convolution kernel", worst <= 1e-9, fmt::format("max abs err {:.3g}", worst)};
}

CheckResult scan_vs_lti() {
  Rng rng(12);
  double worst = 0.0;
  for (int trial = 0; trial < 6; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(trial) * 3, len = 40;
    NdArray a_log = random_array({1, n}, rng, -1.0, 1.0);
    NdArray bc = random_array({2, n}, rng);
    const double dt = 0.02 + 0.1 * trial;
    NdArray x = random_array({len, 1}, rng);
    std::vector<double> b_rows, c_rows;
    for (std::size_t t = 0; t < len; ++t) {
      b_rows.insert(b_rows.end(), bc.data().begin(), bc.data().begin() + static_cast<std::ptrdiff_t>(n));
      c_rows.insert(c_rows.end(), bc.data().begin() + static_cast<std::ptrdiff_t>(n), bc.data().end());
    }
    const NdArray y = ssm::selective_scan(x, NdArray::filled({len, 1}, dt), a_log, NdArray({len, n}, b_rows),
                                          NdArray({len, n}, c_rows));
    ssm::SsmParams p;
    p.log_a.assign(a_log.data().begin(), a_log.data().end());
    p.b.assign(b_rows.begin(), b_rows.begin() + static_cast<std::ptrdiff_t>(n));
    p.c.assign(c_rows.begin(), c_rows.begin() + static_cast<std::ptrdiff_t>(n));
    p.delta = dt;
    const auto ref = ssm::ssm_recurrence(ssm::discretize_zoh(p), p.c, x.data());
    worst = std::max(worst, max_abs_diff(y.data(), ref));
  }
  return {"selective scan (constant projections) == LTI recurrence", worst <= 1e-9,
          fmt::format("max abs err {:.3g}", worst)};
}

CheckResult sampling_round_trip() {
  Rng rng(13);
  std::uniform_int_distribution<std::size_t> len_d(1, 200), w_d(1, 40);
  std::size_t failures = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t len = len_d(rng), w = w_d(rng);
    const NdArray x = random_array({len, 3}, rng);
    for (const auto& layout : {sampling::window_layout(len, w), sampling::longrange_layout(len, w)}) {
      const NdArray back = sampling::invert_layout(sampling::apply_layout(x, layout), layout);
      if (!std::equal(back.data().begin(), back.data().end(), x.data().begin())) ++failures;
    }
  }
  return {"window/long-range sampling round trip", failures == 0, fmt::format("{} mismatches in 80", failures)};
}

CheckResult pad_inertness() {
  Rng rng(14);
  SrtmConfig cfg;
  cfg.channels = 8;
  cfg.state_dim = 4;
  cfg.dropout = 0.0;
  const SrtmBlock block(cfg, rng);
  const std::size_t len = 23;
  const NdArray x = random_array({len, cfg.channels}, rng);
  double worst = 0.0;
  for (const auto& layout : {sampling::window_layout(len, 5), sampling::longrange_layout(len, 5)}) {
    const NdArray rows = sampling::apply_layout(x, layout);
    NdArray noisy = rows.clone();
    auto d = noisy.mutable_data();
    for (std::size_t r = 0; r < rows.rows(); ++r) {
      if (layout.segments.is_valid(r)) continue;
      for (std::size_t c = 0; c < cfg.channels; ++c) d[r * cfg.channels + c] = 100.0 * (c + 1.0);
    }
    NoGradGuard guard;
    const auto clean = sampling::invert_layout(block.forward(rows, layout.segments, nullptr, {}), layout);
    const auto dirty = sampling::invert_layout(block.forward(noisy, layout.segments, nullptr, {}), layout);
    worst = std::max(worst, max_abs_diff(clean.data(), dirty.data()));
  }
  return {"pad rows are inert", worst == 0.0, fmt::format("max change {:.3g}", worst)};
}

CheckResult gradient(const std::string& name, const std::function<NdArray()>& fn, const std::vector<NdArray>& wrt) {
  GradCheckOptions opt;
  opt.max_entries = 24;
  const auto r = check_gradients(fn, wrt, opt);
  return {"gradient: " + name, r.max_rel_error <= 1e-4,
          fmt::format("max rel err {:.3g} over {} entries", r.max_rel_error, r.probed)};
}

std::vector<CheckResult> gradient_checks() {
  Rng rng(15);
  std::vector<CheckResult> out;
  {
    NdArray x = random_array({6, 5}, rng, -1, 1, true), w = random_array({5, 4}, rng, -1, 1, true),
            b = random_array({4}, rng, -1, 1, true);
    out.push_back(gradient("linear", [=] { return linear(x, w, b); }, {x, w, b}));
  }
  {
    NdArray x = random_array({9, 3}, rng, -1, 1, true), k = random_array({3, 3, 2}, rng, -1, 1, true),
            b = random_array({2}, rng, -1, 1, true);
    out.push_back(gradient("dilated conv1d", [=] { return conv1d(x, k, b, 2, Padding::same); }, {x, k, b}));
  }
  {
    NdArray x = random_array({10, 3}, rng, -1, 1, true), g = random_array({3}, rng, 0.5, 1.5, true),
            b = random_array({3}, rng, -1, 1, true);
    out.push_back(gradient("instance norm", [=] { return instance_norm(x, g, b, 1e-5); }, {x, g, b}));
  }
  {
    NdArray q = random_array({8, 4}, rng, -1, 1, true), k = random_array({8, 4}, rng, -1, 1, true),
            v = random_array({8, 3}, rng, -1, 1, true);
    Segments seg{2, 4, {}};
    out.push_back(gradient("segmented attention", [=] { return attention(q, k, v, &seg); }, {q, k, v}));
  }
  {
    const std::size_t len = 12, e = 3, n = 4;
    NdArray x = random_array({len, e}, rng, -1, 1, true), dt = random_array({len, e}, rng, 0.01, 0.3, true),
            al = random_array({e, n}, rng, -0.5, 1.0, true), b = random_array({len, n}, rng, -1, 1, true),
            c = random_array({len, n}, rng, -1, 1, true);
    out.push_back(gradient("selective scan", [=] { return ssm::selective_scan(x, dt, al, b, c); }, {x, dt, al, b, c}));
  }
  return out;
}

CheckResult causal_prefix() {
  Rng rng(16);
  LstContextBlock::Options opt;
  opt.channels = 8;
  opt.dilation = 2;
  opt.window = 4;
  opt.stride = 3;
  opt.srtm.state_dim = 4;
  opt.srtm.dropout = 0.0;
  opt.srtm.causal = true;
  const LstContextBlock block(opt, rng);
  const std::size_t len = 21;
  const NdArray x = random_array({len, opt.channels}, rng);
  NoGradGuard guard;
  const NdArray full = block.forward(x, nullptr, {});
  double worst = 0.0;
  for (std::size_t p : {1, 5, 12, 20}) {
    const NdArray prefix(Shape{p, opt.channels},
                         std::vector<double>(x.data().begin(), x.data().begin() + static_cast<std::ptrdiff_t>(p * opt.channels)));
    const NdArray y = block.forward(prefix, nullptr, {});
    worst = std::max(worst, max_abs_diff(y.data(), full.data().subspan(0, p * opt.channels)));
  }
  return {"causal prefix property", worst == 0.0, fmt::format("max prefix deviation {:.3g}", worst)};
}

CheckResult metrics_oracle() {
  const std::vector<int> gt{0, 0, 1, 1}, pred{0, 1, 1, 1};
  const auto m = metrics::evaluate(pred, gt, 2);
  const bool ok = std::abs(m.accuracy - 75.0) < 1e-9 && std::abs(m.phases.mean_jaccard - 175.0 / 3.0) < 1e-9;
  return {"metrics hand fixture", ok, fmt::format("accuracy {:.2f}, jaccard {:.2f}", m.accuracy, m.phases.mean_jaccard)};
}

}  // namespace

std::vector<CheckResult> run_selfcheck(const SelfcheckOptions& options) {
  std::vector<CheckResult> out;
  out.push_back(recurrence_vs_kernel(options.corrupt_kernel));
  out.push_back(scan_vs_lti());
  out.push_back(sampling_round_trip());
  out.push_back(pad_inertness());
  for (auto& r : gradient_checks()) out.push_back(std::move(r));
  out.push_back(causal_prefix());
  out.push_back(metrics_oracle());
  return out;
}

}  // namespace sprm
