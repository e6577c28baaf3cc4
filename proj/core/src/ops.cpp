#include "sprm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "autograd.hpp"
#include "sprm/error.hpp"

namespace sprm {

using detail::input_data;
using detail::input_grad;
using detail::make_result;
using detail::Node;

namespace {

void require_matrix(const NdArray& a, const char* op) {
  if (!a.defined() || a.ndim() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " +
                         (a.defined() ? shape_str(a.shape()) : std::string("undefined")));
  }
}

void require_same_shape(const NdArray& a, const NdArray& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// (outer, axis length, inner) decomposition for reductions along one axis.
struct AxisView {
  std::size_t outer, len, inner;
};

AxisView axis_view(const NdArray& a, std::size_t axis, const char* op) {
  const auto& s = a.shape();
  if (axis >= s.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for " +
                         shape_str(s));
  }
  AxisView v{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

// Offset of tap j relative to the output frame.
std::ptrdiff_t tap_offset(std::size_t j, std::size_t k, std::size_t dilation, Padding padding) {
  const auto jj = static_cast<std::ptrdiff_t>(j);
  const auto kk = static_cast<std::ptrdiff_t>(k);
  const auto d = static_cast<std::ptrdiff_t>(dilation);
  if (padding == Padding::same) return (jj - (kk - 1) / 2) * d;
  return (jj - (kk - 1)) * d;
}

// Row-major [rows x cols] -> [cols x rows].
std::vector<double> transposed(const double* src, std::size_t rows, std::size_t cols) {
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  }
  return out;
}

Segments resolve_segments(const Segments* segments, std::size_t rows, const char* op) {
  if (!segments) return Segments::whole(rows);
  if (segments->rows() != rows ||
      (!segments->valid.empty() && segments->valid.size() != rows)) {
    throw DimensionError(std::string(op) + ": segment layout covers " +
                         std::to_string(segments->rows()) + " rows, input has " +
                         std::to_string(rows));
  }
  return *segments;
}

}  // namespace

NdArray matmul(const NdArray& a, const NdArray& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return make_result("matmul", {m, n}, std::move(out), {&a, &b}, [m, k, n](Node& self) {
    const double* g = self.grad.data();
    const double* pa = input_data(self, 0);
    const double* pb = input_data(self, 1);
    if (double* ga = input_grad(self, 0)) {
      const std::vector<double> bt = transposed(pb, k, n);
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        double* garow = ga + i * k;
        for (std::size_t j = 0; j < n; ++j) {
          const double gv = grow[j];
          if (gv == 0.0) continue;
          const double* btrow = bt.data() + j * k;
          for (std::size_t p = 0; p < k; ++p) garow[p] += gv * btrow[p];
        }
      }
    }
    if (double* gb = input_grad(self, 1)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double av = pa[i * k + p];
          double* gbrow = gb + p * n;
          const double* grow = g + i * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
      }
    }
  });
}

NdArray linear(const NdArray& x, const NdArray& w, const NdArray& bias) {
  require_matrix(x, "linear");
  require_matrix(w, "linear");
  const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
  if (w.rows() != k) {
    throw DimensionError("linear: input width " + std::to_string(k) + " does not match weight " +
                         shape_str(w.shape()));
  }
  if (bias.defined() && bias.size() != n) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match width " +
                         std::to_string(n));
  }
  std::vector<double> out(m * n, 0.0);
  const double* px = x.data().data();
  const double* pw = w.data().data();
  const double* pbias = bias.defined() ? bias.data().data() : nullptr;
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    if (pbias) std::copy(pbias, pbias + n, row);
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = px[i * k + p];
      if (xv == 0.0) continue;
      const double* wrow = pw + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += xv * wrow[j];
    }
  }
  return make_result("linear", {m, n}, std::move(out), {&x, &w, &bias}, [m, k, n](Node& self) {
    const double* g = self.grad.data();
    const double* px = input_data(self, 0);
    const double* pw = input_data(self, 1);
    if (double* gx = input_grad(self, 0)) {
      const std::vector<double> wt = transposed(pw, k, n);
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        double* gxrow = gx + i * k;
        for (std::size_t j = 0; j < n; ++j) {
          const double gv = grow[j];
          if (gv == 0.0) continue;
          const double* wtrow = wt.data() + j * k;
          for (std::size_t p = 0; p < k; ++p) gxrow[p] += gv * wtrow[p];
        }
      }
    }
    if (double* gw = input_grad(self, 1)) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double xv = px[i * k + p];
          if (xv == 0.0) continue;
          double* gwrow = gw + p * n;
          for (std::size_t j = 0; j < n; ++j) gwrow[j] += xv * grow[j];
        }
      }
    }
    if (self.inputs[2]) {
      if (double* gbias = input_grad(self, 2)) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) gbias[j] += g[i * n + j];
        }
      }
    }
  });
}

NdArray add(const NdArray& a, const NdArray& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.data().begin(), a.data().end());
  auto pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += pb[i];
  return make_result("add", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    const auto& g = self.grad;
    for (std::size_t in = 0; in < 2; ++in) {
      if (double* gi = input_grad(self, in)) {
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
      }
    }
  });
}

NdArray sub(const NdArray& a, const NdArray& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.data().begin(), a.data().end());
  auto pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= pb[i];
  return make_result("sub", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    const auto& g = self.grad;
    if (double* ga = input_grad(self, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (double* gb = input_grad(self, 1)) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

NdArray mul(const NdArray& a, const NdArray& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.data().begin(), a.data().end());
  auto pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= pb[i];
  return make_result("mul", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    const auto& g = self.grad;
    const double* pa = input_data(self, 0);
    const double* pb = input_data(self, 1);
    if (double* ga = input_grad(self, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb[i];
    }
    if (double* gb = input_grad(self, 1)) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa[i];
    }
  });
}

NdArray scale(const NdArray& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return make_result("scale", a.shape(), std::move(out), {&a}, [factor](Node& self) {
    if (double* ga = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += factor * self.grad[i];
    }
  });
}

NdArray scale_by(const NdArray& a, const NdArray& s) {
  if (s.size() != 1) throw DimensionError("scale_by: factor must hold one value, got " + shape_str(s.shape()));
  const double factor = s.item();
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return make_result("scale_by", a.shape(), std::move(out), {&a, &s}, [](Node& self) {
    const auto& g = self.grad;
    const double* pa = input_data(self, 0);
    const double factor = input_data(self, 1)[0];
    if (double* ga = input_grad(self, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
    }
    if (double* gs = input_grad(self, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += pa[i] * g[i];
      gs[0] += acc;
    }
  });
}

NdArray sum(const NdArray& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result("sum", {1}, {total}, {&a}, [](Node& self) {
    if (double* ga = input_grad(self, 0)) {
      const double g = self.grad[0];
      const std::size_t n = self.inputs[0]->data.size();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g;
    }
  });
}

NdArray mean(const NdArray& a) {
  if (a.size() == 0) throw DimensionError("mean of an empty array");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

NdArray concat_cols(std::span<const NdArray> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t idx = 0; idx < parts.size(); ++idx) {
    const double* src = parts[idx].data().data();
    const std::size_t w = widths[idx];
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(src + r * w, src + (r + 1) * w, out.data() + r * total + offset);
    }
    offset += w;
  }
  auto node = std::make_shared<Node>();
  node->shape = {rows, total};
  node->data = std::move(out);
  node->op = "concat_cols";
  bool track = false;
  if (grad_enabled()) {
    for (const auto& p : parts) track = track || p.requires_grad();
  }
  if (track) {
    node->requires_grad = true;
    for (const auto& p : parts) node->inputs.push_back(p.node());
    node->backward = [rows, total, widths](Node& self) {
      std::size_t offset = 0;
      for (std::size_t idx = 0; idx < widths.size(); ++idx) {
        const std::size_t w = widths[idx];
        if (double* gi = input_grad(self, idx)) {
          for (std::size_t r = 0; r < rows; ++r) {
            const double* g = self.grad.data() + r * total + offset;
            for (std::size_t c = 0; c < w; ++c) gi[r * w + c] += g[c];
          }
        }
        offset += w;
      }
    };
  }
  return NdArray::wrap(std::move(node));
}

NdArray slice_cols(const NdArray& a, std::size_t begin, std::size_t end) {
  require_matrix(a, "slice_cols");
  const std::size_t rows = a.rows(), cols = a.cols();
  if (begin > end || end > cols) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") outside " + shape_str(a.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<double> out(rows * w);
  const double* src = a.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(src + r * cols + begin, src + r * cols + end, out.data() + r * w);
  }
  return make_result("slice_cols", {rows, w}, std::move(out), {&a}, [rows, cols, begin, w](Node& self) {
    if (double* ga = input_grad(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < w; ++c) ga[r * cols + begin + c] += self.grad[r * w + c];
      }
    }
  });
}

NdArray gather_rows(const NdArray& a, std::span<const std::ptrdiff_t> index) {
  require_matrix(a, "gather_rows");
  const std::size_t rows = a.rows(), cols = a.cols();
  std::vector<double> out(index.size() * cols, 0.0);
  const double* src = a.data().data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto r = index[i];
    if (r < 0) continue;
    if (static_cast<std::size_t>(r) >= rows) {
      throw DimensionError("gather_rows: index " + std::to_string(r) + " outside " +
                           shape_str(a.shape()));
    }
    std::copy(src + r * cols, src + (r + 1) * cols, out.data() + i * cols);
  }
  std::vector<std::ptrdiff_t> saved(index.begin(), index.end());
  return make_result("gather_rows", {index.size(), cols}, std::move(out), {&a},
                     [cols, saved = std::move(saved)](Node& self) {
                       if (double* ga = input_grad(self, 0)) {
                         for (std::size_t i = 0; i < saved.size(); ++i) {
                           if (saved[i] < 0) continue;
                           const double* g = self.grad.data() + i * cols;
                           double* dst = ga + saved[i] * cols;
                           for (std::size_t c = 0; c < cols; ++c) dst[c] += g[c];
                         }
                       }
                     });
}

NdArray mask_rows(const NdArray& a, std::span<const std::uint8_t> valid) {
  require_matrix(a, "mask_rows");
  if (valid.empty()) return a;
  const std::size_t rows = a.rows(), cols = a.cols();
  if (valid.size() != rows) {
    throw DimensionError("mask_rows: mask of " + std::to_string(valid.size()) + " rows for " +
                         shape_str(a.shape()));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  for (std::size_t r = 0; r < rows; ++r) {
    if (!valid[r]) std::fill(out.begin() + r * cols, out.begin() + (r + 1) * cols, 0.0);
  }
  std::vector<std::uint8_t> saved(valid.begin(), valid.end());
  return make_result("mask_rows", a.shape(), std::move(out), {&a},
                     [cols, saved = std::move(saved)](Node& self) {
                       if (double* ga = input_grad(self, 0)) {
                         for (std::size_t r = 0; r < saved.size(); ++r) {
                           if (!saved[r]) continue;
                           for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += self.grad[r * cols + c];
                         }
                       }
                     });
}

NdArray softmax(const NdArray& a, std::size_t axis) {
  const AxisView v = axis_view(a, axis, "softmax");
  std::vector<double> out(a.size());
  const double* src = a.data().data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.len * v.inner + in;
      double mx = -INFINITY;
      for (std::size_t i = 0; i < v.len; ++i) mx = std::max(mx, src[base + i * v.inner]);
      double total = 0.0;
      for (std::size_t i = 0; i < v.len; ++i) {
        const double e = std::exp(src[base + i * v.inner] - mx);
        out[base + i * v.inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < v.len; ++i) out[base + i * v.inner] /= total;
    }
  }
  return make_result("softmax", a.shape(), std::move(out), {&a}, [v](Node& self) {
    double* ga = input_grad(self, 0);
    if (!ga) return;
    const double* y = self.data.data();
    const double* g = self.grad.data();
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t in = 0; in < v.inner; ++in) {
        const std::size_t base = o * v.len * v.inner + in;
        double dot = 0.0;
        for (std::size_t i = 0; i < v.len; ++i) dot += g[base + i * v.inner] * y[base + i * v.inner];
        for (std::size_t i = 0; i < v.len; ++i) {
          const std::size_t idx = base + i * v.inner;
          ga[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

NdArray log_softmax(const NdArray& a, std::size_t axis) {
  const AxisView v = axis_view(a, axis, "log_softmax");
  std::vector<double> out(a.size());
  const double* src = a.data().data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.len * v.inner + in;
      double mx = -INFINITY;
      for (std::size_t i = 0; i < v.len; ++i) mx = std::max(mx, src[base + i * v.inner]);
      double total = 0.0;
      for (std::size_t i = 0; i < v.len; ++i) total += std::exp(src[base + i * v.inner] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t i = 0; i < v.len; ++i) out[base + i * v.inner] = src[base + i * v.inner] - lse;
    }
  }
  return make_result("log_softmax", a.shape(), std::move(out), {&a}, [v](Node& self) {
    double* ga = input_grad(self, 0);
    if (!ga) return;
    const double* y = self.data.data();
    const double* g = self.grad.data();
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t in = 0; in < v.inner; ++in) {
        const std::size_t base = o * v.len * v.inner + in;
        double gsum = 0.0;
        for (std::size_t i = 0; i < v.len; ++i) gsum += g[base + i * v.inner];
        for (std::size_t i = 0; i < v.len; ++i) {
          const std::size_t idx = base + i * v.inner;
          ga[idx] += g[idx] - std::exp(y[idx]) * gsum;
        }
      }
    }
  });
}

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_value(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;
}  // namespace

double gelu_value(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

Activation parse_activation(std::string_view name) {
  if (name == "silu") return Activation::silu;
  if (name == "gelu") return Activation::gelu;
  throw ConfigError("unknown activation '" + std::string(name) + "' (expected silu or gelu)");
}

NdArray activation(const NdArray& x, Activation kind) {
  switch (kind) {
    case Activation::silu:
      return silu(x);
    case Activation::gelu:
      return gelu(x);
  }
  throw ConfigError("unknown activation kind");
}

NdArray silu(const NdArray& x) {
  std::vector<double> out(x.size());
  auto px = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = px[i] * sigmoid_value(px[i]);
  return make_result("silu", x.shape(), std::move(out), {&x}, [](Node& self) {
    double* gx = input_grad(self, 0);
    if (!gx) return;
    const double* px = input_data(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double s = sigmoid_value(px[i]);
      gx[i] += self.grad[i] * s * (1.0 + px[i] * (1.0 - s));
    }
  });
}

NdArray gelu(const NdArray& x) {
  std::vector<double> out(x.size());
  auto px = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(px[i]);
  return make_result("gelu", x.shape(), std::move(out), {&x}, [](Node& self) {
    double* gx = input_grad(self, 0);
    if (!gx) return;
    const double* px = input_data(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double v = px[i];
      const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      gx[i] += self.grad[i] * d;
    }
  });
}

NdArray softplus(const NdArray& x) {
  std::vector<double> out(x.size());
  auto px = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = softplus_value(px[i]);
  return make_result("softplus", x.shape(), std::move(out), {&x}, [](Node& self) {
    double* gx = input_grad(self, 0);
    if (!gx) return;
    const double* px = input_data(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * sigmoid_value(px[i]);
  });
}

NdArray conv1d(const NdArray& x, const NdArray& kernel, const NdArray& bias, std::size_t dilation,
               Padding padding, const Segments* segments) {
  require_matrix(x, "conv1d");
  if (kernel.ndim() != 3) throw DimensionError("conv1d: kernel must be [k x Cin x Cout], got " + shape_str(kernel.shape()));
  const std::size_t k = kernel.dim(0), cin = kernel.dim(1), cout = kernel.dim(2);
  if (k % 2 == 0) throw ConfigError("conv1d: kernel size must be odd, got " + std::to_string(k));
  if (dilation < 1) throw ConfigError("conv1d: dilation must be >= 1");
  if (x.cols() != cin) {
    throw DimensionError("conv1d: input " + shape_str(x.shape()) + " does not match kernel " +
                         shape_str(kernel.shape()));
  }
  if (bias.defined() && bias.size() != cout) throw DimensionError("conv1d: bias size mismatch");
  const Segments seg = resolve_segments(segments, x.rows(), "conv1d");
  const std::size_t rows = x.rows();
  std::vector<double> out(rows * cout, 0.0);
  const double* px = x.data().data();
  const double* pk = kernel.data().data();
  if (bias.defined()) {
    for (std::size_t r = 0; r < rows; ++r) std::copy(bias.data().begin(), bias.data().end(), out.begin() + r * cout);
  }
  const auto len = static_cast<std::ptrdiff_t>(seg.length);
  for (std::size_t s = 0; s < seg.count; ++s) {
    const std::size_t base = s * seg.length;
    for (std::size_t j = 0; j < k; ++j) {
      const auto off = tap_offset(j, k, dilation, padding);
      const double* tap = pk + j * cin * cout;
      for (std::ptrdiff_t t = 0; t < len; ++t) {
        const auto src = t + off;
        if (src < 0 || src >= len || !seg.is_valid(base + src)) continue;
        const double* xrow = px + (base + src) * cin;
        double* orow = out.data() + (base + t) * cout;
        for (std::size_t c = 0; c < cin; ++c) {
          const double xv = xrow[c];
          if (xv == 0.0) continue;
          const double* w = tap + c * cout;
          for (std::size_t o = 0; o < cout; ++o) orow[o] += xv * w[o];
        }
      }
    }
  }
  return make_result(
      "conv1d", {rows, cout}, std::move(out), {&x, &kernel, &bias},
      [k, cin, cout, dilation, padding, seg](Node& self) {
        const double* g = self.grad.data();
        const double* px = input_data(self, 0);
        const double* pk = input_data(self, 1);
        double* gx = input_grad(self, 0);
        double* gk = input_grad(self, 1);
        // Per-tap transposed kernels [k x Cout x Cin] for the input gradient.
        std::vector<double> kt;
        if (gx) {
          kt.resize(k * cin * cout);
          for (std::size_t j = 0; j < k; ++j) {
            const auto tt = transposed(pk + j * cin * cout, cin, cout);
            std::copy(tt.begin(), tt.end(), kt.begin() + j * cin * cout);
          }
        }
        const auto len = static_cast<std::ptrdiff_t>(seg.length);
        for (std::size_t s = 0; s < seg.count; ++s) {
          const std::size_t base = s * seg.length;
          for (std::size_t j = 0; j < k; ++j) {
            const auto off = tap_offset(j, k, dilation, padding);
            for (std::ptrdiff_t t = 0; t < len; ++t) {
              const auto src = t + off;
              if (src < 0 || src >= len || !seg.is_valid(base + src)) continue;
              const double* grow = g + (base + t) * cout;
              if (gx) {
                const double* tapt = kt.data() + j * cin * cout;
                double* gxrow = gx + (base + src) * cin;
                for (std::size_t o = 0; o < cout; ++o) {
                  const double gv = grow[o];
                  if (gv == 0.0) continue;
                  const double* w = tapt + o * cin;
                  for (std::size_t c = 0; c < cin; ++c) gxrow[c] += gv * w[c];
                }
              }
              for (std::size_t c = 0; c < cin; ++c) {
                if (gk) {
                  const double xv = px[(base + src) * cin + c];
                  double* gw = gk + j * cin * cout + c * cout;
                  for (std::size_t o = 0; o < cout; ++o) gw[o] += xv * grow[o];
                }
              }
            }
          }
        }
        if (self.inputs[2]) {
          if (double* gb = input_grad(self, 2)) {
            const std::size_t rows = self.shape[0];
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t o = 0; o < cout; ++o) gb[o] += g[r * cout + o];
            }
          }
        }
      });
}

NdArray depthwise_conv1d(const NdArray& x, const NdArray& kernel, const NdArray& bias,
                         std::size_t dilation, Padding padding, const Segments* segments) {
  require_matrix(x, "depthwise_conv1d");
  require_matrix(kernel, "depthwise_conv1d");
  const std::size_t k = kernel.rows(), ch = kernel.cols();
  if (k % 2 == 0) throw ConfigError("depthwise_conv1d: kernel size must be odd, got " + std::to_string(k));
  if (dilation < 1) throw ConfigError("depthwise_conv1d: dilation must be >= 1");
  if (x.cols() != ch) {
    throw DimensionError("depthwise_conv1d: input " + shape_str(x.shape()) + " does not match kernel " +
                         shape_str(kernel.shape()));
  }
  const Segments seg = resolve_segments(segments, x.rows(), "depthwise_conv1d");
  const std::size_t rows = x.rows();
  std::vector<double> out(rows * ch, 0.0);
  const double* px = x.data().data();
  const double* pk = kernel.data().data();
  if (bias.defined()) {
    for (std::size_t r = 0; r < rows; ++r) std::copy(bias.data().begin(), bias.data().end(), out.begin() + r * ch);
  }
  const auto len = static_cast<std::ptrdiff_t>(seg.length);
  for (std::size_t s = 0; s < seg.count; ++s) {
    const std::size_t base = s * seg.length;
    for (std::size_t j = 0; j < k; ++j) {
      const auto off = tap_offset(j, k, dilation, padding);
      const double* w = pk + j * ch;
      for (std::ptrdiff_t t = 0; t < len; ++t) {
        const auto src = t + off;
        if (src < 0 || src >= len || !seg.is_valid(base + src)) continue;
        const double* xrow = px + (base + src) * ch;
        double* orow = out.data() + (base + t) * ch;
        for (std::size_t c = 0; c < ch; ++c) orow[c] += xrow[c] * w[c];
      }
    }
  }
  return make_result(
      "depthwise_conv1d", {rows, ch}, std::move(out), {&x, &kernel, &bias},
      [k, ch, dilation, padding, seg](Node& self) {
        const double* g = self.grad.data();
        const double* px = input_data(self, 0);
        const double* pk = input_data(self, 1);
        double* gx = input_grad(self, 0);
        double* gk = input_grad(self, 1);
        const auto len = static_cast<std::ptrdiff_t>(seg.length);
        for (std::size_t s = 0; s < seg.count; ++s) {
          const std::size_t base = s * seg.length;
          for (std::size_t j = 0; j < k; ++j) {
            const auto off = tap_offset(j, k, dilation, padding);
            const double* w = pk + j * ch;
            for (std::ptrdiff_t t = 0; t < len; ++t) {
              const auto src = t + off;
              if (src < 0 || src >= len || !seg.is_valid(base + src)) continue;
              const double* grow = g + (base + t) * ch;
              const double* xrow = px + (base + src) * ch;
              if (gx) {
                double* gxrow = gx + (base + src) * ch;
                for (std::size_t c = 0; c < ch; ++c) gxrow[c] += grow[c] * w[c];
              }
              if (gk) {
                double* gw = gk + j * ch;
                for (std::size_t c = 0; c < ch; ++c) gw[c] += grow[c] * xrow[c];
              }
            }
          }
        }
        if (self.inputs[2]) {
          if (double* gb = input_grad(self, 2)) {
            const std::size_t rows = self.shape[0];
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t c = 0; c < ch; ++c) gb[c] += g[r * ch + c];
            }
          }
        }
      });
}

NdArray instance_norm(const NdArray& x, const NdArray& gamma, const NdArray& beta, double eps,
                      const Segments* segments, bool causal, std::span<const std::ptrdiff_t> order) {
  require_matrix(x, "instance_norm");
  const std::size_t rows = x.rows(), ch = x.cols();
  if (gamma.size() != ch || beta.size() != ch) {
    throw DimensionError("instance_norm: affine parameters must have " + std::to_string(ch) + " entries");
  }
  const Segments seg = resolve_segments(segments, rows, "instance_norm");
  // Each group is a list of rows sharing statistics, in time order.
  std::vector<std::vector<std::size_t>> groups;
  if (!order.empty()) {
    auto& g = groups.emplace_back();
    for (const std::ptrdiff_t r : order) {
      if (r < 0 || static_cast<std::size_t>(r) >= rows || !seg.is_valid(static_cast<std::size_t>(r))) {
        throw DimensionError("instance_norm: row order names row " + std::to_string(r) +
                             ", which is not a valid row of the input");
      }
      g.push_back(static_cast<std::size_t>(r));
    }
  } else {
    for (std::size_t s = 0; s < seg.count; ++s) {
      auto& g = groups.emplace_back();
      for (std::size_t t = 0; t < seg.length; ++t) {
        if (seg.is_valid(s * seg.length + t)) g.push_back(s * seg.length + t);
      }
    }
  }
  const double* px = x.data().data();
  const double* pg = gamma.data().data();
  const double* pb = beta.data().data();
  std::vector<double> out(rows * ch, 0.0);
  // Per row: normalized value and inverse std, needed by the backward pass.
  std::vector<double> xhat(rows * ch, 0.0);
  std::vector<double> inv_std(rows * ch, 0.0);
  for (const auto& group : groups) {
    if (group.empty()) continue;
    for (std::size_t c = 0; c < ch; ++c) {
      if (!causal) {
        const double n = static_cast<double>(group.size());
        double m = 0.0;
        for (const std::size_t r : group) m += px[r * ch + c];
        m /= n;
        double var = 0.0;
        for (const std::size_t r : group) var += (px[r * ch + c] - m) * (px[r * ch + c] - m);
        var /= n;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (const std::size_t r : group) {
          const std::size_t idx = r * ch + c;
          xhat[idx] = (px[idx] - m) * inv;
          inv_std[idx] = inv;
          out[idx] = pg[c] * xhat[idx] + pb[c];
        }
      } else {
        double n = 0.0, s1 = 0.0, s2 = 0.0;
        for (const std::size_t r : group) {
          const std::size_t idx = r * ch + c;
          const double v = px[idx];
          n += 1.0;
          s1 += v;
          s2 += v * v;
          const double m = s1 / n;
          const double var = std::max(s2 / n - m * m, 0.0);
          const double inv = 1.0 / std::sqrt(var + eps);
          xhat[idx] = (v - m) * inv;
          inv_std[idx] = inv;
          out[idx] = pg[c] * xhat[idx] + pb[c];
        }
      }
    }
  }
  return make_result(
      "instance_norm", {rows, ch}, std::move(out), {&x, &gamma, &beta},
      [ch, causal, groups = std::move(groups), xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const double* g = self.grad.data();
        const double* px = input_data(self, 0);
        const double* pg = input_data(self, 1);
        double* gx = input_grad(self, 0);
        double* ggamma = input_grad(self, 1);
        double* gbeta = input_grad(self, 2);
        for (const auto& group : groups) {
          if (group.empty()) continue;
          for (std::size_t c = 0; c < ch; ++c) {
            for (const std::size_t r : group) {
              const std::size_t idx = r * ch + c;
              if (ggamma) ggamma[c] += g[idx] * xhat[idx];
              if (gbeta) gbeta[c] += g[idx];
            }
            if (!gx) continue;
            if (!causal) {
              const double n = static_cast<double>(group.size());
              double sum_g = 0.0, sum_gx = 0.0;
              for (const std::size_t r : group) {
                const double gi = g[r * ch + c] * pg[c];
                sum_g += gi;
                sum_gx += gi * xhat[r * ch + c];
              }
              for (const std::size_t r : group) {
                const std::size_t idx = r * ch + c;
                const double gi = g[idx] * pg[c];
                gx[idx] += inv_std[idx] / n * (n * gi - sum_g - xhat[idx] * sum_gx);
              }
            } else {
              // Row t depends on x_s for s <= t through the running sums
              // S1 = sum x and S2 = sum x^2. Accumulate dL/dS1_t and dL/dS2_t
              // and push them to earlier rows with suffix sums.
              double suffix1 = 0.0, suffix2 = 0.0;
              double n = static_cast<double>(group.size());
              for (auto it = group.rbegin(); it != group.rend(); ++it) {
                const std::size_t idx = *it * ch + c;
                const double r = inv_std[idx];
                const double centred = xhat[idx] / r;
                const double m = px[idx] - centred;
                const double gi = g[idx] * pg[c];
                const double dm = -gi * r;
                const double dr = gi * centred;
                const double dv = -0.5 * r * r * r * dr;
                suffix1 += (dm - 2.0 * m * dv) / n;
                suffix2 += dv / n;
                gx[idx] += gi * r + suffix1 + 2.0 * px[idx] * suffix2;
                n -= 1.0;
              }
            }
          }
        }
      });
}

NdArray layer_norm(const NdArray& x, const NdArray& gamma, const NdArray& beta, double eps) {
  require_matrix(x, "layer_norm");
  const std::size_t rows = x.rows(), ch = x.cols();
  if (gamma.size() != ch || beta.size() != ch) {
    throw DimensionError("layer_norm: affine parameters must have " + std::to_string(ch) + " entries");
  }
  const double* px = x.data().data();
  const double* pg = gamma.data().data();
  const double* pb = beta.data().data();
  std::vector<double> out(rows * ch), xhat(rows * ch), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = px + r * ch;
    double m = 0.0;
    for (std::size_t c = 0; c < ch; ++c) m += row[c];
    m /= static_cast<double>(ch);
    double var = 0.0;
    for (std::size_t c = 0; c < ch; ++c) var += (row[c] - m) * (row[c] - m);
    var /= static_cast<double>(ch);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t idx = r * ch + c;
      xhat[idx] = (row[c] - m) * is;
      out[idx] = pg[c] * xhat[idx] + pb[c];
    }
  }
  return make_result("layer_norm", {rows, ch}, std::move(out), {&x, &gamma, &beta},
                     [rows, ch, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       const double* g = self.grad.data();
                       const double* pg = input_data(self, 1);
                       double* gx = input_grad(self, 0);
                       double* ggamma = input_grad(self, 1);
                       double* gbeta = input_grad(self, 2);
                       const double n = static_cast<double>(ch);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double sum_g = 0.0, sum_gx = 0.0;
                         for (std::size_t c = 0; c < ch; ++c) {
                           const std::size_t idx = r * ch + c;
                           if (ggamma) ggamma[c] += g[idx] * xhat[idx];
                           if (gbeta) gbeta[c] += g[idx];
                           const double gi = g[idx] * pg[c];
                           sum_g += gi;
                           sum_gx += gi * xhat[idx];
                         }
                         if (!gx) continue;
                         for (std::size_t c = 0; c < ch; ++c) {
                           const std::size_t idx = r * ch + c;
                           const double gi = g[idx] * pg[c];
                           gx[idx] += inv_std[r] / n * (n * gi - sum_g - xhat[idx] * sum_gx);
                         }
                       }
                     });
}

NdArray dropout(const NdArray& x, double rate, bool training, std::mt19937_64& rng) {
  if (!training || rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("dropout rate must be < 1");
  const double keep = 1.0 - rate;
  std::bernoulli_distribution draw(keep);
  std::vector<double> mask(x.size());
  for (auto& m : mask) m = draw(rng) ? 1.0 / keep : 0.0;
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return make_result("dropout", x.shape(), std::move(out), {&x}, [mask = std::move(mask)](Node& self) {
    if (double* gx = input_grad(self, 0)) {
      for (std::size_t i = 0; i < mask.size(); ++i) gx[i] += self.grad[i] * mask[i];
    }
  });
}

}  // namespace sprm
