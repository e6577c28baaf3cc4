#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "sprm/segments.hpp"
#include "sprm/tensor.hpp"

// Differentiable array operations. Every op records its backward closure when
// grad mode is on and at least one input requires grad.
namespace sprm {

/// [m x k] * [k x n] -> [m x n].
NdArray matmul(const NdArray& a, const NdArray& b);

/// x [rows x in] * w [in x out] + bias [out]. `bias` may be undefined.
NdArray linear(const NdArray& x, const NdArray& w, const NdArray& bias);

NdArray add(const NdArray& a, const NdArray& b);
NdArray sub(const NdArray& a, const NdArray& b);
/// Element-wise (Hadamard) product.
NdArray mul(const NdArray& a, const NdArray& b);
NdArray scale(const NdArray& a, double factor);
/// a * s where s holds a single (possibly learnable) value.
NdArray scale_by(const NdArray& a, const NdArray& s);

inline NdArray operator+(const NdArray& a, const NdArray& b) { return add(a, b); }
inline NdArray operator-(const NdArray& a, const NdArray& b) { return sub(a, b); }
inline NdArray operator*(const NdArray& a, const NdArray& b) { return mul(a, b); }

NdArray sum(const NdArray& a);
NdArray mean(const NdArray& a);

NdArray concat_cols(std::span<const NdArray> parts);
NdArray slice_cols(const NdArray& a, std::size_t begin, std::size_t end);

/// out.row(i) = a.row(index[i]); a negative index produces a zero row.
NdArray gather_rows(const NdArray& a, std::span<const std::ptrdiff_t> index);
/// Zeroes the rows whose flag is 0.
NdArray mask_rows(const NdArray& a, std::span<const std::uint8_t> valid);

/// Max-subtracted softmax along `axis` (0 or 1 for matrices, 0 for vectors).
NdArray softmax(const NdArray& a, std::size_t axis);
NdArray log_softmax(const NdArray& a, std::size_t axis);

enum class Activation { silu, gelu };

/// Parses "silu" / "gelu"; anything else is a ConfigError.
Activation parse_activation(std::string_view name);
NdArray activation(const NdArray& x, Activation kind);
NdArray silu(const NdArray& x);
/// Tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
NdArray gelu(const NdArray& x);
NdArray softplus(const NdArray& x);

double gelu_value(double x);
double softplus_value(double x);
double sigmoid_value(double x);

enum class Padding { same, causal };

/// Dilated temporal convolution. x [L x Cin], kernel [k x Cin x Cout],
/// bias [Cout] (may be undefined). Output length equals input length. Same
/// padding centres the kernel; causal padding puts all taps at or before t.
/// With `segments`, each segment is convolved independently and invalid rows
/// read as zeros.
NdArray conv1d(const NdArray& x, const NdArray& kernel, const NdArray& bias, std::size_t dilation,
               Padding padding, const Segments* segments = nullptr);

/// Per-channel convolution: kernel [k x C], bias [C].
NdArray depthwise_conv1d(const NdArray& x, const NdArray& kernel, const NdArray& bias,
                         std::size_t dilation, Padding padding, const Segments* segments = nullptr);

/// Normalizes every channel over the time axis of each segment, using valid
/// rows only. In causal mode the statistics at row t use rows <= t. Invalid
/// rows come out as zero. A non-empty `order` lists valid rows in time order;
/// they then share one set of statistics, and causal statistics follow it.
NdArray instance_norm(const NdArray& x, const NdArray& gamma, const NdArray& beta, double eps,
                      const Segments* segments = nullptr, bool causal = false,
                      std::span<const std::ptrdiff_t> order = {});

/// Normalizes every row over its channels.
NdArray layer_norm(const NdArray& x, const NdArray& gamma, const NdArray& beta, double eps);

/// Inverted dropout. Identity when `training` is false or rate is 0.
NdArray dropout(const NdArray& x, double rate, bool training, std::mt19937_64& rng);

}  // namespace sprm
