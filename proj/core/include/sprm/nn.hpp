#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "sprm/tensor.hpp"

namespace sprm {

using Rng = std::mt19937_64;

/// Named learnable array; names are dotted paths such as "stage0.block3.window.mlp_in.weight".
struct NamedParam {
  std::string name;
  NdArray value;
};
using ParamList = std::vector<NamedParam>;

/// Training flag plus the generator used by dropout during a forward pass.
struct RunMode {
  bool training = false;
  Rng* rng = nullptr;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights of the given shape, requires_grad on.
NdArray init_uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng);
NdArray init_zeros(Shape shape);
NdArray init_constant(Shape shape, double value);

std::size_t count_parameters(const ParamList& params);

/// Fully connected layer y = x W + b with W [in x out].
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);

  NdArray forward(const NdArray& x) const;
  void collect(ParamList& out, const std::string& prefix) const;

  std::size_t in_features() const { return weight_.defined() ? weight_.rows() : 0; }
  std::size_t out_features() const { return weight_.defined() ? weight_.cols() : 0; }
  NdArray& weight() { return weight_; }
  NdArray& bias() { return bias_; }

 private:
  NdArray weight_;
  NdArray bias_;
};

}  // namespace sprm
