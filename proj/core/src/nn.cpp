#include "sprm/nn.hpp"

#include <cmath>

#include "sprm/ops.hpp"

namespace sprm {

NdArray init_uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
  NdArray out(std::move(shape), true);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in == 0 ? 1 : fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : out.mutable_data()) v = dist(rng);
  return out;
}

NdArray init_zeros(Shape shape) { return NdArray(std::move(shape), true); }

NdArray init_constant(Shape shape, double value) {
  NdArray out(std::move(shape), true);
  for (auto& v : out.mutable_data()) v = value;
  return out;
}

std::size_t count_parameters(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.size();
  return n;
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias)
    : weight_(init_uniform_fan_in({in, out}, in, rng)) {
  if (with_bias) bias_ = init_zeros({out});
}

NdArray Linear::forward(const NdArray& x) const { return linear(x, weight_, bias_); }

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight_});
  if (bias_.defined()) out.push_back({prefix + ".bias", bias_});
}

}  // namespace sprm
