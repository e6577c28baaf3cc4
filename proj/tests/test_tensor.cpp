#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "sprm/error.hpp"
#include "sprm/ops.hpp"
#include "support.hpp"

namespace sprm {
namespace {

using test::grad_error;
using test::kSeeds;
using test::param;
using test::random_array;

TEST(NdArray, ShapeMustMatchData) {
  EXPECT_THROW(NdArray({2, 3}, std::vector<double>(5)), DimensionError);
  const NdArray a({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(a.size(), 6u);
  EXPECT_DOUBLE_EQ(a.at(1, 2), 6.0);
}

TEST(NdArray, CopiesShareStorageClonesDoNot) {
  NdArray a({2}, std::vector<double>{1, 2});
  NdArray b = a;
  NdArray c = a.clone();
  a.mutable_data()[0] = 7;
  EXPECT_EQ(b.at(0), 7);
  EXPECT_EQ(c.at(0), 1);
}

TEST(NdArray, CheckFiniteRejectsNan) {
  const NdArray a({2}, std::vector<double>{1.0, std::nan("")});
  EXPECT_THROW(check_finite(a, "x"), InputError);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  std::mt19937_64 rng(1);
  const NdArray m = random_array({2, 2}, rng);
  const NdArray eye({2, 2}, std::vector<double>{1, 0, 0, 1});
  const NdArray out = matmul(eye, m);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(out.at(i), m.at(i));
}

TEST(Matmul, HandProduct) {
  const NdArray a({2, 2}, std::vector<double>{1, 2, 3, 4});
  const NdArray b({2, 2}, std::vector<double>{5, 6, 7, 8});
  const NdArray c = matmul(a, b);
  // 1*5+2*7, 1*6+2*8, 3*5+4*7, 3*6+4*8
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), (std::vector<double>{19, 22, 43, 50}));
}

TEST(Matmul, MismatchNamesBothShapes) {
  const NdArray a({2, 3}), b({4, 2});
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x2]"), std::string::npos) << msg;
  }
}

NdArray identity_kernel(std::size_t channels) {
  NdArray k({3, channels, channels});
  auto d = k.mutable_data();
  for (std::size_t c = 0; c < channels; ++c) d[(1 * channels + c) * channels + c] = 1.0;
  return k;
}

TEST(Conv1d, CenterTapIsIdentityForEveryDilation) {
  std::mt19937_64 rng(2);
  const NdArray x = random_array({17, 3}, rng);
  for (std::size_t dil = 1; dil <= 16; ++dil) {
    const NdArray y = conv1d(x, identity_kernel(3), NdArray(), dil, Padding::same);
    EXPECT_EQ(test::max_abs_diff(x.data(), y.data()), 0.0) << "dilation " << dil;
  }
}

TEST(Conv1d, ImpulseSpreadsToDilatedOffsets) {
  NdArray x({11, 1});
  x.mutable_data()[5] = 1.0;
  const NdArray k({3, 1, 1}, std::vector<double>{1, 2, 3});
  const NdArray y = conv1d(x, k, NdArray(), 2, Padding::same);
  // y[t] = k0 x[t-2] + k1 x[t] + k2 x[t+2]
  for (std::size_t t = 0; t < 11; ++t) {
    const double expect = t == 3 ? 3.0 : t == 5 ? 2.0 : t == 7 ? 1.0 : 0.0;
    EXPECT_EQ(y.at(t), expect) << "t=" << t;
  }
}

TEST(Conv1d, CausalOutputIgnoresFuture) {
  std::mt19937_64 rng(3);
  const NdArray x = random_array({12, 2}, rng);
  const NdArray k = random_array({3, 2, 2}, rng);
  const NdArray base = conv1d(x, k, NdArray(), 2, Padding::causal);
  for (std::size_t t = 0; t + 1 < 12; ++t) {
    NdArray p = x.clone();
    p.mutable_data()[(t + 1) * 2] += 5.0;
    const NdArray y = conv1d(p, k, NdArray(), 2, Padding::causal);
    for (std::size_t i = 0; i < (t + 1) * 2; ++i) EXPECT_EQ(y.at(i), base.at(i));
  }
}

TEST(Conv1d, EvenKernelIsConfigError) {
  EXPECT_THROW(conv1d(NdArray({4, 1}), NdArray({2, 1, 1}), NdArray(), 1, Padding::same), ConfigError);
}

TEST(Softmax, ClosedForms) {
  const NdArray a = softmax(NdArray({2}, std::vector<double>{0, 0}), 0);
  EXPECT_DOUBLE_EQ(a.at(0), 0.5);
  const NdArray b = softmax(NdArray({2}, std::vector<double>{0, std::log(3.0)}), 0);
  EXPECT_NEAR(b.at(0), 0.25, 1e-15);
  EXPECT_NEAR(b.at(1), 0.75, 1e-15);
  const NdArray c = softmax(NdArray({2}, std::vector<double>{1000, 0}), 0);
  EXPECT_TRUE(std::isfinite(c.at(0)));
  EXPECT_NEAR(c.at(0), 1.0, 1e-15);
  EXPECT_GE(c.at(1), 0.0);
  EXPECT_LT(c.at(1), 1e-300);
}

TEST(Softmax, RowsSumToOne) {
  std::mt19937_64 rng(4);
  for (int seed = 0; seed < kSeeds; ++seed) {
    const NdArray x = random_array({7, 5}, rng, -10, 10);
    const NdArray p = softmax(x, 1);
    for (std::size_t r = 0; r < 7; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 5; ++c) {
        EXPECT_GT(p.at(r, c), 0.0);
        EXPECT_LT(p.at(r, c), 1.0);
        s += p.at(r, c);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(InstanceNorm, ConstantChannelGivesZeros) {
  const NdArray x = NdArray::filled({6, 2}, 3.5);
  const NdArray y = instance_norm(x, NdArray::filled({2}, 1.0), NdArray({2}), 1e-5);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(InstanceNorm, TwoPointClosedForm) {
  const double eps = 1e-5;
  const NdArray x({2, 1}, std::vector<double>{-1, 1});
  const NdArray y = instance_norm(x, NdArray::filled({1}, 1.0), NdArray({1}), eps);
  // mean 0, population variance 1
  EXPECT_NEAR(y.at(0), -1.0 / std::sqrt(1.0 + eps), 1e-15);
  EXPECT_NEAR(y.at(1), 1.0 / std::sqrt(1.0 + eps), 1e-15);
}

TEST(InstanceNorm, StandardizesRandomInput) {
  std::mt19937_64 rng(5);
  const NdArray x = random_array({200, 3}, rng, -4, 9);
  const NdArray y = instance_norm(x, NdArray::filled({3}, 1.0), NdArray({3}), 1e-9);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0.0, v = 0.0;
    for (std::size_t t = 0; t < 200; ++t) m += y.at(t, c);
    m /= 200;
    for (std::size_t t = 0; t < 200; ++t) v += (y.at(t, c) - m) * (y.at(t, c) - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(std::sqrt(v / 200), 1.0, 1e-6);
  }
}

TEST(InstanceNorm, SingleFrameIsZeroCentred) {
  const NdArray y = instance_norm(NdArray({1, 2}, std::vector<double>{4, -2}), NdArray::filled({2}, 1.0),
                                  NdArray({2}), 1e-5);
  EXPECT_EQ(y.at(0), 0.0);
  EXPECT_EQ(y.at(1), 0.0);
}

// Rows stored subsequence-major (as long-range sampling does) and normalized
// with their frame order must match normalizing the frames directly.
TEST(InstanceNorm, RowOrderPoolsStatistics) {
  Rng rng(3);
  const NdArray frames = random_array({7, 3}, rng);
  const std::vector<std::ptrdiff_t> source{0, 2, 4, 6, 1, 3, 5, -1};  // row -> frame
  const std::vector<std::ptrdiff_t> order{0, 4, 1, 5, 2, 6, 3};       // frame -> row
  std::vector<double> stored(8 * 3, 0.0);
  for (std::size_t r = 0; r < 8; ++r) {
    if (source[r] < 0) continue;
    for (std::size_t c = 0; c < 3; ++c) stored[r * 3 + c] = frames.at(static_cast<std::size_t>(source[r]), c);
  }
  const NdArray rows({8, 3}, stored);
  const Segments seg{2, 4, {1, 1, 1, 1, 1, 1, 1, 0}};
  const NdArray g = random_array({3}, rng, 0.5, 1.5), b = random_array({3}, rng);
  for (const bool causal : {false, true}) {
    const NdArray direct = instance_norm(frames, g, b, 1e-5, nullptr, causal);
    const NdArray pooled = instance_norm(rows, g, b, 1e-5, &seg, causal, order);
    for (std::size_t f = 0; f < 7; ++f) {
      for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_NEAR(pooled.at(static_cast<std::size_t>(order[f]), c), direct.at(f, c), 1e-12);
      }
    }
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(pooled.at(7, c), 0.0);
  }
  EXPECT_THROW(instance_norm(rows, g, b, 1e-5, &seg, false, std::vector<std::ptrdiff_t>{0, 7}), DimensionError);
}

TEST(Activation, Values) {
  EXPECT_EQ(silu(NdArray::scalar(0.0)).item(), 0.0);
  EXPECT_EQ(gelu(NdArray::scalar(0.0)).item(), 0.0);
  // 10 / (1 + e^-10)
  EXPECT_NEAR(silu(NdArray::scalar(10.0)).item(), 10.0 / (1.0 + std::exp(-10.0)), 1e-12);
  EXPECT_NEAR(silu(NdArray::scalar(10.0)).item(), 9.9995, 1e-4);
  // tanh form at x = 1: 0.5 (1 + tanh(sqrt(2/pi) * 1.044715))
  const double g1 = 0.5 * (1.0 + std::tanh(std::sqrt(2.0 / std::numbers::pi) * 1.044715));
  EXPECT_NEAR(gelu_value(1.0), g1, 1e-15);
  EXPECT_EQ(activation(NdArray::scalar(1.0), parse_activation("gelu")).item(), gelu_value(1.0));
  EXPECT_THROW(parse_activation("relu"), ConfigError);
}

TEST(Activation, GeluGridHasSingleMinimum) {
  // The tanh GELU dips below zero for negative inputs: on [-5, 5] it falls to
  // one minimum near x = -0.75 and is non-decreasing from there on.
  std::vector<double> g;
  for (int i = 0; i <= 1000; ++i) g.push_back(gelu_value(-5.0 + i * 0.01));
  const auto argmin = static_cast<std::size_t>(std::min_element(g.begin(), g.end()) - g.begin());
  EXPECT_NEAR(-5.0 + argmin * 0.01, -0.75, 0.02);
  for (std::size_t i = 1; i <= argmin; ++i) EXPECT_LE(g[i], g[i - 1]) << i;
  for (std::size_t i = argmin + 1; i < g.size(); ++i) EXPECT_GE(g[i], g[i - 1]) << i;
}

TEST(Backward, SumOfSquares) {
  std::mt19937_64 rng(6);
  NdArray x = param({5}, rng);
  sum(mul(x, x)).backward();
  for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x.at(i));
}

TEST(Backward, SumOfSoftmaxHasZeroGradient) {
  std::mt19937_64 rng(7);
  NdArray x = param({3, 4}, rng);
  sum(softmax(x, 1)).backward();
  for (double g : x.grad()) EXPECT_NEAR(g, 0.0, 1e-15);
}

TEST(Backward, NonScalarIsUsageError) {
  NdArray x({3}, true);
  EXPECT_THROW(scale(x, 2.0).backward(), UsageError);
}

TEST(Backward, TapeIsTopological) {
  std::mt19937_64 rng(8);
  NdArray a = param({2, 3}, rng), w = param({3, 3}, rng);
  const NdArray loss = sum(gelu(matmul(a, w)));
  const Tape tape = Tape::record(loss);
  const auto nodes = tape.nodes();
  ASSERT_EQ(nodes.back(), loss.node().get());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (const auto& in : nodes[i]->inputs) {
      const auto pos = std::find(nodes.begin(), nodes.end(), in.get()) - nodes.begin();
      EXPECT_LT(static_cast<std::size_t>(pos), i);
    }
  }
}

TEST(Backward, NoGradGuardRecordsNothing) {
  NdArray x({2}, std::vector<double>{1, 2}, true);
  NoGradGuard guard;
  const NdArray y = scale(x, 3.0);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.is_leaf());
}

TEST(Backward, CompositeGraphMatchesFiniteDifferences) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(100 + seed);
    NdArray x = param({6, 4}, rng), w = param({4, 3}, rng), g = param({3}, rng, 0.5, 1.5), b = param({3}, rng);
    const double err = grad_error([=] { return sum(gelu(instance_norm(matmul(x, w), g, b, 1e-5))); },
                                  {x, w, g, b}, seed);
    EXPECT_LE(err, 1e-4) << "seed " << seed;
  }
}

// Finite-difference checks of every differentiable op, one random instance per seed.
struct OpCase {
  const char* name;
  std::function<std::pair<std::function<NdArray()>, std::vector<NdArray>>(std::mt19937_64&)> make;
};

std::vector<OpCase> op_cases() {
  using Made = std::pair<std::function<NdArray()>, std::vector<NdArray>>;
  std::vector<OpCase> cases;
  cases.push_back({"matmul", [](auto& r) {
                     NdArray a = param({3, 4}, r), b = param({4, 2}, r);
                     return Made{[=] { return matmul(a, b); }, {a, b}};
                   }});
  cases.push_back({"linear", [](auto& r) {
                     NdArray x = param({5, 3}, r), w = param({3, 4}, r), b = param({4}, r);
                     return Made{[=] { return linear(x, w, b); }, {x, w, b}};
                   }});
  cases.push_back({"add_sub_mul", [](auto& r) {
                     NdArray a = param({3, 3}, r), b = param({3, 3}, r), c = param({3, 3}, r);
                     return Made{[=] { return mul(add(a, b), sub(c, a)); }, {a, b, c}};
                   }});
  cases.push_back({"scale_by", [](auto& r) {
                     NdArray a = param({4, 2}, r), s = param({1}, r);
                     return Made{[=] { return scale(scale_by(a, s), 1.5); }, {a, s}};
                   }});
  cases.push_back({"mean", [](auto& r) {
                     NdArray a = param({4, 3}, r);
                     return Made{[=] { return mean(mul(a, a)); }, {a}};
                   }});
  cases.push_back({"concat_slice", [](auto& r) {
                     NdArray a = param({3, 2}, r), b = param({3, 3}, r);
                     return Made{[=] {
                                   const std::array<NdArray, 2> parts{a, b};
                                   const NdArray c = concat_cols(parts);
                                   return mul(slice_cols(c, 1, 4), slice_cols(c, 0, 3));
                                 },
                                 {a, b}};
                   }});
  cases.push_back({"gather_mask", [](auto& r) {
                     NdArray a = param({4, 2}, r);
                     return Made{[=] {
                                   const std::vector<std::ptrdiff_t> idx{3, -1, 0, 3, 1};
                                   const std::vector<std::uint8_t> keep{1, 1, 0, 1, 1};
                                   return mask_rows(gather_rows(a, idx), keep);
                                 },
                                 {a}};
                   }});
  cases.push_back({"softmax_rows", [](auto& r) {
                     NdArray a = param({3, 5}, r, -3, 3);
                     return Made{[=] { return softmax(a, 1); }, {a}};
                   }});
  cases.push_back({"softmax_cols", [](auto& r) {
                     NdArray a = param({4, 3}, r, -3, 3);
                     return Made{[=] { return softmax(a, 0); }, {a}};
                   }});
  cases.push_back({"log_softmax", [](auto& r) {
                     NdArray a = param({3, 4}, r, -3, 3);
                     return Made{[=] { return log_softmax(a, 1); }, {a}};
                   }});
  cases.push_back({"silu", [](auto& r) {
                     NdArray a = param({10}, r, -4, 4);
                     return Made{[=] { return silu(a); }, {a}};
                   }});
  cases.push_back({"gelu", [](auto& r) {
                     NdArray a = param({10}, r, -4, 4);
                     return Made{[=] { return gelu(a); }, {a}};
                   }});
  cases.push_back({"softplus", [](auto& r) {
                     NdArray a = param({10}, r, -4, 4);
                     return Made{[=] { return softplus(a); }, {a}};
                   }});
  cases.push_back({"conv1d_same", [](auto& r) {
                     NdArray x = param({9, 2}, r), k = param({3, 2, 3}, r), b = param({3}, r);
                     const std::size_t dil = 1 + r() % 4;
                     return Made{[=] { return conv1d(x, k, b, dil, Padding::same); }, {x, k, b}};
                   }});
  cases.push_back({"conv1d_causal_segmented", [](auto& r) {
                     NdArray x = param({10, 2}, r), k = param({3, 2, 2}, r), b = param({2}, r);
                     const Segments seg{2, 5, {1, 1, 1, 1, 0, 1, 1, 1, 1, 1}};
                     return Made{[=] { return conv1d(x, k, b, 2, Padding::causal, &seg); }, {x, k, b}};
                   }});
  cases.push_back({"depthwise_conv1d", [](auto& r) {
                     NdArray x = param({8, 3}, r), k = param({3, 3}, r), b = param({3}, r);
                     return Made{[=] { return depthwise_conv1d(x, k, b, 1, Padding::causal); }, {x, k, b}};
                   }});
  cases.push_back({"instance_norm", [](auto& r) {
                     NdArray x = param({7, 3}, r), g = param({3}, r, 0.5, 1.5), b = param({3}, r);
                     return Made{[=] { return instance_norm(x, g, b, 1e-5); }, {x, g, b}};
                   }});
  cases.push_back({"instance_norm_causal_segmented", [](auto& r) {
                     NdArray x = param({8, 2}, r), g = param({2}, r, 0.5, 1.5), b = param({2}, r);
                     const Segments seg{2, 4, {1, 1, 1, 1, 1, 1, 1, 0}};
                     return Made{[=] { return instance_norm(x, g, b, 1e-5, &seg, true); }, {x, g, b}};
                   }});
  cases.push_back({"instance_norm_ordered", [](auto& r) {
                     NdArray x = param({8, 2}, r), g = param({2}, r, 0.5, 1.5), b = param({2}, r);
                     const Segments seg{2, 4, {1, 1, 1, 1, 1, 1, 1, 0}};
                     const std::vector<std::ptrdiff_t> order{0, 4, 1, 5, 2, 6, 3};
                     return Made{[=] { return instance_norm(x, g, b, 1e-5, &seg, false, order); }, {x, g, b}};
                   }});
  cases.push_back({"instance_norm_ordered_causal", [](auto& r) {
                     NdArray x = param({8, 2}, r), g = param({2}, r, 0.5, 1.5), b = param({2}, r);
                     const Segments seg{2, 4, {1, 1, 1, 1, 1, 1, 1, 0}};
                     const std::vector<std::ptrdiff_t> order{0, 4, 1, 5, 2, 6, 3};
                     return Made{[=] { return instance_norm(x, g, b, 1e-5, &seg, true, order); }, {x, g, b}};
                   }});
  cases.push_back({"layer_norm", [](auto& r) {
                     NdArray x = param({4, 5}, r), g = param({5}, r, 0.5, 1.5), b = param({5}, r);
                     return Made{[=] { return layer_norm(x, g, b, 1e-5); }, {x, g, b}};
                   }});
  cases.push_back({"dropout", [](auto& r) {
                     NdArray x = param({6, 4}, r);
                     const std::uint64_t s = r();
                     return Made{[=] {
                                   std::mt19937_64 local(s);
                                   return dropout(x, 0.3, true, local);
                                 },
                                 {x}};
                   }});
  return cases;
}

TEST(GradCheck, EveryOpOverTwentySeeds) {
  for (const auto& c : op_cases()) {
    double worst = 0.0;
    for (int seed = 0; seed < kSeeds; ++seed) {
      std::mt19937_64 rng(1000 + seed);
      auto [fn, wrt] = c.make(rng);
      worst = std::max(worst, grad_error(fn, wrt, seed));
    }
    EXPECT_LE(worst, 1e-4) << c.name;
  }
}

TEST(Dropout, EvalModeIsIdentityAndTrainingKeepsMean) {
  std::mt19937_64 rng(9);
  const NdArray x = NdArray::filled({4000, 1}, 1.0);
  EXPECT_EQ(test::max_abs_diff(dropout(x, 0.1, false, rng).data(), x.data()), 0.0);
  const NdArray y = dropout(x, 0.1, true, rng);
  double s = 0.0;
  std::size_t zeros = 0;
  for (double v : y.data()) {
    s += v;
    zeros += v == 0.0;
  }
  EXPECT_NEAR(s / 4000, 1.0, 0.05);
  EXPECT_NEAR(zeros / 4000.0, 0.1, 0.02);
}

TEST(Determinism, RepeatedForwardIsBitIdentical) {
  std::mt19937_64 rng(10);
  const NdArray x = random_array({12, 4}, rng), w = random_array({4, 4}, rng);
  const NdArray a = gelu(instance_norm(matmul(x, w), NdArray::filled({4}, 1.0), NdArray({4}), 1e-5));
  const NdArray b = gelu(instance_norm(matmul(x, w), NdArray::filled({4}, 1.0), NdArray({4}), 1e-5));
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

}  // namespace
}  // namespace sprm
