#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "sprm/error.hpp"
#include "sprm/ops.hpp"
#include "sprm/sampling.hpp"
#include "support.hpp"

namespace sprm::sampling {
namespace {

NdArray frame_ids(std::size_t frames) {
  NdArray a({frames, 1});
  for (std::size_t i = 0; i < frames; ++i) a.mutable_data()[i] = static_cast<double>(i);
  return a;
}

std::vector<double> segment_values(const Sampled& s, std::size_t i) {
  const NdArray seg = s.segment(i);
  return {seg.data().begin(), seg.data().end()};
}

TEST(Window, EvenSplit) {
  const Sampled s = window_partition(frame_ids(8), 4);
  ASSERT_EQ(s.count(), 2u);
  EXPECT_EQ(segment_values(s, 0), (std::vector<double>{0, 1, 2, 3}));
  EXPECT_EQ(segment_values(s, 1), (std::vector<double>{4, 5, 6, 7}));
  EXPECT_EQ(s.layout.segments.valid_rows(), 8u);
}

TEST(Window, RaggedTailIsPaddedAndMasked) {
  const Sampled s = window_partition(frame_ids(7), 4);
  ASSERT_EQ(s.count(), 2u);
  EXPECT_EQ(segment_values(s, 1), (std::vector<double>{4, 5, 6, 0}));
  EXPECT_FALSE(s.layout.segments.is_valid(7));
  EXPECT_EQ(s.layout.segments.valid_rows(), 7u);
  const NdArray back = window_merge(s);
  EXPECT_EQ(test::max_abs_diff(back.data(), frame_ids(7).data()), 0.0);
  EXPECT_EQ(back.rows(), 7u);
}

TEST(Window, WindowLongerThanSequence) {
  const Sampled s = window_partition(frame_ids(5), 64);
  ASSERT_EQ(s.count(), 1u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(s.rows.at(i), static_cast<double>(i));
}

TEST(LongRange, FourSubsequences) {
  const Sampled s = longrange_reorder(frame_ids(8), 4);
  ASSERT_EQ(s.count(), 4u);
  EXPECT_EQ(segment_values(s, 0), (std::vector<double>{0, 4}));
  EXPECT_EQ(segment_values(s, 1), (std::vector<double>{1, 5}));
  EXPECT_EQ(segment_values(s, 2), (std::vector<double>{2, 6}));
  EXPECT_EQ(segment_values(s, 3), (std::vector<double>{3, 7}));
}

TEST(LongRange, StrideOneIsIdentity) {
  const Sampled s = longrange_reorder(frame_ids(9), 1);
  ASSERT_EQ(s.count(), 1u);
  EXPECT_EQ(test::max_abs_diff(s.rows.data(), frame_ids(9).data()), 0.0);
}

TEST(Sampling, RoundTripsAndCoverage) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> len_d(1, 500), w_d(1, 64);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t len = len_d(rng), w = w_d(rng), g = w_d(rng);
    const NdArray x = test::random_array({len, 2}, rng);
    const Sampled win = window_partition(x, w);
    const Sampled lr = longrange_reorder(x, g);
    ASSERT_TRUE(std::ranges::equal(window_merge(win).data(), x.data())) << len << " " << w;
    ASSERT_TRUE(std::ranges::equal(longrange_inverse(lr).data(), x.data())) << len << " " << g;
    for (const Layout* layout : {&win.layout, &lr.layout}) {
      std::vector<int> seen(len, 0);
      for (auto src : layout->source) {
        if (src >= 0) ++seen[static_cast<std::size_t>(src)];
      }
      EXPECT_TRUE(std::ranges::all_of(seen, [](int n) { return n == 1; }));
      EXPECT_EQ(layout->segments.valid_rows(), len);
    }
    EXPECT_EQ(win.count(), (len + w - 1) / w);
    EXPECT_EQ(lr.count(), g);
    EXPECT_EQ(lr.length(), (len + g - 1) / g);
  }
}

TEST(Sampling, LayoutIsDifferentiable) {
  std::mt19937_64 rng(2);
  for (int seed = 0; seed < test::kSeeds; ++seed) {
    NdArray x = test::param({11, 2}, rng);
    const Layout a = window_layout(11, 4), b = longrange_layout(11, 3);
    EXPECT_LE(test::grad_error([=] { return invert_layout(gelu(apply_layout(x, a)), a); }, {x}, seed), 1e-4);
    EXPECT_LE(test::grad_error([=] { return gelu(apply_layout(x, b)); }, {x}, seed), 1e-4);
  }
}

TEST(Sampling, BadParametersRejected) {
  EXPECT_THROW(window_layout(5, 0), ConfigError);
  EXPECT_THROW(longrange_layout(5, 0), ConfigError);
  EXPECT_THROW(window_layout(0, 4), DimensionError);
  EXPECT_THROW((SamplingConfig{0, 4}.validate()), ConfigError);
}

}  // namespace
}  // namespace sprm::sampling
