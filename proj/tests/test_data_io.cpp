#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "sprm/data_io.hpp"
#include "sprm/error.hpp"
#include "sprm/synthetic.hpp"

namespace fs = std::filesystem;

namespace sprm {
namespace {

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("sprm_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

FeatureSequence small_sequence() {
  FeatureSequence s;
  s.video_id = "clip";
  s.features = NdArray({3, 2}, std::vector<double>{0.5, -1.25, 3.0, 1e-3f, -7.0, 0.1f});
  s.labels = {0, 2, 1};
  s.fps = 25;
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

using FeatureFiles = TempDir;

TEST_F(FeatureFiles, RoundTripIsBitExact) {
  const auto seq = small_sequence();
  io::write_sequence(dir_, seq);
  const auto back = io::read_sequence(dir_ / "clip.sprf");
  EXPECT_EQ(back.video_id, "clip");
  EXPECT_EQ(back.fps, 25u);
  EXPECT_EQ(back.labels, seq.labels);
  EXPECT_EQ(back.features.shape(), seq.features.shape());
  EXPECT_TRUE(std::ranges::equal(back.features.data(), seq.features.data()));
  EXPECT_TRUE(fs::exists(dir_ / "clip.labels.csv"));
  EXPECT_EQ(slurp(dir_ / "clip.labels.csv"), "frame,phase\n0,0\n1,2\n2,1\n");
}

TEST_F(FeatureFiles, HeaderLayout) {
  io::write_features(dir_ / "a.sprf", small_sequence());
  const std::string bytes = slurp(dir_ / "a.sprf");
  ASSERT_EQ(bytes.size(), 4u + 4 + 8 + 8 + 4 + 6 * 4);
  EXPECT_EQ(bytes.substr(0, 4), "SPRF");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1);  // version, little-endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 3);  // L
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 2);  // D
  EXPECT_EQ(static_cast<unsigned char>(bytes[24]), 25);  // fps
  float first = 0;
  std::memcpy(&first, bytes.data() + 28, 4);
  EXPECT_EQ(first, 0.5f);
}

TEST_F(FeatureFiles, TruncationNamesOffset) {
  io::write_features(dir_ / "a.sprf", small_sequence());
  const std::string bytes = slurp(dir_ / "a.sprf");
  std::ofstream(dir_ / "t.sprf", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  try {
    io::read_features(dir_ / "t.sprf");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("offset 28"), std::string::npos) << e.what();
  }
  std::ofstream(dir_ / "h.sprf", std::ios::binary) << bytes.substr(0, 10);
  EXPECT_THROW(io::read_features(dir_ / "h.sprf"), FormatError);
}

TEST_F(FeatureFiles, BadMagicAndVersion) {
  std::string bytes = (io::write_features(dir_ / "a.sprf", small_sequence()), slurp(dir_ / "a.sprf"));
  std::string bad = bytes;
  bad[0] = 'X';
  std::ofstream(dir_ / "m.sprf", std::ios::binary) << bad;
  EXPECT_THROW(io::read_features(dir_ / "m.sprf"), FormatError);
  bad = bytes;
  bad[4] = 2;
  std::ofstream(dir_ / "v.sprf", std::ios::binary) << bad;
  try {
    io::read_features(dir_ / "v.sprf");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos);
  }
}

TEST_F(FeatureFiles, EmptySequenceRejectedOnWrite) {
  FeatureSequence s;
  s.video_id = "empty";
  s.features = NdArray({0, 4});
  EXPECT_THROW(io::write_features(dir_ / "e.sprf", s), DataError);
}

TEST_F(FeatureFiles, LabelLengthMustMatch) {
  auto seq = small_sequence();
  io::write_sequence(dir_, seq);
  io::write_labels(dir_ / "clip.labels.csv", {0, 1});
  EXPECT_THROW(io::read_sequence(dir_ / "clip.sprf"), DataError);
}

TEST_F(FeatureFiles, DatasetIsSortedByName) {
  auto seq = small_sequence();
  for (const char* id : {"b", "c", "a"}) {
    seq.video_id = id;
    io::write_sequence(dir_, seq);
  }
  const auto all = io::read_dataset(dir_);
  ASSERT_EQ(all.size(), 3u);
  EXPECT_EQ(all[0].video_id, "a");
  EXPECT_EQ(all[2].video_id, "c");
  EXPECT_THROW(io::read_dataset(dir_ / "missing"), DataError);
}

using PredictionFiles = TempDir;

TEST_F(PredictionFiles, LayoutAndRoundTrip) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  io::PredictionRows rows;
  const std::size_t len = 50, classes = 7;
  for (std::size_t t = 0; t < len; ++t) {
    std::vector<double> p(classes);
    double s = 0.0;
    for (auto& v : p) s += (v = u(rng));
    for (auto& v : p) v /= s;
    rows.probs.push_back(p);
    rows.pred.push_back(static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()));
    rows.truth.push_back(static_cast<int>(t % classes));
  }
  io::write_predictions(dir_ / "p.csv", rows);
  const std::string text = slurp(dir_ / "p.csv");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), static_cast<long>(len + 1));
  EXPECT_EQ(text.substr(0, text.find('\n')), "frame,true,pred,p0,p1,p2,p3,p4,p5,p6");
  const auto back = io::read_predictions(dir_ / "p.csv");
  EXPECT_EQ(back.pred, rows.pred);
  EXPECT_EQ(back.truth, rows.truth);
  std::size_t hits_a = 0, hits_b = 0;
  for (std::size_t t = 0; t < len; ++t) {
    hits_a += rows.pred[t] == rows.truth[t];
    hits_b += back.pred[t] == back.truth[t];
    double s = 0.0;
    for (double v : back.probs[t]) s += v;
    // Seven values each rounded to 6 decimals: |error| <= 7 * 5e-7.
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
  EXPECT_EQ(hits_a, hits_b);
}

TEST_F(PredictionFiles, LengthMismatch) {
  io::PredictionRows rows;
  rows.truth = {0, 1};
  rows.pred = {0};
  rows.probs = {{1.0}, {1.0}};
  EXPECT_THROW(io::write_predictions(dir_ / "p.csv", rows), DataError);
}

synth::SynthConfig synth_config(std::uint64_t seed) {
  synth::SynthConfig cfg;
  cfg.seed = seed;
  return cfg;
}

TEST(Synthetic, SameSeedSameBytes) {
  auto cfg = synth_config(5);
  cfg.sequence_length = 300;
  const auto a = synth::generate(cfg, 3), b = synth::generate(cfg, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a[i].video_id, b[i].video_id);
    EXPECT_EQ(a[i].labels, b[i].labels);
    EXPECT_TRUE(std::ranges::equal(a[i].features.data(), b[i].features.data()));
    EXPECT_EQ(a[i].length(), 300u);
    EXPECT_EQ(a[i].dim(), 32u);
  }
  cfg.seed = 6;
  EXPECT_NE(synth::generate(cfg, 1)[0].labels, a[0].labels);
}

TEST(Synthetic, ValuesAreFloatRepresentable) {
  const auto seq = synth::generate(synth_config(1), 1)[0];
  for (double v : seq.features.data()) EXPECT_EQ(v, static_cast<double>(static_cast<float>(v)));
}

TEST(Synthetic, AlwaysSkippedPhaseNeverAppears) {
  auto cfg = synth_config(2);
  cfg.phases[3].skip = 1.0;
  for (const auto& s : synth::generate(cfg, 30)) EXPECT_EQ(std::count(s.labels.begin(), s.labels.end(), 3), 0);
}

TEST(Synthetic, LabelsRespectTheGrammar) {
  auto cfg = synth_config(3);
  cfg.phases[2].skip = 0.3;
  cfg.phases[4].revisit = 0.5;
  for (const auto& s : synth::generate(cfg, 100)) EXPECT_TRUE(synth::respects_grammar(s.labels, cfg));
  // The checker itself rejects disorder and unlicensed revisits.
  EXPECT_FALSE(synth::respects_grammar({0, 1, 2, 4, 3, 5, 6, 7}, cfg));
  EXPECT_FALSE(synth::respects_grammar({0, 2, 1, 2, 3, 4, 5, 6, 7}, cfg));
  EXPECT_TRUE(synth::respects_grammar({0, 1, 3, 4, 3, 4, 5, 6, 7}, cfg));
  EXPECT_FALSE(synth::respects_grammar({0, 1, 3, 4, 5, 4, 5, 6, 7}, cfg));
  EXPECT_FALSE(synth::respects_grammar({0, 2, 3, 4, 5, 6, 7}, cfg));
}

TEST(Synthetic, ProportionsConverge) {
  const auto cfg = synth_config(4);
  const auto expect = synth::expected_proportions(cfg);
  double total_expect = 0.0;
  for (double p : expect) total_expect += p;
  EXPECT_NEAR(total_expect, 1.0, 1e-12);
  std::vector<double> frames(cfg.num_classes(), 0.0);
  double total = 0.0;
  for (const auto& s : synth::generate(cfg, 60)) {
    for (int l : s.labels) {
      frames[static_cast<std::size_t>(l)] += 1.0;
      total += 1.0;
    }
  }
  for (std::size_t c = 0; c < frames.size(); ++c) EXPECT_NEAR(100.0 * frames[c] / total, 100.0 * expect[c], 5.0) << c;
}

double nearest_centroid_accuracy(const synth::SynthConfig& cfg) {
  const auto data = synth::generate(cfg, 20);
  const std::size_t k = cfg.num_classes(), d = cfg.feature_dim;
  std::vector<std::vector<double>> centre(k, std::vector<double>(d, 0.0));
  std::vector<double> count(k, 0.0);
  for (const auto& s : data) {
    for (std::size_t t = 0; t < s.length(); ++t) {
      const auto c = static_cast<std::size_t>(s.labels[t]);
      for (std::size_t j = 0; j < d; ++j) centre[c][j] += s.features.at(t, j);
      count[c] += 1.0;
    }
  }
  for (std::size_t c = 0; c < k; ++c) {
    for (auto& v : centre[c]) v /= std::max(count[c], 1.0);
  }
  std::size_t hit = 0, total = 0;
  for (const auto& s : data) {
    for (std::size_t t = 0; t < s.length(); ++t) {
      std::size_t best = 0;
      double best_d = 1e300;
      for (std::size_t c = 0; c < k; ++c) {
        if (count[c] == 0.0) continue;
        double dist = 0.0;
        for (std::size_t j = 0; j < d; ++j) dist += std::pow(s.features.at(t, j) - centre[c][j], 2);
        if (dist < best_d) {
          best_d = dist;
          best = c;
        }
      }
      hit += static_cast<int>(best) == s.labels[t];
      ++total;
    }
  }
  return 100.0 * static_cast<double>(hit) / static_cast<double>(total);
}

TEST(Synthetic, DifficultyIsTunable) {
  auto easy = synth_config(7);
  easy.separation = 12.0;
  easy.drift = 0.5;
  easy.noise = 0.5;
  auto hard = synth_config(7);
  hard.separation = 1.0;
  hard.drift = 1.0;
  hard.noise = 0.5;
  const double a = nearest_centroid_accuracy(easy), b = nearest_centroid_accuracy(hard);
  EXPECT_GT(a, 95.0);
  EXPECT_LT(b, 80.0);
}

TEST(Synthetic, SegmentsOfLabels) {
  const auto segs = synth::segments_of({2, 2, 0, 1, 1, 1});
  ASSERT_EQ(segs.size(), 3u);
  EXPECT_EQ(segs[0].phase, 2);
  EXPECT_EQ(segs[2].length, 3u);
}

TEST(Synthetic, InvalidConfigRejected) {
  auto cfg = synth_config(0);
  cfg.phases[0].skip = 1.5;
  EXPECT_THROW(synth::generate(cfg, 1), ConfigError);
  cfg = synth_config(0);
  cfg.phases[0].mean_duration = 0.5;
  EXPECT_THROW(synth::generate(cfg, 1), ConfigError);
  cfg = synth_config(0);
  cfg.sequence_length = 3;
  EXPECT_THROW(synth::generate(cfg, 1), ConfigError);
}

}  // namespace
}  // namespace sprm
