#include "sprm/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "sprm/error.hpp"

namespace sprm::synth {

namespace {

using Rng = std::mt19937_64;

bool is_probability(double p) { return p >= 0.0 && p <= 1.0; }

std::size_t sample_duration(const PhaseSpec& spec, double scale, Rng& rng) {
  const double mean = spec.mean_duration * scale;
  const double sigma = spec.dispersion;
  const double mu = std::log(mean) - 0.5 * sigma * sigma;
  std::lognormal_distribution<double> dist(mu, sigma);
  return static_cast<std::size_t>(std::max(1.0, std::round(dist(rng))));
}

// Largest-remainder rescaling of segment lengths to a fixed total, each >= 1.
void rescale(std::vector<Segment>& segs, std::size_t target) {
  if (segs.size() > target) {
    throw ConfigError(fmt::format("sequence_length {} is shorter than the {} sampled segments", target, segs.size()));
  }
  std::size_t total = 0;
  for (const auto& s : segs) total += s.length;
  const double factor = static_cast<double>(target) / static_cast<double>(total);
  std::vector<double> frac(segs.size());
  std::size_t used = 0;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const double exact = static_cast<double>(segs[i].length) * factor;
    const auto whole = static_cast<std::size_t>(std::floor(exact));
    segs[i].length = std::max<std::size_t>(1, whole);
    frac[i] = whole == 0 ? -1.0 : exact - static_cast<double>(whole);
    used += segs[i].length;
  }
  std::vector<std::size_t> order(segs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t k = 0; used < target; k = (k + 1) % order.size()) {
    ++segs[order[k]].length;
    ++used;
  }
  // Clipping at 1 can overshoot; take frames back from the longest segments.
  while (used > target) {
    auto it = std::max_element(segs.begin(), segs.end(), [](const Segment& a, const Segment& b) { return a.length < b.length; });
    --it->length;
    --used;
  }
}

std::vector<Segment> sample_segments(const SynthConfig& config, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Segment> segs;
  int last = -1;
  for (std::size_t p = 0; p < config.phases.size(); ++p) {
    const PhaseSpec& spec = config.phases[p];
    if (u(rng) < spec.skip) continue;
    const int phase = static_cast<int>(p);
    segs.push_back({phase, sample_duration(spec, 1.0, rng)});
    if (last >= 0) {
      for (int k = 0; k < kMaxRevisits && u(rng) < spec.revisit; ++k) {
        segs.push_back({last, sample_duration(config.phases[static_cast<std::size_t>(last)], kRevisitScale, rng)});
        segs.push_back({phase, sample_duration(spec, kRevisitScale, rng)});
      }
    }
    last = phase;
  }
  if (segs.empty()) {
    // Every phase skipped: fall back to the least skippable one.
    std::size_t best = 0;
    for (std::size_t p = 1; p < config.phases.size(); ++p) {
      if (config.phases[p].skip < config.phases[best].skip) best = p;
    }
    if (config.phases[best].skip >= 1.0) throw ConfigError("every phase has skip probability 1");
    segs.push_back({static_cast<int>(best), sample_duration(config.phases[best], 1.0, rng)});
  }
  return segs;
}

}  // namespace

std::vector<PhaseSpec> SynthConfig::default_phases() {
  const double means[] = {97, 46, 16, 47, 63, 184, 47, 11};
  std::vector<PhaseSpec> out;
  for (double m : means) out.push_back({0.0, 0.0, m, 0.3});
  out[7].skip = 0.1;
  out[6].revisit = 0.3;
  return out;
}

void SynthConfig::validate() const {
  if (phases.size() < 2) throw ConfigError("the phase grammar needs at least 2 phases");
  for (std::size_t p = 0; p < phases.size(); ++p) {
    const auto& s = phases[p];
    if (!is_probability(s.skip) || !is_probability(s.revisit)) {
      throw ConfigError(fmt::format("phase {}: skip and revisit must lie in [0, 1]", p));
    }
    if (!(s.mean_duration >= 1.0)) throw ConfigError(fmt::format("phase {}: mean duration must be >= 1", p));
    if (!(s.dispersion >= 0.0)) throw ConfigError(fmt::format("phase {}: dispersion must be >= 0", p));
  }
  if (feature_dim == 0) throw ConfigError("feature_dim must be > 0");
  if (!(separation >= 0.0) || !(drift >= 0.0) || !(noise >= 0.0)) {
    throw ConfigError("separation, drift and noise must be >= 0");
  }
  if (!(drift_correlation >= 0.0 && drift_correlation < 1.0)) throw ConfigError("drift_correlation must lie in [0, 1)");
  if (fps == 0) throw ConfigError("fps must be > 0");
}

std::vector<std::vector<double>> phase_centres(const SynthConfig& config) {
  Rng rng(config.seed);
  std::normal_distribution<double> n01;
  const double scale = config.separation / std::sqrt(2.0 * static_cast<double>(config.feature_dim));
  std::vector<std::vector<double>> centres(config.phases.size(), std::vector<double>(config.feature_dim));
  for (auto& c : centres) {
    for (auto& v : c) v = n01(rng) * scale;
  }
  return centres;
}

std::vector<FeatureSequence> generate(const SynthConfig& config, std::size_t count) {
  config.validate();
  const auto centres = phase_centres(config);
  const std::size_t d = config.feature_dim;
  const double rho = config.drift_correlation;
  const double innovation = config.drift * std::sqrt(1.0 - rho * rho);
  std::vector<FeatureSequence> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::seed_seq seq_seed{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                           static_cast<std::uint32_t>(i), 0x5eedu};
    Rng rng(seq_seed);
    std::normal_distribution<double> n01;
    auto segs = sample_segments(config, rng);
    if (config.sequence_length > 0) rescale(segs, config.sequence_length);

    std::size_t total = 0;
    for (const auto& s : segs) total += s.length;
    std::vector<double> values(total * d);
    std::vector<int> labels;
    labels.reserve(total);
    std::vector<double> z(d);
    std::size_t row = 0;
    for (const auto& s : segs) {
      const auto& c = centres[static_cast<std::size_t>(s.phase)];
      for (auto& v : z) v = n01(rng) * config.drift;
      for (std::size_t t = 0; t < s.length; ++t, ++row) {
        if (t > 0) {
          for (auto& v : z) v = rho * v + innovation * n01(rng);
        }
        for (std::size_t j = 0; j < d; ++j) {
          const double x = c[j] + z[j] + config.noise * n01(rng);
          values[row * d + j] = static_cast<double>(static_cast<float>(x));
        }
        labels.push_back(s.phase);
      }
    }
    FeatureSequence fs;
    fs.video_id = fmt::format("video{:03d}", i);
    fs.features = NdArray({total, d}, std::move(values));
    fs.labels = std::move(labels);
    fs.fps = config.fps;
    out.push_back(std::move(fs));
  }
  return out;
}

std::vector<double> expected_proportions(const SynthConfig& config) {
  const auto& ph = config.phases;
  const std::size_t n = ph.size();
  std::vector<double> frames(n, 0.0);
  for (std::size_t p = 0; p < n; ++p) {
    const double present = 1.0 - ph[p].skip;
    frames[p] += present * ph[p].mean_duration;
    double excursions = 0.0;
    for (int k = 1; k <= kMaxRevisits; ++k) excursions += std::pow(ph[p].revisit, k);
    if (excursions == 0.0) continue;
    // Distribution of the previously emitted phase.
    double none_before = 1.0;
    for (std::size_t q = p; q-- > 0;) {
      const double prob_q = none_before * (1.0 - ph[q].skip);
      const double weight = present * prob_q * excursions * kRevisitScale;
      frames[q] += weight * ph[q].mean_duration;
      frames[p] += weight * ph[p].mean_duration;
      none_before *= ph[q].skip;
    }
  }
  const double total = std::accumulate(frames.begin(), frames.end(), 0.0);
  for (auto& f : frames) f /= total;
  return frames;
}

std::vector<Segment> segments_of(const std::vector<int>& labels) {
  std::vector<Segment> out;
  for (int l : labels) {
    if (!out.empty() && out.back().phase == l) {
      ++out.back().length;
    } else {
      out.push_back({l, 1});
    }
  }
  return out;
}

bool respects_grammar(const std::vector<int>& labels, const SynthConfig& config) {
  const auto segs = segments_of(labels);
  const int n = static_cast<int>(config.phases.size());
  std::size_t i = 0;
  int current = -1;
  int previous = -1;
  int excursions = 0;
  while (i < segs.size()) {
    const int p = segs[i].phase;
    if (p < 0 || p >= n) return false;
    if (p > current) {
      for (int q = current + 1; q < p; ++q) {
        if (config.phases[static_cast<std::size_t>(q)].skip <= 0.0) return false;
      }
      previous = current;
      current = p;
      excursions = 0;
      ++i;
      continue;
    }
    // Backward move: must be an excursion to the previously emitted phase
    // followed by a return to the current one.
    if (p != previous || config.phases[static_cast<std::size_t>(current)].revisit <= 0.0 ||
        excursions >= kMaxRevisits) {
      return false;
    }
    if (i + 1 >= segs.size() || segs[i + 1].phase != current) return false;
    ++excursions;
    i += 2;
  }
  return true;
}

}  // namespace sprm::synth
