#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sprm/data_io.hpp"

namespace sprm::synth {

/// One phase of the workflow grammar. After the phase ends, the workflow may
/// return to the previously emitted phase and come back (`revisit`, repeated
/// geometrically up to kMaxRevisits times); the phase itself is left out with
/// probability `skip`. Durations are log-normal with the given mean and log
/// standard deviation, clipped at 1 frame.
struct PhaseSpec {
  double skip = 0.0;
  double revisit = 0.0;
  double mean_duration = 50.0;
  double dispersion = 0.3;

  bool operator==(const PhaseSpec&) const = default;
};

inline constexpr int kMaxRevisits = 3;
/// Revisit segments last half as long as regular ones on average.
inline constexpr double kRevisitScale = 0.5;

struct SynthConfig {
  std::vector<PhaseSpec> phases = default_phases();
  std::size_t feature_dim = 32;
  /// Expected Euclidean distance between two phase centres.
  double separation = 6.0;
  /// Stationary per-dimension std of the within-segment AR(1) drift.
  double drift = 1.0;
  double drift_correlation = 0.98;
  /// Per-dimension std of white observation noise.
  double noise = 0.5;
  /// 0 keeps natural lengths; otherwise durations are rescaled so every
  /// sequence has exactly this many frames.
  std::size_t sequence_length = 0;
  std::uint32_t fps = 1;
  std::uint64_t seed = 0;

  std::size_t num_classes() const { return phases.size(); }
  void validate() const;
  bool operator==(const SynthConfig&) const = default;

  /// Eight phases whose mean durations are proportional to the per-phase
  /// frame totals of a typical dissection workflow; only the last phase may
  /// be skipped and phase 6 can alternate with its predecessor.
  static std::vector<PhaseSpec> default_phases();
};

/// Deterministic per (config, count): the same inputs give identical sequences.
std::vector<FeatureSequence> generate(const SynthConfig& config, std::size_t count);

/// Phase centres used for a given config, [classes x D].
std::vector<std::vector<double>> phase_centres(const SynthConfig& config);

/// Expected fraction of frames per phase under the grammar (before any
/// rescaling to a fixed length).
std::vector<double> expected_proportions(const SynthConfig& config);

/// Ordered segments (phase, length) of a label sequence.
struct Segment {
  int phase;
  std::size_t length;
};
std::vector<Segment> segments_of(const std::vector<int>& labels);

/// True when the label sequence can be produced by the grammar: forward
/// moves skip only skippable phases, and backward moves are single-step
/// excursions allowed by `revisit`.
bool respects_grammar(const std::vector<int>& labels, const SynthConfig& config);

}  // namespace sprm::synth
