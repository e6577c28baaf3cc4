#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sprm/tensor.hpp"

namespace sprm {

/// One video: [L x D] frame features (values representable in single
/// precision), per-frame phase ids and the frame rate.
struct FeatureSequence {
  std::string video_id;
  NdArray features;
  std::vector<int> labels;
  std::uint32_t fps = 1;

  std::size_t length() const { return features.defined() ? features.rows() : 0; }
  std::size_t dim() const { return features.defined() ? features.cols() : 0; }
};

namespace io {

inline constexpr std::uint32_t kFeatureVersion = 1;

/// Binary feature file: "SPRF", u32 version, u64 L, u64 D, u32 fps, then
/// L*D float32 row-major, little-endian. Throws DataError when L == 0.
void write_features(const std::filesystem::path& path, const FeatureSequence& seq);
/// Reads features only (labels empty). Throws FormatError naming the byte
/// offset on bad magic, unknown version or truncation.
FeatureSequence read_features(const std::filesystem::path& path);

/// "frame,phase" CSV next to a feature file.
void write_labels(const std::filesystem::path& path, const std::vector<int>& labels);
std::vector<int> read_labels(const std::filesystem::path& path);

/// `<dir>/<stem>.sprf` -> `<dir>/<stem>.labels.csv`.
std::filesystem::path labels_path_for(const std::filesystem::path& feature_path);

/// Writes `<dir>/<video_id>.sprf` and its labels file.
void write_sequence(const std::filesystem::path& dir, const FeatureSequence& seq);
/// Reads a feature file plus its sibling labels; lengths must agree.
FeatureSequence read_sequence(const std::filesystem::path& feature_path);
/// Every *.sprf in `dir`, sorted by file name.
std::vector<FeatureSequence> read_dataset(const std::filesystem::path& dir);

struct PredictionRows {
  std::vector<int> truth;  // -1 when unknown
  std::vector<int> pred;
  std::vector<std::vector<double>> probs;  // [L][classes]
};

/// CSV "frame,true,pred,p0..p{C-1}", probabilities with 6 decimals.
void write_predictions(const std::filesystem::path& path, const PredictionRows& rows);
PredictionRows read_predictions(const std::filesystem::path& path);

}  // namespace io
}  // namespace sprm
