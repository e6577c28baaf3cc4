#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "sprm/nn.hpp"
#include "sprm/srtm.hpp"
#include "sprm/tensor.hpp"

namespace sprm {

/// Temporal convolution at the head of each LSTContext block.
/// dilated: dilation 2^layer; plain: dilation 1; none: skipped (with its GELU).
enum class ConvMode { dilated, plain, none };

ConvMode parse_conv_mode(std::string_view name);
std::string_view to_string(ConvMode mode);

struct ModelConfig {
  std::size_t input_dim = 2048;   // D
  std::size_t stage1_dim = 64;
  std::size_t refine_dim = 32;
  std::size_t layers = 10;        // N blocks per stage
  std::size_t stages = 4;         // S
  std::size_t num_classes = 8;
  std::size_t window = 64;        // W
  std::size_t stride = 64;        // G
  std::size_t state_dim = 16;
  std::size_t expand = 2;
  double dropout = 0.1;
  bool causal = false;
  BranchMode branches = BranchMode::full;
  ConvMode conv = ConvMode::dilated;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct StageOutput {
  NdArray logits;     // [L x classes]
  NdArray probs;      // softmax(logits)
  NdArray log_probs;  // log_softmax(logits)
};

/// Dilated conv -> GELU -> window-sampled SRTM -> long-range-sampled SRTM ->
/// linear, added back onto the block input.
class LstContextBlock {
 public:
  struct Options {
    std::size_t channels = 64;
    std::size_t dilation = 1;
    std::size_t window = 64;
    std::size_t stride = 64;
    ConvMode conv = ConvMode::dilated;
    SrtmConfig srtm;
  };

  LstContextBlock() = default;
  LstContextBlock(const Options& options, Rng& rng);

  /// `query_source`, when given, is [L x query_dim] and feeds cross-attention.
  NdArray forward(const NdArray& x, const NdArray* query_source, const RunMode& mode) const;
  void collect(ParamList& out, const std::string& prefix) const;

  std::size_t dilation() const { return options_.dilation; }
  Linear& output_proj() { return out_proj_; }

 private:
  Options options_;
  NdArray conv_kernel_;  // [3 x C x C]
  NdArray conv_bias_;
  SrtmBlock window_srtm_;
  SrtmBlock longrange_srtm_;
  Linear out_proj_;
};

/// Multi-stage temporal model: stage 1 reduces D -> stage1_dim, runs N
/// LSTContext blocks and reduces to refine_dim; every later stage embeds the
/// previous stage's probabilities and refines them with N more blocks whose
/// attention takes queries and keys from those probabilities.
class Model {
 public:
  Model() = default;
  Model(const ModelConfig& config, std::uint64_t seed);

  /// One StageOutput per stage. Throws InputError on non-finite features and
  /// DimensionError when the width is not input_dim.
  std::vector<StageOutput> forward(const NdArray& features, const RunMode& mode = {}) const;

  /// Named parameters in a fixed order; handles share storage with the model.
  ParamList parameters() const;
  const ModelConfig& config() const { return config_; }

  std::size_t block_count() const;
  std::size_t head_count() const { return stages_.size(); }
  /// Dilation of every block, per stage.
  std::vector<std::vector<std::size_t>> dilation_schedule() const;
  LstContextBlock& block(std::size_t stage, std::size_t layer) { return stages_.at(stage).blocks.at(layer); }

 private:
  struct Stage {
    Linear input_proj;  // D -> stage1_dim, or classes -> refine_dim
    std::vector<LstContextBlock> blocks;
    Linear reduce;      // stage1_dim -> refine_dim (stage 1 only, when dims differ)
    NdArray head_kernel;  // [1 x refine_dim x classes]
    NdArray head_bias;
  };

  ModelConfig config_;
  std::vector<Stage> stages_;
};

Model build_model(const ModelConfig& config, std::uint64_t seed);

struct Prediction {
  NdArray probs;            // [L x classes]
  std::vector<int> labels;  // argmax per frame
};

/// Eval-mode forward without graph recording. `stage` is 1-based; 0 selects
/// the last stage. Throws UsageError for a stage beyond the model's.
Prediction predict(const Model& model, const NdArray& features, std::size_t stage = 0);
std::vector<int> argmax_rows(const NdArray& probs);
std::size_t param_count(const Model& model);

/// Rounds every parameter to the nearest single-precision value, so that a
/// checkpoint written afterwards reloads to exactly the same model.
void round_parameters_to_float(Model& model);

}  // namespace sprm
