#include "sprm/model.hpp"

#include <algorithm>

#include "sprm/error.hpp"
#include "sprm/ops.hpp"
#include "sprm/sampling.hpp"

namespace sprm {

ConvMode parse_conv_mode(std::string_view name) {
  if (name == "dilated") return ConvMode::dilated;
  if (name == "plain") return ConvMode::plain;
  if (name == "none") return ConvMode::none;
  throw ConfigError("unknown conv mode '" + std::string(name) + "' (dilated, plain, none)");
}

std::string_view to_string(ConvMode mode) {
  switch (mode) {
    case ConvMode::dilated:
      return "dilated";
    case ConvMode::plain:
      return "plain";
    case ConvMode::none:
      return "none";
  }
  return "dilated";
}

void ModelConfig::validate() const {
  if (input_dim == 0) throw ConfigError("input_dim must be > 0");
  if (stage1_dim == 0 || stage1_dim % 4 != 0) throw ConfigError("stage1_dim must be a positive multiple of 4");
  if (refine_dim == 0 || refine_dim % 4 != 0) throw ConfigError("refine_dim must be a positive multiple of 4");
  if (layers < 1) throw ConfigError("layers per stage must be >= 1");
  if (stages < 1) throw ConfigError("stages must be >= 1");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (window < 1 || stride < 1) throw ConfigError("window and stride must be >= 1");
  if (state_dim < 1) throw ConfigError("state_dim must be >= 1");
  if (expand < 1) throw ConfigError("expand must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  if (layers > 62) throw ConfigError("layers per stage too large for the dilation schedule");
}

LstContextBlock::LstContextBlock(const Options& options, Rng& rng) : options_(options) {
  const std::size_t c = options_.channels;
  if (options_.conv != ConvMode::none) {
    conv_kernel_ = init_uniform_fan_in({3, c, c}, 3 * c, rng);
    conv_bias_ = init_zeros({c});
  }
  SrtmConfig srtm = options_.srtm;
  srtm.channels = c;
  window_srtm_ = SrtmBlock(srtm, rng);
  longrange_srtm_ = SrtmBlock(srtm, rng);
  out_proj_ = Linear(c, c, rng);
}

NdArray LstContextBlock::forward(const NdArray& x, const NdArray* query_source, const RunMode& mode) const {
  const std::size_t frames = x.rows();
  NdArray h = x;
  if (options_.conv != ConvMode::none) {
    const Padding pad = options_.srtm.causal ? Padding::causal : Padding::same;
    h = gelu(conv1d(x, conv_kernel_, conv_bias_, options_.dilation, pad));
  }

  const auto window = sampling::window_layout(frames, options_.window);
  NdArray query_w;
  if (query_source) query_w = sampling::apply_layout(*query_source, window);
  NdArray hw = window_srtm_.forward(sampling::apply_layout(h, window), window.segments,
                                    query_source ? &query_w : nullptr, mode, window.frame_to_row);
  h = sampling::invert_layout(hw, window);

  const auto longrange = sampling::longrange_layout(frames, options_.stride);
  NdArray query_g;
  if (query_source) query_g = sampling::apply_layout(*query_source, longrange);
  NdArray hg = longrange_srtm_.forward(sampling::apply_layout(h, longrange), longrange.segments,
                                       query_source ? &query_g : nullptr, mode, longrange.frame_to_row);
  h = sampling::invert_layout(hg, longrange);

  return add(x, out_proj_.forward(h));
}

void LstContextBlock::collect(ParamList& out, const std::string& prefix) const {
  if (conv_kernel_.defined()) {
    out.push_back({prefix + ".conv.kernel", conv_kernel_});
    out.push_back({prefix + ".conv.bias", conv_bias_});
  }
  window_srtm_.collect(out, prefix + ".window");
  longrange_srtm_.collect(out, prefix + ".longrange");
  out_proj_.collect(out, prefix + ".out_proj");
}

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  for (std::size_t s = 0; s < config_.stages; ++s) {
    Stage stage;
    const std::size_t width = s == 0 ? config_.stage1_dim : config_.refine_dim;
    stage.input_proj = s == 0 ? Linear(config_.input_dim, width, rng) : Linear(config_.num_classes, width, rng);
    for (std::size_t i = 0; i < config_.layers; ++i) {
      LstContextBlock::Options opt;
      opt.channels = width;
      opt.dilation = config_.conv == ConvMode::dilated ? (std::size_t{1} << i) : 1;
      opt.window = config_.window;
      opt.stride = config_.stride;
      opt.conv = config_.conv;
      opt.srtm.expand = config_.expand;
      opt.srtm.state_dim = config_.state_dim;
      opt.srtm.dropout = config_.dropout;
      opt.srtm.causal = config_.causal;
      opt.srtm.branches = config_.branches;
      opt.srtm.query_dim = s == 0 ? 0 : config_.num_classes;
      stage.blocks.emplace_back(opt, rng);
    }
    if (s == 0 && config_.stage1_dim != config_.refine_dim) {
      stage.reduce = Linear(config_.stage1_dim, config_.refine_dim, rng);
    }
    stage.head_kernel = init_uniform_fan_in({1, config_.refine_dim, config_.num_classes}, config_.refine_dim, rng);
    stage.head_bias = init_zeros({config_.num_classes});
    stages_.push_back(std::move(stage));
  }
}

std::vector<StageOutput> Model::forward(const NdArray& features, const RunMode& mode) const {
  if (features.ndim() != 2 || features.cols() != config_.input_dim) {
    throw DimensionError("model expects [L x " + std::to_string(config_.input_dim) + "] features, got " +
                         shape_str(features.shape()));
  }
  if (features.rows() == 0) throw InputError("model input has no frames");
  check_finite(features, "model input");
  std::vector<StageOutput> outputs;
  NdArray prev_probs;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const Stage& stage = stages_[s];
    NdArray h = stage.input_proj.forward(s == 0 ? features : prev_probs);
    for (const auto& block : stage.blocks) h = block.forward(h, s == 0 ? nullptr : &prev_probs, mode);
    if (stage.reduce.in_features() > 0) h = stage.reduce.forward(h);
    StageOutput out;
    out.logits = conv1d(h, stage.head_kernel, stage.head_bias, 1, Padding::same);
    out.probs = softmax(out.logits, 1);
    out.log_probs = log_softmax(out.logits, 1);
    prev_probs = out.probs;
    outputs.push_back(std::move(out));
  }
  return outputs;
}

ParamList Model::parameters() const {
  ParamList out;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const std::string prefix = "stage" + std::to_string(s);
    const Stage& stage = stages_[s];
    stage.input_proj.collect(out, prefix + ".input_proj");
    for (std::size_t i = 0; i < stage.blocks.size(); ++i) {
      stage.blocks[i].collect(out, prefix + ".block" + std::to_string(i));
    }
    if (stage.reduce.in_features() > 0) stage.reduce.collect(out, prefix + ".reduce");
    out.push_back({prefix + ".head.kernel", stage.head_kernel});
    out.push_back({prefix + ".head.bias", stage.head_bias});
  }
  return out;
}

std::size_t Model::block_count() const {
  std::size_t n = 0;
  for (const auto& s : stages_) n += s.blocks.size();
  return n;
}

std::vector<std::vector<std::size_t>> Model::dilation_schedule() const {
  std::vector<std::vector<std::size_t>> out;
  for (const auto& s : stages_) {
    std::vector<std::size_t> d;
    for (const auto& b : s.blocks) d.push_back(b.dilation());
    out.push_back(std::move(d));
  }
  return out;
}

Model build_model(const ModelConfig& config, std::uint64_t seed) { return Model(config, seed); }

std::vector<int> argmax_rows(const NdArray& probs) {
  std::vector<int> out(probs.rows());
  const auto d = probs.data();
  const std::size_t c = probs.cols();
  for (std::size_t r = 0; r < out.size(); ++r) {
    const auto row = d.subspan(r * c, c);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

Prediction predict(const Model& model, const NdArray& features, std::size_t stage) {
  const std::size_t stages = model.config().stages;
  if (stage > stages) {
    throw UsageError("stage " + std::to_string(stage) + " requested, model has " + std::to_string(stages));
  }
  NoGradGuard guard;
  auto outputs = model.forward(features);
  Prediction p;
  p.probs = outputs[stage == 0 ? stages - 1 : stage - 1].probs;
  p.labels = argmax_rows(p.probs);
  return p;
}

std::size_t param_count(const Model& model) { return count_parameters(model.parameters()); }

void round_parameters_to_float(Model& model) {
  for (auto& p : model.parameters()) {
    for (auto& v : p.value.mutable_data()) v = static_cast<double>(static_cast<float>(v));
  }
}

}  // namespace sprm
