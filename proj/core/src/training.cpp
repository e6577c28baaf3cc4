#include "sprm/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "autograd.hpp"
#include "sprm/error.hpp"
#include "sprm/ops.hpp"

namespace sprm {

using detail::input_data;
using detail::input_grad;
using detail::make_result;
using detail::Node;

namespace {

constexpr double kProbFloor = 1e-12;

bool frame_valid(const FrameMask& mask, std::size_t t) { return mask.empty() || mask[t] != 0; }

void check_mask(const FrameMask& mask, std::size_t frames, const char* op) {
  if (!mask.empty() && mask.size() != frames) {
    throw DimensionError(fmt::format("{}: mask has {} entries for {} frames", op, mask.size(), frames));
  }
}

}  // namespace

NdArray ce_loss(const NdArray& probs, const std::vector<int>& labels, const FrameMask& mask) {
  if (probs.ndim() != 2) throw DimensionError("ce_loss: expected [L x classes] probabilities");
  const std::size_t frames = probs.rows(), classes = probs.cols();
  if (labels.size() != frames) {
    throw DimensionError(fmt::format("ce_loss: {} labels for {} frames", labels.size(), frames));
  }
  check_mask(mask, frames, "ce_loss");
  std::size_t valid = 0;
  double total = 0.0;
  const auto p = probs.data();
  for (std::size_t t = 0; t < frames; ++t) {
    if (labels[t] < 0 || static_cast<std::size_t>(labels[t]) >= classes) {
      throw DataError(fmt::format("ce_loss: label {} at frame {} outside [0, {})", labels[t], t, classes));
    }
    if (!frame_valid(mask, t)) continue;
    total -= std::log(std::max(p[t * classes + static_cast<std::size_t>(labels[t])], kProbFloor));
    ++valid;
  }
  if (valid == 0) {
    spdlog::warn("ce_loss: every frame is masked, loss is 0");
    return make_result("ce_loss", {1}, {0.0}, {&probs}, [](Node&) {});
  }
  const double inv = 1.0 / static_cast<double>(valid);
  return make_result("ce_loss", {1}, {total * inv}, {&probs}, [labels, mask, classes, inv](Node& self) {
    double* gp = input_grad(self, 0);
    if (!gp) return;
    const double g = self.grad[0];
    const double* pp = input_data(self, 0);
    for (std::size_t t = 0; t < labels.size(); ++t) {
      if (!frame_valid(mask, t)) continue;
      const std::size_t k = t * classes + static_cast<std::size_t>(labels[t]);
      if (pp[k] > kProbFloor) gp[k] -= g * inv / pp[k];
    }
  });
}

NdArray smoothing_loss(const NdArray& log_probs, double tau, const FrameMask& mask) {
  if (log_probs.ndim() != 2) throw DimensionError("smoothing_loss: expected [L x classes] log-probabilities");
  const std::size_t frames = log_probs.rows(), classes = log_probs.cols();
  check_mask(mask, frames, "smoothing_loss");
  const auto lp = log_probs.data();
  const double cap = tau * tau;
  std::size_t pairs = 0;
  double total = 0.0;
  for (std::size_t t = 1; t < frames; ++t) {
    if (!frame_valid(mask, t) || !frame_valid(mask, t - 1)) continue;
    for (std::size_t c = 0; c < classes; ++c) {
      const double d = lp[t * classes + c] - lp[(t - 1) * classes + c];
      total += std::min(d * d, cap);
    }
    ++pairs;
  }
  if (pairs == 0) return make_result("smoothing_loss", {1}, {0.0}, {&log_probs}, [](Node&) {});
  const double inv = 1.0 / static_cast<double>(pairs * classes);
  return make_result("smoothing_loss", {1}, {total * inv}, {&log_probs}, [mask, frames, classes, cap, inv](Node& self) {
    double* gl = input_grad(self, 0);
    if (!gl) return;
    const double g = self.grad[0];
    const double* lp = input_data(self, 0);
    for (std::size_t t = 1; t < frames; ++t) {
      if (!frame_valid(mask, t) || !frame_valid(mask, t - 1)) continue;
      for (std::size_t c = 0; c < classes; ++c) {
        const double d = lp[t * classes + c] - lp[(t - 1) * classes + c];
        // Only the later frame sees the gradient; the earlier one is a constant.
        if (d * d < cap) gl[t * classes + c] += g * inv * 2.0 * d;
      }
    }
  });
}

StageLoss multi_stage_loss(std::span<const StageOutput> stages, const std::vector<int>& labels, const FrameMask& mask,
                           double smoothing_weight, double tau) {
  if (stages.empty()) throw UsageError("multi_stage_loss needs at least one stage");
  StageLoss out;
  for (const auto& s : stages) {
    NdArray term = add(ce_loss(s.probs, labels, mask), scale(smoothing_loss(s.log_probs, tau, mask), smoothing_weight));
    out.per_stage.push_back(term.item());
    out.total = out.total.defined() ? add(out.total, term) : term;
  }
  return out;
}

void adamw_update(std::span<double> param, std::span<const double> grad, AdamState& state, double lr,
                  double weight_decay, const AdamWConfig& config) {
  if (grad.size() != param.size()) {
    throw InternalError(fmt::format("adamw: {} gradients for {} parameters", grad.size(), param.size()));
  }
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(param.size(), 0.0);
    state.v.assign(param.size(), 0.0);
  }
  if (state.m.size() != param.size() || state.v.size() != param.size()) {
    throw InternalError(fmt::format("adamw: state sized {} for {} parameters", state.m.size(), param.size()));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  const double decay = 1.0 - lr * weight_decay;
  for (std::size_t i = 0; i < param.size(); ++i) {
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grad[i];
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    param[i] = param[i] * decay - lr * mhat / (std::sqrt(vhat) + config.eps);
  }
}

AdamW::AdamW(ParamList params, AdamWConfig config)
    : params_(std::move(params)), config_(config), state_(params_.size()) {}

void AdamW::step(double lr, double weight_decay) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    NdArray& p = params_[i].value;
    if (!p.has_grad()) continue;
    adamw_update(p.mutable_data(), p.grad(), state_[i], lr, weight_decay, config_);
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

double clip_grad_norm(const ParamList& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.value.has_grad()) continue;
    for (double g : p.value.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (const auto& p : params) {
      NdArray v = p.value;
      if (!v.has_grad()) continue;
      for (double& g : v.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

ScheduleUnit parse_schedule_unit(std::string_view name) {
  if (name == "epoch") return ScheduleUnit::epoch;
  if (name == "step") return ScheduleUnit::step;
  throw ConfigError("unknown schedule unit '" + std::string(name) + "' (epoch, step)");
}

std::string_view to_string(ScheduleUnit unit) { return unit == ScheduleUnit::step ? "step" : "epoch"; }

void TrainConfig::validate() const {
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (total_epochs < 1) throw ConfigError("total_epochs must be >= 1");
  if (warmup_epochs > total_epochs) throw ConfigError("warmup_epochs must not exceed total_epochs");
  if (!(smoothing_weight >= 0.0)) throw ConfigError("smoothing_weight must be >= 0");
  if (!(smoothing_clip > 0.0)) throw ConfigError("smoothing_clip must be > 0");
  if (!(min_lr_ratio > 0.0 && min_lr_ratio <= 1.0)) throw ConfigError("min_lr_ratio must lie in (0, 1]");
  if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be >= 0 (0 disables clipping)");
  if (!(target_accuracy >= 0.0 && target_accuracy <= 100.0)) throw ConfigError("target_accuracy must lie in [0, 100]");
}

double cosine_lr(std::size_t index, const TrainConfig& config) {
  if (index >= config.total_epochs) {
    throw UsageError(fmt::format("schedule index {} outside [0, {})", index, config.total_epochs));
  }
  const double base = config.base_lr;
  const std::size_t warm = config.warmup_epochs;
  if (index < warm) return base * static_cast<double>(index) / static_cast<double>(warm);
  const std::size_t span = config.total_epochs - 1 - warm;
  if (span == 0) return base;
  const double progress = static_cast<double>(index - warm) / static_cast<double>(span);
  return config.min_lr() + (base - config.min_lr()) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::string TrainHistory::to_csv() const {
  std::string out = "epoch,lr,total_loss";
  const std::size_t stages = epochs.empty() ? 0 : epochs.front().stage_losses.size();
  for (std::size_t s = 0; s < stages; ++s) out += fmt::format(",stage{}_loss", s + 1);
  out += ",train_acc";
  const bool has_val = !epochs.empty() && epochs.front().val_accuracy >= 0.0;
  if (has_val) out += ",val_acc";
  out += '\n';
  for (const auto& e : epochs) {
    out += fmt::format("{},{:.8g},{:.8f}", e.epoch, e.lr, e.total_loss);
    for (double l : e.stage_losses) out += fmt::format(",{:.8f}", l);
    out += fmt::format(",{:.4f}", e.train_accuracy);
    if (has_val) out += fmt::format(",{:.4f}", e.val_accuracy);
    out += '\n';
  }
  return out;
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_csv();
}

double dataset_accuracy(const Model& model, const std::vector<FeatureSequence>& data) {
  std::size_t hit = 0, total = 0;
  for (const auto& seq : data) {
    const auto pred = predict(model, seq.features).labels;
    for (std::size_t t = 0; t < pred.size(); ++t) hit += pred[t] == seq.labels[t];
    total += pred.size();
  }
  return total ? 100.0 * static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

namespace {

void check_dataset(const std::vector<FeatureSequence>& data, const ModelConfig& config, const char* what) {
  for (const auto& seq : data) {
    if (seq.dim() != config.input_dim) {
      throw DataError(fmt::format("{} sequence '{}' has D={}, model expects D={}", what, seq.video_id, seq.dim(),
                                  config.input_dim));
    }
    if (seq.labels.size() != seq.length()) {
      throw DataError(fmt::format("{} sequence '{}' has {} labels for {} frames", what, seq.video_id,
                                  seq.labels.size(), seq.length()));
    }
    for (int l : seq.labels) {
      if (l < 0 || static_cast<std::size_t>(l) >= config.num_classes) {
        throw DataError(fmt::format("{} sequence '{}' has label {} outside [0, {})", what, seq.video_id, l,
                                    config.num_classes));
      }
    }
  }
}

std::vector<std::vector<double>> snapshot(const ParamList& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.emplace_back(p.value.data().begin(), p.value.data().end());
  return out;
}

void restore(const ParamList& params, const std::vector<std::vector<double>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    NdArray v = params[i].value;
    std::copy(values[i].begin(), values[i].end(), v.mutable_data().begin());
  }
}

}  // namespace

TrainResult train(const std::vector<FeatureSequence>& dataset, const ModelConfig& model_config,
                  const TrainConfig& train_config, const std::vector<FeatureSequence>& validation,
                  const EpochCallback& on_epoch) {
  if (dataset.empty()) throw UsageError("training needs at least one sequence");
  train_config.validate();
  model_config.validate();
  check_dataset(dataset, model_config, "training");
  check_dataset(validation, model_config, "validation");

  TrainResult result{Model(model_config, train_config.seed), {}};
  Model& model = result.model;
  const ParamList params = model.parameters();
  AdamW optimizer(params);
  Rng order_rng(train_config.seed ^ 0x9e3779b97f4a7c15ULL);
  Rng dropout_rng(train_config.seed ^ 0xc2b2ae3d27d4eb4fULL);
  const RunMode mode{true, &dropout_rng};

  const bool by_step = train_config.schedule_unit == ScheduleUnit::step;
  const std::size_t total_steps = by_step ? train_config.total_epochs : train_config.total_epochs * dataset.size();
  const std::size_t passes = by_step ? (total_steps + dataset.size() - 1) / dataset.size() : train_config.total_epochs;

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::vector<double>> best;
  double best_val = -1.0;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < passes && step < total_steps; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.stage_losses.assign(model_config.stages, 0.0);
    std::size_t seen = 0;
    for (std::size_t idx : order) {
      if (step >= total_steps) break;
      const FeatureSequence& seq = dataset[idx];
      const double lr = cosine_lr(by_step ? step : epoch, train_config);
      optimizer.zero_grad();
      const auto outputs = model.forward(seq.features, mode);
      const StageLoss loss = multi_stage_loss(outputs, seq.labels, {}, train_config.smoothing_weight,
                                              train_config.smoothing_clip);
      if (!std::isfinite(loss.total.item())) {
        throw InternalError(fmt::format("non-finite loss at epoch {} on '{}'", epoch, seq.video_id));
      }
      loss.total.backward();
      clip_grad_norm(params, train_config.clip_norm);
      optimizer.step(lr, train_config.weight_decay);
      rec.lr = lr;
      rec.total_loss += loss.total.item();
      for (std::size_t s = 0; s < loss.per_stage.size(); ++s) rec.stage_losses[s] += loss.per_stage[s];
      ++seen;
      ++step;
    }
    rec.total_loss /= static_cast<double>(seen);
    for (auto& l : rec.stage_losses) l /= static_cast<double>(seen);
    rec.train_accuracy = dataset_accuracy(model, dataset);
    if (!validation.empty()) {
      rec.val_accuracy = dataset_accuracy(model, validation);
      if (rec.val_accuracy > best_val) {
        best_val = rec.val_accuracy;
        best = snapshot(params);
        result.history.best_epoch = epoch;
      }
    } else {
      result.history.best_epoch = epoch;
    }
    spdlog::debug("epoch {:>4}  lr {:.3e}  loss {:.5f}  train acc {:.2f}", epoch, rec.lr, rec.total_loss,
                  rec.train_accuracy);
    result.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (train_config.target_accuracy > 0.0 && rec.train_accuracy >= train_config.target_accuracy) {
      result.history.reached_target = true;
      break;
    }
  }
  result.history.steps = step;
  if (!best.empty()) restore(params, best);
  round_parameters_to_float(model);
  return result;
}

}  // namespace sprm
