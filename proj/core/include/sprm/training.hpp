#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "sprm/data_io.hpp"
#include "sprm/model.hpp"
#include "sprm/nn.hpp"
#include "sprm/tensor.hpp"

namespace sprm {

/// Per-frame validity; an empty mask means every frame counts.
using FrameMask = std::vector<std::uint8_t>;

/// Mean over valid frames of -log(max(p[label], 1e-12)). A fully masked
/// sequence gives 0 (and logs a warning). Throws DataError for labels outside
/// [0, classes).
NdArray ce_loss(const NdArray& probs, const std::vector<int>& labels, const FrameMask& mask = {});

/// Truncated MSE between adjacent frames' log-probabilities: mean over valid
/// pairs and classes of min((lp[t] - lp[t-1])^2, tau^2), with lp[t-1] held
/// constant. Zero for fewer than two frames.
NdArray smoothing_loss(const NdArray& log_probs, double tau, const FrameMask& mask = {});

struct StageLoss {
  NdArray total;                    // differentiable sum over stages
  std::vector<double> per_stage;    // ce + weight * smoothing, per stage
};

/// Sum over stages of ce_loss + smoothing_weight * smoothing_loss.
StageLoss multi_stage_loss(std::span<const StageOutput> stages, const std::vector<int>& labels, const FrameMask& mask,
                           double smoothing_weight, double tau);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
};

/// One AdamW update in place: p -= lr * wd * p, then the bias-corrected Adam
/// step. Throws InternalError when the sizes of `param`, `grad` and a
/// non-empty state disagree.
void adamw_update(std::span<double> param, std::span<const double> grad, AdamState& state, double lr,
                  double weight_decay, const AdamWConfig& config = {});

/// AdamW over a parameter list. Parameters that received no gradient in the
/// current step are left untouched.
class AdamW {
 public:
  explicit AdamW(ParamList params, AdamWConfig config = {});
  void step(double lr, double weight_decay);
  void zero_grad();
  const ParamList& params() const { return params_; }

 private:
  ParamList params_;
  AdamWConfig config_;
  std::vector<AdamState> state_;
};

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(const ParamList& params, double max_norm);

/// What the schedule counts: whole passes over the data, or optimizer steps.
enum class ScheduleUnit { epoch, step };
ScheduleUnit parse_schedule_unit(std::string_view name);
std::string_view to_string(ScheduleUnit unit);

struct TrainConfig {
  double base_lr = 5e-4;
  double weight_decay = 1e-5;
  std::size_t warmup_epochs = 40;
  /// Length of the run in `schedule_unit`s.
  std::size_t total_epochs = 200;
  double smoothing_weight = 0.15;
  double smoothing_clip = 4.0;
  double min_lr_ratio = 1e-2;
  double clip_norm = 1.0;
  ScheduleUnit schedule_unit = ScheduleUnit::epoch;
  /// Stop once eval-mode train accuracy (percent) reaches this; 0 disables.
  double target_accuracy = 0.0;
  std::uint64_t seed = 0;

  double min_lr() const { return base_lr * min_lr_ratio; }
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Linear ramp 0 -> base_lr over warmup, then a half cosine from base_lr to
/// min_lr reached at index total_epochs - 1. Throws UsageError when `index`
/// is outside [0, total_epochs).
double cosine_lr(std::size_t index, const TrainConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double total_loss = 0.0;
  std::vector<double> stage_losses;
  double train_accuracy = 0.0;
  double val_accuracy = -1.0;  // negative when no validation split
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  std::size_t steps = 0;
  bool reached_target = false;

  /// epoch,lr,total_loss,stage1_loss..,train_acc[,val_acc]
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
  Model model;
  TrainHistory history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains a freshly initialised model (seeded by train_config.seed), one full
/// sequence per optimizer step in a seeded shuffled order. Returns the
/// best-validation parameters when `validation` is non-empty, else the final
/// ones; parameters are rounded to single precision on return so a
/// checkpoint reproduces the returned model exactly.
TrainResult train(const std::vector<FeatureSequence>& dataset, const ModelConfig& model_config,
                  const TrainConfig& train_config, const std::vector<FeatureSequence>& validation = {},
                  const EpochCallback& on_epoch = {});

/// Pooled frame accuracy (percent) of the final stage in eval mode.
double dataset_accuracy(const Model& model, const std::vector<FeatureSequence>& data);

}  // namespace sprm
