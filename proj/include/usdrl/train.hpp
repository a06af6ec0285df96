#pragma once

#include "usdrl/checkpoint.hpp"
#include "usdrl/fdloss.hpp"
#include "usdrl/model.hpp"

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace usdrl {

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// Learning rate for 1-based step out of total_steps.
double scheduled_lr(const TrainConfig& cfg, long step, long total_steps);

/// One AdamW update over every parameter that received a gradient. Decay is
/// decoupled and applies to weights only. Advances state.step.
void adamw_step(ParameterSet& params, const GradientStore& grads, TrainState& state, double lr,
                double weight_decay);

/// Projections and statistics of one forward/backward pass over a batch.
struct StepOutput {
  LossBreakdown loss;
  GradientStore grads;
  std::vector<NormStatistics> norm_stats;
  /// [domain][view] projections, kept for diagnostics and collapse metrics.
  std::array<std::vector<Matrix>, 3> projections;
};

/// Full forward and backward for views[k][n] (view k of slot n): encoder per
/// sample, projectors in training mode per view batch, multi-grained loss.
/// Gradients are merged in sample order, so the result does not depend on
/// the thread count.
StepOutput training_step(const Model& model, const std::vector<std::vector<SkeletonSequence>>& views,
                         int threads = 1);

/// Forward only; no gradients.
LossBreakdown evaluate_loss(const Model& model, const std::vector<std::vector<SkeletonSequence>>& views,
                            int threads = 1);

/// Slot indices per step of one epoch. The last batch is padded to two
/// entries with the epoch's first sample when it would otherwise hold one.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t dataset_size, int batch_size,
                                                    std::mt19937_64& rng);

long steps_per_epoch(std::size_t dataset_size, int batch_size);

struct PretrainOptions {
  /// When set: metrics.log, config.json, interval checkpoints and checkpoint.bin go here.
  std::optional<std::filesystem::path> out_dir;
  /// Extra sink for metric lines.
  std::ostream* metrics = nullptr;
  /// Called after every optimizer step.
  std::function<void(long step, const LossBreakdown&, const Model&)> on_step;
  /// Continue from a checkpoint written by an earlier run.
  std::optional<std::filesystem::path> resume;
};

struct PretrainResult {
  Model model;
  TrainState state;
  std::vector<LossBreakdown> history;
  std::optional<std::filesystem::path> checkpoint;
};

PretrainResult pretrain(const std::vector<SkeletonSequence>& dataset, const ExperimentConfig& config,
                        const PretrainOptions& options = {});

}  // namespace usdrl
