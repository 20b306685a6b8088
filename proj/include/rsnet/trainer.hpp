#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "rsnet/data.hpp"
#include "rsnet/losses.hpp"
#include "rsnet/network.hpp"

namespace rsn {

enum class TrainMode {
  kParallelMred,      // parallel branches + ensemble + distillation
  kParallelOnly,      // parallel branches + ensemble, no distillation
  kIndividual,        // single fixed resolution (profile of size 1)
  kSharedBn,          // parallel branches, every branch through bank 0
  kMultiCrop,         // parallel+mred with an independent crop per branch
  kSingleResolution,  // `branches` crops of one resolution through bank 0
};

enum class LrSchedule { kCosine, kStep };

struct TrainConfig {
  int epochs = 60;
  int batch_size = 128;
  double base_lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double bn_momentum = 0.1;
  LrSchedule schedule = LrSchedule::kCosine;
  std::vector<int> milestones;  // epoch indices, step schedule only
  double lr_factor = 0.1;
  TrainMode mode = TrainMode::kParallelMred;
  DistillVariant distill_variant = DistillVariant::kFull;
  std::uint64_t seed = 1;
  int branches = 0;         // single-resolution mode: crop branches per sample
  bool single_crop = true;  // multi-crop mode and ablations override
  // Loss masks; contractually, disabling cls+dis must leave everything but the
  // raw ensemble scores untouched by training.
  bool enable_cls = true;
  bool enable_ens = true;
  bool enable_dis = true;
  AugmentationConfig augmentation;
  Normalization normalization;
  int checkpoint_every = 0;  // epochs between checkpoints; 0 = final only
  int eval_batch = 64;

  void validate(const ResolutionProfile& profile) const;
};

struct TrainState {
  int epoch = 0;
  int step = 0;  // global optimizer step
  int total_steps = 1;
  double lr = 0.0;
  Gradients velocity;
  Gradients scratch;
};

/// lr = 0.5 * base_lr * (1 + cos(pi * step / total_steps)).
double cosine_lr(int step, int total_steps, double base_lr);

double scheduled_lr(const TrainConfig& config, int step, int total_steps, int epoch);

TrainState make_train_state(const SwitchableClassifier& model, const TrainConfig& config,
                            int steps_per_epoch);

/// Signals a non-finite loss; surfaced by the CLI as exit code 3.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One optimization step: forward every branch through its bank, assemble the
/// enabled losses, backpropagate, and apply SGD with momentum. Network
/// parameters and BN gamma/beta receive weight decay; raw ensemble scores do
/// not, and are updated only by the ensemble-loss pathway.
LossBreakdown train_step(SwitchableClassifier& model, const MultiResolutionBatch& batch,
                         const TrainConfig& config, TrainState& state);

struct EpochMetrics {
  int epoch = 0;
  int step = 0;  // global step after the epoch
  double lr = 0.0;
  LossBreakdown mean_loss;        // mean over the epoch's steps
  std::vector<double> accuracy;   // validation top-1 per profile resolution
  std::vector<double> alpha;
};

std::string metrics_csv_header(const ResolutionProfile& profile, int alpha_count);
std::string metrics_csv_row(const EpochMetrics& m);

struct TrainResult {
  std::vector<EpochMetrics> epochs;
};

/// Full training loop: deterministic shuffling and augmentation from
/// config.seed, per-epoch validation, metrics CSV (written when
/// metrics_csv_path is nonempty), checkpoints under checkpoint_dir (final one
/// as "<dir>/final", cadence ones as "<dir>/epoch<N>").
TrainResult train(SwitchableClassifier& model, const Dataset& train_set, const Dataset& val_set,
                  const TrainConfig& config, const std::string& metrics_csv_path = "",
                  const std::string& checkpoint_dir = "");

}  // namespace rsn
