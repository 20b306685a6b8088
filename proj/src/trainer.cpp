#include "rsnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "rsnet/analysis.hpp"
#include "rsnet/checkpoint.hpp"
#include "rsnet/rng.hpp"

namespace rsn {

namespace {

bool mode_distills(TrainMode mode) {
  return mode == TrainMode::kParallelMred || mode == TrainMode::kMultiCrop ||
         mode == TrainMode::kSingleResolution;
}

bool mode_uses_ensemble(TrainMode mode) { return mode != TrainMode::kIndividual; }

// Branch count per step for a given mode/profile.
int branch_count(const TrainConfig& config, const ResolutionProfile& profile) {
  if (config.mode == TrainMode::kSingleResolution) return config.branches;
  return profile.size();
}

int bank_of_branch(TrainMode mode, int branch) {
  if (mode == TrainMode::kSharedBn || mode == TrainMode::kSingleResolution) return 0;
  return branch;
}

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate(const ResolutionProfile& profile) const {
  if (epochs < 1) throw std::invalid_argument("epochs must be positive");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (base_lr <= 0.0) throw std::invalid_argument("base_lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be nonnegative");
  if (bn_momentum < 0.0 || bn_momentum > 1.0)
    throw std::invalid_argument("bn_momentum must lie in [0, 1]");
  if (lr_factor <= 0.0) throw std::invalid_argument("lr_factor must be positive");
  if (schedule == LrSchedule::kStep && milestones.empty())
    throw std::invalid_argument("step schedule needs milestones");
  if (eval_batch < 1) throw std::invalid_argument("eval_batch must be positive");
  augmentation.validate();

  if (mode == TrainMode::kIndividual && profile.size() != 1)
    throw std::invalid_argument("individual mode trains one resolution (got a profile of " +
                                std::to_string(profile.size()) + ")");
  if (mode == TrainMode::kSingleResolution) {
    if (profile.size() != 1)
      throw std::invalid_argument("single-resolution mode needs a profile of exactly one entry");
    if (branches < 2)
      throw std::invalid_argument("single-resolution mode needs branches >= 2");
  } else if (branches != 0) {
    throw std::invalid_argument("branches is meaningful only in single-resolution mode");
  }
  if (!mode_distills(mode) && distill_variant != DistillVariant::kFull)
    throw std::invalid_argument("distill_variant applies only to modes with distillation");
}

double cosine_lr(int step, int total_steps, double base_lr) {
  if (step < 0 || total_steps < 1 || step > total_steps)
    throw std::invalid_argument("cosine_lr: step outside [0, total_steps]");
  return 0.5 * base_lr * (1.0 + std::cos(3.141592653589793 * static_cast<double>(step) / total_steps));
}

double scheduled_lr(const TrainConfig& config, int step, int total_steps, int epoch) {
  if (config.schedule == LrSchedule::kCosine) return cosine_lr(step, total_steps, config.base_lr);
  double lr = config.base_lr;
  for (int m : config.milestones)
    if (epoch >= m) lr *= config.lr_factor;
  return lr;
}

TrainState make_train_state(const SwitchableClassifier& model, const TrainConfig& config,
                            int steps_per_epoch) {
  TrainState state;
  state.total_steps = std::max(1, config.epochs * steps_per_epoch);
  state.lr = config.base_lr;
  state.velocity = make_zero_gradients(model);
  state.scratch = make_zero_gradients(model);
  return state;
}

namespace {

void axpy_decay(std::vector<float>& vel, const std::vector<float>& grad, std::vector<float>& param,
                double mu, double wd, double lr) {
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double v = mu * vel[i] + grad[i] + wd * param[i];
    vel[i] = static_cast<float>(v);
    param[i] = static_cast<float>(param[i] - lr * v);
  }
}

/// `bank_active` marks the banks forwarded through this step; banks outside
/// the step's graph (shared-bn and single-resolution route everything through
/// bank 0) receive neither gradient nor weight decay. With `network_frozen`
/// (ensemble-only phase) the update reaches the raw scores alone.
void apply_sgd(SwitchableClassifier& model, const Gradients& grads, Gradients& velocity,
               double lr, const TrainConfig& config, const std::vector<char>& bank_active,
               bool network_frozen) {
  const double mu = config.momentum, wd = config.weight_decay;
  if (!network_frozen) {
    for (std::size_t i = 0; i < model.conv_weights.size(); ++i)
      axpy_decay(velocity.conv[i].data, grads.conv[i].data, model.conv_weights[i].data, mu, wd, lr);
    axpy_decay(velocity.fc_weight.data, grads.fc_weight.data, model.fc_weight.data, mu, wd, lr);
    axpy_decay(velocity.fc_bias.data, grads.fc_bias.data, model.fc_bias.data, mu, wd, lr);
    for (std::size_t b = 0; b < model.banks.size(); ++b) {
      if (!bank_active[b]) continue;
      for (std::size_t l = 0; l < model.banks[b].layers.size(); ++l) {
        axpy_decay(velocity.banks[b][l].gamma, grads.banks[b][l].gamma,
                   model.banks[b].layers[l].gamma, mu, wd, lr);
        axpy_decay(velocity.banks[b][l].beta, grads.banks[b][l].beta,
                   model.banks[b].layers[l].beta, mu, wd, lr);
      }
    }
  }
  // Raw ensemble scores: momentum SGD, no weight decay.
  for (std::size_t i = 0; i < model.ensemble.raw_scores.size(); ++i) {
    const double v = mu * velocity.raw_scores[i] + grads.raw_scores[i];
    velocity.raw_scores[i] = v;
    model.ensemble.raw_scores[i] =
        static_cast<float>(model.ensemble.raw_scores[i] - lr * v);
  }
}

}  // namespace

LossBreakdown train_step(SwitchableClassifier& model, const MultiResolutionBatch& batch,
                         const TrainConfig& config, TrainState& state) {
  const int branches = branch_count(config, model.profile);
  if (static_cast<int>(batch.inputs.size()) != branches)
    throw std::invalid_argument("batch carries " + std::to_string(batch.inputs.size()) +
                                " branches, mode expects " + std::to_string(branches));
  if (config.mode == TrainMode::kSingleResolution &&
      static_cast<int>(model.ensemble.raw_scores.size()) != branches)
    throw std::invalid_argument("ensemble weights not sized for branch ensembling");

  state.lr = scheduled_lr(config, state.step, state.total_steps, state.epoch);

  // Ensemble-only phase: with cls and dis both masked, the raw scores are the
  // sole gradient target, so the network (weights, BN parameters, running
  // statistics) must come through the step untouched.
  const bool network_frozen = !config.enable_cls && !config.enable_dis;

  // Forward every branch in train mode through its bank.
  std::vector<BranchCache> caches(static_cast<std::size_t>(branches));
  std::vector<DMat> logits;
  logits.reserve(static_cast<std::size_t>(branches));
  std::vector<char> bank_active(model.banks.size(), 0);
  for (int s = 0; s < branches; ++s) {
    const bool enforce = config.mode != TrainMode::kSharedBn;
    bank_active[static_cast<std::size_t>(bank_of_branch(config.mode, s))] = 1;
    logits.push_back(forward_train(model, batch.inputs[static_cast<std::size_t>(s)],
                                   bank_of_branch(config.mode, s),
                                   network_frozen ? 0.0 : config.bn_momentum,
                                   caches[static_cast<std::size_t>(s)], enforce));
    for (double v : logits.back().v)
      if (!std::isfinite(v))
        throw DivergenceError("non-finite logits at step " + std::to_string(state.step) +
                              ", branch " + std::to_string(s));
  }

  Gradients& grads = state.scratch;
  grads.zero();
  std::vector<DMat> dlogits;
  for (const DMat& z : logits) dlogits.emplace_back(z.rows, z.cols);

  double l_cls = 0.0, l_ens = 0.0, l_dis = 0.0;
  bool logits_have_grad = false;

  if (config.enable_cls) {
    l_cls = classification_loss(logits, batch.labels);
    for (int s = 0; s < branches; ++s) {
      const DMat g = classification_grad(logits[static_cast<std::size_t>(s)], batch.labels);
      DMat& d = dlogits[static_cast<std::size_t>(s)];
      for (std::size_t i = 0; i < d.v.size(); ++i) d.v[i] += g.v[i];
    }
    logits_have_grad = true;
  }
  if (config.enable_ens && mode_uses_ensemble(config.mode)) {
    const EnsembleLossResult ens = ensemble_loss(model.ensemble, logits, batch.labels);
    l_ens = ens.loss;
    for (std::size_t i = 0; i < ens.raw_score_grad.size(); ++i)
      grads.raw_scores[i] += ens.raw_score_grad[i];
  }
  if (config.enable_dis && mode_distills(config.mode)) {
    const PredictionBundle bundle = build_prediction_bundle(model.ensemble, logits);
    const DistillationResult dis = distillation_loss(config.distill_variant, bundle);
    l_dis = dis.loss;
    for (int s = 0; s < branches; ++s) {
      DMat& d = dlogits[static_cast<std::size_t>(s)];
      const DMat& g = dis.logit_grads[static_cast<std::size_t>(s)];
      for (std::size_t i = 0; i < d.v.size(); ++i) d.v[i] += g.v[i];
    }
    logits_have_grad = true;
  }

  if (!std::isfinite(l_cls) || !std::isfinite(l_ens) || !std::isfinite(l_dis))
    throw DivergenceError("non-finite loss at step " + std::to_string(state.step) + " (l_cls=" +
                          fmt(l_cls) + ", l_ens=" + fmt(l_ens) + ", l_dis=" + fmt(l_dis) + ")");

  if (logits_have_grad)
    for (int s = 0; s < branches; ++s)
      backward(model, caches[static_cast<std::size_t>(s)], dlogits[static_cast<std::size_t>(s)], grads);

  apply_sgd(model, grads, state.velocity, state.lr, config, bank_active, network_frozen);
  ++state.step;
  return total_loss(l_cls, l_ens, l_dis);
}

std::string metrics_csv_header(const ResolutionProfile& profile, int alpha_count) {
  std::string out = "# columns: epoch,step,lr,l_cls,l_ens,l_dis,total";
  std::string head = "epoch,step,lr,l_cls,l_ens,l_dis,total";
  for (int i = 0; i < profile.size(); ++i) {
    out += ",acc@" + std::to_string(profile.at(i));
    head += ",acc@" + std::to_string(profile.at(i));
  }
  for (int i = 0; i < alpha_count; ++i) {
    out += ",alpha" + std::to_string(i + 1);
    head += ",alpha" + std::to_string(i + 1);
  }
  return out + "\n" + head + "\n";
}

std::string metrics_csv_row(const EpochMetrics& m) {
  std::string out = std::to_string(m.epoch) + "," + std::to_string(m.step) + "," + fmt(m.lr);
  out += "," + fmt(m.mean_loss.l_cls) + "," + fmt(m.mean_loss.l_ens) + "," + fmt(m.mean_loss.l_dis) +
         "," + fmt(m.mean_loss.total);
  for (double a : m.accuracy) out += "," + fmt(a);
  for (double a : m.alpha) out += "," + fmt(a);
  return out + "\n";
}

TrainResult train(SwitchableClassifier& model, const Dataset& train_set, const Dataset& val_set,
                  const TrainConfig& config, const std::string& metrics_csv_path,
                  const std::string& checkpoint_dir) {
  config.validate(model.profile);
  if (train_set.size() < 1) throw std::invalid_argument("empty training set");
  if (val_set.size() < 1) throw std::invalid_argument("empty validation set");

  const int branches = branch_count(config, model.profile);
  if (config.mode == TrainMode::kSingleResolution &&
      static_cast<int>(model.ensemble.raw_scores.size()) != branches)
    model.ensemble = EnsembleWeights(branches);

  const int steps_per_epoch = std::max(1, train_set.size() / config.batch_size);
  TrainState state = make_train_state(model, config, steps_per_epoch);

  std::ofstream metrics;
  if (!metrics_csv_path.empty()) {
    metrics.open(metrics_csv_path, std::ios::trunc);
    if (!metrics) throw std::runtime_error("cannot write metrics CSV '" + metrics_csv_path + "'");
    metrics << metrics_csv_header(model.profile, static_cast<int>(model.ensemble.raw_scores.size()));
  }
  if (!checkpoint_dir.empty()) std::filesystem::create_directories(checkpoint_dir);

  const bool single_crop = config.mode == TrainMode::kMultiCrop ? false : config.single_crop;
  TrainResult result;
  std::vector<int> order(static_cast<std::size_t>(train_set.size()));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    state.epoch = epoch;
    // Deterministic shuffle.
    Rng shuffle_rng(Rng::mix(config.seed, static_cast<std::uint64_t>(epoch), 0xbeefu));
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(shuffle_rng.uniform_int(static_cast<int>(i + 1)));
      std::swap(order[i], order[j]);
    }

    LossBreakdown epoch_sum;
    const int take = std::min(train_set.size(), config.batch_size);
    for (int b = 0; b < steps_per_epoch; ++b) {
      std::vector<int> indices(order.begin() + static_cast<std::ptrdiff_t>(b) * take,
                               order.begin() + static_cast<std::ptrdiff_t>(b) * take + take);
      const MultiResolutionBatch batch =
          make_train_batch(train_set, indices, model.profile.resolutions, config.augmentation,
                           config.normalization, config.seed, epoch, single_crop, config.branches);
      const LossBreakdown loss = train_step(model, batch, config, state);
      epoch_sum.l_cls += loss.l_cls;
      epoch_sum.l_ens += loss.l_ens;
      epoch_sum.l_dis += loss.l_dis;
      epoch_sum.total += loss.total;
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.step = state.step;
    em.lr = state.lr;
    em.mean_loss = {epoch_sum.l_cls / steps_per_epoch, epoch_sum.l_ens / steps_per_epoch,
                    epoch_sum.l_dis / steps_per_epoch, epoch_sum.total / steps_per_epoch};
    const bool bank0_eval =
        config.mode == TrainMode::kSharedBn || config.mode == TrainMode::kSingleResolution;
    for (int i = 0; i < model.profile.size(); ++i) {
      const BatchNormBank* override_bank = bank0_eval ? &model.banks[0] : nullptr;
      em.accuracy.push_back(evaluate(model, val_set, model.profile.at(i), config.normalization,
                                     override_bank, config.eval_batch)
                                .top1);
    }
    em.alpha = model.ensemble.alpha();
    if (metrics.is_open()) {
      metrics << metrics_csv_row(em);
      metrics.flush();
    }
    result.epochs.push_back(std::move(em));

    if (!checkpoint_dir.empty() && config.checkpoint_every > 0 &&
        (epoch + 1) % config.checkpoint_every == 0 && epoch + 1 < config.epochs)
      save_checkpoint(model, checkpoint_dir + "/epoch" + std::to_string(epoch + 1));
  }

  if (!checkpoint_dir.empty()) save_checkpoint(model, checkpoint_dir + "/final");
  return result;
}

}  // namespace rsn
