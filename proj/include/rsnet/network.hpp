#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rsnet/arch.hpp"
#include "rsnet/losses.hpp"
#include "rsnet/tensor.hpp"

namespace rsn {

/// Square input side lengths, largest first. Index 0 is the largest
/// resolution throughout the code base.
struct ResolutionProfile {
  std::vector<int> resolutions;

  /// Sorts descending and validates: nonempty, positive, distinct.
  static ResolutionProfile make(std::vector<int> rs);

  int size() const { return static_cast<int>(resolutions.size()); }
  int at(int i) const { return resolutions.at(static_cast<std::size_t>(i)); }
  int index_of(int r) const;
  int min() const { return resolutions.back(); }
  int max() const { return resolutions.front(); }
};

/// One BN layer's parameters and running statistics, one value per channel.
struct BnLayerParams {
  std::vector<float> gamma, beta, running_mean, running_var;

  BnLayerParams() = default;
  explicit BnLayerParams(int channels)
      : gamma(static_cast<std::size_t>(channels), 1.0f),
        beta(static_cast<std::size_t>(channels), 0.0f),
        running_mean(static_cast<std::size_t>(channels), 0.0f),
        running_var(static_cast<std::size_t>(channels), 1.0f) {}

  int channels() const { return static_cast<int>(gamma.size()); }
};

/// A complete set of BN layers bound to one resolution. Layer order mirrors
/// ArchDescriptor::conv_layers(), so the layout is identical across banks.
struct BatchNormBank {
  int bound_resolution = 0;
  float epsilon = 1e-5f;
  std::vector<BnLayerParams> layers;
};

/// The resolution-switchable classifier: shared conv/FC weights, one private
/// BN bank per training resolution, and the learnable ensemble scores. The
/// active resolution is always an explicit argument of forward calls; the
/// model holds no mutable "current resolution".
struct SwitchableClassifier {
  ArchDescriptor arch;
  std::vector<ConvSpec> conv_specs;  // arch.conv_layers(), cached
  int num_classes = 0;
  ResolutionProfile profile;

  std::vector<Tensor> conv_weights;  // (out_c, in_c, k, k) per conv spec
  Tensor fc_weight;                  // (num_classes, feature_channels)
  Tensor fc_bias;                    // (num_classes)
  std::vector<BatchNormBank> banks;  // one per profile entry, same order
  EnsembleWeights ensemble;          // raw scores, profile order
};

/// Builds a freshly initialized model: convolutions fan-out-scaled normal
/// (std = sqrt(2 / (k*k*out_c))), FC normal(0, 0.01) with zero bias, banks at
/// gamma=1 beta=0 mean=0 var=1, raw ensemble scores zero (uniform alpha).
/// Throws on unknown arch, invalid profile, or a resolution whose final
/// feature map underflows 1x1.
SwitchableClassifier build_model(const std::string& arch_id, const ResolutionProfile& profile,
                                 int num_classes, std::uint64_t seed);

/// Trainable parameter census. `shared` covers conv + FC, `banks` the
/// gamma/beta of every bank (running statistics are buffers, not parameters),
/// `ensemble` the raw scores.
struct ParameterCount {
  std::uint64_t shared = 0;
  std::uint64_t banks = 0;
  std::uint64_t ensemble = 0;
  std::uint64_t total() const { return shared + banks + ensemble; }
};
ParameterCount parameter_count(const SwitchableClassifier& model);

/// Batch normalization over an NCHW tensor with explicit parameters. In train
/// mode normalizes with batch statistics (biased variance) and folds them
/// into the running values with momentum m: new = (1-m)*old + m*batch, the
/// running variance receiving the unbiased estimate.
Tensor batchnorm_apply(const Tensor& x, BnLayerParams& params, float epsilon, bool training,
                       double momentum);

/// Per-layer cache of a train-mode batch-norm application.
struct BnTrainCache {
  std::vector<float> invstd;
  Tensor xhat;
};

struct BlockCache {
  BnTrainCache bn1;
  Tensor relu1;
  BnTrainCache bn2;
  BnTrainCache bn_down;  // unused when the block has no projection
  Tensor out;
};

/// Everything the backward pass needs from one train-mode branch forward.
struct BranchCache {
  int bank_index = -1;
  Tensor input;
  BnTrainCache stem_bn;
  Tensor stem_relu;
  std::vector<std::int64_t> pool_argmax;  // flat indices into stem_relu; empty without pool
  Tensor trunk;                           // first block input (post-pool)
  std::vector<BlockCache> blocks;
  Tensor gap;  // (N, feature_channels)
};

/// Train-mode forward through bank `bank_index`: updates that bank's running
/// statistics (momentum `bn_momentum`) and leaves every other bank untouched.
/// By default the input side must equal profile[bank_index]; the shared-BN
/// ablation routes all resolutions through one bank and disables the check.
DMat forward_train(SwitchableClassifier& model, const Tensor& input, int bank_index,
                   double bn_momentum, BranchCache& cache, bool enforce_resolution = true);

/// Eval-mode forward with an explicit bank (a model bank or an interpolated
/// one). Pure: the model is untouched. Optionally copies the GAP features
/// (batch x channels) out for activation analysis.
DMat forward_eval(const SwitchableClassifier& model, const Tensor& input, const BatchNormBank& bank,
                  Tensor* gap_out = nullptr, bool enforce_resolution = true);

/// Parameter gradients, laid out like the model. BN gradients exist per bank
/// because each branch trains its own bank.
struct BnGrad {
  std::vector<float> gamma, beta;
};
struct Gradients {
  std::vector<Tensor> conv;
  Tensor fc_weight, fc_bias;
  std::vector<std::vector<BnGrad>> banks;  // [bank][layer]
  std::vector<double> raw_scores;

  void zero();
};
Gradients make_zero_gradients(const SwitchableClassifier& model);

/// Accumulates d(loss)/d(parameters) into `grads` given d(loss)/d(logits)
/// for the branch recorded in `cache`. Shared-weight gradients sum across
/// branches; BN gradients land in the cache's bank slot.
void backward(const SwitchableClassifier& model, const BranchCache& cache, const DMat& dlogits,
              Gradients& grads);

/// Bank for an arbitrary resolution inside the profile range: exact bank for
/// a training resolution, otherwise the linear interpolation of the two
/// neighbors with lambda = (r_hi - r)/(r_hi - r_lo) weighting the lower one.
/// Applies uniformly to gamma, beta, running mean and running variance.
/// Throws std::out_of_range outside [min(profile), max(profile)].
BatchNormBank interpolate_bn_bank(const SwitchableClassifier& model, int r);

}  // namespace rsn
