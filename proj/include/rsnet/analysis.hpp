#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rsnet/data.hpp"
#include "rsnet/network.hpp"

namespace rsn {

struct EvalResult {
  double top1 = 0.0;  // percent
  double top5 = 0.0;  // percent
  std::vector<int> predictions;  // argmax class per sample, dataset order
};

/// Top-1/top-5 accuracy at resolution r over eval_preprocess'd images. Uses
/// the bank trained for r, the interpolated bank for an unseen r inside the
/// profile range (out-of-range throws), or `bank_override` when given (the
/// shared-BN ablation evaluates every resolution through bank 0).
EvalResult evaluate(const SwitchableClassifier& model, const Dataset& eval_set, int resolution,
                    const Normalization& norm, const BatchNormBank* bank_override = nullptr,
                    int batch_size = 64);

/// Entry (i, j): percentage of samples classified wrongly at resolution i but
/// correctly at resolution j. Diagonal entries carry -1 and render blank.
struct DisagreementMatrix {
  std::vector<int> resolutions;
  std::vector<double> entries;  // S x S, row-major

  double at(int i, int j) const {
    return entries[static_cast<std::size_t>(i) * resolutions.size() + static_cast<std::size_t>(j)];
  }
};
DisagreementMatrix disagreement_matrix(const std::vector<std::vector<int>>& predictions,
                                       const std::vector<int>& labels,
                                       const std::vector<int>& resolutions);
std::string disagreement_csv(const DisagreementMatrix& m);

/// Empirical CDF of GAP output components under train-style (random resized
/// crop) or test-style (resize + center crop) preprocessing.
struct ActivationCdf {
  std::string tag;  // "train" or "test"
  std::vector<float> values;       // ascending
  std::vector<double> cumulative;  // (i+1)/n per value
};
ActivationCdf gap_activation_cdf(const SwitchableClassifier& model, const Dataset& images,
                                 int resolution_index, const std::string& tag,
                                 const AugmentationConfig& aug, const Normalization& norm,
                                 std::uint64_t seed, int max_images = 0,
                                 std::size_t max_components = 1000000);
std::string activation_cdf_csv(const ActivationCdf& cdf);

struct BnSummaryRow {
  std::string layer;
  int resolution = 0;
  double mean_gamma = 0.0, mean_beta = 0.0, mean_mu = 0.0, mean_sigma = 0.0;
};
std::vector<BnSummaryRow> bn_summary(const SwitchableClassifier& model);
std::string bn_summary_csv(const std::vector<BnSummaryRow>& rows);

struct AlphaReport {
  std::vector<int> resolutions;  // largest first
  std::vector<double> alpha;
};
AlphaReport report_alpha(const SwitchableClassifier& model);
std::string alpha_csv(const AlphaReport& report);

std::string madds_csv(const MAddsReport& report);

}  // namespace rsn
