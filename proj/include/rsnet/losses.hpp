#pragma once

#include <cstddef>
#include <vector>

namespace rsn {

/// Row-major double matrix for the loss computations, which run in double
/// precision regardless of the network's float parameters.
struct DMat {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  DMat() = default;
  DMat(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
};

/// Learnable ensemble scores, float like every other parameter (the loss math
/// promotes to double). alpha() is the softmax of the raw scores, so it is
/// nonnegative and sums to one by construction.
struct EnsembleWeights {
  std::vector<float> raw_scores;

  explicit EnsembleWeights(int branches = 0) : raw_scores(static_cast<std::size_t>(branches), 0.0f) {}
  std::vector<double> alpha() const;
};

/// Per-step loss values; total is always the plain sum of the three terms.
struct LossBreakdown {
  double l_cls = 0.0;
  double l_ens = 0.0;
  double l_dis = 0.0;
  double total = 0.0;
};

/// Logits per resolution (largest first), the ensemble logit and all derived
/// probabilities.
struct PredictionBundle {
  std::vector<DMat> logits;       // z_1..z_S
  DMat ensemble_logit;            // z_0
  DMat ensemble_probs;            // p_0
  std::vector<DMat> branch_probs; // p_1..p_S
};

/// Row-wise softmax, stabilized by max subtraction. Rejects non-finite input.
DMat softmax_probs(const DMat& logits);

PredictionBundle build_prediction_bundle(const EnsembleWeights& weights, const std::vector<DMat>& logits);

/// Sum over resolutions of the mean-over-batch cross entropy against integer
/// labels in [0, C).
double classification_loss(const std::vector<DMat>& logits, const std::vector<int>& labels);

/// d(cross entropy of this branch)/d(logits): (softmax(z) - onehot) / B.
DMat classification_grad(const DMat& logits, const std::vector<int>& labels);

/// Weighted logit ensemble z_0 = sum_s alpha_s z_s.
DMat ensemble_logit(const EnsembleWeights& weights, const std::vector<DMat>& logits);

/// Cross entropy of the ensemble prediction against labels. The logits are
/// treated as constants: the only gradient this loss produces is with respect
/// to the raw ensemble scores, which keeps network weights frozen under it.
struct EnsembleLossResult {
  double loss = 0.0;
  std::vector<double> raw_score_grad;
};
EnsembleLossResult ensemble_loss(const EnsembleWeights& weights, const std::vector<DMat>& logits,
                                 const std::vector<int>& labels);

/// Mean-over-batch KL divergence D(p_t || p_s); the teacher side never
/// receives gradient. Rows must be finite and normalized.
double kl_divergence(const DMat& p_teacher, const DMat& p_student);

enum class DistillVariant {
  kFull,              // dense pairs (t < s, t starting at the ensemble), scaled 2/(S+1)
  kVanilla,           // ensemble -> every branch
  kNoEnsembleTeacher, // dense pairs among branches only, scaled 2/(S-1)
  kHighestOnly,       // largest resolution -> every lower branch
};

/// Distillation loss plus its gradients with respect to the *student logits*.
/// Teachers (the ensemble prediction and, in the dense variants, every
/// higher-resolution prediction) are constants, so neither the raw ensemble
/// scores nor the teacher branches receive gradient from this term.
struct DistillationResult {
  double loss = 0.0;
  std::vector<DMat> logit_grads;  // one per branch, zero where no student role
};
DistillationResult distillation_loss_vanilla(const PredictionBundle& bundle);
DistillationResult distillation_loss_full(const PredictionBundle& bundle);
DistillationResult distillation_loss(DistillVariant variant, const PredictionBundle& bundle);

/// total = l_cls + l_ens + l_dis, no extra weighting. Rejects non-finite
/// components.
LossBreakdown total_loss(double l_cls, double l_ens, double l_dis);

}  // namespace rsn
