#include "rsnet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace rsn {

namespace {

constexpr double kProbFloor = 1e-12;

void check_finite(const DMat& m, const char* what) {
  for (double x : m.v) {
    if (!std::isfinite(x)) throw std::invalid_argument(std::string(what) + ": non-finite value");
  }
}

void check_labels(const DMat& logits, const std::vector<int>& labels) {
  if (static_cast<int>(labels.size()) != logits.rows)
    throw std::invalid_argument("labels/batch size mismatch");
  for (int y : labels) {
    if (y < 0 || y >= logits.cols) throw std::invalid_argument("label out of range");
  }
}

void check_same_shape(const std::vector<DMat>& logits) {
  if (logits.empty()) throw std::invalid_argument("no logits given");
  for (const DMat& m : logits) {
    if (m.rows != logits[0].rows || m.cols != logits[0].cols)
      throw std::invalid_argument("logit shapes differ across branches");
    if (m.rows <= 0 || m.cols <= 0) throw std::invalid_argument("empty logit matrix");
  }
}

}  // namespace

std::vector<double> EnsembleWeights::alpha() const {
  if (raw_scores.empty()) throw std::logic_error("ensemble weights are empty");
  const double mx = *std::max_element(raw_scores.begin(), raw_scores.end());
  std::vector<double> a(raw_scores.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < raw_scores.size(); ++i) {
    a[i] = std::exp(static_cast<double>(raw_scores[i]) - mx);
    sum += a[i];
  }
  for (double& x : a) x /= sum;
  return a;
}

DMat softmax_probs(const DMat& logits) {
  check_finite(logits, "softmax input");
  DMat p(logits.rows, logits.cols);
  for (int r = 0; r < logits.rows; ++r) {
    double mx = logits.at(r, 0);
    for (int c = 1; c < logits.cols; ++c) mx = std::max(mx, logits.at(r, c));
    double sum = 0.0;
    for (int c = 0; c < logits.cols; ++c) {
      double e = std::exp(logits.at(r, c) - mx);
      p.at(r, c) = e;
      sum += e;
    }
    for (int c = 0; c < logits.cols; ++c) p.at(r, c) /= sum;
  }
  return p;
}

PredictionBundle build_prediction_bundle(const EnsembleWeights& weights, const std::vector<DMat>& logits) {
  check_same_shape(logits);
  if (weights.raw_scores.size() != logits.size())
    throw std::invalid_argument("ensemble weight count does not match branch count");
  PredictionBundle b;
  b.logits = logits;
  b.ensemble_logit = ensemble_logit(weights, logits);
  b.ensemble_probs = softmax_probs(b.ensemble_logit);
  b.branch_probs.reserve(logits.size());
  for (const DMat& z : logits) b.branch_probs.push_back(softmax_probs(z));
  return b;
}

double classification_loss(const std::vector<DMat>& logits, const std::vector<int>& labels) {
  check_same_shape(logits);
  double total = 0.0;
  for (const DMat& z : logits) {
    check_labels(z, labels);
    DMat p = softmax_probs(z);
    double branch = 0.0;
    for (int r = 0; r < p.rows; ++r)
      branch -= std::log(std::max(p.at(r, labels[static_cast<std::size_t>(r)]), kProbFloor));
    total += branch / p.rows;
  }
  return total;
}

DMat classification_grad(const DMat& logits, const std::vector<int>& labels) {
  check_labels(logits, labels);
  DMat g = softmax_probs(logits);
  const double inv_b = 1.0 / g.rows;
  for (int r = 0; r < g.rows; ++r) {
    g.at(r, labels[static_cast<std::size_t>(r)]) -= 1.0;
    for (int c = 0; c < g.cols; ++c) g.at(r, c) *= inv_b;
  }
  return g;
}

DMat ensemble_logit(const EnsembleWeights& weights, const std::vector<DMat>& logits) {
  check_same_shape(logits);
  if (weights.raw_scores.size() != logits.size())
    throw std::invalid_argument("ensemble weight count does not match branch count");
  std::vector<double> a = weights.alpha();
  DMat z0(logits[0].rows, logits[0].cols);
  for (std::size_t s = 0; s < logits.size(); ++s)
    for (std::size_t i = 0; i < z0.v.size(); ++i) z0.v[i] += a[s] * logits[s].v[i];
  return z0;
}

EnsembleLossResult ensemble_loss(const EnsembleWeights& weights, const std::vector<DMat>& logits,
                                 const std::vector<int>& labels) {
  check_same_shape(logits);
  check_labels(logits[0], labels);
  std::vector<double> a = weights.alpha();
  DMat z0 = ensemble_logit(weights, logits);
  DMat p0 = softmax_probs(z0);

  EnsembleLossResult out;
  for (int r = 0; r < p0.rows; ++r)
    out.loss -= std::log(std::max(p0.at(r, labels[static_cast<std::size_t>(r)]), kProbFloor));
  out.loss /= p0.rows;

  // dL/dz0 = (p0 - onehot)/B, then chain through z0 = sum_s alpha_s z_s and
  // alpha = softmax(raw). The logits themselves are treated as constants.
  DMat dz0 = p0;
  const double inv_b = 1.0 / p0.rows;
  for (int r = 0; r < dz0.rows; ++r) {
    dz0.at(r, labels[static_cast<std::size_t>(r)]) -= 1.0;
    for (int c = 0; c < dz0.cols; ++c) dz0.at(r, c) *= inv_b;
  }
  std::vector<double> dalpha(logits.size(), 0.0);
  for (std::size_t s = 0; s < logits.size(); ++s)
    for (std::size_t i = 0; i < dz0.v.size(); ++i) dalpha[s] += dz0.v[i] * logits[s].v[i];
  double dot = 0.0;
  for (std::size_t s = 0; s < a.size(); ++s) dot += a[s] * dalpha[s];
  out.raw_score_grad.resize(a.size());
  for (std::size_t s = 0; s < a.size(); ++s) out.raw_score_grad[s] = a[s] * (dalpha[s] - dot);
  return out;
}

double kl_divergence(const DMat& p_teacher, const DMat& p_student) {
  if (p_teacher.rows != p_student.rows || p_teacher.cols != p_student.cols)
    throw std::invalid_argument("KL operands differ in shape");
  check_finite(p_teacher, "KL teacher");
  check_finite(p_student, "KL student");
  double total = 0.0;
  for (int r = 0; r < p_teacher.rows; ++r) {
    double row_t = 0.0, row_s = 0.0;
    for (int c = 0; c < p_teacher.cols; ++c) {
      row_t += p_teacher.at(r, c);
      row_s += p_student.at(r, c);
      if (p_teacher.at(r, c) < 0.0 || p_student.at(r, c) < 0.0)
        throw std::invalid_argument("KL operand has a negative entry");
    }
    if (std::abs(row_t - 1.0) > 1e-6 || std::abs(row_s - 1.0) > 1e-6)
      throw std::invalid_argument("KL operand row is not normalized");
    for (int c = 0; c < p_teacher.cols; ++c) {
      double t = p_teacher.at(r, c);
      if (t <= 0.0) continue;
      double s = std::max(p_student.at(r, c), kProbFloor);
      total += t * std::log(t / s);
    }
  }
  return total / p_teacher.rows;
}

namespace {

// Accumulates, into `result`, one teacher->student KL pair with weight
// `scale`. Gradient flows only into the student logits: scale*(p_s - p_t)/B.
void add_pair(DistillationResult& result, const DMat& p_teacher, const DMat& p_student,
              int student_index, double scale) {
  result.loss += scale * kl_divergence(p_teacher, p_student);
  DMat& g = result.logit_grads[static_cast<std::size_t>(student_index)];
  const double w = scale / p_student.rows;
  for (std::size_t i = 0; i < g.v.size(); ++i)
    g.v[i] += w * (p_student.v[i] - p_teacher.v[i]);
}

DistillationResult make_empty_result(const PredictionBundle& bundle) {
  DistillationResult r;
  r.logit_grads.reserve(bundle.logits.size());
  for (const DMat& z : bundle.logits) r.logit_grads.emplace_back(z.rows, z.cols);
  return r;
}

}  // namespace

DistillationResult distillation_loss_vanilla(const PredictionBundle& bundle) {
  DistillationResult r = make_empty_result(bundle);
  for (std::size_t s = 0; s < bundle.branch_probs.size(); ++s)
    add_pair(r, bundle.ensemble_probs, bundle.branch_probs[s], static_cast<int>(s), 1.0);
  return r;
}

DistillationResult distillation_loss_full(const PredictionBundle& bundle) {
  const int s_count = static_cast<int>(bundle.branch_probs.size());
  DistillationResult r = make_empty_result(bundle);
  if (s_count < 1) return r;
  const double scale = 2.0 / (s_count + 1);
  // Teacher index 0 is the ensemble; indices 1..S are branches ordered from
  // the largest resolution down. Every prediction teaches all weaker ones.
  for (int t = 0; t <= s_count - 1; ++t) {
    const DMat& p_t = (t == 0) ? bundle.ensemble_probs : bundle.branch_probs[static_cast<std::size_t>(t - 1)];
    for (int s = t + 1; s <= s_count; ++s)
      add_pair(r, p_t, bundle.branch_probs[static_cast<std::size_t>(s - 1)], s - 1, scale);
  }
  return r;
}

DistillationResult distillation_loss(DistillVariant variant, const PredictionBundle& bundle) {
  const int s_count = static_cast<int>(bundle.branch_probs.size());
  switch (variant) {
    case DistillVariant::kFull:
      return distillation_loss_full(bundle);
    case DistillVariant::kVanilla:
      return distillation_loss_vanilla(bundle);
    case DistillVariant::kNoEnsembleTeacher: {
      DistillationResult r = make_empty_result(bundle);
      if (s_count < 2) return r;
      const double scale = 2.0 / (s_count - 1);
      for (int t = 1; t <= s_count - 1; ++t)
        for (int s = t + 1; s <= s_count; ++s)
          add_pair(r, bundle.branch_probs[static_cast<std::size_t>(t - 1)],
                   bundle.branch_probs[static_cast<std::size_t>(s - 1)], s - 1, scale);
      return r;
    }
    case DistillVariant::kHighestOnly: {
      DistillationResult r = make_empty_result(bundle);
      for (int s = 2; s <= s_count; ++s)
        add_pair(r, bundle.branch_probs[0], bundle.branch_probs[static_cast<std::size_t>(s - 1)], s - 1, 1.0);
      return r;
    }
  }
  throw std::logic_error("unknown distillation variant");
}

LossBreakdown total_loss(double l_cls, double l_ens, double l_dis) {
  if (!std::isfinite(l_cls) || !std::isfinite(l_ens) || !std::isfinite(l_dis))
    throw std::invalid_argument("non-finite loss component");
  LossBreakdown b;
  b.l_cls = l_cls;
  b.l_ens = l_ens;
  b.l_dis = l_dis;
  b.total = l_cls + l_ens + l_dis;
  return b;
}

}  // namespace rsn
