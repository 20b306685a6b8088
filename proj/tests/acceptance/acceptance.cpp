// Acceptance gate: every runtime contract of the toolkit checked end to end,
// one PASS/FAIL line per criterion. Exits nonzero if any criterion fails.
//
// The oracles here are deliberately independent scalar re-implementations of
// the contracted formulas; they share no helpers with the library.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "rsnet/analysis.hpp"
#include "rsnet/checkpoint.hpp"
#include "rsnet/data.hpp"
#include "rsnet/losses.hpp"
#include "rsnet/network.hpp"
#include "rsnet/rng.hpp"
#include "rsnet/trainer.hpp"

namespace {

using namespace rsn;
namespace fs = std::filesystem;

struct Outcome {
  bool ok = false;
  std::string detail;
};

struct Check {
  bool ok = true;
  std::ostringstream detail;

  void require(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      if (detail.tellp() > 0) detail << "; ";
      detail << what;
    }
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

bool bits_equal(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() &&
         (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

bool banks_bits_equal(const BatchNormBank& a, const BatchNormBank& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    if (!bits_equal(a.layers[l].gamma, b.layers[l].gamma) ||
        !bits_equal(a.layers[l].beta, b.layers[l].beta) ||
        !bits_equal(a.layers[l].running_mean, b.layers[l].running_mean) ||
        !bits_equal(a.layers[l].running_var, b.layers[l].running_var))
      return false;
  }
  return true;
}

bool models_bits_equal(const SwitchableClassifier& a, const SwitchableClassifier& b) {
  if (a.conv_weights.size() != b.conv_weights.size() || a.banks.size() != b.banks.size())
    return false;
  for (std::size_t i = 0; i < a.conv_weights.size(); ++i)
    if (!bits_equal(a.conv_weights[i].data, b.conv_weights[i].data)) return false;
  if (!bits_equal(a.fc_weight.data, b.fc_weight.data)) return false;
  if (!bits_equal(a.fc_bias.data, b.fc_bias.data)) return false;
  for (std::size_t i = 0; i < a.banks.size(); ++i)
    if (!banks_bits_equal(a.banks[i], b.banks[i])) return false;
  return bits_equal(a.ensemble.raw_scores, b.ensemble.raw_scores);
}

double rel_err(double got, double want) {
  return std::fabs(got - want) / std::max(1.0, std::fabs(want));
}

void randomize_bank(BatchNormBank& bank, Rng& rng) {
  for (BnLayerParams& l : bank.layers) {
    for (float& v : l.gamma) v = static_cast<float>(rng.uniform(0.5, 1.5));
    for (float& v : l.beta) v = static_cast<float>(rng.uniform(-0.5, 0.5));
    for (float& v : l.running_mean) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    for (float& v : l.running_var) v = static_cast<float>(rng.uniform(0.25, 2.0));
  }
}

fs::path work_dir() {
  fs::path p = fs::temp_directory_path() / "rsnet_acceptance";
  fs::create_directories(p);
  return p;
}

// --- scalar reference math ---------------------------------------------------

std::vector<double> ref_softmax_row(const std::vector<double>& z) {
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  std::vector<double> p(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - mx);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

DMat ref_softmax(const DMat& z) {
  DMat p(z.rows, z.cols);
  for (int r = 0; r < z.rows; ++r) {
    std::vector<double> row(static_cast<std::size_t>(z.cols));
    for (int c = 0; c < z.cols; ++c) row[static_cast<std::size_t>(c)] = z.at(r, c);
    std::vector<double> pr = ref_softmax_row(row);
    for (int c = 0; c < z.cols; ++c) p.at(r, c) = pr[static_cast<std::size_t>(c)];
  }
  return p;
}

double ref_cross_entropy(const DMat& logits, const std::vector<int>& labels) {
  DMat p = ref_softmax(logits);
  double total = 0.0;
  for (int r = 0; r < logits.rows; ++r) {
    double q = p.at(r, labels[static_cast<std::size_t>(r)]);
    if (q < 1e-12) q = 1e-12;
    total += -std::log(q);
  }
  return total / logits.rows;
}

double ref_kl(const DMat& pt, const DMat& ps) {
  double total = 0.0;
  for (int r = 0; r < pt.rows; ++r)
    for (int c = 0; c < pt.cols; ++c) {
      double t = pt.at(r, c);
      if (t <= 0.0) continue;
      double s = ps.at(r, c);
      if (s < 1e-12) s = 1e-12;
      total += t * std::log(t / s);
    }
  return total / pt.rows;
}

DMat random_logits(Rng& rng, int rows, int cols, double scale) {
  DMat z(rows, cols);
  for (double& v : z.v) v = scale * rng.normal();
  return z;
}

std::vector<int> random_labels(Rng& rng, int rows, int cols) {
  std::vector<int> y(static_cast<std::size_t>(rows));
  for (int& v : y) v = rng.uniform_int(cols);
  return y;
}

// -----------------------------------------------------------------------------
// 1. Gradient isolation: with the classification and distillation losses
//    masked, ten optimization steps may touch nothing but the raw scores.
//    Weight decay and BN momentum stay at their defaults on purpose.

Outcome criterion_gradient_isolation() {
  const auto t0 = std::chrono::steady_clock::now();
  ResolutionProfile profile = ResolutionProfile::make({32, 24, 16});
  SwitchableClassifier model = build_model("tinyresnet-w8", profile, 10, 42);
  SyntheticTextureDataset ds(80, 10, 64, 7);

  TrainConfig cfg;
  cfg.mode = TrainMode::kParallelMred;
  cfg.enable_cls = false;
  cfg.enable_dis = false;
  cfg.batch_size = 8;
  cfg.epochs = 1;

  const SwitchableClassifier before = model;
  TrainState state = make_train_state(model, cfg, 10);
  for (int step = 0; step < 10; ++step) {
    std::vector<int> indices;
    for (int i = 0; i < 8; ++i) indices.push_back(step * 8 + i);
    MultiResolutionBatch batch =
        make_train_batch(ds, indices, profile.resolutions, cfg.augmentation, cfg.normalization,
                         cfg.seed, 0, true);
    LossBreakdown loss = train_step(model, batch, cfg, state);
    if (loss.l_cls != 0.0 || loss.l_dis != 0.0)
      return {false, "masked losses reported nonzero"};
  }

  Check c;
  for (std::size_t i = 0; i < model.conv_weights.size(); ++i)
    c.require(bits_equal(model.conv_weights[i].data, before.conv_weights[i].data),
              "conv weights moved");
  c.require(bits_equal(model.fc_weight.data, before.fc_weight.data), "fc weight moved");
  c.require(bits_equal(model.fc_bias.data, before.fc_bias.data), "fc bias moved");
  for (std::size_t b = 0; b < model.banks.size(); ++b)
    c.require(banks_bits_equal(model.banks[b], before.banks[b]),
              "bank " + std::to_string(b) + " moved");
  c.require(!bits_equal(model.ensemble.raw_scores, before.ensemble.raw_scores),
            "raw scores did not move");

  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  c.require(secs < 60.0, "took " + fmt("%.1f", secs) + "s (limit 60s)");
  if (!c.ok) return {false, c.detail.str()};
  return {true, "10 steps, shared weights and all banks bit-identical, raw scores moved, " +
                    fmt("%.1f", secs) + "s"};
}

// -----------------------------------------------------------------------------
// 2. Loss oracle equivalence on random instances.

Outcome criterion_loss_oracles() {
  Rng rng(1002);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int B = 1 + rng.uniform_int(8);
    const int C = 2 + rng.uniform_int(9);
    const int S = 1 + rng.uniform_int(5);
    std::vector<DMat> logits;
    for (int s = 0; s < S; ++s) logits.push_back(random_logits(rng, B, C, 3.0));
    std::vector<int> labels = random_labels(rng, B, C);
    EnsembleWeights weights(S);
    for (float& v : weights.raw_scores) v = static_cast<float>(rng.uniform(-1.0, 1.0));

    // Classification loss: sum over branches of mean cross entropy.
    double want_cls = 0.0;
    for (const DMat& z : logits) want_cls += ref_cross_entropy(z, labels);
    worst = std::max(worst, rel_err(classification_loss(logits, labels), want_cls));

    // KL divergence on two random distributions.
    DMat pt = ref_softmax(random_logits(rng, B, C, 2.0));
    DMat ps = ref_softmax(random_logits(rng, B, C, 2.0));
    worst = std::max(worst, rel_err(kl_divergence(pt, ps), ref_kl(pt, ps)));

    // Distillation, vanilla and full, against the ensemble teacher.
    PredictionBundle bundle = build_prediction_bundle(weights, logits);
    std::vector<double> alpha = weights.alpha();
    DMat ens(B, C);
    for (int s = 0; s < S; ++s)
      for (std::size_t i = 0; i < ens.v.size(); ++i)
        ens.v[i] += alpha[static_cast<std::size_t>(s)] * logits[static_cast<std::size_t>(s)].v[i];
    DMat p0 = ref_softmax(ens);
    std::vector<DMat> probs;
    for (const DMat& z : logits) probs.push_back(ref_softmax(z));

    double want_vanilla = 0.0;
    for (int s = 0; s < S; ++s) want_vanilla += ref_kl(p0, probs[static_cast<std::size_t>(s)]);
    worst = std::max(worst, rel_err(distillation_loss_vanilla(bundle).loss, want_vanilla));

    // Full variant: teachers 0..S-1 (0 = ensemble), students strictly after.
    double pair_sum = 0.0;
    int pairs = 0;
    for (int t = 0; t <= S; ++t)
      for (int s = t + 1; s <= S; ++s) {
        const DMat& teacher = t == 0 ? p0 : probs[static_cast<std::size_t>(t - 1)];
        pair_sum += ref_kl(teacher, probs[static_cast<std::size_t>(s - 1)]);
        ++pairs;
      }
    if (pairs != S * (S + 1) / 2) return {false, "oracle pair count wrong"};
    const double want_full = 2.0 / (S + 1) * pair_sum;
    worst = std::max(worst, rel_err(distillation_loss_full(bundle).loss, want_full));
  }
  if (worst > 1e-6)
    return {false, "worst relative error " + fmt("%.3g", worst) + " > 1e-6"};
  return {true, "100 instances, S(S+1)/2 pairs at scale 2/(S+1), worst rel err " +
                    fmt("%.3g", worst)};
}

// -----------------------------------------------------------------------------
// 3. Finite-difference gradients of the ensemble and distillation losses.

Outcome criterion_finite_differences() {
  Rng rng(33);
  double worst_ens = 0.0, worst_dis = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int B = 2 + rng.uniform_int(5);
    const int C = 3 + rng.uniform_int(6);
    const int S = 2 + rng.uniform_int(3);
    std::vector<DMat> logits;
    for (int s = 0; s < S; ++s) logits.push_back(random_logits(rng, B, C, 2.0));
    std::vector<int> labels = random_labels(rng, B, C);
    EnsembleWeights weights(S);
    for (float& v : weights.raw_scores) v = static_cast<float>(rng.uniform(-1.0, 1.0));

    // d l_ens / d raw_scores. Raw scores are float parameters, so measure the
    // step that actually lands after rounding.
    EnsembleLossResult base = ensemble_loss(weights, logits, labels);
    for (int k = 0; k < S; ++k) {
      EnsembleWeights wp = weights, wm = weights;
      wp.raw_scores[static_cast<std::size_t>(k)] += 1e-3f;
      wm.raw_scores[static_cast<std::size_t>(k)] -= 1e-3f;
      const double dh = static_cast<double>(wp.raw_scores[static_cast<std::size_t>(k)]) -
                        static_cast<double>(wm.raw_scores[static_cast<std::size_t>(k)]);
      const double fd =
          (ensemble_loss(wp, logits, labels).loss - ensemble_loss(wm, logits, labels).loss) / dh;
      const double g = base.raw_score_grad[static_cast<std::size_t>(k)];
      worst_ens = std::max(worst_ens, std::fabs(g - fd) / std::max(1.0, std::fabs(fd)));
    }

    // d l_dis / d student logits, full variant. Teachers are constants, so the
    // reference holds every teacher distribution at its base value and lets
    // only the student side move.
    PredictionBundle bundle = build_prediction_bundle(weights, logits);
    DistillationResult dis = distillation_loss_full(bundle);
    std::vector<DMat> base_probs;  // index 0 = ensemble teacher
    base_probs.push_back(bundle.ensemble_probs);
    for (const DMat& p : bundle.branch_probs) base_probs.push_back(p);
    auto dis_students_only = [&](const std::vector<DMat>& live) {
      double total = 0.0;
      for (int t = 0; t <= S; ++t)
        for (int s = t + 1; s <= S; ++s)
          total += ref_kl(base_probs[static_cast<std::size_t>(t)],
                          ref_softmax(live[static_cast<std::size_t>(s - 1)]));
      return 2.0 / (S + 1) * total;
    };
    for (int probe = 0; probe < 5; ++probe) {
      const int s = rng.uniform_int(S), i = rng.uniform_int(B), j = rng.uniform_int(C);
      const double h = 1e-3;
      std::vector<DMat> lp = logits, lm = logits;
      lp[static_cast<std::size_t>(s)].at(i, j) += h;
      lm[static_cast<std::size_t>(s)].at(i, j) -= h;
      const double fd = (dis_students_only(lp) - dis_students_only(lm)) / (2.0 * h);
      const double g = dis.logit_grads[static_cast<std::size_t>(s)].at(i, j);
      worst_dis = std::max(worst_dis, std::fabs(g - fd) / std::max(1.0, std::fabs(fd)));
    }
  }
  Check c;
  c.require(worst_ens <= 1e-4, "raw-score grad rel err " + fmt("%.3g", worst_ens));
  c.require(worst_dis <= 1e-4, "student-logit grad rel err " + fmt("%.3g", worst_dis));
  if (!c.ok) return {false, c.detail.str()};
  return {true, "20 instances; worst rel err " + fmt("%.3g", worst_ens) + " (raw), " +
                    fmt("%.3g", worst_dis) + " (logits)"};
}

// -----------------------------------------------------------------------------
// 4. BN bank isolation and normalization correctness.

Outcome criterion_bn_banks() {
  Check c;
  // Isolation: a train-mode forward through bank 1 leaves banks 0 and 2 alone.
  ResolutionProfile profile = ResolutionProfile::make({24, 16, 12});
  SwitchableClassifier model = build_model("tinyresnet-w8", profile, 10, 11);
  Rng rng(71);
  for (BatchNormBank& b : model.banks) randomize_bank(b, rng);
  const SwitchableClassifier before = model;

  Tensor input({4, 3, 16, 16});
  for (float& v : input.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  BranchCache cache;
  forward_train(model, input, 1, 0.1, cache);
  c.require(banks_bits_equal(model.banks[0], before.banks[0]), "bank 0 changed");
  c.require(banks_bits_equal(model.banks[2], before.banks[2]), "bank 2 changed");
  c.require(!banks_bits_equal(model.banks[1], before.banks[1]),
            "bank 1 running stats did not update");

  // Normalization formula against a scalar double-precision oracle, both modes.
  const int N = 3, C = 5, H = 4, W = 6;
  Tensor x({N, C, H, W});
  for (float& v : x.data) v = static_cast<float>(rng.uniform(-2.0, 2.0));
  BnLayerParams params(C);
  for (int ch = 0; ch < C; ++ch) {
    params.gamma[static_cast<std::size_t>(ch)] = static_cast<float>(rng.uniform(0.5, 1.5));
    params.beta[static_cast<std::size_t>(ch)] = static_cast<float>(rng.uniform(-0.5, 0.5));
    params.running_mean[static_cast<std::size_t>(ch)] = static_cast<float>(rng.uniform(-1.0, 1.0));
    params.running_var[static_cast<std::size_t>(ch)] = static_cast<float>(rng.uniform(0.5, 2.0));
  }
  const float eps = 1e-5f;
  const double momentum = 0.1;

  double worst = 0.0;
  {
    BnLayerParams train_params = params;
    Tensor y = batchnorm_apply(x, train_params, eps, true, momentum);
    const double count = static_cast<double>(N) * H * W;
    for (int ch = 0; ch < C; ++ch) {
      double mean = 0.0, var = 0.0;
      for (int n = 0; n < N; ++n)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) mean += x.at(n, ch, h, w);
      mean /= count;
      for (int n = 0; n < N; ++n)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) {
            const double d = x.at(n, ch, h, w) - mean;
            var += d * d;
          }
      var /= count;  // biased, used for normalization
      for (int n = 0; n < N; ++n)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) {
            const double want = params.gamma[static_cast<std::size_t>(ch)] *
                                    (x.at(n, ch, h, w) - mean) / std::sqrt(var + eps) +
                                params.beta[static_cast<std::size_t>(ch)];
            worst = std::max(worst, rel_err(y.at(n, ch, h, w), want));
          }
      const double unbiased = var * count / (count - 1.0);
      const double want_mean =
          (1.0 - momentum) * params.running_mean[static_cast<std::size_t>(ch)] + momentum * mean;
      const double want_var =
          (1.0 - momentum) * params.running_var[static_cast<std::size_t>(ch)] + momentum * unbiased;
      worst = std::max(worst, rel_err(train_params.running_mean[static_cast<std::size_t>(ch)], want_mean));
      worst = std::max(worst, rel_err(train_params.running_var[static_cast<std::size_t>(ch)], want_var));
    }
  }
  {
    BnLayerParams eval_params = params;
    Tensor y = batchnorm_apply(x, eval_params, eps, false, momentum);
    c.require(bits_equal(eval_params.running_mean, params.running_mean) &&
                  bits_equal(eval_params.running_var, params.running_var),
              "eval mode touched running stats");
    for (int n = 0; n < N; ++n)
      for (int ch = 0; ch < C; ++ch)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) {
            const double want =
                params.gamma[static_cast<std::size_t>(ch)] *
                    (x.at(n, ch, h, w) - params.running_mean[static_cast<std::size_t>(ch)]) /
                    std::sqrt(static_cast<double>(params.running_var[static_cast<std::size_t>(ch)]) + eps) +
                params.beta[static_cast<std::size_t>(ch)];
            worst = std::max(worst, rel_err(y.at(n, ch, h, w), want));
          }
  }
  c.require(worst <= 1e-6, "normalization rel err " + fmt("%.3g", worst));
  if (!c.ok) return {false, c.detail.str()};
  return {true, "sibling banks bit-identical; train/eval normalization rel err " +
                    fmt("%.3g", worst)};
}

// -----------------------------------------------------------------------------
// 5. BN interpolation between neighbouring banks.

Outcome criterion_bn_interpolation() {
  ResolutionProfile profile = ResolutionProfile::make({192, 160});
  SwitchableClassifier model = build_model("tinyresnet-w8", profile, 10, 13);
  Rng rng(29);
  for (BatchNormBank& b : model.banks) randomize_bank(b, rng);

  Check c;
  c.require(banks_bits_equal(interpolate_bn_bank(model, 192), model.banks[0]) &&
                banks_bits_equal(interpolate_bn_bank(model, 160), model.banks[1]),
            "endpoint identity broken");

  auto check_mix = [&](int r, double w_low, const char* what) {
    BatchNormBank got = interpolate_bn_bank(model, r);
    double worst = 0.0;
    for (std::size_t l = 0; l < got.layers.size(); ++l) {
      const BnLayerParams& hi = model.banks[0].layers[l];
      const BnLayerParams& lo = model.banks[1].layers[l];
      const BnLayerParams& g = got.layers[l];
      for (int ch = 0; ch < g.channels(); ++ch) {
        const std::size_t k = static_cast<std::size_t>(ch);
        worst = std::max(worst, rel_err(g.gamma[k], w_low * lo.gamma[k] + (1 - w_low) * hi.gamma[k]));
        worst = std::max(worst, rel_err(g.beta[k], w_low * lo.beta[k] + (1 - w_low) * hi.beta[k]));
        worst = std::max(worst, rel_err(g.running_mean[k],
                                        w_low * lo.running_mean[k] + (1 - w_low) * hi.running_mean[k]));
        worst = std::max(worst, rel_err(g.running_var[k],
                                        w_low * lo.running_var[k] + (1 - w_low) * hi.running_var[k]));
      }
    }
    c.require(worst <= 1e-7, std::string(what) + " rel err " + fmt("%.3g", worst));
  };
  check_mix(176, 0.5, "midpoint");
  check_mix(168, 0.75, "r=168 (0.75/0.25)");

  bool threw = false;
  try {
    interpolate_bn_bank(model, 159);
  } catch (const std::out_of_range&) {
    threw = true;
  }
  c.require(threw, "extrapolation not refused");
  if (!c.ok) return {false, c.detail.str()};
  return {true, "endpoints exact; 176 is the mean, 168 the 0.75/0.25 mix of {160,192}"};
}

// -----------------------------------------------------------------------------
// 6. Multiply-add accounting for the reference descriptor.

Outcome criterion_madds() {
  const ArchDescriptor arch = lookup_arch("resnet18");
  const std::uint64_t hi = count_madds(arch, 224, 1000).total;
  const std::uint64_t lo = count_madds(arch, 96, 1000).total;
  const double ratio = static_cast<double>(lo) / static_cast<double>(hi);
  const double quad = (96.0 / 224.0) * (96.0 / 224.0);

  Check c;
  c.require(std::fabs(static_cast<double>(hi) - 1.82e9) <= 0.03 * 1.82e9,
            "224 total " + std::to_string(hi) + " outside 1.82G +- 3%");
  c.require(std::fabs(static_cast<double>(lo) - 335e6) <= 0.03 * 335e6,
            "96 total " + std::to_string(lo) + " outside 335M +- 3%");
  c.require(ratio >= 0.93 * quad && ratio <= 1.07 * quad,
            "ratio " + fmt("%.5f", ratio) + " outside [0.93,1.07]*(96/224)^2");
  if (!c.ok) return {false, c.detail.str()};
  return {true, "224: " + std::to_string(hi) + ", 96: " + std::to_string(lo) +
                    ", ratio/(96/224)^2 = " + fmt("%.4f", ratio / quad)};
}

// -----------------------------------------------------------------------------
// 7. Evaluation preprocessing against an inline reference of the stated rule.

Outcome criterion_eval_preprocessing() {
  Image src(512, 512);
  for (int y = 0; y < 512; ++y)
    for (int x = 0; x < 512; ++x) {
      src.at(0, y, x) = static_cast<float>(x) / 511.0f;
      src.at(1, y, x) = static_cast<float>(y) / 511.0f;
      src.at(2, y, x) = static_cast<float>(x + y) / 1022.0f;
    }

  const int r = 224;
  const int side = static_cast<int>(std::floor(r / 0.875 + 0.5));
  if (side != 256) return {false, "intermediate side " + std::to_string(side) + " != 256"};

  // Reference resize: half-pixel centers, edge clamp, double arithmetic.
  Image resized(side, side);
  const double scale = 512.0 / side;
  for (int c = 0; c < 3; ++c)
    for (int dy = 0; dy < side; ++dy)
      for (int dx = 0; dx < side; ++dx) {
        const double sx = (dx + 0.5) * scale - 0.5;
        const double sy = (dy + 0.5) * scale - 0.5;
        int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
        const double fx = sx - x0, fy = sy - y0;
        const int x0c = std::clamp(x0, 0, 511), x1c = std::clamp(x0 + 1, 0, 511);
        const int y0c = std::clamp(y0, 0, 511), y1c = std::clamp(y0 + 1, 0, 511);
        const double a = src.at(c, y0c, x0c), b = src.at(c, y0c, x1c);
        const double d = src.at(c, y1c, x0c), e = src.at(c, y1c, x1c);
        resized.at(c, dy, dx) = static_cast<float>((1 - fy) * ((1 - fx) * a + fx * b) +
                                                   fy * ((1 - fx) * d + fx * e));
      }
  const int off = (side - r) / 2;
  Image want(r, r);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < r; ++y)
      for (int x = 0; x < r; ++x) want.at(c, y, x) = resized.at(c, y + off, x + off);

  Image got = eval_preprocess(src, r);
  if (got.width != r || got.height != r) return {false, "output is not 224x224"};
  if (std::memcmp(got.data.data(), want.data.data(), want.data.size() * sizeof(float)) != 0) {
    std::size_t diff = 0;
    for (std::size_t i = 0; i < want.data.size(); ++i)
      if (got.data[i] != want.data[i]) ++diff;
    return {false, std::to_string(diff) + " of " + std::to_string(want.data.size()) +
                       " pixels differ from the reference"};
  }
  return {true, "512 -> 256 -> central 224 crop bit-exact (" +
                    std::to_string(want.data.size()) + " values)"};
}

// -----------------------------------------------------------------------------
// 8. Single-crop coherence across resolutions; multi-crop diversity.

/// Affine gradient images: bilinear resampling reproduces affine functions
/// exactly, so two renders agree iff they come from the same crop window.
class GradientDataset : public Dataset {
 public:
  explicit GradientDataset(int count) : count_(count) {}
  int size() const override { return count_; }
  int num_classes() const override { return 2; }
  LabeledImage sample(int index) const override {
    Rng rng(Rng::mix(4242, static_cast<std::uint64_t>(index)));
    Image img(64, 64);
    for (int c = 0; c < 3; ++c) {
      const double gx = rng.uniform(-0.2, 0.2) / 63.0;
      const double gy = rng.uniform(-0.2, 0.2) / 63.0;
      const double base = rng.uniform(0.45, 0.55);
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
          img.at(c, y, x) = static_cast<float>(base + gx * x + gy * y);
    }
    return {std::move(img), index % 2};
  }

 private:
  int count_;
};

// Scalar reference downscale (same arithmetic rule as criterion 7).
void ref_downscale(const Tensor& src, int sample, int src_side, Tensor& dst, int dst_sample,
                   int dst_side) {
  const double scale = static_cast<double>(src_side) / dst_side;
  for (int c = 0; c < 3; ++c)
    for (int dy = 0; dy < dst_side; ++dy)
      for (int dx = 0; dx < dst_side; ++dx) {
        const double sx = (dx + 0.5) * scale - 0.5;
        const double sy = (dy + 0.5) * scale - 0.5;
        int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
        const double fx = sx - x0, fy = sy - y0;
        const int x0c = std::clamp(x0, 0, src_side - 1), x1c = std::clamp(x0 + 1, 0, src_side - 1);
        const int y0c = std::clamp(y0, 0, src_side - 1), y1c = std::clamp(y0 + 1, 0, src_side - 1);
        const double a = src.at(sample, c, y0c, x0c), b = src.at(sample, c, y0c, x1c);
        const double d = src.at(sample, c, y1c, x0c), e = src.at(sample, c, y1c, x1c);
        dst.at(dst_sample, c, dy, dx) = static_cast<float>(
            (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * d + fx * e));
      }
}

double mad_between(const Tensor& a, int ia, const Tensor& b, int ib, int side) {
  double mad = 0.0;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) mad += std::fabs(a.at(ia, c, y, x) - b.at(ib, c, y, x));
  return mad / (3.0 * side * side);
}

Outcome criterion_crop_coherence() {
  GradientDataset ds(1000);
  AugmentationConfig aug;
  Normalization raw_units;
  raw_units.mean[0] = raw_units.mean[1] = raw_units.mean[2] = 0.0f;
  raw_units.stddev[0] = raw_units.stddev[1] = raw_units.stddev[2] = 1.0f;

  // Part 1: single-crop mode. Every resolution must be a resample of the same
  // window, so downscaling the largest render reproduces the others. The area
  // floor keeps every crop at least 32 px wide: renders are pure downscales,
  // where bilinear resampling reproduces affine images up to float rounding.
  AugmentationConfig wide = aug;
  wide.area_lo = 0.6;
  const std::vector<int> profile3 = {32, 24, 16};
  double worst_mad = 0.0;
  for (int i = 0; i < 1000; ++i) {
    MultiResolutionBatch batch =
        make_train_batch(ds, {i}, profile3, wide, raw_units, 909, 0, true);
    for (std::size_t s = 1; s < profile3.size(); ++s) {
      const int side = profile3[s];
      Tensor ref({1, 3, side, side});
      ref_downscale(batch.inputs[0], 0, 32, ref, 0, side);
      worst_mad = std::max(worst_mad, mad_between(ref, 0, batch.inputs[s], 0, side));
    }
  }
  if (worst_mad > 1e-3)
    return {false, "single-crop renders disagree, worst MAD " + fmt("%.3g", worst_mad)};

  // Part 2: multi-crop mode must draw fresh windows: on affine images any
  // differing window shows up as a nonzero MAD against the downscaled largest
  // render.
  const std::vector<int> profile5 = {32, 28, 24, 20, 16};
  int with_difference = 0;
  for (int i = 0; i < 1000; ++i) {
    MultiResolutionBatch batch =
        make_train_batch(ds, {i}, profile5, aug, raw_units, 909, 0, false);
    bool differs = false;
    for (std::size_t s = 1; s < profile5.size() && !differs; ++s) {
      const int side = profile5[s];
      Tensor ref({1, 3, side, side});
      ref_downscale(batch.inputs[0], 0, 32, ref, 0, side);
      differs = mad_between(ref, 0, batch.inputs[s], 0, side) > 1e-3;
    }
    with_difference += differs ? 1 : 0;
  }
  if (with_difference < 999)
    return {false, "only " + std::to_string(with_difference) +
                       "/1000 multi-crop samples show a differing crop (need >= 999)"};
  return {true, "1000 single-crop samples coherent (worst MAD " + fmt("%.2g", worst_mad) +
                    "); multi-crop differs in " + std::to_string(with_difference) + "/1000"};
}

// -----------------------------------------------------------------------------
// 9. Desk-scale directional experiment.

Outcome criterion_experiment() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<std::uint64_t> seeds = {1, 2, 3};
  const fs::path out = work_dir() / "experiment";
  fs::create_directories(out);

  TrainConfig base;
  base.epochs = 60;
  base.batch_size = 128;
  base.base_lr = 0.05;
  base.weight_decay = 5e-4;
  base.augmentation.area_lo = 0.35;

  struct RunScore {
    std::vector<double> acc;    // per profile resolution
    std::vector<double> alpha;  // parallel runs only
  };
  std::vector<RunScore> parallel, individual;

  for (std::uint64_t seed : seeds) {
    SyntheticTextureDataset train_set(2000, 10, 64, Rng::mix(seed, 0x747261u));
    SyntheticTextureDataset val_set(512, 10, 64, Rng::mix(seed, 0x76616cu));
    // Final readout on a larger slice of the same held-out stream: the
    // 0.5-point margin in (b) calls for accuracy noise well below it.
    SyntheticTextureDataset readout_set(8192, 10, 64, Rng::mix(seed, 0x76616cu));

    {
      TrainConfig cfg = base;
      cfg.mode = TrainMode::kParallelMred;
      cfg.seed = seed;
      ResolutionProfile profile = ResolutionProfile::make({32, 24, 16});
      SwitchableClassifier model = build_model("tinyresnet", profile, 10, seed);
      train(model, train_set, val_set, cfg,
            (out / ("parallel_s" + std::to_string(seed) + ".csv")).string());
      std::vector<double> acc;
      for (int r : profile.resolutions)
        acc.push_back(evaluate(model, readout_set, r, cfg.normalization).top1);
      parallel.push_back({acc, model.ensemble.alpha()});
      std::fprintf(stderr, "  seed %llu parallel+mred: %.2f / %.2f / %.2f (alpha %.3f/%.3f/%.3f)\n",
                   static_cast<unsigned long long>(seed), parallel.back().acc[0],
                   parallel.back().acc[1], parallel.back().acc[2], parallel.back().alpha[0],
                   parallel.back().alpha[1], parallel.back().alpha[2]);
    }
    {
      TrainConfig cfg = base;
      cfg.mode = TrainMode::kIndividual;
      cfg.seed = seed;
      ResolutionProfile profile = ResolutionProfile::make({32});
      SwitchableClassifier model = build_model("tinyresnet", profile, 10, seed);
      train(model, train_set, val_set, cfg,
            (out / ("individual_s" + std::to_string(seed) + ".csv")).string());
      individual.push_back({{evaluate(model, readout_set, 32, cfg.normalization).top1}, {}});
      std::fprintf(stderr, "  seed %llu individual@32:  %.2f\n",
                   static_cast<unsigned long long>(seed), individual.back().acc[0]);
    }
  }

  Check c;
  double min_acc = 100.0, mean_parallel32 = 0.0, mean_individual32 = 0.0;
  for (const RunScore& r : parallel) {
    for (double a : r.acc) min_acc = std::min(min_acc, a);
    mean_parallel32 += r.acc[0] / seeds.size();
  }
  for (const RunScore& r : individual) mean_individual32 += r.acc[0] / seeds.size();

  // (a) every resolution clears 60% top-1 in every parallel run.
  c.require(min_acc >= 60.0, "lowest accuracy " + fmt("%.2f", min_acc) + "% < 60%");
  // (b) parallel training does not lose the highest resolution.
  c.require(mean_parallel32 >= mean_individual32 - 0.5,
            "parallel@32 mean " + fmt("%.2f", mean_parallel32) + " < individual@32 mean " +
                fmt("%.2f", mean_individual32) + " - 0.5");
  // (c) the ensemble weights moved off uniform and stay on the simplex.
  for (std::size_t k = 0; k < parallel.size(); ++k) {
    double sum = 0.0, dev = 0.0;
    for (double a : parallel[k].alpha) {
      sum += a;
      dev = std::max(dev, std::fabs(a - 1.0 / 3.0));
    }
    c.require(std::fabs(sum - 1.0) <= 1e-6, "alpha sum off simplex");
    c.require(dev > 1e-3, "alpha still uniform after training");
  }
  // (d) report (not assert) the ordering of alpha against resolution.
  int decreasing = 0;
  for (const RunScore& r : parallel)
    if (r.alpha[0] > r.alpha[1] && r.alpha[1] > r.alpha[2]) ++decreasing;

  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  c.require(secs < 7200.0, "experiment took " + fmt("%.0f", secs) + "s (limit 7200)");
  std::string detail = "parallel@32 " + fmt("%.2f", mean_parallel32) + "% vs individual@32 " +
                       fmt("%.2f", mean_individual32) + "% (8192-sample readout), min acc " +
                       fmt("%.2f", min_acc) + "%; alpha strictly decreasing with resolution in " +
                       std::to_string(decreasing) + "/3 seeds; " + fmt("%.0f", secs) + "s";
  if (!c.ok) return {false, c.detail.str() + "; " + detail};
  return {true, detail};
}

// -----------------------------------------------------------------------------
// 10. Checkpoint round trip and manifest enforcement.

Outcome criterion_checkpoint() {
  ResolutionProfile profile = ResolutionProfile::make({24, 16});
  SwitchableClassifier model = build_model("tinyresnet-w8", profile, 7, 97);
  Rng rng(55);
  for (BatchNormBank& b : model.banks) randomize_bank(b, rng);
  for (float& v : model.ensemble.raw_scores) v = static_cast<float>(rng.uniform(-1.0, 1.0));

  const fs::path stem = work_dir() / "roundtrip";
  save_checkpoint(model, stem.string());
  SwitchableClassifier loaded = load_checkpoint(stem.string());

  Check c;
  c.require(models_bits_equal(model, loaded), "round trip not bit-exact");
  c.require(loaded.arch.id == model.arch.id && loaded.num_classes == model.num_classes &&
                loaded.profile.resolutions == model.profile.resolutions,
            "metadata changed in flight");

  // Manifest consistency: a tampered version and a truncated archive must be
  // refused.
  {
    std::ifstream is(stem.string() + ".manifest");
    std::stringstream ss;
    ss << is.rdbuf();
    std::string manifest = ss.str();
    const std::size_t pos = manifest.find("format_version=1");
    if (pos == std::string::npos) return {false, "manifest lacks format_version=1"};
    std::string bad = manifest;
    bad.replace(pos, 16, "format_version=9");
    const fs::path tampered = work_dir() / "tampered";
    std::ofstream(tampered.string() + ".manifest") << bad;
    fs::copy_file(stem.string() + ".params", tampered.string() + ".params",
                  fs::copy_options::overwrite_existing);
    bool threw = false;
    try {
      load_checkpoint(tampered.string());
    } catch (const std::exception&) {
      threw = true;
    }
    c.require(threw, "version mismatch accepted");
  }
  {
    const fs::path cut = work_dir() / "truncated";
    fs::copy_file(stem.string() + ".manifest", cut.string() + ".manifest",
                  fs::copy_options::overwrite_existing);
    std::ifstream is(stem.string() + ".params", std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    std::string params = ss.str();
    std::ofstream(cut.string() + ".params", std::ios::binary)
        << params.substr(0, params.size() - 16);
    bool threw = false;
    try {
      load_checkpoint(cut.string());
    } catch (const std::exception&) {
      threw = true;
    }
    c.require(threw, "truncated archive accepted");
  }
  if (!c.ok) return {false, c.detail.str()};
  return {true, "shared weights, banks and raw scores bit-exact; tampering refused"};
}

// -----------------------------------------------------------------------------
// 11. Reproducibility of the metrics CSV.

Outcome criterion_reproducibility() {
  SyntheticTextureDataset train_set(128, 10, 64, 3);
  SyntheticTextureDataset val_set(64, 10, 64, 4);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.seed = 5;

  auto run_once = [&](const std::string& name) {
    ResolutionProfile profile = ResolutionProfile::make({24, 16});
    SwitchableClassifier model = build_model("tinyresnet-w8", profile, 10, cfg.seed);
    const fs::path csv = work_dir() / name;
    train(model, train_set, val_set, cfg, csv.string());
    std::ifstream is(csv, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
  };

  const std::string first = run_once("repro_a.csv");
  const std::string second = run_once("repro_b.csv");
  if (first.empty() || first != second)
    return {false, "metrics CSVs differ between identical runs"};
  return {true, "two runs, " + std::to_string(first.size()) + " bytes each, byte-identical"};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {"gradient isolation under the ensemble-only phase", criterion_gradient_isolation},
      {"loss oracle equivalence", criterion_loss_oracles},
      {"finite-difference gradients", criterion_finite_differences},
      {"BN bank isolation and normalization", criterion_bn_banks},
      {"BN interpolation", criterion_bn_interpolation},
      {"multiply-add accounting", criterion_madds},
      {"evaluation preprocessing", criterion_eval_preprocessing},
      {"crop coherence and multi-crop diversity", criterion_crop_coherence},
      {"desk-scale directional experiment", criterion_experiment},
      {"checkpoint round trip", criterion_checkpoint},
      {"reproducibility", criterion_reproducibility},
  };

  // Optional argument: comma-separated criterion numbers (development aid);
  // default runs the full gate.
  std::vector<bool> selected(criteria.size(), true);
  if (argc > 1) {
    selected.assign(criteria.size(), false);
    std::stringstream ss(argv[1]);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const int n = std::stoi(item);
      if (n < 1 || n > static_cast<int>(criteria.size())) {
        std::fprintf(stderr, "criterion numbers run 1..%zu\n", criteria.size());
        return 2;
      }
      selected[static_cast<std::size_t>(n - 1)] = true;
    }
  }

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected[i]) continue;
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("unexpected exception: ") + e.what()};
    }
    std::printf("[%s] %2zu. %s — %s\n", o.ok ? "PASS" : "FAIL", i + 1, criteria[i].name,
                o.detail.c_str());
    std::fflush(stdout);
    failures += o.ok ? 0 : 1;
  }
  const int ran = static_cast<int>(std::count(selected.begin(), selected.end(), true));
  std::printf("%d/%d criteria passed\n", ran - failures, ran);
  return failures == 0 ? 0 : 1;
}
