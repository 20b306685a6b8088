#include "rsnet/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "rsnet/rng.hpp"

namespace rsn {

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

}  // namespace

EvalResult evaluate(const SwitchableClassifier& model, const Dataset& eval_set, int resolution,
                    const Normalization& norm, const BatchNormBank* bank_override, int batch_size) {
  if (eval_set.size() < 1) throw std::invalid_argument("empty evaluation set");
  if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
  const BatchNormBank bank = bank_override ? *bank_override : interpolate_bn_bank(model, resolution);
  const bool enforce = bank_override == nullptr;
  const int topk = std::min(5, model.num_classes);

  EvalResult result;
  result.predictions.reserve(static_cast<std::size_t>(eval_set.size()));
  std::int64_t hit1 = 0, hit5 = 0;
  for (int start = 0; start < eval_set.size(); start += batch_size) {
    const int count = std::min(batch_size, eval_set.size() - start);
    std::vector<Image> images;
    std::vector<int> labels;
    images.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
      LabeledImage item = eval_set.sample(start + i);
      images.push_back(eval_preprocess(item.image, resolution));
      labels.push_back(item.label);
    }
    std::vector<const Image*> ptrs;
    for (const Image& img : images) ptrs.push_back(&img);
    const Tensor input = stack_images(ptrs, norm);
    const DMat logits = forward_eval(model, input, bank, nullptr, enforce);

    for (int i = 0; i < count; ++i) {
      int best = 0;
      for (int c = 1; c < logits.cols; ++c)
        if (logits.at(i, c) > logits.at(i, best)) best = c;
      result.predictions.push_back(best);
      const int label = labels[static_cast<std::size_t>(i)];
      if (best == label) ++hit1;
      int above = 0;
      for (int c = 0; c < logits.cols; ++c)
        if (logits.at(i, c) > logits.at(i, label)) ++above;
      if (above < topk) ++hit5;
    }
  }
  result.top1 = 100.0 * hit1 / eval_set.size();
  result.top5 = 100.0 * hit5 / eval_set.size();
  return result;
}

DisagreementMatrix disagreement_matrix(const std::vector<std::vector<int>>& predictions,
                                       const std::vector<int>& labels,
                                       const std::vector<int>& resolutions) {
  const std::size_t s = predictions.size();
  if (s != resolutions.size()) throw std::invalid_argument("prediction/resolution count mismatch");
  if (labels.empty()) throw std::invalid_argument("empty label list");
  for (const auto& p : predictions)
    if (p.size() != labels.size()) throw std::invalid_argument("prediction list length mismatch");

  DisagreementMatrix m;
  m.resolutions = resolutions;
  m.entries.assign(s * s, -1.0);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j) {
      if (i == j) continue;
      std::size_t count = 0;
      for (std::size_t k = 0; k < labels.size(); ++k)
        if (predictions[i][k] != labels[k] && predictions[j][k] == labels[k]) ++count;
      m.entries[i * s + j] = 100.0 * static_cast<double>(count) / static_cast<double>(labels.size());
    }
  return m;
}

std::string disagreement_csv(const DisagreementMatrix& m) {
  // Entry (row i, col j) = % of samples wrong at resolution i, right at j.
  std::string out = "# disagreement matrix: row = resolution judged wrong, col = resolution judged right\n";
  out += "resolution";
  for (int r : m.resolutions) out += "," + std::to_string(r);
  out += "\n";
  for (std::size_t i = 0; i < m.resolutions.size(); ++i) {
    out += std::to_string(m.resolutions[i]);
    for (std::size_t j = 0; j < m.resolutions.size(); ++j) {
      const double v = m.entries[i * m.resolutions.size() + j];
      out += i == j ? ",-" : "," + fmt("%.1f", v);
    }
    out += "\n";
  }
  return out;
}

ActivationCdf gap_activation_cdf(const SwitchableClassifier& model, const Dataset& images,
                                 int resolution_index, const std::string& tag,
                                 const AugmentationConfig& aug, const Normalization& norm,
                                 std::uint64_t seed, int max_images, std::size_t max_components) {
  if (images.size() < 1) throw std::invalid_argument("empty image set");
  if (tag != "train" && tag != "test")
    throw std::invalid_argument("preprocessing tag must be 'train' or 'test'");
  if (resolution_index < 0 || resolution_index >= model.profile.size())
    throw std::invalid_argument("resolution index out of range");
  const int r = model.profile.at(resolution_index);
  const BatchNormBank& bank = model.banks[static_cast<std::size_t>(resolution_index)];
  const int total = max_images > 0 ? std::min(max_images, images.size()) : images.size();

  ActivationCdf cdf;
  cdf.tag = tag;
  std::vector<float> components;
  const int batch = 64;
  for (int start = 0; start < total; start += batch) {
    const int count = std::min(batch, total - start);
    std::vector<Image> views;
    views.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
      LabeledImage item = images.sample(start + i);
      if (tag == "test") {
        views.push_back(eval_preprocess(item.image, r));
      } else {
        Rng rng(Rng::mix(seed, 0xCDFu, static_cast<std::uint64_t>(start + i)));
        const CropSpec crop = sample_crop(item.image.width, item.image.height, aug, rng);
        views.push_back(std::move(render_multi_resolution(item.image, crop, {r})[0]));
      }
    }
    std::vector<const Image*> ptrs;
    for (const Image& img : views) ptrs.push_back(&img);
    Tensor gap;
    forward_eval(model, stack_images(ptrs, norm), bank, &gap);
    components.insert(components.end(), gap.data.begin(), gap.data.end());
  }

  if (components.size() > max_components && max_components > 0) {
    // Uniform subsample: partial Fisher-Yates over the component list.
    Rng rng(Rng::mix(seed, 0x5b5e7u));
    for (std::size_t i = 0; i < max_components; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.uniform() * static_cast<double>(components.size() - i));
      std::swap(components[i], components[j]);
    }
    components.resize(max_components);
  }
  std::sort(components.begin(), components.end());
  cdf.values = std::move(components);
  cdf.cumulative.resize(cdf.values.size());
  for (std::size_t i = 0; i < cdf.values.size(); ++i)
    cdf.cumulative[i] = static_cast<double>(i + 1) / static_cast<double>(cdf.values.size());
  return cdf;
}

std::string activation_cdf_csv(const ActivationCdf& cdf) {
  std::string out = "# empirical CDF of GAP output components (" + cdf.tag + " preprocessing)\n";
  out += "value,cumulative\n";
  for (std::size_t i = 0; i < cdf.values.size(); ++i)
    out += fmt("%.7g", cdf.values[i]) + "," + fmt("%.9g", cdf.cumulative[i]) + "\n";
  return out;
}

std::vector<BnSummaryRow> bn_summary(const SwitchableClassifier& model) {
  std::vector<BnSummaryRow> rows;
  for (std::size_t l = 0; l < model.conv_specs.size(); ++l) {
    for (const BatchNormBank& bank : model.banks) {
      const BnLayerParams& p = bank.layers[l];
      BnSummaryRow row;
      row.layer = model.conv_specs[l].name;
      row.resolution = bank.bound_resolution;
      const double n = p.channels();
      for (int c = 0; c < p.channels(); ++c) {
        row.mean_gamma += p.gamma[static_cast<std::size_t>(c)] / n;
        row.mean_beta += p.beta[static_cast<std::size_t>(c)] / n;
        row.mean_mu += p.running_mean[static_cast<std::size_t>(c)] / n;
        row.mean_sigma += std::sqrt(static_cast<double>(p.running_var[static_cast<std::size_t>(c)])) / n;
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::string bn_summary_csv(const std::vector<BnSummaryRow>& rows) {
  std::string out = "# channel-wise means of BN parameters per layer and resolution\n";
  out += "layer,resolution,mean_gamma,mean_beta,mean_mu,mean_sigma\n";
  for (const BnSummaryRow& r : rows) {
    out += r.layer + "," + std::to_string(r.resolution);
    out += "," + fmt("%.9g", r.mean_gamma) + "," + fmt("%.9g", r.mean_beta);
    out += "," + fmt("%.9g", r.mean_mu) + "," + fmt("%.9g", r.mean_sigma) + "\n";
  }
  return out;
}

AlphaReport report_alpha(const SwitchableClassifier& model) {
  AlphaReport report;
  report.alpha = model.ensemble.alpha();
  // Branch ensembles (single-resolution mode) may carry more entries than the
  // profile; label the extras with the single trained resolution.
  for (std::size_t i = 0; i < report.alpha.size(); ++i)
    report.resolutions.push_back(i < static_cast<std::size_t>(model.profile.size())
                                     ? model.profile.at(static_cast<int>(i))
                                     : model.profile.at(model.profile.size() - 1));
  return report;
}

std::string alpha_csv(const AlphaReport& report) {
  std::string out = "# learned ensemble weights, largest resolution first\n";
  out += "resolution,alpha\n";
  for (std::size_t i = 0; i < report.alpha.size(); ++i)
    out += std::to_string(report.resolutions[i]) + "," + fmt("%.9g", report.alpha[i]) + "\n";
  return out;
}

std::string madds_csv(const MAddsReport& report) {
  std::string out = "# multiply-add counts at resolution " + std::to_string(report.resolution) + "\n";
  out += "layer,madds\n";
  for (const auto& e : report.per_layer) out += e.layer + "," + std::to_string(e.madds) + "\n";
  out += "total," + std::to_string(report.total) + "\n";
  return out;
}

}  // namespace rsn
