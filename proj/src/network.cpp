#include "rsnet/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <set>
#include <stdexcept>

#include <cblas.h>

#include "rsnet/rng.hpp"

namespace rsn {

namespace {

// ---------------------------------------------------------------------------
// Convolution via im2col + sgemm. The column matrix is (C_in*k*k) x (H_out *
// W_out), row-major, rebuilt per sample; backward rebuilds it rather than
// caching every layer's columns, trading a little compute for bounded memory.

void im2col(const Tensor& x, int n, const ConvSpec& c, int out_h, int out_w, float* col) {
  const int in_h = x.dim(2), in_w = x.dim(3);
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  std::size_t row = 0;
  for (int ic = 0; ic < c.in_channels; ++ic) {
    for (int kh = 0; kh < c.kernel; ++kh) {
      for (int kw = 0; kw < c.kernel; ++kw, ++row) {
        float* dst = col + row * plane;
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * c.stride - c.padding + kh;
          float* drow = dst + static_cast<std::size_t>(oh) * out_w;
          if (ih < 0 || ih >= in_h) {
            std::fill(drow, drow + out_w, 0.0f);
            continue;
          }
          const float* src = &x.data[x.idx(n, ic, ih, 0)];
          for (int ow = 0; ow < out_w; ++ow) {
            const int iw = ow * c.stride - c.padding + kw;
            drow[ow] = (iw >= 0 && iw < in_w) ? src[iw] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_add(const float* col, int n, const ConvSpec& c, int out_h, int out_w, Tensor& dx) {
  const int in_h = dx.dim(2), in_w = dx.dim(3);
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  std::size_t row = 0;
  for (int ic = 0; ic < c.in_channels; ++ic) {
    for (int kh = 0; kh < c.kernel; ++kh) {
      for (int kw = 0; kw < c.kernel; ++kw, ++row) {
        const float* src = col + row * plane;
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * c.stride - c.padding + kh;
          if (ih < 0 || ih >= in_h) continue;
          float* drow = &dx.data[dx.idx(n, ic, ih, 0)];
          const float* srow = src + static_cast<std::size_t>(oh) * out_w;
          for (int ow = 0; ow < out_w; ++ow) {
            const int iw = ow * c.stride - c.padding + kw;
            if (iw >= 0 && iw < in_w) drow[iw] += srow[ow];
          }
        }
      }
    }
  }
}

Tensor conv_forward(const Tensor& x, const Tensor& w, const ConvSpec& c) {
  const int n = x.dim(0);
  const int out_h = conv_output_side(x.dim(2), c.kernel, c.stride, c.padding);
  const int out_w = conv_output_side(x.dim(3), c.kernel, c.stride, c.padding);
  if (x.dim(1) != c.in_channels) throw std::invalid_argument("conv input channel mismatch");
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("conv output underflows 1x1");
  const int k_dim = c.in_channels * c.kernel * c.kernel;
  const int p_dim = out_h * out_w;
  Tensor y({n, c.out_channels, out_h, out_w});
  std::vector<float> col(static_cast<std::size_t>(k_dim) * p_dim);
  for (int i = 0; i < n; ++i) {
    im2col(x, i, c, out_h, out_w, col.data());
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, c.out_channels, p_dim, k_dim, 1.0f,
                w.data.data(), k_dim, col.data(), p_dim, 0.0f, &y.data[y.idx(i, 0, 0, 0)], p_dim);
  }
  return y;
}

// Accumulates dW and (when dx != nullptr) adds the input gradient into *dx,
// which the caller zeroes once beforehand.
void conv_backward(const Tensor& x, const Tensor& w, const ConvSpec& c, const Tensor& dy,
                   Tensor& dw, Tensor* dx) {
  const int n = x.dim(0);
  const int out_h = dy.dim(2), out_w = dy.dim(3);
  const int k_dim = c.in_channels * c.kernel * c.kernel;
  const int p_dim = out_h * out_w;
  std::vector<float> col(static_cast<std::size_t>(k_dim) * p_dim);
  std::vector<float> dcol(dx ? col.size() : 0);
  for (int i = 0; i < n; ++i) {
    im2col(x, i, c, out_h, out_w, col.data());
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, c.out_channels, k_dim, p_dim, 1.0f,
                &dy.data[dy.idx(i, 0, 0, 0)], p_dim, col.data(), p_dim, 1.0f, dw.data.data(), k_dim);
    if (dx) {
      cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, k_dim, p_dim, c.out_channels, 1.0f,
                  w.data.data(), k_dim, &dy.data[dy.idx(i, 0, 0, 0)], p_dim, 0.0f, dcol.data(), p_dim);
      col2im_add(dcol.data(), i, c, out_h, out_w, *dx);
    }
  }
}

// ---------------------------------------------------------------------------
// Batch norm. Channel statistics accumulate in double; the batch variance is
// the biased estimate for normalization, unbiased for the running value.

Tensor bn_train(const Tensor& x, BnLayerParams& params, float epsilon, double momentum,
                BnTrainCache& cache) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (c != params.channels()) throw std::invalid_argument("batch norm channel mismatch");
  const std::size_t spatial = static_cast<std::size_t>(h) * w;
  const double count = static_cast<double>(n) * h * w;
  Tensor y(x.shape);
  cache.xhat = Tensor(x.shape);
  cache.invstd.assign(static_cast<std::size_t>(c), 0.0f);
  for (int ch = 0; ch < c; ++ch) {
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      const float* p = &x.data[x.idx(i, ch, 0, 0)];
      for (std::size_t j = 0; j < spatial; ++j) sum += p[j];
    }
    const double mean = sum / count;
    double sq = 0.0;
    for (int i = 0; i < n; ++i) {
      const float* p = &x.data[x.idx(i, ch, 0, 0)];
      for (std::size_t j = 0; j < spatial; ++j) {
        const double d = p[j] - mean;
        sq += d * d;
      }
    }
    const double var = sq / count;
    const double invstd = 1.0 / std::sqrt(var + epsilon);
    cache.invstd[static_cast<std::size_t>(ch)] = static_cast<float>(invstd);

    if (momentum != 0.0) {  // momentum 0 freezes running statistics bit-exactly
      const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
      params.running_mean[static_cast<std::size_t>(ch)] = static_cast<float>(
          (1.0 - momentum) * params.running_mean[static_cast<std::size_t>(ch)] + momentum * mean);
      params.running_var[static_cast<std::size_t>(ch)] = static_cast<float>(
          (1.0 - momentum) * params.running_var[static_cast<std::size_t>(ch)] + momentum * unbiased);
    }

    const double g = params.gamma[static_cast<std::size_t>(ch)];
    const double b = params.beta[static_cast<std::size_t>(ch)];
    for (int i = 0; i < n; ++i) {
      const float* p = &x.data[x.idx(i, ch, 0, 0)];
      float* ph = &cache.xhat.data[cache.xhat.idx(i, ch, 0, 0)];
      float* py = &y.data[y.idx(i, ch, 0, 0)];
      for (std::size_t j = 0; j < spatial; ++j) {
        const double xh = (p[j] - mean) * invstd;
        ph[j] = static_cast<float>(xh);
        py[j] = static_cast<float>(g * xh + b);
      }
    }
  }
  return y;
}

Tensor bn_eval(const Tensor& x, const BnLayerParams& params, float epsilon) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (c != params.channels()) throw std::invalid_argument("batch norm channel mismatch");
  const std::size_t spatial = static_cast<std::size_t>(h) * w;
  Tensor y(x.shape);
  for (int ch = 0; ch < c; ++ch) {
    const double scale = params.gamma[static_cast<std::size_t>(ch)] /
                         std::sqrt(static_cast<double>(params.running_var[static_cast<std::size_t>(ch)]) + epsilon);
    const double shift = params.beta[static_cast<std::size_t>(ch)] -
                         params.running_mean[static_cast<std::size_t>(ch)] * scale;
    for (int i = 0; i < n; ++i) {
      const float* p = &x.data[x.idx(i, ch, 0, 0)];
      float* py = &y.data[y.idx(i, ch, 0, 0)];
      for (std::size_t j = 0; j < spatial; ++j) py[j] = static_cast<float>(p[j] * scale + shift);
    }
  }
  return y;
}

// dx for train-mode BN; adds dgamma/dbeta into the bank gradient slot.
Tensor bn_backward(const Tensor& dy, const BnTrainCache& cache, const BnLayerParams& params,
                   BnGrad& grad) {
  const int n = dy.dim(0), c = dy.dim(1), h = dy.dim(2), w = dy.dim(3);
  const std::size_t spatial = static_cast<std::size_t>(h) * w;
  const double count = static_cast<double>(n) * h * w;
  Tensor dx(dy.shape);
  for (int ch = 0; ch < c; ++ch) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int i = 0; i < n; ++i) {
      const float* pd = &dy.data[dy.idx(i, ch, 0, 0)];
      const float* ph = &cache.xhat.data[cache.xhat.idx(i, ch, 0, 0)];
      for (std::size_t j = 0; j < spatial; ++j) {
        sum_dy += pd[j];
        sum_dy_xhat += static_cast<double>(pd[j]) * ph[j];
      }
    }
    grad.gamma[static_cast<std::size_t>(ch)] += static_cast<float>(sum_dy_xhat);
    grad.beta[static_cast<std::size_t>(ch)] += static_cast<float>(sum_dy);

    const double k = static_cast<double>(params.gamma[static_cast<std::size_t>(ch)]) *
                     cache.invstd[static_cast<std::size_t>(ch)];
    const double m1 = sum_dy / count;
    const double m2 = sum_dy_xhat / count;
    for (int i = 0; i < n; ++i) {
      const float* pd = &dy.data[dy.idx(i, ch, 0, 0)];
      const float* ph = &cache.xhat.data[cache.xhat.idx(i, ch, 0, 0)];
      float* px = &dx.data[dx.idx(i, ch, 0, 0)];
      for (std::size_t j = 0; j < spatial; ++j)
        px[j] = static_cast<float>(k * (pd[j] - m1 - static_cast<double>(ph[j]) * m2));
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------

void relu_inplace(Tensor& t) {
  for (float& v : t.data) v = v > 0.0f ? v : 0.0f;
}

void relu_mask(Tensor& grad, const Tensor& activated) {
  for (std::size_t i = 0; i < grad.data.size(); ++i)
    if (activated.data[i] <= 0.0f) grad.data[i] = 0.0f;
}

Tensor maxpool_forward(const Tensor& x, std::vector<std::int64_t>& argmax) {
  const int n = x.dim(0), c = x.dim(1), in_h = x.dim(2), in_w = x.dim(3);
  const int out_h = conv_output_side(in_h, 3, 2, 1);
  const int out_w = conv_output_side(in_w, 3, 2, 1);
  Tensor y({n, c, out_h, out_w});
  argmax.assign(y.numel(), -1);
  std::size_t oi = 0;
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int oh = 0; oh < out_h; ++oh)
        for (int ow = 0; ow < out_w; ++ow, ++oi) {
          float best = -std::numeric_limits<float>::infinity();
          std::int64_t besti = -1;
          for (int kh = 0; kh < 3; ++kh) {
            const int ih = oh * 2 - 1 + kh;
            if (ih < 0 || ih >= in_h) continue;
            for (int kw = 0; kw < 3; ++kw) {
              const int iw = ow * 2 - 1 + kw;
              if (iw < 0 || iw >= in_w) continue;
              const std::size_t xi = x.idx(i, ch, ih, iw);
              if (x.data[xi] > best) {
                best = x.data[xi];
                besti = static_cast<std::int64_t>(xi);
              }
            }
          }
          y.data[oi] = best;
          argmax[oi] = besti;
        }
  return y;
}

Tensor gap_forward(const Tensor& x) {
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t spatial = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor y({n, c});
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const float* p = &x.data[x.idx(i, ch, 0, 0)];
      double sum = 0.0;
      for (std::size_t j = 0; j < spatial; ++j) sum += p[j];
      y.data[static_cast<std::size_t>(i) * c + ch] = static_cast<float>(sum / spatial);
    }
  return y;
}

DMat fc_forward(const Tensor& gap, const Tensor& w, const Tensor& b) {
  const int n = gap.dim(0), f = gap.dim(1), c = w.dim(0);
  std::vector<float> out(static_cast<std::size_t>(n) * c);
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, n, c, f, 1.0f, gap.data.data(), f,
              w.data.data(), f, 0.0f, out.data(), c);
  DMat logits(n, c);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j)
      logits.at(i, j) = static_cast<double>(out[static_cast<std::size_t>(i) * c + j]) + b.data[static_cast<std::size_t>(j)];
  return logits;
}

void check_input(const ArchDescriptor& arch, const Tensor& input) {
  if (input.shape.size() != 4) throw std::invalid_argument("input must be NCHW");
  if (input.dim(1) != arch.stem.in_channels) throw std::invalid_argument("input channel mismatch");
  if (input.dim(2) != input.dim(3)) throw std::invalid_argument("input must be square");
  if (input.dim(0) < 1) throw std::invalid_argument("empty batch");
  if (!arch.supports_resolution(input.dim(2)))
    throw std::invalid_argument("resolution " + std::to_string(input.dim(2)) +
                                " underflows the feature map of arch '" + arch.id + "'");
}

}  // namespace

// ---------------------------------------------------------------------------

ResolutionProfile ResolutionProfile::make(std::vector<int> rs) {
  if (rs.empty()) throw std::invalid_argument("resolution profile is empty");
  std::sort(rs.begin(), rs.end(), std::greater<int>());
  for (std::size_t i = 0; i < rs.size(); ++i) {
    if (rs[i] < 1) throw std::invalid_argument("resolutions must be positive");
    if (i > 0 && rs[i] == rs[i - 1])
      throw std::invalid_argument("duplicate resolution " + std::to_string(rs[i]));
  }
  ResolutionProfile p;
  p.resolutions = std::move(rs);
  return p;
}

int ResolutionProfile::index_of(int r) const {
  for (std::size_t i = 0; i < resolutions.size(); ++i)
    if (resolutions[i] == r) return static_cast<int>(i);
  return -1;
}

SwitchableClassifier build_model(const std::string& arch_id, const ResolutionProfile& profile,
                                 int num_classes, std::uint64_t seed) {
  if (num_classes < 1) throw std::invalid_argument("num_classes must be positive");
  if (profile.resolutions.empty()) throw std::invalid_argument("resolution profile is empty");
  SwitchableClassifier m;
  m.arch = lookup_arch(arch_id);
  m.conv_specs = m.arch.conv_layers();
  m.num_classes = num_classes;
  m.profile = ResolutionProfile::make(profile.resolutions);
  for (int r : m.profile.resolutions)
    if (!m.arch.supports_resolution(r))
      throw std::invalid_argument("resolution " + std::to_string(r) +
                                  " underflows the feature map of arch '" + arch_id + "'");

  Rng rng(Rng::mix(seed, 0x1417u));
  m.conv_weights.reserve(m.conv_specs.size());
  for (const ConvSpec& c : m.conv_specs) {
    Tensor w({c.out_channels, c.in_channels, c.kernel, c.kernel});
    const double std_dev = std::sqrt(2.0 / (static_cast<double>(c.kernel) * c.kernel * c.out_channels));
    for (float& v : w.data) v = static_cast<float>(rng.normal() * std_dev);
    m.conv_weights.push_back(std::move(w));
  }
  m.fc_weight = Tensor({num_classes, m.arch.feature_channels()});
  for (float& v : m.fc_weight.data) v = static_cast<float>(rng.normal() * 0.01);
  m.fc_bias = Tensor({num_classes});

  m.banks.reserve(static_cast<std::size_t>(m.profile.size()));
  for (int r : m.profile.resolutions) {
    BatchNormBank bank;
    bank.bound_resolution = r;
    for (const ConvSpec& c : m.conv_specs) bank.layers.emplace_back(c.out_channels);
    m.banks.push_back(std::move(bank));
  }
  m.ensemble = EnsembleWeights(m.profile.size());
  return m;
}

ParameterCount parameter_count(const SwitchableClassifier& model) {
  ParameterCount pc;
  for (const Tensor& w : model.conv_weights) pc.shared += w.numel();
  pc.shared += model.fc_weight.numel() + model.fc_bias.numel();
  for (const BatchNormBank& bank : model.banks)
    for (const BnLayerParams& l : bank.layers) pc.banks += 2u * static_cast<std::uint64_t>(l.channels());
  pc.ensemble = model.ensemble.raw_scores.size();
  return pc;
}

Tensor batchnorm_apply(const Tensor& x, BnLayerParams& params, float epsilon, bool training,
                       double momentum) {
  if (training) {
    BnTrainCache scratch;
    return bn_train(x, params, epsilon, momentum, scratch);
  }
  return bn_eval(x, params, epsilon);
}

// ---------------------------------------------------------------------------

namespace {

// Walks the block structure, mapping block b to its conv indices in the flat
// conv_layers() order: stem is 0, then conv1/conv2[/down] per block.
struct BlockIndices {
  int conv1, conv2, down;  // down = -1 without projection
};
std::vector<BlockIndices> block_indices(const ArchDescriptor& arch) {
  std::vector<BlockIndices> out;
  int next = 1;
  for (const BlockSpec& b : arch.blocks) {
    BlockIndices bi{next, next + 1, -1};
    next += 2;
    if (b.has_projection()) bi.down = next++;
    out.push_back(bi);
  }
  return out;
}

}  // namespace

DMat forward_train(SwitchableClassifier& model, const Tensor& input, int bank_index,
                   double bn_momentum, BranchCache& cache, bool enforce_resolution) {
  check_input(model.arch, input);
  if (bank_index < 0 || bank_index >= model.profile.size())
    throw std::invalid_argument("bank index " + std::to_string(bank_index) + " out of range");
  if (enforce_resolution && input.dim(2) != model.profile.at(bank_index))
    throw std::invalid_argument("input side " + std::to_string(input.dim(2)) +
                                " does not match profile resolution " +
                                std::to_string(model.profile.at(bank_index)));
  BatchNormBank& bank = model.banks[static_cast<std::size_t>(bank_index)];
  const float eps = bank.epsilon;

  cache = BranchCache();
  cache.bank_index = bank_index;
  cache.input = input;

  Tensor stem = conv_forward(input, model.conv_weights[0], model.conv_specs[0]);
  Tensor stem_bn = bn_train(stem, bank.layers[0], eps, bn_momentum, cache.stem_bn);
  relu_inplace(stem_bn);
  cache.stem_relu = std::move(stem_bn);
  cache.trunk = model.arch.stem_pool ? maxpool_forward(cache.stem_relu, cache.pool_argmax)
                                     : cache.stem_relu;

  const std::vector<BlockIndices> bidx = block_indices(model.arch);
  cache.blocks.resize(model.arch.blocks.size());
  const Tensor* x = &cache.trunk;
  for (std::size_t b = 0; b < model.arch.blocks.size(); ++b) {
    const BlockIndices& bi = bidx[b];
    BlockCache& bc = cache.blocks[b];
    Tensor a = conv_forward(*x, model.conv_weights[static_cast<std::size_t>(bi.conv1)],
                            model.conv_specs[static_cast<std::size_t>(bi.conv1)]);
    Tensor a_bn = bn_train(a, bank.layers[static_cast<std::size_t>(bi.conv1)], eps, bn_momentum, bc.bn1);
    relu_inplace(a_bn);
    bc.relu1 = std::move(a_bn);
    Tensor out = conv_forward(bc.relu1, model.conv_weights[static_cast<std::size_t>(bi.conv2)],
                              model.conv_specs[static_cast<std::size_t>(bi.conv2)]);
    out = bn_train(out, bank.layers[static_cast<std::size_t>(bi.conv2)], eps, bn_momentum, bc.bn2);
    if (bi.down >= 0) {
      Tensor d = conv_forward(*x, model.conv_weights[static_cast<std::size_t>(bi.down)],
                              model.conv_specs[static_cast<std::size_t>(bi.down)]);
      Tensor d_bn = bn_train(d, bank.layers[static_cast<std::size_t>(bi.down)], eps, bn_momentum, bc.bn_down);
      for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += d_bn.data[i];
    } else {
      for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += x->data[i];
    }
    relu_inplace(out);
    bc.out = std::move(out);
    x = &bc.out;
  }

  cache.gap = gap_forward(*x);
  return fc_forward(cache.gap, model.fc_weight, model.fc_bias);
}

DMat forward_eval(const SwitchableClassifier& model, const Tensor& input, const BatchNormBank& bank,
                  Tensor* gap_out, bool enforce_resolution) {
  check_input(model.arch, input);
  if (bank.layers.size() != model.conv_specs.size())
    throw std::invalid_argument("bank layer count does not match the architecture");
  if (enforce_resolution && input.dim(2) != bank.bound_resolution)
    throw std::invalid_argument("input side " + std::to_string(input.dim(2)) +
                                " does not match bank resolution " +
                                std::to_string(bank.bound_resolution));
  const float eps = bank.epsilon;

  Tensor x = conv_forward(input, model.conv_weights[0], model.conv_specs[0]);
  x = bn_eval(x, bank.layers[0], eps);
  relu_inplace(x);
  if (model.arch.stem_pool) {
    std::vector<std::int64_t> scratch;
    x = maxpool_forward(x, scratch);
  }

  const std::vector<BlockIndices> bidx = block_indices(model.arch);
  for (std::size_t b = 0; b < model.arch.blocks.size(); ++b) {
    const BlockIndices& bi = bidx[b];
    Tensor a = conv_forward(x, model.conv_weights[static_cast<std::size_t>(bi.conv1)],
                            model.conv_specs[static_cast<std::size_t>(bi.conv1)]);
    a = bn_eval(a, bank.layers[static_cast<std::size_t>(bi.conv1)], eps);
    relu_inplace(a);
    Tensor out = conv_forward(a, model.conv_weights[static_cast<std::size_t>(bi.conv2)],
                              model.conv_specs[static_cast<std::size_t>(bi.conv2)]);
    out = bn_eval(out, bank.layers[static_cast<std::size_t>(bi.conv2)], eps);
    if (bi.down >= 0) {
      Tensor d = conv_forward(x, model.conv_weights[static_cast<std::size_t>(bi.down)],
                              model.conv_specs[static_cast<std::size_t>(bi.down)]);
      d = bn_eval(d, bank.layers[static_cast<std::size_t>(bi.down)], eps);
      for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += d.data[i];
    } else {
      for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += x.data[i];
    }
    relu_inplace(out);
    x = std::move(out);
  }

  Tensor gap = gap_forward(x);
  if (gap_out) *gap_out = gap;
  return fc_forward(gap, model.fc_weight, model.fc_bias);
}

// ---------------------------------------------------------------------------

void Gradients::zero() {
  for (Tensor& t : conv) t.zero();
  fc_weight.zero();
  fc_bias.zero();
  for (auto& bank : banks)
    for (BnGrad& g : bank) {
      std::fill(g.gamma.begin(), g.gamma.end(), 0.0f);
      std::fill(g.beta.begin(), g.beta.end(), 0.0f);
    }
  std::fill(raw_scores.begin(), raw_scores.end(), 0.0);
}

Gradients make_zero_gradients(const SwitchableClassifier& model) {
  Gradients g;
  g.conv.reserve(model.conv_weights.size());
  for (const Tensor& w : model.conv_weights) g.conv.emplace_back(w.shape);
  g.fc_weight = Tensor(model.fc_weight.shape);
  g.fc_bias = Tensor(model.fc_bias.shape);
  g.banks.resize(model.banks.size());
  for (std::size_t b = 0; b < model.banks.size(); ++b) {
    g.banks[b].resize(model.banks[b].layers.size());
    for (std::size_t l = 0; l < model.banks[b].layers.size(); ++l) {
      const std::size_t ch = static_cast<std::size_t>(model.banks[b].layers[l].channels());
      g.banks[b][l].gamma.assign(ch, 0.0f);
      g.banks[b][l].beta.assign(ch, 0.0f);
    }
  }
  g.raw_scores.assign(model.ensemble.raw_scores.size(), 0.0);
  return g;
}

void backward(const SwitchableClassifier& model, const BranchCache& cache, const DMat& dlogits,
              Gradients& grads) {
  if (cache.bank_index < 0 || cache.bank_index >= static_cast<int>(grads.banks.size()))
    throw std::invalid_argument("branch cache has no valid bank index");
  const BatchNormBank& bank = model.banks[static_cast<std::size_t>(cache.bank_index)];
  std::vector<BnGrad>& bank_grad = grads.banks[static_cast<std::size_t>(cache.bank_index)];
  const int n = cache.gap.dim(0), f = cache.gap.dim(1), c = model.num_classes;
  if (dlogits.rows != n || dlogits.cols != c) throw std::invalid_argument("dlogits shape mismatch");

  // FC backward.
  std::vector<float> dy(static_cast<std::size_t>(n) * c);
  for (std::size_t i = 0; i < dy.size(); ++i) dy[i] = static_cast<float>(dlogits.v[i]);
  cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, c, f, n, 1.0f, dy.data(), c,
              cache.gap.data.data(), f, 1.0f, grads.fc_weight.data.data(), f);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) grads.fc_bias.data[static_cast<std::size_t>(j)] += dy[static_cast<std::size_t>(i) * c + j];
  Tensor dgap({n, f});
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, n, f, c, 1.0f, dy.data(), c,
              model.fc_weight.data.data(), f, 0.0f, dgap.data.data(), f);

  // GAP backward into the last block output.
  const Tensor& feat = cache.blocks.empty() ? cache.trunk : cache.blocks.back().out;
  const int fh = feat.dim(2), fw = feat.dim(3);
  const float inv_spatial = 1.0f / static_cast<float>(fh * fw);
  Tensor dfeat(feat.shape);
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < f; ++ch) {
      const float g = dgap.data[static_cast<std::size_t>(i) * f + ch] * inv_spatial;
      float* p = &dfeat.data[dfeat.idx(i, ch, 0, 0)];
      for (int j = 0; j < fh * fw; ++j) p[j] = g;
    }

  // Blocks, in reverse.
  const std::vector<BlockIndices> bidx = block_indices(model.arch);
  Tensor dout = std::move(dfeat);
  for (int b = static_cast<int>(model.arch.blocks.size()) - 1; b >= 0; --b) {
    const BlockIndices& bi = bidx[static_cast<std::size_t>(b)];
    const BlockCache& bc = cache.blocks[static_cast<std::size_t>(b)];
    const Tensor& in = b == 0 ? cache.trunk : cache.blocks[static_cast<std::size_t>(b - 1)].out;

    relu_mask(dout, bc.out);  // dout is now d(sum)
    Tensor din(in.shape);

    // Main path: bn2 <- conv2 <- relu <- bn1 <- conv1.
    Tensor d2 = bn_backward(dout, bc.bn2, bank.layers[static_cast<std::size_t>(bi.conv2)],
                            bank_grad[static_cast<std::size_t>(bi.conv2)]);
    Tensor dr1(bc.relu1.shape);
    conv_backward(bc.relu1, model.conv_weights[static_cast<std::size_t>(bi.conv2)],
                  model.conv_specs[static_cast<std::size_t>(bi.conv2)], d2,
                  grads.conv[static_cast<std::size_t>(bi.conv2)], &dr1);
    relu_mask(dr1, bc.relu1);
    Tensor d1 = bn_backward(dr1, bc.bn1, bank.layers[static_cast<std::size_t>(bi.conv1)],
                            bank_grad[static_cast<std::size_t>(bi.conv1)]);
    conv_backward(in, model.conv_weights[static_cast<std::size_t>(bi.conv1)],
                  model.conv_specs[static_cast<std::size_t>(bi.conv1)], d1,
                  grads.conv[static_cast<std::size_t>(bi.conv1)], &din);

    // Shortcut path.
    if (bi.down >= 0) {
      Tensor dd = bn_backward(dout, bc.bn_down, bank.layers[static_cast<std::size_t>(bi.down)],
                              bank_grad[static_cast<std::size_t>(bi.down)]);
      conv_backward(in, model.conv_weights[static_cast<std::size_t>(bi.down)],
                    model.conv_specs[static_cast<std::size_t>(bi.down)], dd,
                    grads.conv[static_cast<std::size_t>(bi.down)], &din);
    } else {
      for (std::size_t i = 0; i < din.data.size(); ++i) din.data[i] += dout.data[i];
    }
    dout = std::move(din);
  }

  // Stem: un-pool, relu, bn, conv.
  Tensor dstem_relu;
  if (model.arch.stem_pool) {
    dstem_relu = Tensor(cache.stem_relu.shape);
    for (std::size_t i = 0; i < cache.pool_argmax.size(); ++i)
      dstem_relu.data[static_cast<std::size_t>(cache.pool_argmax[i])] += dout.data[i];
  } else {
    dstem_relu = std::move(dout);
  }
  relu_mask(dstem_relu, cache.stem_relu);
  Tensor dstem = bn_backward(dstem_relu, cache.stem_bn, bank.layers[0], bank_grad[0]);
  conv_backward(cache.input, model.conv_weights[0], model.conv_specs[0], dstem, grads.conv[0],
                nullptr);
}

// ---------------------------------------------------------------------------

BatchNormBank interpolate_bn_bank(const SwitchableClassifier& model, int r) {
  const int exact = model.profile.index_of(r);
  if (exact >= 0) return model.banks[static_cast<std::size_t>(exact)];
  if (r < model.profile.min() || r > model.profile.max())
    throw std::out_of_range("resolution " + std::to_string(r) + " outside the trained range [" +
                            std::to_string(model.profile.min()) + ", " +
                            std::to_string(model.profile.max()) + "]");
  // Profile is sorted descending; find the tightest enclosing pair.
  int r_hi = model.profile.max(), r_lo = model.profile.min();
  for (int v : model.profile.resolutions) {
    if (v > r) r_hi = std::min(r_hi, v);
    if (v < r) r_lo = std::max(r_lo, v);
  }
  const BatchNormBank& lo = model.banks[static_cast<std::size_t>(model.profile.index_of(r_lo))];
  const BatchNormBank& hi = model.banks[static_cast<std::size_t>(model.profile.index_of(r_hi))];
  const double lambda = static_cast<double>(r_hi - r) / (r_hi - r_lo);

  BatchNormBank out;
  out.bound_resolution = r;
  out.epsilon = lo.epsilon;
  out.layers.resize(lo.layers.size());
  auto blend = [lambda](const std::vector<float>& a, const std::vector<float>& b) {
    std::vector<float> o(a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
      o[i] = static_cast<float>(lambda * a[i] + (1.0 - lambda) * b[i]);
    return o;
  };
  for (std::size_t l = 0; l < lo.layers.size(); ++l) {
    out.layers[l].gamma = blend(lo.layers[l].gamma, hi.layers[l].gamma);
    out.layers[l].beta = blend(lo.layers[l].beta, hi.layers[l].beta);
    out.layers[l].running_mean = blend(lo.layers[l].running_mean, hi.layers[l].running_mean);
    out.layers[l].running_var = blend(lo.layers[l].running_var, hi.layers[l].running_var);
  }
  return out;
}

}  // namespace rsn
