#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rsn {

/// One convolution in the network, in execution order. Square kernels,
/// zero padding, no bias (batch norm supplies the bias).
struct ConvSpec {
  std::string name;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int padding = 1;
};

/// Basic residual block: conv1 -> bn -> relu -> conv2 -> bn, plus identity
/// or a 1x1 projection shortcut when shape changes.
struct BlockSpec {
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  bool has_projection() const { return stride != 1 || in_channels != out_channels; }
};

/// Architecture descriptor: stem conv (+ optional 3x3/2 max pool), a chain of
/// basic blocks, global average pooling and one fully-connected classifier.
struct ArchDescriptor {
  std::string id;
  ConvSpec stem;
  bool stem_pool = false;
  std::vector<BlockSpec> blocks;

  int feature_channels() const {
    return blocks.empty() ? stem.out_channels : blocks.back().out_channels;
  }

  /// All convolutions in execution order (stem, then per block conv1, conv2
  /// and projection). Batch-norm layers are in 1:1 correspondence with this
  /// list, which fixes the bank layout.
  std::vector<ConvSpec> conv_layers() const;

  /// Spatial side of the pre-GAP feature map for a square input, or 0 when
  /// some layer underflows.
  int final_feature_side(int resolution) const;

  bool supports_resolution(int resolution) const { return resolution > 0 && final_feature_side(resolution) >= 1; }
};

/// Known architectures: "resnet18" (ImageNet-style) and the reduced CIFAR
/// nets "tinyresnet" / "tinyresnet-w8" (stem + 2 downsampling blocks) and
/// "microresnet" (single block, test-sized). Throws on unknown ids.
ArchDescriptor lookup_arch(const std::string& id);

std::vector<std::string> known_arch_ids();

/// Multiply-add accounting at one input resolution.
struct MAddsReport {
  int resolution = 0;
  struct Entry {
    std::string layer;
    std::uint64_t madds = 0;
  };
  std::vector<Entry> per_layer;
  std::uint64_t total = 0;
};

/// Conv layers cost k^2 * C_in * C_out * H_out * W_out multiply-adds, the FC
/// layer costs in*out; normalization, pooling and activations are not
/// counted, matching the usual MAdds convention.
MAddsReport count_madds(const ArchDescriptor& arch, int resolution, int num_classes);

inline int conv_output_side(int in, int kernel, int stride, int padding) {
  int out = (in + 2 * padding - kernel) / stride + 1;
  return out > 0 ? out : 0;
}

}  // namespace rsn
