#include "rsnet/arch.hpp"

#include <stdexcept>

namespace rsn {

std::vector<ConvSpec> ArchDescriptor::conv_layers() const {
  std::vector<ConvSpec> layers;
  layers.push_back(stem);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const BlockSpec& blk = blocks[b];
    std::string base = "block" + std::to_string(b);
    layers.push_back({base + ".conv1", blk.in_channels, blk.out_channels, 3, blk.stride, 1});
    layers.push_back({base + ".conv2", blk.out_channels, blk.out_channels, 3, 1, 1});
    if (blk.has_projection()) {
      layers.push_back({base + ".down", blk.in_channels, blk.out_channels, 1, blk.stride, 0});
    }
  }
  return layers;
}

int ArchDescriptor::final_feature_side(int resolution) const {
  int side = conv_output_side(resolution, stem.kernel, stem.stride, stem.padding);
  if (stem_pool) side = conv_output_side(side, 3, 2, 1);
  for (const BlockSpec& blk : blocks) {
    side = conv_output_side(side, 3, blk.stride, 1);
    if (side == 0) return 0;
  }
  return side;
}

namespace {

ArchDescriptor make_resnet18() {
  ArchDescriptor a;
  a.id = "resnet18";
  a.stem = {"stem", 3, 64, 7, 2, 3};
  a.stem_pool = true;
  a.blocks = {
      {64, 64, 1},   {64, 64, 1},
      {64, 128, 2},  {128, 128, 1},
      {128, 256, 2}, {256, 256, 1},
      {256, 512, 2}, {512, 512, 1},
  };
  return a;
}

ArchDescriptor make_tinyresnet(int width, const std::string& id) {
  // Reduced CIFAR-style net: 3x3 stem at full resolution, two strided blocks.
  ArchDescriptor a;
  a.id = id;
  a.stem = {"stem", 3, width, 3, 1, 1};
  a.stem_pool = false;
  a.blocks = {
      {width, width * 2, 2},
      {width * 2, width * 4, 2},
  };
  return a;
}

ArchDescriptor make_microresnet() {
  ArchDescriptor a;
  a.id = "microresnet";
  a.stem = {"stem", 3, 4, 3, 1, 1};
  a.stem_pool = false;
  a.blocks = {{4, 8, 2}};
  return a;
}

}  // namespace

ArchDescriptor lookup_arch(const std::string& id) {
  if (id == "resnet18") return make_resnet18();
  if (id == "tinyresnet") return make_tinyresnet(16, id);
  if (id == "tinyresnet-w8") return make_tinyresnet(8, id);
  if (id == "microresnet") return make_microresnet();
  std::string msg = "unsupported arch id '" + id + "'; known:";
  for (const std::string& k : known_arch_ids()) msg += " " + k;
  throw std::invalid_argument(msg);
}

std::vector<std::string> known_arch_ids() {
  return {"resnet18", "tinyresnet", "tinyresnet-w8", "microresnet"};
}

MAddsReport count_madds(const ArchDescriptor& arch, int resolution, int num_classes) {
  if (!arch.supports_resolution(resolution)) {
    throw std::invalid_argument("resolution " + std::to_string(resolution) +
                                " underflows the feature map of arch '" + arch.id + "'");
  }
  MAddsReport report;
  report.resolution = resolution;

  int side = resolution;
  auto add_conv = [&report, &side](const ConvSpec& c, int in_side) {
    int out = conv_output_side(in_side, c.kernel, c.stride, c.padding);
    std::uint64_t per_pixel = static_cast<std::uint64_t>(c.kernel) * c.kernel * c.in_channels * c.out_channels;
    report.per_layer.push_back({c.name, per_pixel * out * out});
    return out;
  };

  side = add_conv(arch.stem, side);
  if (arch.stem_pool) side = conv_output_side(side, 3, 2, 1);
  for (std::size_t b = 0; b < arch.blocks.size(); ++b) {
    const BlockSpec& blk = arch.blocks[b];
    std::string base = "block" + std::to_string(b);
    int in_side = side;
    side = add_conv({base + ".conv1", blk.in_channels, blk.out_channels, 3, blk.stride, 1}, in_side);
    add_conv({base + ".conv2", blk.out_channels, blk.out_channels, 3, 1, 1}, side);
    if (blk.has_projection()) {
      add_conv({base + ".down", blk.in_channels, blk.out_channels, 1, blk.stride, 0}, in_side);
    }
  }
  report.per_layer.push_back(
      {"fc", static_cast<std::uint64_t>(arch.feature_channels()) * static_cast<std::uint64_t>(num_classes)});

  for (const auto& e : report.per_layer) report.total += e.madds;
  return report;
}

}  // namespace rsn
