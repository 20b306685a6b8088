#include "rsnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace rsn {

namespace fs = std::filesystem;

void AugmentationConfig::validate() const {
  if (!(area_lo > 0.0 && area_lo <= area_hi && area_hi <= 1.0)) {
    throw std::invalid_argument("area range must satisfy 0 < lo <= hi <= 1");
  }
  if (!(aspect_lo > 0.0 && aspect_lo <= aspect_hi)) {
    throw std::invalid_argument("aspect range must satisfy 0 < lo <= hi");
  }
  if (!(hflip_probability >= 0.0 && hflip_probability <= 1.0)) {
    throw std::invalid_argument("hflip probability must lie in [0,1]");
  }
}

CropSpec sample_crop(int source_width, int source_height, const AugmentationConfig& config, Rng& rng) {
  if (source_width < 1 || source_height < 1) throw std::invalid_argument("source must be at least 1x1");
  config.validate();

  const double source_area = static_cast<double>(source_width) * source_height;
  const double area_ratio = rng.uniform(config.area_lo, config.area_hi);
  const bool flipped = rng.bernoulli(config.hflip_probability);

  CropSpec crop;
  crop.flipped = flipped;
  for (int attempt = 0; attempt < 10; ++attempt) {
    double aspect = rng.uniform(config.aspect_lo, config.aspect_hi);
    double target = area_ratio * source_area;
    int w = static_cast<int>(std::lround(std::sqrt(target * aspect)));
    int h = static_cast<int>(std::lround(std::sqrt(target / aspect)));
    if (w >= 1 && h >= 1 && w <= source_width && h <= source_height) {
      crop.w = w;
      crop.h = h;
      crop.x = (w < source_width) ? rng.uniform_int(source_width - w + 1) : 0;
      crop.y = (h < source_height) ? rng.uniform_int(source_height - h + 1) : 0;
      return crop;
    }
  }

  // Fallback: centered crop at the largest feasible area within range, with
  // the aspect ratio clamped to the configured range.
  double aspect = std::clamp(1.0, config.aspect_lo, config.aspect_hi);
  double max_area = config.area_hi * source_area;
  int w = static_cast<int>(std::floor(std::sqrt(max_area * aspect)));
  int h = static_cast<int>(std::floor(std::sqrt(max_area / aspect)));
  w = std::clamp(w, 1, source_width);
  h = std::clamp(h, 1, source_height);
  crop.w = w;
  crop.h = h;
  crop.x = (source_width - w) / 2;
  crop.y = (source_height - h) / 2;
  return crop;
}

std::vector<Image> render_multi_resolution(const Image& image, const CropSpec& crop,
                                           const std::vector<int>& resolutions) {
  Image cropped = crop_image(image, crop.x, crop.y, crop.w, crop.h);
  if (crop.flipped) cropped = hflip_image(cropped);
  std::vector<Image> out;
  out.reserve(resolutions.size());
  for (int r : resolutions) out.push_back(bilinear_resize(cropped, r, r));
  return out;
}

MultiCropResult render_multi_crop(const Image& image, const std::vector<int>& resolutions,
                                  const AugmentationConfig& config, Rng& rng) {
  MultiCropResult result;
  result.images.reserve(resolutions.size());
  result.crops.reserve(resolutions.size());
  for (int r : resolutions) {
    CropSpec crop = sample_crop(image.width, image.height, config, rng);
    Image cropped = crop_image(image, crop.x, crop.y, crop.w, crop.h);
    if (crop.flipped) cropped = hflip_image(cropped);
    result.images.push_back(bilinear_resize(cropped, r, r));
    result.crops.push_back(crop);
  }
  return result;
}

int eval_intermediate_side(int r) {
  // round half up on r / 0.875
  return static_cast<int>(std::floor(static_cast<double>(r) / 0.875 + 0.5));
}

Image eval_preprocess(const Image& image, int r) {
  if (r < 1) throw std::invalid_argument("target resolution must be >= 1");
  int side = eval_intermediate_side(r);
  Image resized = bilinear_resize(image, side, side);
  int off = (side - r) / 2;
  return crop_image(resized, off, off, r, r);
}

Tensor stack_images(const std::vector<const Image*>& images, const Normalization& norm) {
  if (images.empty()) throw std::invalid_argument("empty image batch");
  int side = images[0]->width;
  Tensor out({static_cast<int>(images.size()), 3, side, side});
  for (std::size_t b = 0; b < images.size(); ++b) {
    const Image& img = *images[b];
    if (img.width != side || img.height != side) throw std::invalid_argument("batch images must share one side");
    for (int c = 0; c < 3; ++c) {
      float inv = 1.0f / norm.stddev[c];
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
          out.at(static_cast<int>(b), c, y, x) = (img.at(c, y, x) - norm.mean[c]) * inv;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic textures

namespace {

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  h = h - std::floor(h);
  double i = std::floor(h * 6.0);
  double f = h * 6.0 - i;
  double p = v * (1.0 - s);
  double q = v * (1.0 - f * s);
  double t = v * (1.0 - (1.0 - f) * s);
  switch (static_cast<int>(i) % 6) {
    case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
    case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
    case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
    case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
    case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
    default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
  }
}

}  // namespace

SyntheticTextureDataset::SyntheticTextureDataset(int count, int num_classes, int source_side, std::uint64_t seed)
    : count_(count), num_classes_(num_classes), source_side_(source_side), seed_(seed) {
  if (count < 1) throw std::invalid_argument("dataset must have at least one sample");
  if (num_classes < 2 || num_classes > 10) throw std::invalid_argument("synthetic dataset supports 2..10 classes");
  if (source_side < 8) throw std::invalid_argument("source side must be >= 8");
}

LabeledImage SyntheticTextureDataset::sample(int index) const {
  if (index < 0 || index >= count_) throw std::out_of_range("dataset index out of range");
  Rng rng(Rng::mix(seed_, 0x5eedda7a, static_cast<std::uint64_t>(index)));
  int label = index % num_classes_;

  // Class identity = (hue cell, fine-stripe orientation half). The hue is a
  // low-frequency signal that survives any downscale; the orientation rides
  // on stripes near the Nyquist limit of the smallest render, so that bit
  // degrades smoothly as resolution drops. A random coarse stripe field masks
  // the orientation from being read off low-frequency residue. The hue jitter
  // deliberately exceeds half the cell spacing: neighbouring cells overlap,
  // leaving a slice of genuinely ambiguous samples so validation accuracy
  // saturates below 100% and model comparisons stay meaningful.
  int hue_idx = label % 5;
  int orient = label / 5;  // 0: near-horizontal fine stripes, 1: near-vertical
  double hue = hue_idx * 0.2 + rng.uniform(-0.11, 0.11);
  double sat = 0.55 + rng.uniform(-0.20, 0.20);
  double base = 0.45 + rng.uniform(-0.06, 0.06);
  double amp_lo = rng.uniform(0.06, 0.14);
  double period_lo = rng.uniform(16.0, 40.0);
  double phase_lo = rng.uniform(0.0, 1.0);
  double angle_lo = rng.uniform(0.0, 180.0);  // class-independent distractor
  double amp_hi = rng.uniform(0.10, 0.22);
  double period_hi = rng.uniform(4.5, 10.0);
  double phase_hi = rng.uniform(0.0, 1.0);
  double angle_hi = (orient == 0 ? 0.0 : 90.0) + rng.uniform(-35.0, 35.0);
  double noise_sigma = rng.uniform(0.06, 0.12);

  const double deg = 3.141592653589793 / 180.0;
  const double kx_lo = std::sin(angle_lo * deg), ky_lo = std::cos(angle_lo * deg);
  const double kx_hi = std::sin(angle_hi * deg), ky_hi = std::cos(angle_hi * deg);
  const double tau = 6.283185307179586;
  Image img(source_side_, source_side_);
  for (int y = 0; y < source_side_; ++y) {
    for (int x = 0; x < source_side_; ++x) {
      double value = base +
                     amp_lo * std::sin(tau * ((kx_lo * x + ky_lo * y) / period_lo + phase_lo)) +
                     amp_hi * std::sin(tau * ((kx_hi * x + ky_hi * y) / period_hi + phase_hi));
      double rgb[3];
      hsv_to_rgb(hue, sat, std::clamp(value, 0.05, 0.95), rgb);
      for (int c = 0; c < 3; ++c) {
        double v = rgb[c] + noise_sigma * rng.normal();
        img.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }

  // Occluder: gray square up to a third of the side, anywhere.
  int occ = 2 + rng.uniform_int(source_side_ / 3);
  int ox = rng.uniform_int(source_side_ - occ + 1);
  int oy = rng.uniform_int(source_side_ - occ + 1);
  float gray = static_cast<float>(rng.uniform(0.2, 0.8));
  for (int y = oy; y < oy + occ; ++y)
    for (int x = ox; x < ox + occ; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = gray;

  return {std::move(img), label};
}

// ---------------------------------------------------------------------------
// On-disk datasets

FolderDataset::FolderDataset(const std::string& root) {
  if (!fs::is_directory(root)) throw std::runtime_error("dataset root is not a directory: " + root);
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_names_.push_back(entry.path().filename().string());
  }
  std::sort(class_names_.begin(), class_names_.end());
  if (class_names_.empty()) throw std::runtime_error("no class directories under " + root);
  num_classes_ = static_cast<int>(class_names_.size());
  for (int label = 0; label < num_classes_; ++label) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(fs::path(root) / class_names_[label])) {
      if (entry.is_regular_file() && entry.path().extension() == ".ppm") {
        files.push_back(entry.path().string());
      }
    }
    std::sort(files.begin(), files.end());
    for (std::string& f : files) entries_.push_back({std::move(f), label});
  }
  if (entries_.empty()) throw std::runtime_error("no .ppm images under " + root);
}

LabeledImage FolderDataset::sample(int index) const {
  const Entry& e = entries_.at(static_cast<std::size_t>(index));
  return {load_ppm(e.path), e.label};
}

IndexDataset::IndexDataset(const std::string& index_path) {
  std::ifstream in(index_path);
  if (!in) throw std::runtime_error("cannot open index file: " + index_path);
  fs::path base = fs::path(index_path).parent_path();
  std::string path;
  int label;
  while (in >> path >> label) {
    if (label < 0) throw std::runtime_error(index_path + ": negative label");
    num_classes_ = std::max(num_classes_, label + 1);
    entries_.push_back({(base / path).string(), label});
  }
  if (entries_.empty()) throw std::runtime_error(index_path + ": no entries");
}

LabeledImage IndexDataset::sample(int index) const {
  const Entry& e = entries_.at(static_cast<std::size_t>(index));
  return {load_ppm(e.path), e.label};
}

// ---------------------------------------------------------------------------

MultiResolutionBatch make_train_batch(const Dataset& dataset, const std::vector<int>& indices,
                                      const std::vector<int>& resolutions, const AugmentationConfig& config,
                                      const Normalization& norm, std::uint64_t seed, int epoch,
                                      bool single_crop, int branches) {
  if (indices.empty()) throw std::invalid_argument("empty batch");
  int S = branches > 0 ? branches : static_cast<int>(resolutions.size());
  std::vector<int> sides;
  if (branches > 0) {
    // single-resolution mode: `branches` crops at one identical side
    if (resolutions.size() != 1) throw std::invalid_argument("branch replication needs a single resolution");
    sides.assign(static_cast<std::size_t>(branches), resolutions[0]);
  } else {
    sides = resolutions;
  }

  std::vector<std::vector<Image>> rendered(static_cast<std::size_t>(S));
  MultiResolutionBatch batch;
  batch.labels.reserve(indices.size());

  for (int index : indices) {
    LabeledImage item = dataset.sample(index);
    Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(index)));
    if (single_crop) {
      CropSpec crop = sample_crop(item.image.width, item.image.height, config, rng);
      std::vector<Image> views = render_multi_resolution(item.image, crop, sides);
      for (int s = 0; s < S; ++s) rendered[s].push_back(std::move(views[s]));
    } else {
      MultiCropResult views = render_multi_crop(item.image, sides, config, rng);
      for (int s = 0; s < S; ++s) rendered[s].push_back(std::move(views.images[s]));
    }
    batch.labels.push_back(item.label);
  }

  batch.inputs.reserve(static_cast<std::size_t>(S));
  for (int s = 0; s < S; ++s) {
    std::vector<const Image*> ptrs;
    ptrs.reserve(rendered[s].size());
    for (const Image& img : rendered[s]) ptrs.push_back(&img);
    batch.inputs.push_back(stack_images(ptrs, norm));
  }
  return batch;
}

}  // namespace rsn
