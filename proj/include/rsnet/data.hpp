#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "rsnet/image.hpp"
#include "rsnet/rng.hpp"
#include "rsnet/tensor.hpp"

namespace rsn {

/// Random-resized-crop parameters. Area and aspect ratios are sampled
/// uniformly; resizing is always bilinear.
struct AugmentationConfig {
  double area_lo = 0.08;
  double area_hi = 1.0;
  double aspect_lo = 3.0 / 4.0;
  double aspect_hi = 4.0 / 3.0;
  double hflip_probability = 0.5;

  void validate() const;
};

struct CropSpec {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
  bool flipped = false;

  bool operator==(const CropSpec&) const = default;
};

/// One label plus S square renderings of one crop, ordered like the
/// resolution profile (largest first).
struct MultiResolutionSample {
  std::vector<Image> images;
  int label = 0;
  CropSpec crop;
};

/// Draws a crop rectangle. The area ratio is drawn once, uniformly in
/// [area_lo, area_hi]; the aspect ratio is rejection-sampled (10 attempts)
/// against the source bounds. If no aspect fits, falls back to a centered
/// crop at the largest feasible area within range. Deterministic in `rng`.
CropSpec sample_crop(int source_width, int source_height, const AugmentationConfig& config, Rng& rng);

/// Renders the single crop (flip applied once) at every profile resolution.
std::vector<Image> render_multi_resolution(const Image& image, const CropSpec& crop,
                                           const std::vector<int>& resolutions);

/// Ablation path: an independent crop per resolution.
struct MultiCropResult {
  std::vector<Image> images;
  std::vector<CropSpec> crops;
};
MultiCropResult render_multi_crop(const Image& image, const std::vector<int>& resolutions,
                                  const AugmentationConfig& config, Rng& rng);

/// Deterministic evaluation preprocessing: bilinear resize of the full image
/// to a square of side round(r / 0.875) (round half up), then the central
/// r x r crop.
Image eval_preprocess(const Image& image, int r);

int eval_intermediate_side(int r);

/// Per-channel standardization constants, dataset-level.
struct Normalization {
  float mean[3] = {0.5f, 0.5f, 0.5f};
  float stddev[3] = {0.25f, 0.25f, 0.25f};
};

/// Stacks images (all of one side) into an NCHW tensor, standardizing each
/// channel.
Tensor stack_images(const std::vector<const Image*>& images, const Normalization& norm);

// ---------------------------------------------------------------------------
// Datasets

struct LabeledImage {
  Image image;
  int label = 0;
};

class Dataset {
 public:
  virtual ~Dataset() = default;
  virtual int size() const = 0;
  virtual int num_classes() const = 0;
  virtual LabeledImage sample(int index) const = 0;
};

/// 10-class procedural texture dataset at CIFAR-like scale. Class identity is
/// a (hue, stripe orientation) pair rendered with per-sample jitter, additive
/// noise and a random occluder, so the signal survives cropping and
/// downscaling while staying non-trivial to fit.
class SyntheticTextureDataset : public Dataset {
 public:
  SyntheticTextureDataset(int count, int num_classes, int source_side, std::uint64_t seed);

  int size() const override { return count_; }
  int num_classes() const override { return num_classes_; }
  LabeledImage sample(int index) const override;

 private:
  int count_;
  int num_classes_;
  int source_side_;
  std::uint64_t seed_;
};

/// Directory-per-class layout: root/<class-name>/*.ppm, classes ordered by
/// name. Labels are the class directory index.
class FolderDataset : public Dataset {
 public:
  explicit FolderDataset(const std::string& root);

  int size() const override { return static_cast<int>(entries_.size()); }
  int num_classes() const override { return num_classes_; }
  LabeledImage sample(int index) const override;
  const std::vector<std::string>& class_names() const { return class_names_; }

 private:
  struct Entry {
    std::string path;
    int label;
  };
  std::vector<Entry> entries_;
  std::vector<std::string> class_names_;
  int num_classes_ = 0;
};

/// Index-file layout: each line "relative/path<space>label".
class IndexDataset : public Dataset {
 public:
  explicit IndexDataset(const std::string& index_path);

  int size() const override { return static_cast<int>(entries_.size()); }
  int num_classes() const override { return num_classes_; }
  LabeledImage sample(int index) const override;

 private:
  struct Entry {
    std::string path;
    int label;
  };
  std::vector<Entry> entries_;
  int num_classes_ = 0;
};

/// Training batch: one tensor per profile resolution plus labels. Sample i of
/// every tensor comes from the same source image (and, in single-crop mode,
/// the same crop).
struct MultiResolutionBatch {
  std::vector<Tensor> inputs;  // profile order, each (B,3,r,r)
  std::vector<int> labels;
};

/// Assembles a training batch. Per-sample augmentation streams derive from
/// (seed, epoch, sample index), so the pipeline is a pure function of its
/// arguments and safe to shard across workers.
MultiResolutionBatch make_train_batch(const Dataset& dataset, const std::vector<int>& indices,
                                      const std::vector<int>& resolutions, const AugmentationConfig& config,
                                      const Normalization& norm, std::uint64_t seed, int epoch,
                                      bool single_crop, int branches = 0);

}  // namespace rsn
