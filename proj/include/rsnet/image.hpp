#pragma once

#include <string>
#include <vector>

namespace rsn {

/// RGB image, unit-scale floats in CHW order (3 planes).
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(3) * w * h, 0.0f) {}

  float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
};

/// Bilinear resize with half-pixel centers and edge clamping. The arithmetic
/// rule is part of the pipeline contract:
///   scale  = double(src_side) / double(dst_side), per axis
///   sx     = (dx + 0.5) * scale_x - 0.5, sy likewise (double precision)
///   x0     = floor(sx), fx = sx - x0; x0 and x0+1 clamped to [0, w-1]
///   value  = (1-fy)*((1-fx)*a + fx*b) + fy*((1-fx)*c + fx*d)
/// with a,b,c,d the four neighbours; the double result is cast to float.
Image bilinear_resize(const Image& src, int out_width, int out_height);

/// Copies the w x h rectangle at (x, y); the rectangle must lie inside src.
Image crop_image(const Image& src, int x, int y, int w, int h);

Image hflip_image(const Image& src);

// Binary PPM (P6), 8-bit RGB. Values are mapped to [0,1] on load and
// round(v*255) clamped on save.
Image load_ppm(const std::string& path);
void save_ppm(const Image& img, const std::string& path);

}  // namespace rsn
