#include "rsnet/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>

namespace rsn {

Image bilinear_resize(const Image& src, int out_width, int out_height) {
  if (out_width < 1 || out_height < 1) throw std::invalid_argument("resize target must be >= 1");
  Image dst(out_width, out_height);
  const double scale_x = static_cast<double>(src.width) / out_width;
  const double scale_y = static_cast<double>(src.height) / out_height;
  for (int dy = 0; dy < out_height; ++dy) {
    double sy = (dy + 0.5) * scale_y - 0.5;
    int y0 = static_cast<int>(std::floor(sy));
    double fy = sy - y0;
    int y0c = std::clamp(y0, 0, src.height - 1);
    int y1c = std::clamp(y0 + 1, 0, src.height - 1);
    for (int dx = 0; dx < out_width; ++dx) {
      double sx = (dx + 0.5) * scale_x - 0.5;
      int x0 = static_cast<int>(std::floor(sx));
      double fx = sx - x0;
      int x0c = std::clamp(x0, 0, src.width - 1);
      int x1c = std::clamp(x0 + 1, 0, src.width - 1);
      for (int c = 0; c < 3; ++c) {
        double a = src.at(c, y0c, x0c);
        double b = src.at(c, y0c, x1c);
        double cc = src.at(c, y1c, x0c);
        double d = src.at(c, y1c, x1c);
        double v = (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * cc + fx * d);
        dst.at(c, dy, dx) = static_cast<float>(v);
      }
    }
  }
  return dst;
}

Image crop_image(const Image& src, int x, int y, int w, int h) {
  if (w < 1 || h < 1 || x < 0 || y < 0 || x + w > src.width || y + h > src.height) {
    throw std::invalid_argument("crop rectangle out of bounds");
  }
  Image dst(w, h);
  for (int c = 0; c < 3; ++c)
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < w; ++xx) dst.at(c, yy, xx) = src.at(c, y + yy, x + xx);
  return dst;
}

Image hflip_image(const Image& src) {
  Image dst(src.width, src.height);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < src.height; ++y)
      for (int x = 0; x < src.width; ++x) dst.at(c, y, x) = src.at(c, y, src.width - 1 - x);
  return dst;
}

Image load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image file: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw std::runtime_error(path + ": not a binary PPM (P6) file");
  auto next_int = [&in, &path]() {
    // skip whitespace and '#' comment lines
    for (;;) {
      int ch = in.peek();
      if (ch == '#') {
        std::string line;
        std::getline(in, line);
      } else if (std::isspace(ch)) {
        in.get();
      } else {
        break;
      }
    }
    int v = -1;
    in >> v;
    if (!in || v < 0) throw std::runtime_error(path + ": malformed PPM header");
    return v;
  };
  int w = next_int();
  int h = next_int();
  int maxval = next_int();
  if (maxval != 255) throw std::runtime_error(path + ": only 8-bit PPM supported");
  in.get();  // single whitespace after header
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw std::runtime_error(path + ": truncated PPM payload");
  }
  Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = raw[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0f;
  return img;
}

void save_ppm(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image file: " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(img.width) * img.height * 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
        raw[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] =
            static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw std::runtime_error("short write: " + path);
}

}  // namespace rsn
