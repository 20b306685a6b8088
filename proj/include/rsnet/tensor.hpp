#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace rsn {

/// Dense float32 tensor, row-major. Activations use NCHW order.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), 0.0f);
  }

  static std::size_t numel_of(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      if (d < 0) throw std::invalid_argument("tensor dim must be nonnegative");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::size_t numel() const { return data.size(); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }

  // NCHW accessors; only valid for 4-d tensors.
  float& at(int n, int c, int h, int w) {
    return data[idx(n, c, h, w)];
  }
  float at(int n, int c, int h, int w) const {
    return data[idx(n, c, h, w)];
  }
  std::size_t idx(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w;
  }

  void fill(float v) { std::fill(data.begin(), data.end(), v); }
  void zero() { fill(0.0f); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

inline std::string shape_string(const std::vector<int>& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

}  // namespace rsn
