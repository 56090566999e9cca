#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "zsnas/errors.hpp"

namespace zsnas {

// Dense row-major tensor of doubles. Shapes are small (rank <= 4) and all
// graph computation is desk scale, so there is no view machinery: a Tensor
// owns its values.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  Tensor() = default;

  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    v.assign(numel(shape), 0.0);
  }

  Tensor(std::vector<int> s, std::vector<double> values)
      : shape(std::move(s)), v(std::move(values)) {
    if (v.size() != numel(shape)) {
      throw config_error("tensor values do not match shape product");
    }
  }

  static std::size_t numel(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      if (d <= 0) throw config_error("tensor dimensions must be positive");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::size_t size() const { return v.size(); }
  double* data() { return v.data(); }
  const double* data() const { return v.data(); }

  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  void fill(double x) { std::fill(v.begin(), v.end(), x); }

  void resize(const std::vector<int>& s) {
    if (shape != s) {
      shape = s;
      v.assign(numel(s), 0.0);
    }
  }

  bool all_finite() const {
    for (double x : v) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  }
};

inline std::string shape_string(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace zsnas
