#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "icbir/error.hpp"

namespace icbir {

// Dense row-major float tensor.  Deliberately minimal: shape bookkeeping and
// flat storage; all math lives in the modules that own the semantics.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> v;

  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape) {
    Tensor t;
    t.shape = std::move(shape);
    t.v.assign(t.count_from_shape(), 0.0f);
    return t;
  }

  static Tensor from(std::vector<std::size_t> shape, std::vector<float> values) {
    Tensor t;
    t.shape = std::move(shape);
    t.v = std::move(values);
    if (t.v.size() != t.count_from_shape()) {
      raise(ErrorCode::Dimension, "tensor: value count does not match shape");
    }
    return t;
  }

  std::size_t size() const { return v.size(); }
  float* data() { return v.data(); }
  const float* data() const { return v.data(); }
  float& operator[](std::size_t i) { return v[i]; }
  float operator[](std::size_t i) const { return v[i]; }

  // Row pointer for 2-D tensors.
  float* row(std::size_t r) { return v.data() + r * shape.back(); }
  const float* row(std::size_t r) const { return v.data() + r * shape.back(); }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  bool all_finite() const {
    for (float x : v) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  }

 private:
  std::size_t count_from_shape() const {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    raise(ErrorCode::Dimension, std::string(what) + ": operand shapes differ");
  }
}

inline void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) {
    raise(ErrorCode::Numeric, std::string(what) + ": tensor contains NaN or Inf");
  }
}

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace icbir
