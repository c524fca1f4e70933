#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mapclip/common.hpp"

namespace mapclip::numerics {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major tensor. Always contiguous; ops that need views copy.
template <typename R>
struct Tensor {
  Shape shape;
  std::vector<R> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<R> d) : shape(std::move(s)), data(std::move(d)) {
    require(numel_of(shape) == static_cast<int64_t>(data.size()),
            "tensor: data size does not match shape " + shape_str(shape));
  }

  static Tensor zeros(Shape s) {
    Tensor t;
    t.shape = std::move(s);
    t.data.assign(static_cast<size_t>(numel_of(t.shape)), R(0));
    return t;
  }

  static Tensor full(Shape s, R v) {
    Tensor t = zeros(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor scalar(R v) { return Tensor({1}, {v}); }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t dim(size_t i) const { return shape.at(i); }
  size_t rank() const { return shape.size(); }

  R* ptr() { return data.data(); }
  const R* ptr() const { return data.data(); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (R v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename R2>
  Tensor<R2> cast() const {
    Tensor<R2> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<R2>(data[i]);
    return out;
  }
};

}  // namespace mapclip::numerics
