#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sanet {

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline int64_t numel_of(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int e : shape) {
    if (e <= 0)
      throw std::invalid_argument("tensor extents must be positive, got " + shape_str(shape));
    n *= e;
  }
  return n;
}

// Dense row-major n-d array over a scalar type. Plain value semantics; the ops
// in ops.hpp never mutate their inputs.
template <class S>
struct TensorT {
  std::vector<int> shape;
  std::vector<S> data;

  TensorT() = default;
  explicit TensorT(std::vector<int> shp) : shape(std::move(shp)), data((size_t)numel_of(shape), S(0)) {}
  TensorT(std::vector<int> shp, std::vector<S> values) : shape(std::move(shp)), data(std::move(values)) {
    if (numel_of(shape) != (int64_t)data.size())
      throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
  }

  static TensorT full(std::vector<int> shp, S v) {
    TensorT t(std::move(shp));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static TensorT scalar(S v) { return TensorT({1}, {v}); }

  int64_t numel() const { return (int64_t)data.size(); }
  int ndim() const { return (int)shape.size(); }
  int dim(int i) const { return shape[(size_t)i]; }
  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (S v : data)
      if (!std::isfinite((double)v)) return false;
    return true;
  }
};

using Tensor = TensorT<float>;

template <class To, class From>
TensorT<To> cast_tensor(const TensorT<From>& t) {
  TensorT<To> out(t.shape);
  for (size_t i = 0; i < t.data.size(); ++i) out.data[i] = (To)t.data[i];
  return out;
}

}  // namespace sanet
