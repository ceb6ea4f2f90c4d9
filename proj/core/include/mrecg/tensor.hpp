#ifndef MRECG_TENSOR_HPP_
#define MRECG_TENSOR_HPP_

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mrecg {

// Dense row-major tensor of 64-bit reals. Activations are NCHW, conv
// weights OIHW (O, I/groups, kh, kw).
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(count(shape)), 0.0);
  }
  Tensor(std::vector<int> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<size_t>(count(shape)) != data.size()) {
      throw std::invalid_argument("Tensor: shape/data size mismatch");
    }
  }

  static int64_t count(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d <= 0) throw std::invalid_argument("Tensor: non-positive dim");
      n *= d;
    }
    return n;
  }

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int dim(size_t i) const { return shape.at(i); }
  int rank() const { return static_cast<int>(shape.size()); }

  // NCHW accessor.
  double& at4(int n, int c, int h, int w) {
    return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) *
                    shape[3] +
                w];
  }
  double at4(int n, int c, int h, int w) const {
    return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) *
                    shape[3] +
                w];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  // Slice of the leading dimension: rows [first, first+n).
  Tensor slice0(int first, int n) const {
    if (shape.empty() || first < 0 || n <= 0 || first + n > shape[0]) {
      throw std::out_of_range("Tensor::slice0: range out of bounds");
    }
    int64_t stride = size() / shape[0];
    std::vector<int> s = shape;
    s[0] = n;
    std::vector<double> d(data.begin() + first * stride,
                          data.begin() + (first + n) * stride);
    return Tensor(std::move(s), std::move(d));
  }

  bool all_finite() const;
};

std::string shape_str(const std::vector<int>& s);

inline void check_shape(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace mrecg

#endif  // MRECG_TENSOR_HPP_
