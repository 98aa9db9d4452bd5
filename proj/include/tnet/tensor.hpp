#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "tnet/error.hpp"

namespace tnet {

// Dense row-major array of doubles with an explicit shape.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;

  Tensor(std::vector<std::size_t> shape_in, std::vector<double> data_in)
      : shape(std::move(shape_in)), data(std::move(data_in)) {
    if (data.size() != shape_numel(shape))
      fail(ErrorCategory::dimension,
           "tensor data size " + std::to_string(data.size()) +
               " does not match shape " + shape_to_string(shape));
  }

  static Tensor zeros(std::vector<std::size_t> shape_in) {
    std::size_t n = shape_numel(shape_in);
    Tensor t;
    t.shape = std::move(shape_in);
    t.data.assign(n, 0.0);
    return t;
  }

  static std::size_t shape_numel(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  static std::string shape_to_string(const std::vector<std::size_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out += "x";
      out += std::to_string(s[i]);
    }
    return out + "]";
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }

  std::size_t dim(std::size_t i) const {
    if (i >= shape.size())
      fail(ErrorCategory::dimension,
           "axis " + std::to_string(i) + " out of range for " + shape_str());
    return shape[i];
  }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  double& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  bool finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  std::string shape_str() const { return shape_to_string(shape); }
};

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    fail(ErrorCategory::dimension,
         "matmul needs rank-2 operands, got " + a.shape_str() + " and " + b.shape_str());
  if (a.shape[1] != b.shape[0])
    fail(ErrorCategory::dimension,
         "matmul shape mismatch: " + a.shape_str() + " x " + b.shape_str());
  std::size_t n = a.shape[0], k = a.shape[1], m = b.shape[1];
  Tensor out = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a.data.data() + i * k;
    double* orow = out.data.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      double av = arow[p];
      const double* brow = b.data.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

}  // namespace tnet
