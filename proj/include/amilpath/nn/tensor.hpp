#pragma once
// Dense row-major double tensor. Double precision throughout so analytic
// gradients can be checked against central finite differences at 1e-3
// relative tolerance.

#include <cblas.h>

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "amilpath/common.hpp"

namespace amilpath::nn {

struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
  }
  Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    require(static_cast<int64_t>(data.size()) == numel_of(shape),
            "tensor data size does not match shape");
  }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      require(d >= 0, "negative tensor dimension");
      n *= d;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const {
    require(i >= 0 && i < ndim(), "tensor dim index ", i, " out of range");
    return shape[static_cast<size_t>(i)];
  }

  Tensor reshaped(std::vector<int> s) const {
    require(numel_of(s) == numel(), "reshape changes element count");
    return Tensor(std::move(s), data);
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::string out = "(";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) out += ",";
      out += std::to_string(shape[i]);
    }
    return out + ")";
  }
};

// Flat offset into an NCHW tensor.
inline size_t off4(const Tensor& t, int n, int c, int h, int w) {
  return ((static_cast<size_t>(n) * static_cast<size_t>(t.dim(1)) + static_cast<size_t>(c)) *
              static_cast<size_t>(t.dim(2)) +
          static_cast<size_t>(h)) *
             static_cast<size_t>(t.dim(3)) +
         static_cast<size_t>(w);
}

// C = alpha * op(A) op(B) + beta * C with row-major dense buffers.
// op(A) is (m,k), op(B) is (k,n).
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a,
                 const double* b, double beta, double* c) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, trans_a ? m : k, b,
              trans_b ? k : n, beta, c, n);
}

}  // namespace amilpath::nn
