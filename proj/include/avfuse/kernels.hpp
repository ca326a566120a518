#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "avfuse/matrix.hpp"

namespace avf {

template <typename T>
void check_same_shape(const Matrix<T>& a, const Matrix<T>& b, const char* op) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() +
                         " vs " + b.shape_str());
}

// out = a * b, a: n x k, b: k x m
template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dims differ, " + a.shape_str() + " * " +
                         b.shape_str());
  Matrix<T> out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    T* orow = out.row(i);
    const T* arow = a.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const T aik = arow[k];
      const T* brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

// out = a * b^T, a: n x k, b: m x k
template <typename T>
Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.cols())
    throw DimensionError("matmul_nt: inner dims differ, " + a.shape_str() +
                         " * " + b.shape_str() + "^T");
  Matrix<T> out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const T* arow = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const T* brow = b.row(j);
      T acc = T(0);
      for (std::size_t k = 0; k < a.cols(); ++k) acc += arow[k] * brow[k];
      out(i, j) = acc;
    }
  }
  return out;
}

// out = a^T * b, a: n x k, b: n x m
template <typename T>
Matrix<T> matmul_tn(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows())
    throw DimensionError("matmul_tn: inner dims differ, " + a.shape_str() +
                         "^T * " + b.shape_str());
  Matrix<T> out(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const T* arow = a.row(i);
    const T* brow = b.row(i);
    for (std::size_t p = 0; p < a.cols(); ++p) {
      const T aip = arow[p];
      T* orow = out.row(p);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aip * brow[j];
    }
  }
  return out;
}

// out[i,j] = sum_k x[i,k] w[k,j] + b[j]; bias is 1 x d_out
template <typename T>
Matrix<T> affine(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& b) {
  if (x.cols() != w.rows())
    throw DimensionError("affine: input " + x.shape_str() + " incompatible with weight " +
                         w.shape_str());
  if (b.rows() != 1 || b.cols() != w.cols())
    throw DimensionError("affine: bias " + b.shape_str() + " incompatible with weight " +
                         w.shape_str());
  Matrix<T> out = matmul(x, w);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    T* orow = out.row(i);
    const T* brow = b.row(0);
    for (std::size_t j = 0; j < out.cols(); ++j) orow[j] += brow[j];
  }
  return out;
}

// Row softmax over unmasked key columns; masked columns get probability 0.
// Returns nullopt when every key is masked (the AllMasked signal) — callers
// must take an explicit degradation path, never receive NaN.
template <typename T>
std::optional<Matrix<T>> masked_softmax(const Matrix<T>& scores, const Mask& key_mask) {
  if (key_mask.size() != scores.cols())
    throw DimensionError("masked_softmax: mask length " + std::to_string(key_mask.size()) +
                         " vs " + std::to_string(scores.cols()) + " keys");
  if (!any_of_mask(key_mask)) return std::nullopt;

  Matrix<T> out(scores.rows(), scores.cols());
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    const T* srow = scores.row(i);
    T* orow = out.row(i);
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < scores.cols(); ++j)
      if (key_mask[j] && srow[j] > mx) mx = srow[j];
    T z = T(0);
    for (std::size_t j = 0; j < scores.cols(); ++j) {
      if (key_mask[j]) {
        orow[j] = std::exp(srow[j] - mx);
        z += orow[j];
      } else {
        orow[j] = T(0);
      }
    }
    for (std::size_t j = 0; j < scores.cols(); ++j)
      if (key_mask[j]) orow[j] /= z;
  }
  return out;
}

// Plain row softmax (all keys valid).
template <typename T>
Matrix<T> row_softmax(const Matrix<T>& scores) {
  Mask all(scores.cols(), 1);
  return *masked_softmax(scores, all);
}

// Per-row normalization to zero mean / unit variance (population variance,
// eps-stabilized), then scale by gain and offset by shift (both 1 x d).
// When rstd_out is given, saves 1/sqrt(var+eps) per row for backward reuse.
template <typename T>
Matrix<T> layer_norm(const Matrix<T>& x, const Matrix<T>& gain, const Matrix<T>& shift,
                     T eps, std::vector<T>* rstd_out = nullptr,
                     std::vector<T>* mean_out = nullptr) {
  if (x.cols() < 1) throw DimensionError("layer_norm: zero-width input");
  if (gain.rows() != 1 || gain.cols() != x.cols() || shift.rows() != 1 ||
      shift.cols() != x.cols())
    throw DimensionError("layer_norm: gain/shift must be 1x" + std::to_string(x.cols()));
  if (!(eps > T(0))) throw ConfigError("layer_norm: eps must be > 0");

  Matrix<T> out(x.rows(), x.cols());
  if (rstd_out) rstd_out->resize(x.rows());
  if (mean_out) mean_out->resize(x.rows());
  const std::size_t d = x.cols();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const T* xr = x.row(i);
    T mean = T(0);
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) {
      T c = xr[j] - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T rstd = T(1) / std::sqrt(var + eps);
    if (rstd_out) (*rstd_out)[i] = rstd;
    if (mean_out) (*mean_out)[i] = mean;
    T* orow = out.row(i);
    for (std::size_t j = 0; j < d; ++j)
      orow[j] = (xr[j] - mean) * rstd * gain(0, j) + shift(0, j);
  }
  return out;
}

// Exact GELU: x * Phi(x) with the Gaussian CDF.
template <typename T>
T gelu_scalar(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(M_SQRT1_2)));
}

template <typename T>
T gelu_derivative(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(M_SQRT1_2)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(0.3989422804014327);
  return cdf + x * pdf;
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(same angle).
template <typename T>
Matrix<T> positional_encoding(std::size_t length, std::size_t d_model) {
  if (d_model % 2 != 0)
    throw ConfigError("positional_encoding: d_model must be even, got " +
                      std::to_string(d_model));
  Matrix<T> pe(length, d_model);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < d_model / 2; ++i) {
      const double angle =
          static_cast<double>(pos) /
          std::pow(10000.0, (2.0 * static_cast<double>(i)) / static_cast<double>(d_model));
      pe(pos, 2 * i) = static_cast<T>(std::sin(angle));
      pe(pos, 2 * i + 1) = static_cast<T>(std::cos(angle));
    }
  }
  return pe;
}

}  // namespace avf
