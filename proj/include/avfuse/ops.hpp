#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "avfuse/kernels.hpp"
#include "avfuse/tape.hpp"

// Differentiable wrappers over the value kernels. Every op computes its value
// eagerly and records one backward step on the tape.
namespace avf::ops {

template <typename T>
VarPtr<T> constant(Tape<T>& tape, Matrix<T> value) {
  return tape.make(std::move(value));
}

template <typename T>
VarPtr<T> add(Tape<T>& tape, const VarPtr<T>& a, const VarPtr<T>& b) {
  check_same_shape(a->value, b->value, "add");
  Matrix<T> out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b->value.data()[i];
  auto o = tape.make(std::move(out));
  tape.record([a, b, o] {
    for (std::size_t i = 0; i < o->grad.size(); ++i) {
      a->grad.data()[i] += o->grad.data()[i];
      b->grad.data()[i] += o->grad.data()[i];
    }
  });
  return o;
}

template <typename T>
VarPtr<T> add_const(Tape<T>& tape, const VarPtr<T>& a, const Matrix<T>& c) {
  check_same_shape(a->value, c, "add_const");
  Matrix<T> out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += c.data()[i];
  auto o = tape.make(std::move(out));
  tape.record([a, o] {
    for (std::size_t i = 0; i < o->grad.size(); ++i)
      a->grad.data()[i] += o->grad.data()[i];
  });
  return o;
}

template <typename T>
VarPtr<T> scale(Tape<T>& tape, const VarPtr<T>& a, T c) {
  Matrix<T> out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= c;
  auto o = tape.make(std::move(out));
  tape.record([a, o, c] {
    for (std::size_t i = 0; i < o->grad.size(); ++i)
      a->grad.data()[i] += c * o->grad.data()[i];
  });
  return o;
}

template <typename T>
VarPtr<T> hadamard(Tape<T>& tape, const VarPtr<T>& a, const VarPtr<T>& b) {
  check_same_shape(a->value, b->value, "hadamard");
  Matrix<T> out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= b->value.data()[i];
  auto o = tape.make(std::move(out));
  tape.record([a, b, o] {
    for (std::size_t i = 0; i < o->grad.size(); ++i) {
      a->grad.data()[i] += o->grad.data()[i] * b->value.data()[i];
      b->grad.data()[i] += o->grad.data()[i] * a->value.data()[i];
    }
  });
  return o;
}

// out = g (.) h + (1 - g) (.) c  — the convex gate blend.
template <typename T>
VarPtr<T> gate_blend(Tape<T>& tape, const VarPtr<T>& g, const VarPtr<T>& h,
                     const VarPtr<T>& c) {
  check_same_shape(g->value, h->value, "gate_blend");
  check_same_shape(g->value, c->value, "gate_blend");
  Matrix<T> out(g->value.rows(), g->value.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T gv = g->value.data()[i];
    out.data()[i] = gv * h->value.data()[i] + (T(1) - gv) * c->value.data()[i];
  }
  auto o = tape.make(std::move(out));
  tape.record([g, h, c, o] {
    for (std::size_t i = 0; i < o->grad.size(); ++i) {
      const T go = o->grad.data()[i];
      const T gv = g->value.data()[i];
      g->grad.data()[i] += go * (h->value.data()[i] - c->value.data()[i]);
      h->grad.data()[i] += go * gv;
      c->grad.data()[i] += go * (T(1) - gv);
    }
  });
  return o;
}

template <typename T>
VarPtr<T> matmul(Tape<T>& tape, const VarPtr<T>& a, const VarPtr<T>& b) {
  auto o = tape.make(avf::matmul(a->value, b->value));
  tape.record([a, b, o] {
    const Matrix<T> da = matmul_nt(o->grad, b->value);
    const Matrix<T> db = matmul_tn(a->value, o->grad);
    for (std::size_t i = 0; i < da.size(); ++i) a->grad.data()[i] += da.data()[i];
    for (std::size_t i = 0; i < db.size(); ++i) b->grad.data()[i] += db.data()[i];
  });
  return o;
}

// out = a * b^T
template <typename T>
VarPtr<T> matmul_nt(Tape<T>& tape, const VarPtr<T>& a, const VarPtr<T>& b) {
  auto o = tape.make(avf::matmul_nt(a->value, b->value));
  tape.record([a, b, o] {
    const Matrix<T> da = avf::matmul(o->grad, b->value);
    const Matrix<T> db = matmul_tn(o->grad, a->value);
    for (std::size_t i = 0; i < da.size(); ++i) a->grad.data()[i] += da.data()[i];
    for (std::size_t i = 0; i < db.size(); ++i) b->grad.data()[i] += db.data()[i];
  });
  return o;
}

template <typename T>
VarPtr<T> affine(Tape<T>& tape, const VarPtr<T>& x, const VarPtr<T>& w,
                 const VarPtr<T>& b) {
  auto o = tape.make(avf::affine(x->value, w->value, b->value));
  tape.record([x, w, b, o] {
    const Matrix<T> dx = matmul_nt(o->grad, w->value);
    const Matrix<T> dw = matmul_tn(x->value, o->grad);
    for (std::size_t i = 0; i < dx.size(); ++i) x->grad.data()[i] += dx.data()[i];
    for (std::size_t i = 0; i < dw.size(); ++i) w->grad.data()[i] += dw.data()[i];
    for (std::size_t i = 0; i < o->grad.rows(); ++i)
      for (std::size_t j = 0; j < o->grad.cols(); ++j)
        b->grad(0, j) += o->grad(i, j);
  });
  return o;
}

template <typename T>
VarPtr<T> concat_cols(Tape<T>& tape, const VarPtr<T>& a, const VarPtr<T>& b) {
  if (a->value.rows() != b->value.rows())
    throw DimensionError("concat_cols: row counts differ, " + a->value.shape_str() +
                         " vs " + b->value.shape_str());
  const std::size_t ca = a->value.cols(), cb = b->value.cols();
  Matrix<T> out(a->value.rows(), ca + cb);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t j = 0; j < ca; ++j) out(i, j) = a->value(i, j);
    for (std::size_t j = 0; j < cb; ++j) out(i, ca + j) = b->value(i, j);
  }
  auto o = tape.make(std::move(out));
  tape.record([a, b, o, ca, cb] {
    for (std::size_t i = 0; i < o->grad.rows(); ++i) {
      for (std::size_t j = 0; j < ca; ++j) a->grad(i, j) += o->grad(i, j);
      for (std::size_t j = 0; j < cb; ++j) b->grad(i, j) += o->grad(i, ca + j);
    }
  });
  return o;
}

template <typename T>
VarPtr<T> slice_cols(Tape<T>& tape, const VarPtr<T>& x, std::size_t c0, std::size_t len) {
  if (c0 + len > x->value.cols())
    throw DimensionError("slice_cols: slice past " + x->value.shape_str());
  Matrix<T> out(x->value.rows(), len);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < len; ++j) out(i, j) = x->value(i, c0 + j);
  auto o = tape.make(std::move(out));
  tape.record([x, o, c0, len] {
    for (std::size_t i = 0; i < o->grad.rows(); ++i)
      for (std::size_t j = 0; j < len; ++j) x->grad(i, c0 + j) += o->grad(i, j);
  });
  return o;
}

// Row softmax over unmasked keys. Callers must already have taken the safe
// path when every key is masked; hitting that case here is a logic bug.
template <typename T>
VarPtr<T> row_softmax_masked(Tape<T>& tape, const VarPtr<T>& scores, Mask key_mask) {
  std::optional<Matrix<T>> p = masked_softmax(scores->value, key_mask);
  if (!p)
    throw std::logic_error("row_softmax_masked: all keys masked; caller must use the safe path");
  auto o = tape.make(std::move(*p));
  tape.record([scores, o, key_mask = std::move(key_mask)] {
    for (std::size_t i = 0; i < o->grad.rows(); ++i) {
      T dot = T(0);
      for (std::size_t j = 0; j < o->grad.cols(); ++j)
        if (key_mask[j]) dot += o->grad(i, j) * o->value(i, j);
      for (std::size_t j = 0; j < o->grad.cols(); ++j)
        if (key_mask[j])
          scores->grad(i, j) += o->value(i, j) * (o->grad(i, j) - dot);
    }
  });
  return o;
}

template <typename T>
VarPtr<T> layer_norm(Tape<T>& tape, const VarPtr<T>& x, const VarPtr<T>& gain,
                     const VarPtr<T>& shift, T eps) {
  std::vector<T> rstd, mean;
  auto o = tape.make(avf::layer_norm(x->value, gain->value, shift->value, eps, &rstd, &mean));
  tape.record([x, gain, shift, o, rstd = std::move(rstd), mean = std::move(mean)] {
    const std::size_t d = x->value.cols();
    for (std::size_t i = 0; i < x->value.rows(); ++i) {
      T sum_gy = T(0), sum_gy_xhat = T(0);
      for (std::size_t j = 0; j < d; ++j) {
        const T xhat = (x->value(i, j) - mean[i]) * rstd[i];
        const T gy = o->grad(i, j) * gain->value(0, j);
        sum_gy += gy;
        sum_gy_xhat += gy * xhat;
        gain->grad(0, j) += o->grad(i, j) * xhat;
        shift->grad(0, j) += o->grad(i, j);
      }
      const T inv_d = T(1) / static_cast<T>(d);
      for (std::size_t j = 0; j < d; ++j) {
        const T xhat = (x->value(i, j) - mean[i]) * rstd[i];
        const T gy = o->grad(i, j) * gain->value(0, j);
        x->grad(i, j) += rstd[i] * (gy - inv_d * sum_gy - xhat * inv_d * sum_gy_xhat);
      }
    }
  });
  return o;
}

template <typename T>
VarPtr<T> gelu(Tape<T>& tape, const VarPtr<T>& x) {
  Matrix<T> out(x->value.rows(), x->value.cols());
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] = gelu_scalar(x->value.data()[i]);
  auto o = tape.make(std::move(out));
  tape.record([x, o] {
    for (std::size_t i = 0; i < o->grad.size(); ++i)
      x->grad.data()[i] += o->grad.data()[i] * gelu_derivative(x->value.data()[i]);
  });
  return o;
}

template <typename T>
VarPtr<T> sigmoid(Tape<T>& tape, const VarPtr<T>& x) {
  Matrix<T> out(x->value.rows(), x->value.cols());
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] = sigmoid_scalar(x->value.data()[i]);
  auto o = tape.make(std::move(out));
  tape.record([x, o] {
    for (std::size_t i = 0; i < o->grad.size(); ++i) {
      const T s = o->value.data()[i];
      x->grad.data()[i] += o->grad.data()[i] * s * (T(1) - s);
    }
  });
  return o;
}

// Inverted dropout; identity when disabled or rate == 0.
template <typename T>
VarPtr<T> dropout(Tape<T>& tape, const VarPtr<T>& x, double rate, bool enabled, Rng* rng) {
  if (!enabled || rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("dropout: rate must be < 1");
  if (!rng) throw ConfigError("dropout: rng required in train mode");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x->value.size());
  Matrix<T> out(x->value.rows(), x->value.cols());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng->bernoulli(rate) ? T(0) : keep_scale;
    out.data()[i] = x->value.data()[i] * mask[i];
  }
  auto o = tape.make(std::move(out));
  tape.record([x, o, mask = std::move(mask)] {
    for (std::size_t i = 0; i < o->grad.size(); ++i)
      x->grad.data()[i] += o->grad.data()[i] * mask[i];
  });
  return o;
}

template <typename T>
VarPtr<T> sum_all(Tape<T>& tape, const VarPtr<T>& x) {
  T s = T(0);
  for (std::size_t i = 0; i < x->value.size(); ++i) s += x->value.data()[i];
  auto o = tape.make(Matrix<T>(1, 1, s));
  tape.record([x, o] {
    const T g = o->grad(0, 0);
    for (std::size_t i = 0; i < x->grad.size(); ++i) x->grad.data()[i] += g;
  });
  return o;
}

}  // namespace avf::ops
