#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "avfuse/matrix.hpp"

namespace avf {

struct ParamRef {
  std::string name;
  MatrixF* value = nullptr;
  bool decay = false;  // weight matrices decay; biases, gains and shifts do not
};

inline double global_grad_norm(const std::vector<MatrixD>& grads) {
  double sq = 0;
  for (const auto& g : grads)
    for (std::size_t i = 0; i < g.size(); ++i) sq += g.data()[i] * g.data()[i];
  return std::sqrt(sq);
}

// Scales gradients in place when the global norm exceeds max_norm; returns
// the pre-clip norm. max_norm <= 0 disables clipping.
inline double clip_gradients(std::vector<MatrixD>& grads, double max_norm) {
  const double norm = global_grad_norm(grads);
  if (max_norm > 0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads)
      for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] *= s;
  }
  return norm;
}

// Adaptive moment estimation with decoupled weight decay. Moment state is
// kept in double; parameters stay float.
class AdamW {
 public:
  AdamW(double lr, double beta1, double beta2, double weight_decay, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), wd_(weight_decay), eps_(eps) {}

  void step(const std::vector<ParamRef>& params, const std::vector<MatrixD>& grads,
            double lr_scale = 1.0) {
    if (params.size() != grads.size())
      throw DimensionError("AdamW: parameter/gradient count mismatch");
    if (m_.empty()) {
      m_.reserve(params.size());
      v_.reserve(params.size());
      for (const auto& p : params) {
        m_.emplace_back(p.value->rows(), p.value->cols());
        v_.emplace_back(p.value->rows(), p.value->cols());
      }
    }
    ++t_;
    const double lr = lr_ * lr_scale;
    const double bc1 = 1.0 - std::pow(b1_, t_);
    const double bc2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t k = 0; k < params.size(); ++k) {
      MatrixF& p = *params[k].value;
      const MatrixD& g = grads[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = g.data()[i];
        m_[k].data()[i] = b1_ * m_[k].data()[i] + (1.0 - b1_) * gi;
        v_[k].data()[i] = b2_ * v_[k].data()[i] + (1.0 - b2_) * gi * gi;
        const double mhat = m_[k].data()[i] / bc1;
        const double vhat = v_[k].data()[i] / bc2;
        double x = static_cast<double>(p.data()[i]);
        x -= lr * (mhat / (std::sqrt(vhat) + eps_) +
                   (params[k].decay ? wd_ * x : 0.0));
        p.data()[i] = static_cast<float>(x);
      }
    }
  }

  int steps_taken() const { return t_; }

 private:
  double lr_, b1_, b2_, wd_, eps_;
  int t_ = 0;
  std::vector<MatrixD> m_, v_;
};

}  // namespace avf
