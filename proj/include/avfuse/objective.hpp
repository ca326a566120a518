#pragma once

#include <span>
#include <vector>

#include "avfuse/ops.hpp"

namespace avf {

// Per-class loss weights from effective numbers of samples, normalized to
// mean 1 (sum = n_classes).
struct ClassWeights {
  std::vector<double> w;
  double beta = 0.0;
  std::vector<long long> counts;
};

inline ClassWeights effective_number_weights(const std::vector<long long>& counts, double beta) {
  if (!(beta >= 0.0 && beta < 1.0))
    throw ConfigError("effective_number_weights: beta must lie in [0, 1)");
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c] <= 0)
      throw ConfigError("effective_number_weights: class " + std::to_string(c) +
                        " has zero samples; drop it from the label set or smooth the counts");

  ClassWeights cw;
  cw.beta = beta;
  cw.counts = counts;
  cw.w.resize(counts.size());
  double sum = 0.0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    // (1 - beta) / (1 - beta^n); beta = 0 gives uniform weights
    const double denom = 1.0 - std::pow(beta, static_cast<double>(counts[c]));
    cw.w[c] = (1.0 - beta) / denom;
    sum += cw.w[c];
  }
  const double k = static_cast<double>(counts.size());
  for (double& w : cw.w) w *= k / sum;
  return cw;
}

inline std::vector<double> uniform_weights(std::size_t n_classes) {
  return std::vector<double>(n_classes, 1.0);
}

// Focal loss summed over valid frames (label != -1):
//   sum_i -w_{y_i} (1 - p_t)^gamma log(p_t),  p_t clamped to >= 1e-12 in the log.
// Returns the unnormalized sum plus the valid count so batch-level code can
// normalize once across samples.
template <typename T>
struct FocalSum {
  VarPtr<T> loss_sum;        // 1x1
  std::size_t valid_count = 0;
};

template <typename T>
FocalSum<T> focal_loss_sum(Tape<T>& tape, const VarPtr<T>& logits, std::span<const int> labels,
                           const std::vector<double>& weights, double gamma) {
  constexpr double kProbFloor = 1e-12;
  const std::size_t n = logits->value.rows();
  const std::size_t k = logits->value.cols();
  if (labels.size() != n)
    throw DimensionError("focal_loss: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " logit rows");
  if (weights.size() != k)
    throw DimensionError("focal_loss: weight count " + std::to_string(weights.size()) +
                         " != " + std::to_string(k) + " classes");
  if (gamma < 0) throw ConfigError("focal_loss: gamma must be >= 0");
  for (int y : labels)
    if (y < -1 || y >= static_cast<int>(k))
      throw ConfigError("focal_loss: label " + std::to_string(y) + " outside {-1,0..}" );

  // forward: per-row stable softmax, saved for backward
  Matrix<T> probs(n, k);
  double loss = 0.0;
  std::size_t valid = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0) continue;
    const T* z = logits->value.row(i);
    T mx = z[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, z[j]);
    T sum = T(0);
    T* prow = probs.row(i);
    for (std::size_t j = 0; j < k; ++j) {
      prow[j] = std::exp(z[j] - mx);
      sum += prow[j];
    }
    for (std::size_t j = 0; j < k; ++j) prow[j] /= sum;

    const double pt = static_cast<double>(prow[static_cast<std::size_t>(y)]);
    const double log_pt = std::log(std::max(pt, kProbFloor));
    const double focal = gamma == 0.0 ? 1.0 : std::pow(std::max(1.0 - pt, 0.0), gamma);
    loss += -weights[static_cast<std::size_t>(y)] * focal * log_pt;
    ++valid;
  }

  auto out = tape.make(Matrix<T>(1, 1, static_cast<T>(loss)));
  auto labels_vec = std::vector<int>(labels.begin(), labels.end());
  tape.record([logits, out, probs = std::move(probs), labels = std::move(labels_vec),
               weights, gamma] {
    const T g = out->grad(0, 0);
    if (g == T(0)) return;
    const std::size_t k2 = logits->value.cols();
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const int y = labels[i];
      if (y < 0) continue;
      const T* prow = probs.row(i);
      const double pt = static_cast<double>(prow[static_cast<std::size_t>(y)]);
      const double w = weights[static_cast<std::size_t>(y)];
      const double one_minus = std::max(1.0 - pt, 0.0);
      const double log_pt = std::log(std::max(pt, kProbFloor));
      // d/dpt of -w (1-pt)^gamma log(max(pt, floor))
      double dpt = 0.0;
      if (gamma > 0.0 && one_minus > 0.0)
        dpt += w * gamma * std::pow(one_minus, gamma - 1.0) * log_pt;
      if (pt > kProbFloor)
        dpt -= w * (gamma == 0.0 ? 1.0 : std::pow(one_minus, gamma)) / pt;
      for (std::size_t j = 0; j < k2; ++j) {
        const double delta = j == static_cast<std::size_t>(y) ? 1.0 : 0.0;
        logits->grad(i, j) +=
            g * static_cast<T>(dpt * pt * (delta - static_cast<double>(prow[j])));
      }
    }
  });
  return {out, valid};
}

// Mean over valid frames; the spec-level focal loss. Throws when every frame
// is invalid rather than silently returning zero.
template <typename T>
FocalSum<T> focal_loss_mean(Tape<T>& tape, const VarPtr<T>& logits, std::span<const int> labels,
                            const std::vector<double>& weights, double gamma) {
  FocalSum<T> sum = focal_loss_sum(tape, logits, labels, weights, gamma);
  if (sum.valid_count == 0)
    throw AllInvalidError("focal_loss: every frame is labeled -1");
  return {ops::scale(tape, sum.loss_sum, T(1) / static_cast<T>(sum.valid_count)),
          sum.valid_count};
}

}  // namespace avf
