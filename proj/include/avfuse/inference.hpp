#pragma once

#include "avfuse/model.hpp"

namespace avf {

struct WindowLogits {
  std::size_t start = 0;
  MatrixF logits;  // W x n_classes
  std::size_t pad_len = 0;
};

// Per-frame accumulated logits and coverage counts over a full video.
struct LogitTrack {
  MatrixF sum_logits;  // T x n_classes
  std::vector<int> coverage;
};

LogitTrack accumulate_logits(const std::vector<WindowLogits>& windows, std::size_t T);

// Mean of raw (pre-softmax) logits over all windows covering each frame,
// excluding padded positions. Throws if any frame is uncovered.
MatrixF soft_vote(const std::vector<WindowLogits>& windows, std::size_t T);

// Per-frame argmax; ties break toward the lowest class index.
std::vector<int> argmax_labels(const MatrixF& logits);

// Sliding median over label ids with edge replication; k must be odd.
std::vector<int> median_filter(const std::vector<int>& labels, int k = 11);

// Majority vote in the same window shape (ties -> lowest label id); offered
// for comparison with median smoothing over arbitrary label ids.
std::vector<int> majority_filter(const std::vector<int>& labels, int k = 11);

enum class Smoother { kMedian, kMajority, kNone };

Smoother parse_smoother(const std::string& name);

struct VideoPrediction {
  std::vector<int> labels;  // T, smoothed
  MatrixF avg_logits;       // T x n_classes
};

// windows -> forward (eval mode, no validity filter) -> soft vote -> argmax
// -> smoothing.
VideoPrediction predict_video(FusionModel<float>& model, const FeatureSequence& seq,
                              std::size_t W = 64, std::size_t S = 8, int median_k = 11,
                              Smoother smoother = Smoother::kMedian);

}  // namespace avf
