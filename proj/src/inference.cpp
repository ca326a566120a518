#include "avfuse/inference.hpp"

#include <algorithm>

namespace avf {

LogitTrack accumulate_logits(const std::vector<WindowLogits>& windows, std::size_t T) {
  if (T == 0) throw DimensionError("soft_vote: T must be >= 1");
  if (windows.empty()) throw DimensionError("soft_vote: no windows");
  const std::size_t k = windows.front().logits.cols();

  LogitTrack track;
  track.sum_logits = MatrixF(T, k);
  track.coverage.assign(T, 0);
  for (const auto& w : windows) {
    if (w.logits.cols() != k) throw DimensionError("soft_vote: inconsistent class counts");
    if (w.pad_len >= w.logits.rows() && w.logits.rows() > 0 && w.pad_len > 0)
      throw DimensionError("soft_vote: fully padded window");
    const std::size_t unpadded = w.logits.rows() - w.pad_len;
    for (std::size_t i = 0; i < unpadded; ++i) {
      const std::size_t t = w.start + i;
      if (t >= T) throw DimensionError("soft_vote: window position past end of video");
      float* acc = track.sum_logits.row(t);
      const float* src = w.logits.row(i);
      for (std::size_t j = 0; j < k; ++j) acc[j] += src[j];
      ++track.coverage[t];
    }
  }
  for (std::size_t t = 0; t < T; ++t)
    if (track.coverage[t] == 0)
      throw DimensionError("soft_vote: frame " + std::to_string(t) + " covered by no window");
  return track;
}

MatrixF soft_vote(const std::vector<WindowLogits>& windows, std::size_t T) {
  LogitTrack track = accumulate_logits(windows, T);
  for (std::size_t t = 0; t < T; ++t) {
    float* row = track.sum_logits.row(t);
    const float inv = 1.0f / static_cast<float>(track.coverage[t]);
    for (std::size_t j = 0; j < track.sum_logits.cols(); ++j) row[j] *= inv;
  }
  return std::move(track.sum_logits);
}

std::vector<int> argmax_labels(const MatrixF& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const float* row = logits.row(i);
    int best = 0;
    for (std::size_t j = 1; j < logits.cols(); ++j)
      if (row[j] > row[best]) best = static_cast<int>(j);
    out[i] = best;
  }
  return out;
}

std::vector<int> median_filter(const std::vector<int>& labels, int k) {
  if (k < 1 || k % 2 == 0)
    throw ConfigError("median_filter: kernel size must be odd and >= 1, got " +
                      std::to_string(k));
  if (k == 1 || labels.empty()) return labels;

  const int T = static_cast<int>(labels.size());
  const int h = k / 2;
  std::vector<int> out(labels.size());
  std::vector<int> window(static_cast<std::size_t>(k));
  for (int t = 0; t < T; ++t) {
    for (int o = -h; o <= h; ++o) {
      const int idx = std::clamp(t + o, 0, T - 1);  // edge replication
      window[static_cast<std::size_t>(o + h)] = labels[static_cast<std::size_t>(idx)];
    }
    std::nth_element(window.begin(), window.begin() + h, window.end());
    out[static_cast<std::size_t>(t)] = window[static_cast<std::size_t>(h)];
  }
  return out;
}

std::vector<int> majority_filter(const std::vector<int>& labels, int k) {
  if (k < 1 || k % 2 == 0)
    throw ConfigError("majority_filter: kernel size must be odd and >= 1, got " +
                      std::to_string(k));
  if (k == 1 || labels.empty()) return labels;

  const int T = static_cast<int>(labels.size());
  const int h = k / 2;
  std::vector<int> out(labels.size());
  for (int t = 0; t < T; ++t) {
    std::array<int, kNumClasses> votes{};
    for (int o = -h; o <= h; ++o) {
      const int idx = std::clamp(t + o, 0, T - 1);
      const int lab = labels[static_cast<std::size_t>(idx)];
      if (lab >= 0 && lab < kNumClasses) ++votes[static_cast<std::size_t>(lab)];
    }
    int best = 0;
    for (int c = 1; c < kNumClasses; ++c)
      if (votes[static_cast<std::size_t>(c)] > votes[static_cast<std::size_t>(best)]) best = c;
    out[static_cast<std::size_t>(t)] = best;
  }
  return out;
}

Smoother parse_smoother(const std::string& name) {
  if (name == "median") return Smoother::kMedian;
  if (name == "majority") return Smoother::kMajority;
  if (name == "none") return Smoother::kNone;
  throw ConfigError("unknown smoother '" + name + "' (median|majority|none)");
}

VideoPrediction predict_video(FusionModel<float>& model, const FeatureSequence& seq,
                              std::size_t W, std::size_t S, int median_k, Smoother smoother) {
  if (seq.visual.cols() != model.config.d_v || seq.audio.cols() != model.config.d_a)
    throw DimensionError("predict_video: sequence dims " + seq.visual.shape_str() + "/" +
                         seq.audio.shape_str() + " do not match model config");
  const std::size_t T = seq.labels.size();
  const auto samples = build_windows(seq, W, S);

  std::vector<WindowLogits> window_logits;
  window_logits.reserve(samples.size());
  for (const auto& sample : samples) {
    Tape<float> tape;
    auto bound = bind_params(tape, model.params, model.config);
    auto logits = fusion_forward(tape, bound, model.config, to_input<float>(sample),
                                 /*train_mode=*/false, nullptr);
    window_logits.push_back({sample.start, logits->value, sample.pad_len});
  }

  VideoPrediction pred;
  pred.avg_logits = soft_vote(window_logits, T);
  pred.labels = argmax_labels(pred.avg_logits);
  switch (smoother) {
    case Smoother::kMedian:
      pred.labels = median_filter(pred.labels, median_k);
      break;
    case Smoother::kMajority:
      pred.labels = majority_filter(pred.labels, median_k);
      break;
    case Smoother::kNone:
      break;
  }
  return pred;
}

}  // namespace avf
