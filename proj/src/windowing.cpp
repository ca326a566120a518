#include "avfuse/windowing.hpp"

#include <algorithm>
#include <cstring>

namespace avf {

std::vector<std::size_t> make_windows(std::size_t T, std::size_t W, std::size_t S) {
  if (T == 0) throw DimensionError("make_windows: empty sequence (T=0)");
  if (W < 1 || S < 1) throw ConfigError("make_windows: W and S must be >= 1");
  if (T < W) return {0};

  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + W <= T; s += S) starts.push_back(s);
  // tail window so the last frame is covered
  if (starts.back() + W < T) starts.push_back(T - W);
  return starts;
}

bool filter_window(const Mask& frame_valid, double threshold) {
  if (frame_valid.empty()) throw DimensionError("filter_window: empty window");
  std::size_t invalid = 0;
  for (auto v : frame_valid)
    if (!v) ++invalid;
  const double frac = static_cast<double>(invalid) / static_cast<double>(frame_valid.size());
  return !(frac > threshold);  // strict "exceeds"
}

std::vector<int> coverage_counts(std::size_t T, const std::vector<std::size_t>& starts,
                                 std::size_t W) {
  std::vector<int> counts(T, 0);
  for (std::size_t s : starts) {
    const std::size_t end = std::min(s + W, T);  // unpadded positions only
    for (std::size_t t = s; t < end; ++t) ++counts[t];
  }
  return counts;
}

std::vector<WindowSample> build_windows(const FeatureSequence& seq, std::size_t W, std::size_t S) {
  const std::size_t T = seq.labels.size();
  const auto starts = make_windows(T, W, S);

  std::vector<WindowSample> out;
  out.reserve(starts.size());
  for (std::size_t s : starts) {
    WindowSample w;
    w.start = s;
    const std::size_t copy_len = std::min(W, T - s);
    w.pad_len = W - copy_len;
    w.v_in = MatrixF(W, seq.visual.cols());
    w.a_in = MatrixF(W, seq.audio.cols());
    w.labels.assign(W, -1);
    w.frame_valid.assign(W, 0);
    for (std::size_t i = 0; i < copy_len; ++i) {
      std::memcpy(w.v_in.row(i), seq.visual.row(s + i), seq.visual.cols() * sizeof(float));
      std::memcpy(w.a_in.row(i), seq.audio.row(s + i), seq.audio.cols() * sizeof(float));
      w.labels[i] = seq.labels[s + i];
      w.frame_valid[i] = seq.labels[s + i] != -1;
    }
    bool any_nonzero = false;
    for (std::size_t i = 0; i < copy_len * seq.visual.cols() && !any_nonzero; ++i)
      any_nonzero = w.v_in.data()[i] != 0.0f;
    w.v_missing = !any_nonzero;
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<WindowSample> filter_windows(std::vector<WindowSample> windows, double threshold) {
  std::vector<WindowSample> kept;
  kept.reserve(windows.size());
  for (auto& w : windows)
    if (filter_window(w.frame_valid, threshold)) kept.push_back(std::move(w));
  return kept;
}

}  // namespace avf
