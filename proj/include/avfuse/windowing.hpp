#pragma once

#include <vector>

#include "avfuse/dataio.hpp"

namespace avf {

// One training/inference slice. Short sequences are zero-padded at the tail;
// padded frames carry label -1 and frame_valid = false.
struct WindowSample {
  std::size_t start = 0;
  MatrixF v_in;              // W x d_v, zeros when v_missing
  MatrixF a_in;              // W x d_a
  std::vector<int> labels;   // W, -1 on invalid or padded frames
  Mask frame_valid;          // label != -1 AND not padding
  std::size_t pad_len = 0;   // trailing padded frames, < W
  bool v_missing = false;    // visual modality absent for the whole window

  std::size_t length() const { return labels.size(); }
  std::size_t valid_len() const { return labels.size() - pad_len; }  // attention keys
};

// Window starts {0, S, 2S, ...} while start+W <= T, plus a tail start at T-W
// if the last frame would otherwise go uncovered. T < W yields the single
// padded start 0. Every frame is covered by at least one window.
std::vector<std::size_t> make_windows(std::size_t T, std::size_t W = 64, std::size_t S = 8);

// Keep unless the invalid-or-padded fraction strictly exceeds the threshold.
bool filter_window(const Mask& frame_valid, double threshold = 0.25);

// Number of windows covering each frame, counting only unpadded positions.
std::vector<int> coverage_counts(std::size_t T, const std::vector<std::size_t>& starts,
                                 std::size_t W);

// Slices a sequence into samples (no filtering). A window whose unpadded
// visual rows are all exactly zero is flagged v_missing: that is how both
// upstream blackouts and modality dropout manifest.
std::vector<WindowSample> build_windows(const FeatureSequence& seq, std::size_t W, std::size_t S);

// Applies the training-time validity filter.
std::vector<WindowSample> filter_windows(std::vector<WindowSample> windows, double threshold = 0.25);

}  // namespace avf
