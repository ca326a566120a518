#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "avfuse/dataio.hpp"

namespace avf {

// Seeded synthetic dataset: per-frame labels drawn from the priors, features
// drawn from per-class Gaussians. Visual class means are all distinct, so the
// visual stream carries full class identity; the audio means of the
// confusable pair are identical, so an audio-only classifier can separate the
// classes only up to that pair. That gap is what makes fusion measurably
// better than either stream alone.
struct SynthSpec {
  std::size_t n_videos = 24;
  std::size_t t_min = 200;
  std::size_t t_max = 400;
  std::size_t d_v = 24;
  std::size_t d_a = 20;
  std::array<double, 8> class_priors = {0.125, 0.125, 0.125, 0.125, 0.125, 0.125, 0.125, 0.125};
  double missing_rate = 0.0;          // fraction of frames labeled -1
  std::string label_rule = "segments:24";  // "iid" or "segments:<mean_len>"
  double noise_v = 1.0;
  double noise_a = 0.6;
  int confusable_a = 4;
  int confusable_b = 5;
  double audio_rate = 1.0;            // native audio rows per video frame
  double blackout_rate = 0.0;         // expected fraction of frames inside zeroed visual spans
  double val_fraction = 0.25;
  double frame_rate = 30.0;

  void validate() const;  // throws ConfigError naming the offending field
};

// Ground-truth generator parameters, recomputable from (spec, seed) alone.
// Lets tests derive Bayes-optimal classifiers in closed form.
struct SynthTruth {
  MatrixF mu_v;  // 8 x d_v
  MatrixF mu_a;  // 8 x d_a; rows confusable_a and confusable_b are identical
};

SynthTruth synth_truth(const SynthSpec& spec, std::uint64_t seed);

struct SynthResult {
  std::filesystem::path train_manifest;
  std::filesystem::path val_manifest;
  std::size_t train_videos = 0;
  std::size_t val_videos = 0;
  std::size_t total_frames = 0;
};

// Writes features/, labels/, train_manifest.json, val_manifest.json and
// gen_spec.json under out_dir. Byte-reproducible from (spec, seed).
SynthResult generate_synthetic(const SynthSpec& spec, std::uint64_t seed,
                               const std::filesystem::path& out_dir);

}  // namespace avf
