#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "avfuse/matrix.hpp"

namespace avf {

constexpr int kNumClasses = 8;

// One video's aligned per-frame features. After load_sequence, visual and
// audio have the same row count T and labels has length T with values in
// {-1, 0..7} (-1 = unannotated frame).
struct FeatureSequence {
  std::string video_id;
  MatrixF visual;  // T x d_v
  MatrixF audio;   // T x d_a
  std::vector<int> labels;
  double frame_rate = 30.0;  // metadata only
};

struct ManifestEntry {
  std::string video_id;
  std::string visual_path;
  std::string audio_path;
  std::string labels_path;
  std::size_t raw_audio_len = 0;  // audio rows before alignment
};

struct DatasetManifest {
  std::string split;                // train / val tag, set by the loader
  std::filesystem::path base_dir;   // entry paths resolve against this
  std::vector<ManifestEntry> entries;
};

// Feature matrix file: magic "FWF1", u32le rows, u32le cols, then rows*cols
// float32le row-major.
void write_feature_matrix(const std::filesystem::path& path, const MatrixF& m);
MatrixF read_feature_matrix(const std::filesystem::path& path);

// Labels file: magic "FWL1", u32le T, then T int8 labels in {-1, 0..7}.
void write_labels(const std::filesystem::path& path, const std::vector<int>& labels);
std::vector<int> read_labels(const std::filesystem::path& path);

// Manifest file: UTF-8 JSON array of entries.
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
DatasetManifest load_manifest(const std::filesystem::path& path, std::string split);

// Linear interpolation of audio rows onto target_len rows: target row i is
// sampled at source position i*(T_a-1)/(T-1) (position 0 when either side is
// a single row), per feature dimension.
MatrixF align_audio(const MatrixF& audio, std::size_t target_len);

// Mean of rows [frame-radius, frame+radius], clipped at sequence boundaries.
std::vector<float> context_pool(const MatrixF& audio, std::size_t frame, std::size_t radius = 18);

FeatureSequence load_sequence(const ManifestEntry& entry, std::size_t d_v, std::size_t d_a,
                              const std::filesystem::path& base_dir);

std::vector<FeatureSequence> load_sequences(const DatasetManifest& manifest, std::size_t d_v,
                                            std::size_t d_a);

}  // namespace avf
