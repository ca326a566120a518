#pragma once

#include <filesystem>

#include "avfuse/metrics.hpp"
#include "avfuse/model.hpp"
#include "avfuse/objective.hpp"

namespace avf {

struct TrainConfig {
  int epochs = 20;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-4;
  double grad_clip = 1.0;
  std::uint64_t seed = 1;
  double gamma = 2.0;        // focal loss focusing parameter
  double class_beta = 0.999; // effective-number beta
  std::size_t window = 64;
  std::size_t stride = 8;
  int eval_every = 1;
  std::string lr_schedule = "none";  // none | cosine
  double filter_threshold = 0.25;
  int threads = 2;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0;
  bool evaluated = false;
  double val_acc = 0;
  double val_f1 = 0;
};

struct FitResult {
  std::vector<EpochLog> log;
  int best_epoch = -1;
  double best_val_acc = 0;
  double best_val_f1 = -1;
  std::filesystem::path checkpoint_path;
};

// Windowed, filtered training samples for every video in the manifest.
std::vector<WindowSample> load_training_windows(const DatasetManifest& manifest,
                                                const FusionConfig& fc, const TrainConfig& tc);

// Unfiltered evaluation windows (labels may be sparse at evaluation time).
std::vector<WindowSample> load_eval_windows(const DatasetManifest& manifest,
                                            const FusionConfig& fc, std::size_t W,
                                            std::size_t S);

// Valid-frame counts per class over a window set.
std::vector<long long> class_counts(const std::vector<WindowSample>& windows,
                                    std::size_t n_classes);

// One optimization step's worth of forward/backward over a batch. Gradients
// come back per parameter (traversal order), merged deterministically across
// worker threads; the loss sum is normalized by valid frames at seed time.
struct BatchStep {
  std::vector<MatrixD> grads;
  double loss_sum = 0;       // unnormalized focal sum
  std::size_t valid_count = 0;
  bool finite = true;
};

BatchStep fusion_batch_step(FusionModel<float>& model, const std::vector<WindowSample>& batch,
                            const std::vector<double>& weights, double gamma, bool train_mode,
                            int threads, std::uint64_t sample_seed_base);

// Frame-level metrics of a model over evaluation windows. stress_fraction
// zeroes the visual features of that fraction of windows (seeded choice)
// before evaluation — the occlusion stress protocol.
MetricReport eval_on_windows(FusionModel<float>& model, const std::vector<WindowSample>& windows,
                             double stress_fraction = 0.0, std::uint64_t stress_seed = 0,
                             int threads = 2);

// Deterministic mini-batch training; saves the best-by-val-macro-F1
// checkpoint under out_dir and appends one JSON metric line per epoch.
FitResult fit(const FusionConfig& fc, const TrainConfig& tc, const DatasetManifest& train_man,
              const DatasetManifest& val_man, const std::filesystem::path& out_dir);

struct AblationCell {
  double p = 0;
  std::size_t d_model = 0;
  std::size_t layers = 0;
  bool ok = false;
  double accuracy = 0;
  double f1 = 0;
  std::string error;
};

// Trains every (p, d_model, layers) combination with a shared seed and
// reports best validation metrics per cell. Failures are recorded per cell
// without aborting the grid.
std::vector<AblationCell> ablation_grid(const FusionConfig& base_fc, const TrainConfig& base_tc,
                                        const std::vector<double>& p_axis,
                                        const std::vector<std::size_t>& d_axis,
                                        const std::vector<std::size_t>& l_axis,
                                        const DatasetManifest& train_man,
                                        const DatasetManifest& val_man,
                                        const std::filesystem::path& out_dir);

void write_ablation_csv(const std::filesystem::path& path,
                        const std::vector<AblationCell>& cells);

}  // namespace avf
