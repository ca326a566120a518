#pragma once

#include <array>
#include <span>
#include <string>

#include "avfuse/dataio.hpp"

namespace avf {

struct ConfusionMatrix {
  std::array<std::array<long long, kNumClasses>, kNumClasses> counts{};  // [gold][pred]
  long long total = 0;

  long long trace() const {
    long long t = 0;
    for (int c = 0; c < kNumClasses; ++c) t += counts[c][c];
    return t;
  }
};

// All metrics ignore frames whose gold label is -1 and throw AllInvalidError
// when nothing remains.
double accuracy(std::span<const int> pred, std::span<const int> gold);

// Unweighted mean of per-class F1 over classes with support or predictions;
// zero-denominator F1 terms are 0. include_empty_classes = true averages over
// all 8 classes instead.
double macro_f1(std::span<const int> pred, std::span<const int> gold,
                bool include_empty_classes = false);

ConfusionMatrix confusion(std::span<const int> pred, std::span<const int> gold);

struct MetricReport {
  double accuracy = 0;
  double macro_f1 = 0;
  std::array<double, kNumClasses> per_class_f1{};
  ConfusionMatrix confusion;
  long long valid_frames = 0;
};

MetricReport evaluate_predictions(std::span<const int> pred, std::span<const int> gold,
                                  bool include_empty_classes = false);

std::string metric_report_json(const MetricReport& report);

}  // namespace avf
