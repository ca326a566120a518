#include "avfuse/metrics.hpp"

#include <json.hpp>

namespace avf {

namespace {

void check_pair(std::span<const int> pred, std::span<const int> gold) {
  if (pred.size() != gold.size())
    throw DimensionError("metrics: " + std::to_string(pred.size()) + " predictions vs " +
                         std::to_string(gold.size()) + " gold labels");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (gold[i] < -1 || gold[i] >= kNumClasses)
      throw ConfigError("metrics: gold label " + std::to_string(gold[i]) + " at frame " +
                        std::to_string(i));
    if (gold[i] != -1 && (pred[i] < 0 || pred[i] >= kNumClasses))
      throw ConfigError("metrics: prediction " + std::to_string(pred[i]) + " at frame " +
                        std::to_string(i));
  }
}

}  // namespace

ConfusionMatrix confusion(std::span<const int> pred, std::span<const int> gold) {
  check_pair(pred, gold);
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (gold[i] == -1) continue;
    ++cm.counts[gold[i]][pred[i]];
    ++cm.total;
  }
  if (cm.total == 0) throw AllInvalidError("metrics: no valid frames (all gold labels -1)");
  return cm;
}

double accuracy(std::span<const int> pred, std::span<const int> gold) {
  const ConfusionMatrix cm = confusion(pred, gold);
  return static_cast<double>(cm.trace()) / static_cast<double>(cm.total);
}

double macro_f1(std::span<const int> pred, std::span<const int> gold,
                bool include_empty_classes) {
  return evaluate_predictions(pred, gold, include_empty_classes).macro_f1;
}

MetricReport evaluate_predictions(std::span<const int> pred, std::span<const int> gold,
                                  bool include_empty_classes) {
  MetricReport report;
  report.confusion = confusion(pred, gold);
  report.valid_frames = report.confusion.total;
  report.accuracy =
      static_cast<double>(report.confusion.trace()) / static_cast<double>(report.confusion.total);

  double f1_sum = 0;
  int f1_classes = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    long long tp = report.confusion.counts[c][c], fp = 0, fn = 0;
    for (int o = 0; o < kNumClasses; ++o) {
      if (o == c) continue;
      fp += report.confusion.counts[o][c];
      fn += report.confusion.counts[c][o];
    }
    const long long support = tp + fn, predicted = tp + fp;
    const double precision = predicted > 0 ? double(tp) / double(predicted) : 0.0;
    const double recall = support > 0 ? double(tp) / double(support) : 0.0;
    const double f1 =
        precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    report.per_class_f1[c] = f1;
    if (include_empty_classes || support > 0 || predicted > 0) {
      f1_sum += f1;
      ++f1_classes;
    }
  }
  report.macro_f1 = f1_classes > 0 ? f1_sum / f1_classes : 0.0;
  return report;
}

std::string metric_report_json(const MetricReport& report) {
  nlohmann::json j;
  j["accuracy"] = report.accuracy;
  j["macro_f1"] = report.macro_f1;
  j["per_class_f1"] = report.per_class_f1;
  std::vector<std::vector<long long>> cm(kNumClasses, std::vector<long long>(kNumClasses));
  for (int g = 0; g < kNumClasses; ++g)
    for (int p = 0; p < kNumClasses; ++p) cm[g][p] = report.confusion.counts[g][p];
  j["confusion"] = cm;
  j["valid_frames"] = report.valid_frames;
  return j.dump(2);
}

}  // namespace avf
