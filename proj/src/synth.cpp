#include "avfuse/synth.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace avf {

namespace {

constexpr std::uint64_t kMeansStream = 0xA11CE;
constexpr double kBlackoutMeanSpan = 96.0;

struct LabelRule {
  bool segments = false;
  double mean_len = 1.0;
};

LabelRule parse_label_rule(const std::string& rule) {
  if (rule == "iid") return {false, 1.0};
  if (rule.rfind("segments:", 0) == 0) {
    const double len = std::stod(rule.substr(9));
    if (!(len >= 1.0)) throw ConfigError("label_rule: segment mean length must be >= 1");
    return {true, len};
  }
  throw ConfigError("label_rule must be 'iid' or 'segments:<mean_len>', got '" + rule + "'");
}

int draw_class(const std::array<double, 8>& priors, Rng& rng) {
  double u = rng.uniform();
  for (int c = 0; c < 7; ++c) {
    u -= priors[c];
    if (u < 0) return c;
  }
  return 7;
}

// geometric on {1, 2, ...} with the requested mean
std::size_t draw_segment_len(double mean_len, Rng& rng) {
  if (mean_len <= 1.0) return 1;
  const double p = 1.0 / mean_len;
  const double u = rng.uniform();
  return 1 + static_cast<std::size_t>(std::floor(std::log1p(-u) / std::log1p(-p)));
}

}  // namespace

void SynthSpec::validate() const {
  double sum = 0;
  for (double p : class_priors) {
    if (p < 0) throw ConfigError("class_priors: entries must be >= 0");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw ConfigError("class_priors must sum to 1 (got " + std::to_string(sum) + ")");
  if (d_v < 2 || d_a < 2) throw ConfigError("d_v and d_a must be >= 2");
  if (n_videos < 1) throw ConfigError("n_videos must be >= 1");
  if (t_min < 1 || t_max < t_min) throw ConfigError("t_range: need 1 <= t_min <= t_max");
  if (missing_rate < 0 || missing_rate >= 1) throw ConfigError("missing_rate must be in [0, 1)");
  if (blackout_rate < 0 || blackout_rate >= 1) throw ConfigError("blackout_rate must be in [0, 1)");
  if (noise_v < 0 || noise_a < 0) throw ConfigError("noise scales must be >= 0");
  if (confusable_a < 0 || confusable_a >= 8 || confusable_b < 0 || confusable_b >= 8 ||
      confusable_a == confusable_b)
    throw ConfigError("confusable pair must be two distinct classes in 0..7");
  if (audio_rate <= 0) throw ConfigError("audio_rate must be > 0");
  if (val_fraction < 0 || val_fraction >= 1) throw ConfigError("val_fraction must be in [0, 1)");
  parse_label_rule(label_rule);
}

SynthTruth synth_truth(const SynthSpec& spec, std::uint64_t seed) {
  Rng rng(mix_seed(seed, kMeansStream));
  SynthTruth truth;
  truth.mu_v = random_normal<float>(8, spec.d_v, 1.0f, rng);
  truth.mu_a = random_normal<float>(8, spec.d_a, 1.0f, rng);
  // identical audio means: the confusable pair is indistinguishable from audio alone
  for (std::size_t j = 0; j < spec.d_a; ++j)
    truth.mu_a(spec.confusable_b, j) = truth.mu_a(spec.confusable_a, j);
  return truth;
}

SynthResult generate_synthetic(const SynthSpec& spec, std::uint64_t seed,
                               const std::filesystem::path& out_dir) {
  spec.validate();
  const LabelRule rule = parse_label_rule(spec.label_rule);
  const SynthTruth truth = synth_truth(spec, seed);

  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "features");
  fs::create_directories(out_dir / "labels");

  std::vector<ManifestEntry> entries;
  SynthResult result;

  for (std::size_t v = 0; v < spec.n_videos; ++v) {
    Rng rng(mix_seed(seed, v + 1));
    const std::size_t T = spec.t_min + static_cast<std::size_t>(rng.below(spec.t_max - spec.t_min + 1));

    // true per-frame classes
    std::vector<int> truth_labels(T);
    if (rule.segments) {
      std::size_t t = 0;
      while (t < T) {
        const int c = draw_class(spec.class_priors, rng);
        const std::size_t len = std::min(draw_segment_len(rule.mean_len, rng), T - t);
        for (std::size_t i = 0; i < len; ++i) truth_labels[t + i] = c;
        t += len;
      }
    } else {
      for (std::size_t t = 0; t < T; ++t) truth_labels[t] = draw_class(spec.class_priors, rng);
    }

    // stored labels: -1 where the frame goes unannotated
    std::vector<int> labels = truth_labels;
    if (spec.missing_rate > 0)
      for (std::size_t t = 0; t < T; ++t)
        if (rng.bernoulli(spec.missing_rate)) labels[t] = -1;

    // visual blackout spans (zeroed features, labels untouched)
    std::vector<std::uint8_t> blackout(T, 0);
    if (spec.blackout_rate > 0) {
      const double enter_p =
          spec.blackout_rate / (kBlackoutMeanSpan * (1.0 - spec.blackout_rate));
      std::size_t t = 0;
      while (t < T) {
        if (rng.bernoulli(enter_p)) {
          const std::size_t len = std::min(draw_segment_len(kBlackoutMeanSpan, rng), T - t);
          for (std::size_t i = 0; i < len; ++i) blackout[t + i] = 1;
          t += len;
        } else {
          ++t;
        }
      }
    }

    MatrixF visual(T, spec.d_v);
    for (std::size_t t = 0; t < T; ++t) {
      float* row = visual.row(t);
      const float* mu = truth.mu_v.row(truth_labels[t]);
      for (std::size_t j = 0; j < spec.d_v; ++j)
        row[j] = blackout[t] ? 0.0f
                             : mu[j] + static_cast<float>(rng.normal() * spec.noise_v);
    }

    // native-rate audio, one row per audio step, labeled by the nearest video frame
    const std::size_t t_a =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(spec.audio_rate * double(T))));
    MatrixF audio(t_a, spec.d_a);
    for (std::size_t s = 0; s < t_a; ++s) {
      std::size_t f = 0;
      if (t_a > 1 && T > 1)
        f = static_cast<std::size_t>(
            std::llround(double(s) * double(T - 1) / double(t_a - 1)));
      float* row = audio.row(s);
      const float* mu = truth.mu_a.row(truth_labels[f]);
      for (std::size_t j = 0; j < spec.d_a; ++j)
        row[j] = mu[j] + static_cast<float>(rng.normal() * spec.noise_a);
    }

    char id[32];
    std::snprintf(id, sizeof id, "synth%04zu", v);
    ManifestEntry e;
    e.video_id = id;
    e.visual_path = std::string("features/") + id + ".v.fwf";
    e.audio_path = std::string("features/") + id + ".a.fwf";
    e.labels_path = std::string("labels/") + id + ".fwl";
    e.raw_audio_len = t_a;
    write_feature_matrix(out_dir / e.visual_path, visual);
    write_feature_matrix(out_dir / e.audio_path, audio);
    write_labels(out_dir / e.labels_path, labels);
    entries.push_back(std::move(e));
    result.total_frames += T;
  }

  std::size_t n_val = static_cast<std::size_t>(std::llround(spec.val_fraction * double(spec.n_videos)));
  if (spec.val_fraction > 0 && n_val == 0 && spec.n_videos >= 2) n_val = 1;
  const std::size_t n_train = spec.n_videos - n_val;

  std::vector<ManifestEntry> train(entries.begin(), entries.begin() + n_train);
  std::vector<ManifestEntry> val(entries.begin() + n_train, entries.end());
  result.train_manifest = out_dir / "train_manifest.json";
  result.val_manifest = out_dir / "val_manifest.json";
  write_manifest(result.train_manifest, train);
  write_manifest(result.val_manifest, val);
  result.train_videos = n_train;
  result.val_videos = n_val;

  nlohmann::json gen = {{"seed", seed},
                        {"n_videos", spec.n_videos},
                        {"t_min", spec.t_min},
                        {"t_max", spec.t_max},
                        {"d_v", spec.d_v},
                        {"d_a", spec.d_a},
                        {"class_priors", spec.class_priors},
                        {"missing_rate", spec.missing_rate},
                        {"label_rule", spec.label_rule},
                        {"noise_v", spec.noise_v},
                        {"noise_a", spec.noise_a},
                        {"confusable_a", spec.confusable_a},
                        {"confusable_b", spec.confusable_b},
                        {"audio_rate", spec.audio_rate},
                        {"blackout_rate", spec.blackout_rate},
                        {"val_fraction", spec.val_fraction},
                        {"frame_rate", spec.frame_rate}};
  std::ofstream os(out_dir / "gen_spec.json", std::ios::trunc);
  os << gen.dump(2) << "\n";
  return result;
}

}  // namespace avf
