#include "avfuse/trainer.hpp"

#include <fstream>
#include <thread>

#include <json.hpp>

#include "avfuse/checkpoint.hpp"
#include "avfuse/inference.hpp"
#include "avfuse/optim.hpp"

namespace avf {

namespace {

constexpr std::uint64_t kShuffleStream = 0xE9;
constexpr std::uint64_t kDropStream = 0xD0;
constexpr std::uint64_t kSampleStream = 0x5A;

std::vector<ParamRef> collect_params(FusionParamsT<MatrixF>& params) {
  std::vector<ParamRef> refs;
  params.for_each([&](const std::string& name, MatrixF& m, bool decay) {
    refs.push_back({name, &m, decay});
  });
  return refs;
}

int resolve_threads(int requested, std::size_t work_items) {
  int t = requested > 0 ? requested
                        : static_cast<int>(std::thread::hardware_concurrency());
  if (t < 1) t = 1;
  return static_cast<int>(std::min<std::size_t>(t, work_items));
}

double lr_scale_for_epoch(const std::string& schedule, int epoch, int epochs) {
  if (schedule == "cosine" && epochs > 1)
    return 0.5 * (1.0 + std::cos(M_PI * double(epoch - 1) / double(epochs - 1)));
  return 1.0;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
  if (learning_rate < 0) throw ConfigError("TrainConfig: learning_rate must be >= 0");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
    throw ConfigError("TrainConfig: moment decays must lie in [0, 1)");
  if (weight_decay < 0) throw ConfigError("TrainConfig: weight_decay must be >= 0");
  if (grad_clip < 0) throw ConfigError("TrainConfig: grad_clip must be >= 0");
  if (gamma < 0) throw ConfigError("TrainConfig: gamma must be >= 0");
  if (class_beta < 0 || class_beta >= 1)
    throw ConfigError("TrainConfig: beta must lie in [0, 1)");
  if (window < 1 || stride < 1) throw ConfigError("TrainConfig: window and stride must be >= 1");
  if (eval_every < 1) throw ConfigError("TrainConfig: eval_every must be >= 1");
  if (lr_schedule != "none" && lr_schedule != "cosine")
    throw ConfigError("TrainConfig: lr_schedule must be 'none' or 'cosine'");
  if (filter_threshold < 0 || filter_threshold > 1)
    throw ConfigError("TrainConfig: filter_threshold must lie in [0, 1]");
  if (threads < 0) throw ConfigError("TrainConfig: threads must be >= 0");
}

std::vector<WindowSample> load_training_windows(const DatasetManifest& manifest,
                                                const FusionConfig& fc, const TrainConfig& tc) {
  std::vector<WindowSample> windows;
  for (const auto& seq : load_sequences(manifest, fc.d_v, fc.d_a)) {
    auto w = filter_windows(build_windows(seq, tc.window, tc.stride), tc.filter_threshold);
    windows.insert(windows.end(), std::make_move_iterator(w.begin()),
                   std::make_move_iterator(w.end()));
  }
  return windows;
}

std::vector<WindowSample> load_eval_windows(const DatasetManifest& manifest,
                                            const FusionConfig& fc, std::size_t W,
                                            std::size_t S) {
  std::vector<WindowSample> windows;
  for (const auto& seq : load_sequences(manifest, fc.d_v, fc.d_a)) {
    auto w = build_windows(seq, W, S);
    windows.insert(windows.end(), std::make_move_iterator(w.begin()),
                   std::make_move_iterator(w.end()));
  }
  return windows;
}

std::vector<long long> class_counts(const std::vector<WindowSample>& windows,
                                    std::size_t n_classes) {
  std::vector<long long> counts(n_classes, 0);
  for (const auto& w : windows)
    for (int y : w.labels)
      if (y >= 0 && y < static_cast<int>(n_classes)) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

BatchStep fusion_batch_step(FusionModel<float>& model, const std::vector<WindowSample>& batch,
                            const std::vector<double>& weights, double gamma, bool train_mode,
                            int threads, std::uint64_t sample_seed_base) {
  std::size_t total_valid = 0;
  for (const auto& s : batch)
    for (int y : s.labels)
      if (y >= 0) ++total_valid;
  if (total_valid == 0) throw AllInvalidError("fusion_batch_step: batch has no valid frames");

  const int n_threads = resolve_threads(threads, batch.size());
  const float seed_scale = 1.0f / static_cast<float>(total_valid);

  struct ThreadOut {
    std::vector<MatrixF> grads;
    double loss_sum = 0;
  };
  std::vector<ThreadOut> outs(static_cast<std::size_t>(n_threads));

  auto worker = [&](int tid) {
    const std::size_t chunk = (batch.size() + n_threads - 1) / n_threads;
    const std::size_t lo = static_cast<std::size_t>(tid) * chunk;
    const std::size_t hi = std::min(batch.size(), lo + chunk);
    if (lo >= hi) return;

    Tape<float> tape;
    auto bound = bind_params(tape, model.params, model.config);
    std::vector<std::pair<VarPtr<float>, float>> seeds;
    double loss_sum = 0;
    for (std::size_t i = lo; i < hi; ++i) {
      Rng sample_rng(mix_seed(sample_seed_base, kSampleStream, i));
      auto logits = fusion_forward(tape, bound, model.config, to_input<float>(batch[i]),
                                   train_mode, &sample_rng);
      auto focal = focal_loss_sum(tape, logits, batch[i].labels, weights, gamma);
      if (focal.valid_count > 0) {
        seeds.emplace_back(focal.loss_sum, seed_scale);
        loss_sum += static_cast<double>(focal.loss_sum->value(0, 0));
      }
    }
    tape.backward(std::span<const std::pair<VarPtr<float>, float>>(seeds));

    ThreadOut& out = outs[static_cast<std::size_t>(tid)];
    out.loss_sum = loss_sum;
    bound.for_each([&](const std::string&, VarPtr<float>& v, bool) {
      out.grads.push_back(std::move(v->grad));
    });
  };

  if (n_threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker, t);
    for (auto& t : pool) t.join();
  }

  // deterministic merge: fixed thread order
  BatchStep step;
  step.valid_count = total_valid;
  model.params.for_each([&](const std::string&, MatrixF& m, bool) {
    step.grads.emplace_back(m.rows(), m.cols());
  });
  for (const auto& out : outs) {
    step.loss_sum += out.loss_sum;
    for (std::size_t k = 0; k < out.grads.size(); ++k)
      for (std::size_t i = 0; i < out.grads[k].size(); ++i)
        step.grads[k].data()[i] += static_cast<double>(out.grads[k].data()[i]);
  }
  for (auto& g : step.grads)
    if (g.size() && !g.all_finite()) step.finite = false;
  if (!std::isfinite(step.loss_sum)) step.finite = false;
  return step;
}

MetricReport eval_on_windows(FusionModel<float>& model, const std::vector<WindowSample>& windows,
                             double stress_fraction, std::uint64_t stress_seed, int threads) {
  if (windows.empty()) throw AllInvalidError("eval_on_windows: no windows");

  std::vector<std::uint8_t> stressed(windows.size(), 0);
  if (stress_fraction > 0) {
    std::vector<std::size_t> order(windows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(mix_seed(stress_seed, 0x57E55));
    rng.shuffle(order);
    const std::size_t n_stress =
        static_cast<std::size_t>(stress_fraction * static_cast<double>(windows.size()));
    for (std::size_t i = 0; i < n_stress; ++i) stressed[order[i]] = 1;
  }

  const int n_threads = resolve_threads(threads, windows.size());
  std::vector<std::vector<int>> preds(windows.size()), golds(windows.size());

  auto worker = [&](int tid) {
    const std::size_t chunk = (windows.size() + n_threads - 1) / n_threads;
    const std::size_t lo = static_cast<std::size_t>(tid) * chunk;
    const std::size_t hi = std::min(windows.size(), lo + chunk);
    for (std::size_t i = lo; i < hi; ++i) {
      WindowInput<float> in = to_input<float>(windows[i]);
      if (stressed[i]) {
        in.visual.fill(0.0f);
        in.v_missing = true;
      }
      Tape<float> tape;
      auto bound = bind_params(tape, model.params, model.config);
      auto logits = fusion_forward(tape, bound, model.config, in, /*train_mode=*/false, nullptr);
      const auto argmax = argmax_labels(logits->value);
      for (std::size_t f = 0; f < windows[i].labels.size(); ++f) {
        if (!windows[i].frame_valid[f]) continue;
        preds[i].push_back(argmax[f]);
        golds[i].push_back(windows[i].labels[f]);
      }
    }
  };

  if (n_threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker, t);
    for (auto& t : pool) t.join();
  }

  std::vector<int> pred_flat, gold_flat;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    pred_flat.insert(pred_flat.end(), preds[i].begin(), preds[i].end());
    gold_flat.insert(gold_flat.end(), golds[i].begin(), golds[i].end());
  }
  return evaluate_predictions(pred_flat, gold_flat);
}

FitResult fit(const FusionConfig& fc, const TrainConfig& tc, const DatasetManifest& train_man,
              const DatasetManifest& val_man, const std::filesystem::path& out_dir) {
  fc.validate();
  tc.validate();
  std::filesystem::create_directories(out_dir);

  auto train_windows = load_training_windows(train_man, fc, tc);
  if (train_windows.empty())
    throw TrainError("fit: no training windows survive the validity filter");
  auto val_windows = load_eval_windows(val_man, fc, tc.window, tc.window);

  const auto counts = class_counts(train_windows, fc.n_classes);
  const auto weights = effective_number_weights(counts, tc.class_beta).w;

  auto model = FusionModel<float>::init(fc, tc.seed);
  auto params = collect_params(model.params);
  AdamW opt(tc.learning_rate, tc.beta1, tc.beta2, tc.weight_decay);

  std::ofstream metrics_log(out_dir / "metrics.jsonl", std::ios::trunc);
  if (!metrics_log) throw TrainError("fit: cannot open metric log in " + out_dir.string());

  FitResult result;
  result.checkpoint_path = out_dir / "best.ckpt";

  std::vector<std::size_t> order(train_windows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(tc.seed, kShuffleStream, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    const double lr_scale = lr_scale_for_epoch(tc.lr_schedule, epoch, tc.epochs);

    double epoch_loss = 0;
    std::size_t epoch_valid = 0;
    const std::size_t n_steps = (order.size() + tc.batch_size - 1) / tc.batch_size;
    for (std::size_t s = 0; s < n_steps; ++s) {
      const std::size_t lo = s * tc.batch_size;
      const std::size_t hi = std::min(order.size(), lo + tc.batch_size);
      std::vector<WindowSample> batch;
      batch.reserve(hi - lo);
      for (std::size_t i = lo; i < hi; ++i) batch.push_back(train_windows[order[i]]);

      const std::uint64_t step_seed =
          mix_seed(tc.seed, static_cast<std::uint64_t>(epoch), s);
      Rng drop_rng(mix_seed(step_seed, kDropStream));
      modality_dropout(batch, fc.p_visual_dropout, drop_rng, /*train_mode=*/true);

      BatchStep step = fusion_batch_step(model, batch, weights, tc.gamma,
                                         /*train_mode=*/true, tc.threads, step_seed);
      if (!step.finite) {
        FusionModel<float> last_good = model;
        save_checkpoint(out_dir / "last_good.ckpt", last_good);
        throw TrainError("fit: non-finite loss/gradient at epoch " + std::to_string(epoch) +
                         " step " + std::to_string(s) + "; last-good checkpoint saved to " +
                         (out_dir / "last_good.ckpt").string());
      }
      clip_gradients(step.grads, tc.grad_clip);
      opt.step(params, step.grads, lr_scale);
      epoch_loss += step.loss_sum;
      epoch_valid += step.valid_count;
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = epoch_valid ? epoch_loss / static_cast<double>(epoch_valid) : 0.0;

    if ((epoch % tc.eval_every == 0 || epoch == tc.epochs) && !val_windows.empty()) {
      const MetricReport report = eval_on_windows(model, val_windows, 0.0, 0, tc.threads);
      log.evaluated = true;
      log.val_acc = report.accuracy;
      log.val_f1 = report.macro_f1;
      if (report.macro_f1 > result.best_val_f1) {
        result.best_val_f1 = report.macro_f1;
        result.best_val_acc = report.accuracy;
        result.best_epoch = epoch;
        save_checkpoint(result.checkpoint_path, model);
      }
    }

    nlohmann::json line = {{"epoch", log.epoch}, {"train_loss", log.train_loss}};
    if (log.evaluated) {
      line["val_acc"] = log.val_acc;
      line["val_f1"] = log.val_f1;
    } else {
      line["val_acc"] = nullptr;
      line["val_f1"] = nullptr;
    }
    metrics_log << line.dump() << "\n";
    result.log.push_back(log);
  }
  return result;
}

std::vector<AblationCell> ablation_grid(const FusionConfig& base_fc, const TrainConfig& base_tc,
                                        const std::vector<double>& p_axis,
                                        const std::vector<std::size_t>& d_axis,
                                        const std::vector<std::size_t>& l_axis,
                                        const DatasetManifest& train_man,
                                        const DatasetManifest& val_man,
                                        const std::filesystem::path& out_dir) {
  if (p_axis.empty() || d_axis.empty() || l_axis.empty())
    throw ConfigError("ablation_grid: every axis needs at least one value");

  std::vector<AblationCell> cells;
  for (double p : p_axis) {
    for (std::size_t d : d_axis) {
      for (std::size_t l : l_axis) {
        AblationCell cell;
        cell.p = p;
        cell.d_model = d;
        cell.layers = l;
        char dir_name[64];
        std::snprintf(dir_name, sizeof dir_name, "cell_p%.2f_d%zu_l%zu", p, d, l);
        try {
          FusionConfig fc = base_fc;
          fc.p_visual_dropout = p;
          fc.d_model = d;
          fc.layers = l;
          const FitResult r = fit(fc, base_tc, train_man, val_man, out_dir / dir_name);
          cell.ok = true;
          cell.accuracy = r.best_val_acc;
          cell.f1 = r.best_val_f1;
        } catch (const std::exception& e) {
          cell.ok = false;
          cell.error = e.what();
        }
        cells.push_back(std::move(cell));
      }
    }
  }
  return cells;
}

void write_ablation_csv(const std::filesystem::path& path,
                        const std::vector<AblationCell>& cells) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw LoadError("cannot write ablation table: " + path.string());
  os << "p,d,l,accuracy,f1\n";
  char buf[128];
  for (const auto& c : cells) {
    if (c.ok) {
      std::snprintf(buf, sizeof buf, "%.2f,%zu,%zu,%.6f,%.6f\n", c.p, c.d_model, c.layers,
                    c.accuracy, c.f1);
    } else {
      std::snprintf(buf, sizeof buf, "%.2f,%zu,%zu,,\n", c.p, c.d_model, c.layers);
    }
    os << buf;
  }
}

}  // namespace avf
