#pragma once

#include <string>
#include <vector>

#include "avfuse/ops.hpp"
#include "avfuse/windowing.hpp"

namespace avf {

struct FusionConfig {
  std::size_t d_v = 0;
  std::size_t d_a = 0;
  std::size_t d_model = 256;
  std::size_t layers = 3;  // self-attention layers per branch
  std::size_t heads = 4;
  std::size_t ff_dim = 0;  // 0 -> 4 * d_model
  double attn_dropout = 0.1;
  double residual_dropout = 0.1;
  double p_visual_dropout = 0.10;
  std::size_t n_classes = 8;
  double ln_eps = 1e-5;

  std::size_t ff() const { return ff_dim ? ff_dim : 4 * d_model; }
  std::size_t head_dim() const { return d_model / heads; }

  void validate() const {
    if (d_v < 1 || d_a < 1) throw ConfigError("FusionConfig: d_v and d_a must be >= 1");
    if (d_model < 2 || d_model % 2 != 0)
      throw ConfigError("FusionConfig: d_model must be even (positional encoding)");
    if (heads < 1 || d_model % heads != 0)
      throw ConfigError("FusionConfig: d_model must be divisible by heads");
    if (attn_dropout < 0 || attn_dropout >= 1 || residual_dropout < 0 || residual_dropout >= 1)
      throw ConfigError("FusionConfig: dropout rates must lie in [0, 1)");
    if (p_visual_dropout < 0 || p_visual_dropout > 1)
      throw ConfigError("FusionConfig: p must lie in [0, 1]");
    if (n_classes < 2) throw ConfigError("FusionConfig: n_classes must be >= 2");
    if (!(ln_eps > 0)) throw ConfigError("FusionConfig: ln_eps must be > 0");
  }
};

// Parameter containers are generic over the element type: Matrix<T> for
// stored weights, VarPtr<T> once bound onto a tape.
template <typename E>
struct AttentionParamsT {
  E wq, bq, wk, bk, wv, bv, wo, bo;

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + ".wq", wq, true);
    f(prefix + ".bq", bq, false);
    f(prefix + ".wk", wk, true);
    f(prefix + ".bk", bk, false);
    f(prefix + ".wv", wv, true);
    f(prefix + ".bv", bv, false);
    f(prefix + ".wo", wo, true);
    f(prefix + ".bo", bo, false);
  }
};

template <typename E>
struct EncoderLayerParamsT {
  E ln1_gain, ln1_shift;
  AttentionParamsT<E> attn;
  E ln2_gain, ln2_shift;
  E ff_w1, ff_b1, ff_w2, ff_b2;

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + ".ln1.gain", ln1_gain, false);
    f(prefix + ".ln1.shift", ln1_shift, false);
    attn.for_each(prefix + ".attn", f);
    f(prefix + ".ln2.gain", ln2_gain, false);
    f(prefix + ".ln2.shift", ln2_shift, false);
    f(prefix + ".ff.w1", ff_w1, true);
    f(prefix + ".ff.b1", ff_b1, false);
    f(prefix + ".ff.w2", ff_w2, true);
    f(prefix + ".ff.b2", ff_b2, false);
  }
};

template <typename E>
struct CrossBlockParamsT {
  AttentionParamsT<E> attn;
  E ln_gain, ln_shift;

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    attn.for_each(prefix + ".attn", f);
    f(prefix + ".ln.gain", ln_gain, false);
    f(prefix + ".ln.shift", ln_shift, false);
  }
};

template <typename E>
struct FusionParamsT {
  E proj_v_w, proj_v_b, proj_a_w, proj_a_b;
  std::vector<EncoderLayerParamsT<E>> enc_v, enc_a;
  CrossBlockParamsT<E> cross_va;  // queries from visual, keys/values from audio
  CrossBlockParamsT<E> cross_av;  // queries from audio, keys/values from visual
  E gate_v_w, gate_v_b, gate_a_w, gate_a_b;
  E head_w1, head_b1, head_w2, head_b2;

  template <typename F>
  void for_each(F&& f) {
    f("proj_v.w", proj_v_w, true);
    f("proj_v.b", proj_v_b, false);
    f("proj_a.w", proj_a_w, true);
    f("proj_a.b", proj_a_b, false);
    for (std::size_t i = 0; i < enc_v.size(); ++i)
      enc_v[i].for_each("enc_v." + std::to_string(i), f);
    for (std::size_t i = 0; i < enc_a.size(); ++i)
      enc_a[i].for_each("enc_a." + std::to_string(i), f);
    cross_va.for_each("cross_va", f);
    cross_av.for_each("cross_av", f);
    f("gate_v.w", gate_v_w, true);
    f("gate_v.b", gate_v_b, false);
    f("gate_a.w", gate_a_w, true);
    f("gate_a.b", gate_a_b, false);
    f("head.w1", head_w1, true);
    f("head.b1", head_b1, false);
    f("head.w2", head_w2, true);
    f("head.b2", head_b2, false);
  }
};

template <typename E>
FusionParamsT<E> make_param_structure(const FusionConfig& cfg) {
  FusionParamsT<E> p;
  p.enc_v.resize(cfg.layers);
  p.enc_a.resize(cfg.layers);
  return p;
}

template <typename T>
struct FusionModel {
  FusionConfig config;
  FusionParamsT<Matrix<T>> params;

  // Scaled uniform fan-in init for weights, zeros for biases and shifts, ones
  // for norm gains. Gate biases start at zero so G opens at 0.5.
  static FusionModel init(const FusionConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    FusionModel model;
    model.config = cfg;
    model.params = make_param_structure<Matrix<T>>(cfg);

    const std::size_t d = cfg.d_model;
    auto shape_of = [&](const std::string& name) -> std::pair<std::size_t, std::size_t> {
      auto ends_with = [&](const char* s) {
        const std::string suffix(s);
        return name.size() >= suffix.size() &&
               name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
      };
      if (name == "proj_v.w") return {cfg.d_v, d};
      if (name == "proj_a.w") return {cfg.d_a, d};
      if (name == "gate_v.w" || name == "gate_a.w") return {2 * d, d};
      if (name == "head.w1") return {2 * d, d};
      if (name == "head.w2") return {d, cfg.n_classes};
      if (name == "head.b2") return {1, cfg.n_classes};
      if (ends_with(".ff.w1")) return {d, cfg.ff()};
      if (ends_with(".ff.b1")) return {1, cfg.ff()};
      if (ends_with(".ff.w2")) return {cfg.ff(), d};
      if (ends_with(".wq") || ends_with(".wk") || ends_with(".wv") || ends_with(".wo"))
        return {d, d};
      return {1, d};  // biases, gains, shifts
    };

    Rng rng(mix_seed(seed, 0xF0D));
    model.params.for_each([&](const std::string& name, Matrix<T>& m, bool is_weight) {
      const auto [r, c] = shape_of(name);
      if (is_weight) {
        const T bound = T(1) / std::sqrt(static_cast<T>(r));
        m = random_uniform<T>(r, c, -bound, bound, rng);
      } else {
        const bool is_gain = name.find(".gain") != std::string::npos;
        m = Matrix<T>(r, c, is_gain ? T(1) : T(0));
      }
    });
    return model;
  }

  std::size_t num_parameters() {
    std::size_t n = 0;
    params.for_each([&](const std::string&, Matrix<T>& m, bool) { n += m.size(); });
    return n;
  }
};

template <typename T>
using BoundParams = FusionParamsT<VarPtr<T>>;

// Copies parameter matrices onto the tape as gradient-carrying leaves.
template <typename T>
BoundParams<T> bind_params(Tape<T>& tape, FusionParamsT<Matrix<T>>& params,
                           const FusionConfig& cfg) {
  std::vector<Matrix<T>*> values;
  params.for_each([&](const std::string&, Matrix<T>& m, bool) { values.push_back(&m); });
  BoundParams<T> bound = make_param_structure<VarPtr<T>>(cfg);
  std::size_t i = 0;
  bound.for_each([&](const std::string&, VarPtr<T>& v, bool) {
    v = tape.make(*values[i++]);
  });
  return bound;
}

// ---- model blocks ------------------------------------------------------------

template <typename T>
VarPtr<T> multi_head_attention(Tape<T>& tape, const AttentionParamsT<VarPtr<T>>& p,
                               const FusionConfig& cfg, const VarPtr<T>& q_seq,
                               const VarPtr<T>& kv_seq, const Mask& kv_valid,
                               bool train_mode, Rng* rng) {
  const std::size_t dh = cfg.head_dim();
  const T att_scale = T(1) / std::sqrt(static_cast<T>(dh));

  auto q = ops::affine(tape, q_seq, p.wq, p.bq);
  auto k = ops::affine(tape, kv_seq, p.wk, p.bk);
  auto v = ops::affine(tape, kv_seq, p.wv, p.bv);

  VarPtr<T> ctx;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    auto qh = ops::slice_cols(tape, q, h * dh, dh);
    auto kh = ops::slice_cols(tape, k, h * dh, dh);
    auto vh = ops::slice_cols(tape, v, h * dh, dh);
    auto scores = ops::scale(tape, ops::matmul_nt(tape, qh, kh), att_scale);
    auto probs = ops::row_softmax_masked(tape, scores, kv_valid);
    probs = ops::dropout(tape, probs, cfg.attn_dropout, train_mode, rng);
    auto ctx_h = ops::matmul(tape, probs, vh);
    ctx = h == 0 ? ctx_h : ops::concat_cols(tape, ctx, ctx_h);
  }
  return ops::affine(tape, ctx, p.wo, p.bo);
}

// Pre-norm encoder stack. A window with zero valid keys (all padding, which
// make_windows never produces) passes through unchanged.
template <typename T>
VarPtr<T> encode_unimodal(Tape<T>& tape, const std::vector<EncoderLayerParamsT<VarPtr<T>>>& layers,
                          const FusionConfig& cfg, VarPtr<T> h, const Mask& key_valid,
                          bool train_mode, Rng* rng) {
  if (!any_of_mask(key_valid)) return h;
  const T eps = static_cast<T>(cfg.ln_eps);
  for (const auto& layer : layers) {
    auto normed = ops::layer_norm(tape, h, layer.ln1_gain, layer.ln1_shift, eps);
    auto attn = multi_head_attention(tape, layer.attn, cfg, normed, normed, key_valid,
                                     train_mode, rng);
    h = ops::add(tape, h, ops::dropout(tape, attn, cfg.residual_dropout, train_mode, rng));

    auto normed2 = ops::layer_norm(tape, h, layer.ln2_gain, layer.ln2_shift, eps);
    auto ff = ops::affine(tape, ops::gelu(tape, ops::affine(tape, normed2, layer.ff_w1, layer.ff_b1)),
                          layer.ff_w2, layer.ff_b2);
    h = ops::add(tape, h, ops::dropout(tape, ff, cfg.residual_dropout, train_mode, rng));
  }
  return h;
}

// Cross-attention block with the missing-modality degradation path: when
// every key is invalid the attention output is forced to exactly zero, so the
// residual + norm collapses to layer_norm(Q).
template <typename T>
VarPtr<T> safe_cross_attention(Tape<T>& tape, const CrossBlockParamsT<VarPtr<T>>& p,
                               const FusionConfig& cfg, const VarPtr<T>& q_seq,
                               const VarPtr<T>& kv_seq, const Mask& kv_valid,
                               bool train_mode, Rng* rng) {
  const T eps = static_cast<T>(cfg.ln_eps);
  if (!any_of_mask(kv_valid))
    return ops::layer_norm(tape, q_seq, p.ln_gain, p.ln_shift, eps);

  auto attn = multi_head_attention(tape, p.attn, cfg, q_seq, kv_seq, kv_valid, train_mode, rng);
  auto res = ops::add(tape, q_seq, ops::dropout(tape, attn, cfg.residual_dropout, train_mode, rng));
  return ops::layer_norm(tape, res, p.ln_gain, p.ln_shift, eps);
}

// F = G (.) H + (1 - G) (.) H_cross with G = sigmoid(affine([H ; H_cross])).
template <typename T>
VarPtr<T> gate_fuse(Tape<T>& tape, const VarPtr<T>& gate_w, const VarPtr<T>& gate_b,
                    const VarPtr<T>& h, const VarPtr<T>& h_cross) {
  auto gate = ops::sigmoid(tape, ops::affine(tape, ops::concat_cols(tape, h, h_cross),
                                             gate_w, gate_b));
  return ops::gate_blend(tape, gate, h, h_cross);
}

// Per-frame classifier head over the concatenated fused branches.
template <typename T>
VarPtr<T> classify(Tape<T>& tape, const BoundParams<T>& p, const VarPtr<T>& f_v,
                   const VarPtr<T>& f_a) {
  auto joint = ops::concat_cols(tape, f_v, f_a);
  auto hidden = ops::gelu(tape, ops::affine(tape, joint, p.head_w1, p.head_b1));
  return ops::affine(tape, hidden, p.head_w2, p.head_b2);
}

// Model input for one window: features plus the attention-key validity length
// (unpadded prefix) and the missing-visual flag.
template <typename T>
struct WindowInput {
  Matrix<T> visual;  // W x d_v
  Matrix<T> audio;   // W x d_a
  std::size_t valid_len = 0;
  bool v_missing = false;
};

template <typename T>
WindowInput<T> to_input(const WindowSample& w) {
  WindowInput<T> in;
  in.visual = w.v_in.template cast<T>();
  in.audio = w.a_in.template cast<T>();
  in.valid_len = w.valid_len();
  in.v_missing = w.v_missing;
  return in;
}

template <>
inline WindowInput<float> to_input<float>(const WindowSample& w) {
  return {w.v_in, w.a_in, w.valid_len(), w.v_missing};
}

// Full window forward: project+PE, encode both branches, cross-attend in both
// directions, gate-fuse, classify. When the visual modality is missing, the
// audio-branch cross attention sees an all-invalid key set and takes the safe
// path; the visual branch still runs on its zero-state input.
template <typename T>
VarPtr<T> fusion_forward(Tape<T>& tape, const BoundParams<T>& p, const FusionConfig& cfg,
                         const WindowInput<T>& in, bool train_mode, Rng* rng) {
  if (in.visual.cols() != cfg.d_v || in.audio.cols() != cfg.d_a)
    throw DimensionError("fusion_forward: inputs " + in.visual.shape_str() + "/" +
                         in.audio.shape_str() + " do not match config dims");
  if (in.visual.rows() != in.audio.rows())
    throw DimensionError("fusion_forward: visual and audio window lengths differ");
  const std::size_t W = in.visual.rows();
  if (in.valid_len > W) throw DimensionError("fusion_forward: valid_len > window length");

  const Matrix<T> pe = positional_encoding<T>(W, cfg.d_model);
  auto h_v = ops::add_const(tape, ops::affine(tape, ops::constant(tape, in.visual),
                                              p.proj_v_w, p.proj_v_b), pe);
  auto h_a = ops::add_const(tape, ops::affine(tape, ops::constant(tape, in.audio),
                                              p.proj_a_w, p.proj_a_b), pe);

  Mask key_valid(W, 0);
  for (std::size_t i = 0; i < in.valid_len; ++i) key_valid[i] = 1;

  h_v = encode_unimodal(tape, p.enc_v, cfg, h_v, key_valid, train_mode, rng);
  h_a = encode_unimodal(tape, p.enc_a, cfg, h_a, key_valid, train_mode, rng);

  const Mask visual_keys = in.v_missing ? Mask(W, 0) : key_valid;
  auto h_va = safe_cross_attention(tape, p.cross_va, cfg, h_v, h_a, key_valid, train_mode, rng);
  auto h_av = safe_cross_attention(tape, p.cross_av, cfg, h_a, h_v, visual_keys, train_mode, rng);

  auto f_v = gate_fuse(tape, p.gate_v_w, p.gate_v_b, h_v, h_va);
  auto f_a = gate_fuse(tape, p.gate_a_w, p.gate_a_b, h_a, h_av);
  return classify(tape, p, f_v, f_a);
}

// Training-time modality dropout: each sample is independently selected with
// probability p; selected samples get a zeroed visual window and the
// v_missing flag. No-op outside train mode.
inline void modality_dropout(std::vector<WindowSample>& batch, double p, Rng& rng,
                             bool train_mode) {
  if (!train_mode || p <= 0) return;
  if (p > 1) throw ConfigError("modality_dropout: p must lie in [0, 1]");
  for (auto& sample : batch) {
    if (rng.bernoulli(p)) {
      sample.v_in.fill(0.0f);
      sample.v_missing = true;
    }
  }
}

}  // namespace avf
