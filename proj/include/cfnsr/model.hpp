// SPDX-License-Identifier: Apache-2.0
/**
 * @file   model.hpp
 * @brief  The complete audio-video classifier: both encoders, the fusion
 *         block and a linear head over [pooled video, audio].
 */
#ifndef CFNSR_MODEL_HPP_
#define CFNSR_MODEL_HPP_

#include <array>
#include <map>
#include <string>
#include <vector>

#include "encoders.hpp"
#include "fusion.hpp"
#include "layers.hpp"
#include "mfcc.hpp"

namespace cfnsr {

enum class Variant {
  full,
  no_crossmodal,
  no_self_attention,
  no_residual,
  A_to_V,
  V_to_A
};

inline const std::vector<std::pair<Variant, std::string>> &variant_names() {
  static const std::vector<std::pair<Variant, std::string>> names{
      {Variant::full, "full"},
      {Variant::no_crossmodal, "no_crossmodal"},
      {Variant::no_self_attention, "no_self_attention"},
      {Variant::no_residual, "no_residual"},
      {Variant::A_to_V, "A_to_V"},
      {Variant::V_to_A, "V_to_A"}};
  return names;
}

inline std::string to_string(Variant v) {
  for (const auto &[value, name] : variant_names())
    if (value == v)
      return name;
  return "unknown";
}

inline std::string valid_variant_list() {
  std::string s;
  for (const auto &[value, name] : variant_names())
    s += (s.empty() ? "" : ", ") + name;
  return s;
}

inline Variant parse_variant(const std::string &name) {
  for (const auto &[value, n] : variant_names())
    if (n == name)
      return value;
  throw ConfigError("unknown variant '" + name + "' (valid: " +
                    valid_variant_list() + ")");
}

/// Video-side train-time augmentation and the per-channel normalisation
/// applied in both modes.
struct AugmentConfig {
  bool enabled = true;
  std::size_t max_shift = 2; // random crop: shift up to this many pixels
  bool flip = true;          // horizontal flip with probability 1/2
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> stddev{0.25, 0.25, 0.25};
};

struct ModelConfig {
  MfccConfig mfcc;
  AudioEncoderConfig audio;
  VideoEncoderConfig video;
  FusionConfig fusion;
  std::size_t n_classes = 8;
  std::uint64_t seed = 0;
  double lr = 0.001;
  std::size_t batch_size = 8;
  std::size_t epochs = 200;
  std::size_t n_folds = 5;
  AugmentConfig augment;

  static ModelConfig desk() { return {}; }

  /// Single-digit widths on 28 MFCC frames and 4x8x8 clips: the same
  /// structure as desk, small enough to difference every parameter.
  static ModelConfig tiny() {
    ModelConfig c;
    c.mfcc.keep = 0.3;
    c.audio.conv_channels = {8, 16};
    c.audio.out_dim = 16;
    c.video.input = {4, 8, 8};
    c.video.stem_channels = 4;
    c.video.cardinality = 2;
    c.video.stage_mid = {4, 4};
    c.video.stage_out = {8, 8};
    c.video.stage_blocks = {1, 1};
    c.video.stage_strides = {1, 2};
    c.fusion.d_f = c.fusion.d_k = c.fusion.d_ff = 16;
    c.fusion.C = c.fusion.k = 8;
    c.fusion.S = c.fusion.H = c.fusion.W = 1;
    c.augment.max_shift = 1;
    c.batch_size = 4;
    c.epochs = 3;
    return c;
  }

  /// Full-size encoders for parameter accounting. The video stage strides
  /// do not divide the 30-frame clip, so this layout is not runnable.
  static ModelConfig full() {
    ModelConfig c;
    c.audio = AudioEncoderConfig::full();
    c.video = VideoEncoderConfig::full();
    c.fusion.d_f = c.fusion.d_k = c.fusion.d_ff = c.audio.out_dim;
    c.fusion.C = c.fusion.k = c.video.out_channels();
    return c;
  }

  /// Every violated invariant, including cross-module shape agreement.
  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    auto take = [&v](const std::vector<std::string> &more) {
      v.insert(v.end(), more.begin(), more.end());
    };
    take(mfcc.violations());
    take(audio.violations());
    take(video.violations());
    take(fusion.violations());
    if (n_classes < 2)
      v.push_back("n_classes must be >= 2");
    if (!(lr > 0.0))
      v.push_back("lr must be > 0");
    if (batch_size == 0)
      v.push_back("batch_size must be >= 1");
    if (epochs == 0)
      v.push_back("epochs must be >= 1");
    if (n_folds == 0 || n_folds * 4 > 24)
      v.push_back("n_folds (" + std::to_string(n_folds) +
                  ") must satisfy 1 <= n_folds and n_folds * 4 <= 24");
    if (video.in_channels != 3)
      v.push_back("video.in_channels must be 3 (RGB normalisation)");
    for (double s : augment.stddev)
      if (!(s > 0.0))
        v.push_back("augment.stddev entries must be > 0");
    if (!v.empty())
      return v;
    if (fusion.d_f != audio.out_dim)
      v.push_back("fusion.d_f (" + std::to_string(fusion.d_f) +
                  ") must equal audio.out_dim (" +
                  std::to_string(audio.out_dim) + ")");
    if (audio.in_channels != mfcc.n_coeffs)
      v.push_back("audio.in_channels (" + std::to_string(audio.in_channels) +
                  ") must equal mfcc.n_coeffs (" +
                  std::to_string(mfcc.n_coeffs) + ")");
    try {
      audio.sequence_length(mfcc.n_frames());
    } catch (const DimensionError &e) {
      v.push_back(std::string("MFCC frame count too short: ") + e.what());
    }
    try {
      const Shape s = video.output_shape();
      if (s != Shape{fusion.C, fusion.S, fusion.H, fusion.W})
        v.push_back("fusion extents C,S,H,W " +
                    to_string(Shape{fusion.C, fusion.S, fusion.H, fusion.W}) +
                    " must equal the video output " + to_string(s));
    } catch (const ConfigError &e) {
      v.push_back(e.what());
    }
    return v;
  }

  void validate() const {
    const auto v = violations();
    if (v.empty())
      return;
    std::string msg = "invalid configuration:";
    for (const auto &s : v)
      msg += "\n  - " + s;
    throw ConfigError(msg);
  }
};

inline ModelConfig apply_variant(ModelConfig cfg, Variant v) {
  switch (v) {
  case Variant::full:
  case Variant::A_to_V:
    cfg.fusion.direction = Direction::A_to_V;
    break;
  case Variant::no_crossmodal:
    cfg.fusion.use_crossmodal = false;
    break;
  case Variant::no_self_attention:
    cfg.fusion.use_self_attention = false;
    break;
  case Variant::no_residual:
    cfg.fusion.use_residual = false;
    break;
  case Variant::V_to_A:
    cfg.fusion.direction = Direction::V_to_A;
    break;
  }
  return cfg;
}

/// Average-pools the video map (if not already a vector), concatenates the
/// audio vector and applies the head: logits [d_out] or [N x d_out].
inline Tensor classify(const Tensor &video, const Tensor &xa,
                       const Linear &head) {
  const bool batched = xa.rank() == 2;
  Tensor v = video;
  if (video.rank() != xa.rank()) {
    const Tensor map = detail::lift(video, 4);
    v = mean_axis(detail::flatten_map(map), 2);
    if (!batched)
      v = squeeze0(v);
  }
  return head(concat({v, xa}, batched ? 1 : 0));
}

class Model {
public:
  static Layout classifier_layout(const ModelConfig &cfg) {
    return Linear::layout("classifier", cfg.video.out_channels() + cfg.audio.out_dim,
                          cfg.n_classes);
  }

  static Layout layout(const ModelConfig &cfg) {
    Layout l = AudioEncoder::layout(cfg.audio);
    append(l, VideoEncoder::layout(cfg.video));
    append(l, FusionBlock::layout(cfg.fusion));
    append(l, classifier_layout(cfg));
    return l;
  }

  /// Learnable scalars per component, plus "total".
  static std::map<std::string, std::size_t> breakdown(const ModelConfig &cfg) {
    std::map<std::string, std::size_t> b{
        {"audio", count_params(AudioEncoder::layout(cfg.audio))},
        {"video", count_params(VideoEncoder::layout(cfg.video))},
        {"fusion", count_params(FusionBlock::layout(cfg.fusion))},
        {"fusion_attention", FusionBlock::attention_param_count(cfg.fusion)},
        {"classifier", count_params(classifier_layout(cfg))}};
    b["total"] = b["audio"] + b["video"] + b["fusion"] + b["classifier"];
    return b;
  }

  explicit Model(const ModelConfig &cfg) : cfg_(cfg), store_(cfg.seed) {
    cfg.validate();
    build(store_, layout(cfg));
    audio_ = AudioEncoder(cfg.audio, store_);
    video_ = VideoEncoder(cfg.video, store_);
    fusion_ = FusionBlock(cfg.fusion, store_);
    head_ = Linear(store_, "classifier");
  }
  Model(const Model &) = delete;
  Model &operator=(const Model &) = delete;

  const ModelConfig &config() const { return cfg_; }
  ParameterStore &store() { return store_; }
  const ParameterStore &store() const { return store_; }
  const Linear &head() const { return head_; }

  /// audio [N x 13 x T], video [N x 3 x S x H x W] -> logits [N x d_out].
  /// `seed` drives the dropout mask.
  Tensor operator()(const Tensor &audio, const Tensor &video, Mode mode,
                    std::uint64_t seed) const {
    const Tensor xa_seq = audio_(audio, mode, seed);
    const Tensor xv = video_(video, mode);
    const FusionOutput f = fusion_(xv, xa_seq);
    return classify(f.video, f.audio, head_);
  }

private:
  ModelConfig cfg_;
  ParameterStore store_;
  AudioEncoder audio_;
  VideoEncoder video_;
  FusionBlock fusion_;
  Linear head_;
};

} // namespace cfnsr

#endif // CFNSR_MODEL_HPP_
