// SPDX-License-Identifier: Apache-2.0
/**
 * @file   encoders.hpp
 * @brief  Audio (1D CNN over MFCC frames) and video (3D ResNeXt) encoders.
 *
 * Both accept an optional leading batch axis. The audio encoder returns the
 * per-step feature sequence [n x d_f] that the attention stack consumes; the
 * video encoder returns the pre-pooling map [C x S' x H' x W'].
 */
#ifndef CFNSR_ENCODERS_HPP_
#define CFNSR_ENCODERS_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "layers.hpp"
#include "ops.hpp"
#include "rng.hpp"

namespace cfnsr {

// ---------------------------------------------------------------------------
// Audio

struct AudioEncoderConfig {
  std::size_t in_channels = 13;
  std::vector<std::size_t> conv_channels{32, 64};
  std::size_t kernel_size = 3;
  std::size_t pool_window = 2;
  double dropout_rate = 0.3;
  std::size_t out_dim = 64;

  static AudioEncoderConfig desk() { return {}; }
  static AudioEncoderConfig full() {
    AudioEncoderConfig c;
    c.conv_channels = {64, 128};
    c.out_dim = 128;
    return c;
  }

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (in_channels == 0)
      v.push_back("audio.in_channels must be >= 1");
    if (conv_channels.size() < 2)
      v.push_back("audio.conv_channels needs at least two entries");
    for (std::size_t c : conv_channels)
      if (c == 0)
        v.push_back("audio.conv_channels entries must be >= 1");
    if (kernel_size == 0)
      v.push_back("audio.kernel_size must be >= 1");
    if (pool_window == 0)
      v.push_back("audio.pool_window must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      v.push_back("audio.dropout_rate must lie in [0, 1)");
    if (!conv_channels.empty() && out_dim != conv_channels.back())
      v.push_back("audio.out_dim (" + std::to_string(out_dim) +
                  ") must equal the last conv width (" +
                  std::to_string(conv_channels.back()) + ")");
    return v;
  }
  void validate() const {
    auto v = violations();
    if (!v.empty())
      throw ConfigError(v.front());
  }

  /// Sequence length after all stages for T input frames.
  std::size_t sequence_length(std::size_t frames) const {
    auto need = [](std::size_t have, std::size_t want, const char *stage) {
      if (have < want)
        throw DimensionError(std::string("audio encoder: ") + stage +
                             " needs at least " + std::to_string(want) +
                             " steps, got " + std::to_string(have));
    };
    need(frames, kernel_size, "stage 1 (conv)");
    std::size_t len = frames - kernel_size + 1;
    need(len, pool_window, "stage 2 (max-pool)");
    len = (len - pool_window) / pool_window + 1;
    for (std::size_t i = 1; i < conv_channels.size(); ++i) {
      need(len, kernel_size, "stage 3 (conv)");
      len = len - kernel_size + 1;
    }
    return len;
  }
};

class AudioEncoder {
public:
  static Layout layout(const AudioEncoderConfig &cfg,
                       const std::string &prefix = "audio") {
    cfg.validate();
    const auto &ch = cfg.conv_channels;
    Layout l = Conv1d::layout(prefix + ".conv1", cfg.in_channels, ch[0],
                              cfg.kernel_size);
    append(l, BatchNorm::layout(prefix + ".bn1", ch[0]));
    append(l, BatchNorm::layout(prefix + ".bn2", ch[0]));
    for (std::size_t i = 1; i < ch.size(); ++i) {
      const std::string id = std::to_string(i + 2);
      append(l, Conv1d::layout(prefix + ".conv" + id, ch[i - 1], ch[i],
                               cfg.kernel_size));
      append(l, BatchNorm::layout(prefix + ".bn" + id, ch[i]));
    }
    return l;
  }

  AudioEncoder() = default;
  AudioEncoder(const AudioEncoderConfig &cfg, ParameterStore &store,
               const std::string &prefix = "audio")
      : cfg_(cfg), conv1_(store, prefix + ".conv1"),
        bn1_(store, prefix + ".bn1"), bn2_(store, prefix + ".bn2") {
    for (std::size_t i = 1; i < cfg.conv_channels.size(); ++i) {
      const std::string id = std::to_string(i + 2);
      convs_.emplace_back(store, prefix + ".conv" + id);
      bns_.emplace_back(store, prefix + ".bn" + id);
    }
  }

  const AudioEncoderConfig &config() const { return cfg_; }

  /// x: [in_channels x T] or [N x in_channels x T] -> [n x d_f] or
  /// [N x n x d_f].
  Tensor operator()(const Tensor &x, Mode mode, std::uint64_t seed) const {
    const bool batched = x.rank() == 3;
    if (x.rank() != 2 && !batched)
      throw DimensionError("audio encoder: expected [C,T] or [N,C,T], got " +
                           to_string(x.shape()));
    if (x.dim(x.rank() - 2) != cfg_.in_channels)
      throw DimensionError("audio encoder: expected " +
                           std::to_string(cfg_.in_channels) +
                           " input channels, got " + to_string(x.shape()));
    cfg_.sequence_length(x.dim(x.rank() - 1));
    Tensor h = batched ? x : unsqueeze0(x);
    h = bn1_(relu(conv1_(h)), mode);
    h = maxpool1d(h, cfg_.pool_window, cfg_.pool_window);
    h = dropout(bn2_(h, mode), cfg_.dropout_rate, mode, seed);
    for (std::size_t i = 0; i < convs_.size(); ++i)
      h = bns_[i](relu(convs_[i](h)), mode);
    h = transpose(h);
    return batched ? h : squeeze0(h);
  }

private:
  AudioEncoderConfig cfg_;
  Conv1d conv1_;
  BatchNorm bn1_, bn2_;
  std::vector<Conv1d> convs_;
  std::vector<BatchNorm> bns_;
};

// ---------------------------------------------------------------------------
// Video

struct VideoEncoderConfig {
  std::string variant = "desk";
  std::size_t in_channels = 3;
  Triple input{8, 32, 32}; // S, H, W
  std::size_t stem_channels = 16;
  Triple stem_kernel{3, 3, 3};
  Triple stem_stride{1, 2, 2};
  Triple stem_padding{1, 1, 1};
  Triple pool_window{2, 2, 2};
  Triple pool_stride{2, 2, 2};
  std::size_t cardinality = 4;
  std::vector<std::size_t> stage_mid{32, 64};
  std::vector<std::size_t> stage_out{64, 128};
  std::vector<std::size_t> stage_blocks{2, 2};
  std::vector<std::size_t> stage_strides{1, 2};

  static VideoEncoderConfig desk() { return {}; }

  /// 3D ResNeXt-50 (32x4d-style widths) on 30 x 224 x 224 clips.
  static VideoEncoderConfig full() {
    VideoEncoderConfig c;
    c.variant = "full";
    c.input = {30, 224, 224};
    c.stem_channels = 64;
    c.stem_kernel = {7, 7, 7};
    c.stem_padding = {3, 3, 3};
    c.pool_window = {3, 3, 3};
    c.cardinality = 32;
    c.stage_mid = {128, 256, 512, 1024};
    c.stage_out = {256, 512, 1024, 2048};
    c.stage_blocks = {3, 4, 6, 3};
    c.stage_strides = {1, 2, 2, 2};
    return c;
  }

  std::size_t out_channels() const {
    return stage_out.empty() ? stem_channels : stage_out.back();
  }

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    const std::size_t n = stage_mid.size();
    if (n == 0 || stage_out.size() != n || stage_blocks.size() != n ||
        stage_strides.size() != n)
      v.push_back("video.stage_* lists must be non-empty and equally long");
    if (cardinality == 0) {
      v.push_back("video.cardinality must be >= 1");
      return v;
    }
    for (std::size_t c : stage_mid)
      if (c == 0 || c % cardinality != 0)
        v.push_back("video.stage_mid width " + std::to_string(c) +
                    " is not divisible by cardinality " +
                    std::to_string(cardinality));
    for (std::size_t c : stage_out)
      if (c == 0 || c % cardinality != 0)
        v.push_back("video.stage_out width " + std::to_string(c) +
                    " is not divisible by cardinality " +
                    std::to_string(cardinality));
    for (std::size_t b : stage_blocks)
      if (b == 0)
        v.push_back("video.stage_blocks entries must be >= 1");
    for (std::size_t s : stage_strides)
      if (s == 0)
        v.push_back("video.stage_strides entries must be >= 1");
    if (in_channels == 0 || stem_channels == 0)
      v.push_back("video.in_channels and video.stem_channels must be >= 1");
    return v;
  }
  void validate() const {
    auto v = violations();
    if (!v.empty())
      throw ConfigError(v.front());
  }

  /// Closed-form output extents [C, S', H', W'] for `in` (defaults to the
  /// configured input).
  Shape output_shape(std::optional<Triple> in = std::nullopt) const {
    validate();
    Triple e = in.value_or(input);
    auto conv = [](std::size_t x, std::size_t k, std::size_t s,
                   std::size_t p, const char *what) {
      if (x + 2 * p < k)
        throw ConfigError(std::string("video encoder: extent ") +
                          std::to_string(x) + " too small for " + what);
      return (x + 2 * p - k) / s + 1;
    };
    e = {conv(e.s, stem_kernel.s, stem_stride.s, stem_padding.s, "stem"),
         conv(e.h, stem_kernel.h, stem_stride.h, stem_padding.h, "stem"),
         conv(e.w, stem_kernel.w, stem_stride.w, stem_padding.w, "stem")};
    e = {conv(e.s, pool_window.s, pool_stride.s, 0, "stem pool"),
         conv(e.h, pool_window.h, pool_stride.h, 0, "stem pool"),
         conv(e.w, pool_window.w, pool_stride.w, 0, "stem pool")};
    for (std::size_t st = 0; st < stage_strides.size(); ++st) {
      const std::size_t s = stage_strides[st];
      if (e.s % s || e.h % s || e.w % s)
        throw ConfigError("video encoder: stage " + std::to_string(st + 1) +
                          " stride " + std::to_string(s) +
                          " does not divide extents " + std::to_string(e.s) +
                          "x" + std::to_string(e.h) + "x" +
                          std::to_string(e.w));
      e = {e.s / s, e.h / s, e.w / s};
    }
    return {out_channels(), e.s, e.h, e.w};
  }
};

/// ResNeXt bottleneck: 1^3 reduce, grouped 3^3, 1^3 expand, plus an
/// identity or projected shortcut.
class Bottleneck {
public:
  static Layout layout(const std::string &p, std::size_t in, std::size_t mid,
                       std::size_t out, std::size_t groups,
                       std::size_t stride) {
    Layout l = Conv3d::layout(p + ".conv1", in, mid, {1, 1, 1});
    append(l, BatchNorm::layout(p + ".bn1", mid));
    append(l, Conv3d::layout(p + ".conv2", mid, mid, {3, 3, 3}, groups));
    append(l, BatchNorm::layout(p + ".bn2", mid));
    append(l, Conv3d::layout(p + ".conv3", mid, out, {1, 1, 1}));
    append(l, BatchNorm::layout(p + ".bn3", out));
    if (in != out || stride != 1) {
      append(l, Conv3d::layout(p + ".down", in, out, {1, 1, 1}));
      append(l, BatchNorm::layout(p + ".down_bn", out));
    }
    return l;
  }

  Bottleneck(ParameterStore &store, const std::string &p, std::size_t groups,
             std::size_t stride)
      : conv1(store, p + ".conv1", 1, {}, {0, 0, 0}), bn1(store, p + ".bn1"),
        conv2(store, p + ".conv2", groups, {stride, stride, stride},
              {1, 1, 1}),
        bn2(store, p + ".bn2"), conv3(store, p + ".conv3", 1, {}, {0, 0, 0}),
        bn3(store, p + ".bn3") {
    if (store.contains(p + ".down.weight")) {
      down = Conv3d(store, p + ".down", 1, {stride, stride, stride},
                    {0, 0, 0});
      down_bn = BatchNorm(store, p + ".down_bn");
    }
  }

  bool projected() const { return down.weight.defined(); }

  Tensor operator()(const Tensor &x, Mode mode) const {
    Tensor h = relu(bn1(conv1(x), mode));
    h = relu(bn2(conv2(h), mode));
    h = bn3(conv3(h), mode);
    const Tensor shortcut = projected() ? down_bn(down(x), mode) : x;
    return relu(add(h, shortcut));
  }

  Conv3d conv1;
  BatchNorm bn1;
  Conv3d conv2;
  BatchNorm bn2;
  Conv3d conv3;
  BatchNorm bn3;
  Conv3d down;
  BatchNorm down_bn;
};

class VideoEncoder {
public:
  static Layout layout(const VideoEncoderConfig &cfg,
                       const std::string &prefix = "video") {
    cfg.validate();
    Layout l = Conv3d::layout(prefix + ".stem", cfg.in_channels,
                              cfg.stem_channels, cfg.stem_kernel);
    append(l, BatchNorm::layout(prefix + ".stem_bn", cfg.stem_channels));
    std::size_t in = cfg.stem_channels;
    for (std::size_t s = 0; s < cfg.stage_mid.size(); ++s)
      for (std::size_t b = 0; b < cfg.stage_blocks[s]; ++b) {
        append(l, Bottleneck::layout(block_name(prefix, s, b), in,
                                     cfg.stage_mid[s], cfg.stage_out[s],
                                     cfg.cardinality,
                                     b == 0 ? cfg.stage_strides[s] : 1));
        in = cfg.stage_out[s];
      }
    return l;
  }

  VideoEncoder() = default;
  VideoEncoder(const VideoEncoderConfig &cfg, ParameterStore &store,
               const std::string &prefix = "video")
      : cfg_(cfg), stem_(store, prefix + ".stem", 1, cfg.stem_stride,
                         cfg.stem_padding),
        stem_bn_(store, prefix + ".stem_bn") {
    for (std::size_t s = 0; s < cfg.stage_mid.size(); ++s)
      for (std::size_t b = 0; b < cfg.stage_blocks[s]; ++b)
        blocks_.emplace_back(store, block_name(prefix, s, b), cfg.cardinality,
                             b == 0 ? cfg.stage_strides[s] : 1);
  }

  const VideoEncoderConfig &config() const { return cfg_; }
  const std::vector<Bottleneck> &blocks() const { return blocks_; }

  /// x: [C_in x S x H x W] or [N x C_in x S x H x W].
  Tensor operator()(const Tensor &x, Mode mode) const {
    const bool batched = x.rank() == 5;
    if (x.rank() != 4 && !batched)
      throw DimensionError("video encoder: expected [C,S,H,W] or "
                           "[N,C,S,H,W], got " +
                           to_string(x.shape()));
    const std::size_t o = batched ? 1 : 0;
    if (x.dim(o) != cfg_.in_channels)
      throw DimensionError("video encoder: expected " +
                           std::to_string(cfg_.in_channels) +
                           " input channels, got " + to_string(x.shape()));
    cfg_.output_shape(Triple{x.dim(o + 1), x.dim(o + 2), x.dim(o + 3)});
    Tensor h = batched ? x : unsqueeze0(x);
    h = relu(stem_bn_(stem_(h), mode));
    h = avgpool3d(h, cfg_.pool_window, cfg_.pool_stride);
    for (const auto &block : blocks_)
      h = block(h, mode);
    return batched ? h : squeeze0(h);
  }

private:
  static std::string block_name(const std::string &prefix, std::size_t s,
                                std::size_t b) {
    return prefix + ".layer" + std::to_string(s + 1) + "." + std::to_string(b);
  }

  VideoEncoderConfig cfg_;
  Conv3d stem_;
  BatchNorm stem_bn_;
  std::vector<Bottleneck> blocks_;
};

} // namespace cfnsr

#endif // CFNSR_ENCODERS_HPP_
