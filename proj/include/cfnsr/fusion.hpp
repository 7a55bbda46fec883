// SPDX-License-Identifier: Apache-2.0
/**
 * @file   fusion.hpp
 * @brief  Cross-modal fusion block: audio self-attention followed by a
 *         softmax-gated residual fusion into the video feature map.
 *
 * Every op takes an optional leading batch axis:
 *   xa_seq [n x d_f] or [N x n x d_f], xv [C x S x H x W] or [N x C x ...].
 */
#ifndef CFNSR_FUSION_HPP_
#define CFNSR_FUSION_HPP_

#include <cmath>
#include <string>
#include <vector>

#include "layers.hpp"
#include "ops.hpp"

namespace cfnsr {

enum class Direction { A_to_V, V_to_A };
enum class GateSoftmax { channel, spatial };

struct FusionConfig {
  std::size_t d_f = 64;
  std::size_t d_k = 64;
  std::size_t d_ff = 64; // feed-forward hidden width
  std::size_t depth = 1;
  std::size_t k = 128;
  std::size_t C = 128, S = 2, H = 4, W = 4;
  bool use_crossmodal = true; // false bypasses the whole block
  bool use_self_attention = true;
  bool use_residual = true;
  Direction direction = Direction::A_to_V;
  GateSoftmax gate_softmax = GateSoftmax::channel;

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (d_f == 0 || d_k == 0 || d_ff == 0)
      v.push_back("fusion.d_f, fusion.d_k and fusion.d_ff must be >= 1");
    if (C == 0 || S == 0 || H == 0 || W == 0)
      v.push_back("fusion video extents C,S,H,W must be >= 1");
    if (k != C)
      v.push_back("fusion.k (" + std::to_string(k) +
                  ") must equal the video channel count C (" +
                  std::to_string(C) + ")");
    if (use_self_attention && depth == 0)
      v.push_back("fusion.depth must be >= 1 when self-attention is on");
    return v;
  }
  void validate() const {
    auto v = violations();
    if (!v.empty())
      throw ConfigError(v.front());
  }
};

struct AttentionLayerParams {
  Linear query, key, value; // no bias
  Linear ff1, ff2;
  LayerNorm norm;
};

/// A_to_V: wv [k x C], wa [k x d_f], bv [k].
/// V_to_A: wv [d_f x C], wa [d_f x d_f], bv [d_f].
struct GateParams {
  Tensor wv, wa, bv;
};

struct FusionParams {
  std::vector<AttentionLayerParams> layers;
  GateParams gate;
};

/// What the classifier consumes: the (possibly fused) video features and
/// the audio vector. `video` is a map for A_to_V and no-crossmodal, and an
/// already pooled [C] vector for V_to_A.
struct FusionOutput {
  Tensor video;
  Tensor audio;
};

namespace detail {

inline Tensor lift(const Tensor &x, std::size_t unbatched_rank) {
  return x.rank() == unbatched_rank ? unsqueeze0(x) : x;
}

/// [N, C, S, H, W] -> [N, C, S*H*W].
inline Tensor flatten_map(const Tensor &xv) {
  return reshape(xv, {xv.dim(0), xv.dim(1), xv.size() / (xv.dim(0) * xv.dim(1))});
}

inline Tensor project(const Tensor &x, const Tensor &w) {
  return matmul(x, transpose(w));
}

} // namespace detail

/// softmax(Q K^T / sqrt(d_k)), one row per query: [n x n] or [N x n x n].
inline Tensor attention_weights(const Tensor &z, const AttentionLayerParams &p) {
  const Tensor q = p.query(z), k = p.key(z);
  const double d_k = static_cast<double>(p.query.weight.dim(0));
  return softmax(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(d_k)),
                 z.rank() - 1);
}

/// Single-head scaled dot-product self-attention.
inline Tensor self_attention_layer(const Tensor &z,
                                   const AttentionLayerParams &p) {
  if (z.rank() != 2 && z.rank() != 3)
    throw DimensionError("self_attention: expected [n,d] or [N,n,d], got " +
                         to_string(z.shape()));
  return matmul(attention_weights(z, p), p.value(z));
}

/// D layers of attention, each followed by LN(a + FF(a)), then the mean
/// over the sequence. Without self-attention the raw sequence mean is
/// returned.
inline Tensor attention_block(const Tensor &z,
                              const std::vector<AttentionLayerParams> &layers,
                              const FusionConfig &cfg) {
  if (z.rank() != 2 && z.rank() != 3)
    throw DimensionError("attention_block: expected [n,d] or [N,n,d], got " +
                         to_string(z.shape()));
  const std::size_t seq_axis = z.rank() - 2;
  if (!cfg.use_self_attention)
    return mean_axis(z, seq_axis);
  Tensor h = z;
  for (const auto &p : layers) {
    const Tensor a = self_attention_layer(h, p);
    h = p.norm(add(a, p.ff2(relu(p.ff1(a)))));
  }
  return mean_axis(h, seq_axis);
}

/// tanh(W_v xv + b_v + W_a xa), with W_v applied along the channel axis at
/// every location and the vector (b_v + W_a xa) broadcast over locations.
inline Tensor crossmodal_gate(const Tensor &xv, const Tensor &xa,
                              const GateParams &p) {
  const bool batched = xv.rank() == 5;
  if ((xv.rank() != 4 && !batched) || xa.rank() != (batched ? 2u : 1u))
    throw DimensionError("crossmodal_gate: expected xv [C,S,H,W] with xa [d] "
                         "or batched equivalents, got " +
                         to_string(xv.shape()) + " and " +
                         to_string(xa.shape()));
  const Tensor v = detail::lift(xv, 4), a = detail::lift(xa, 1);
  if (p.wv.rank() != 2 || p.wv.dim(1) != v.dim(1) || p.wa.rank() != 2 ||
      p.wa.dim(1) != a.dim(1) || p.wa.dim(0) != p.wv.dim(0) ||
      p.bv.shape() != Shape{p.wv.dim(0)} || v.dim(0) != a.dim(0))
    throw DimensionError("crossmodal_gate: W_v " + to_string(p.wv.shape()) +
                         ", W_a " + to_string(p.wa.shape()) + ", b_v " +
                         to_string(p.bv.shape()) + " do not fit xv " +
                         to_string(xv.shape()) + " and xa " +
                         to_string(xa.shape()));
  const std::size_t k = p.wv.dim(0);
  const Tensor per_location = matmul(p.wv, detail::flatten_map(v));
  const Tensor offset = bias_add(detail::project(a, p.wa), p.bv);
  Tensor g = tanh(broadcast_add(per_location, offset));
  g = reshape(g, {v.dim(0), k, v.dim(2), v.dim(3), v.dim(4)});
  return batched ? g : squeeze0(g);
}

/// softmax(gate) * xv (+ xv with the residual path).
inline Tensor gated_residual_fuse(const Tensor &gate, const Tensor &xv,
                                  const FusionConfig &cfg) {
  if (gate.shape() != xv.shape())
    throw DimensionError("gated_residual_fuse: gate " +
                         to_string(gate.shape()) + " vs xv " +
                         to_string(xv.shape()));
  if (xv.rank() != 4 && xv.rank() != 5)
    throw DimensionError("gated_residual_fuse: expected [C,S,H,W] or "
                         "[N,C,S,H,W], got " +
                         to_string(xv.shape()));
  const Tensor g = detail::flatten_map(detail::lift(gate, 4));
  const Tensor v = detail::flatten_map(detail::lift(xv, 4));
  const Tensor weights =
      softmax(g, cfg.gate_softmax == GateSoftmax::channel ? 1 : 2);
  Tensor out = mul(weights, v);
  if (cfg.use_residual)
    out = add(out, v);
  return reshape(out, xv.shape());
}

/// Symmetric V_to_A variant: the pooled video vector gates the audio
/// feature along its feature axis.
inline Tensor audio_gate_fuse(const Tensor &video_vec, const Tensor &xa,
                              const GateParams &p, const FusionConfig &cfg) {
  const bool batched = xa.rank() == 2;
  const Tensor v = detail::lift(video_vec, 1), a = detail::lift(xa, 1);
  const Tensor q = tanh(bias_add(
      add(detail::project(a, p.wa), detail::project(v, p.wv)), p.bv));
  Tensor out = mul(softmax(q, 1), a);
  if (cfg.use_residual)
    out = add(out, a);
  return batched ? out : squeeze0(out);
}

inline FusionOutput fuse(const Tensor &xv, const Tensor &xa_seq,
                         const FusionParams &params, const FusionConfig &cfg) {
  const std::size_t seq_axis = xa_seq.rank() - 2;
  if (!cfg.use_crossmodal)
    return {xv, mean_axis(xa_seq, seq_axis)};
  const Tensor xa = attention_block(xa_seq, params.layers, cfg);
  if (cfg.direction == Direction::A_to_V)
    return {gated_residual_fuse(crossmodal_gate(xv, xa, params.gate), xv, cfg),
            xa};
  const Tensor v = detail::lift(xv, 4);
  Tensor pooled = mean_axis(detail::flatten_map(v), 2);
  if (xv.rank() == 4)
    pooled = squeeze0(pooled);
  return {pooled, audio_gate_fuse(pooled, xa, params.gate, cfg)};
}

class FusionBlock {
public:
  static Layout layout(const FusionConfig &cfg,
                       const std::string &prefix = "fusion") {
    cfg.validate();
    Layout l;
    if (!cfg.use_crossmodal)
      return l;
    if (cfg.use_self_attention)
      for (std::size_t i = 0; i < cfg.depth; ++i) {
        const std::string p = prefix + ".attn" + std::to_string(i);
        append(l, Linear::layout(p + ".query", cfg.d_f, cfg.d_k, false));
        append(l, Linear::layout(p + ".key", cfg.d_f, cfg.d_k, false));
        append(l, Linear::layout(p + ".value", cfg.d_f, cfg.d_f, false));
        append(l, Linear::layout(p + ".ff1", cfg.d_f, cfg.d_ff));
        append(l, Linear::layout(p + ".ff2", cfg.d_ff, cfg.d_f));
        append(l, LayerNorm::layout(p + ".norm", cfg.d_f));
      }
    const bool a_to_v = cfg.direction == Direction::A_to_V;
    const std::size_t rows = a_to_v ? cfg.k : cfg.d_f;
    l.push_back({prefix + ".gate.wv", {rows, cfg.C}, Init::fan_in_uniform,
                 cfg.C});
    l.push_back({prefix + ".gate.wa", {rows, cfg.d_f}, Init::fan_in_uniform,
                 cfg.d_f});
    l.push_back({prefix + ".gate.bv", {rows}, Init::zeros});
    return l;
  }

  /// Parameters of the attention stack alone.
  static std::size_t attention_param_count(const FusionConfig &cfg) {
    if (!cfg.use_crossmodal || !cfg.use_self_attention)
      return 0;
    FusionConfig without = cfg;
    without.use_self_attention = false;
    return count_params(layout(cfg)) - count_params(layout(without));
  }

  FusionBlock() = default;
  FusionBlock(const FusionConfig &cfg, ParameterStore &store,
              const std::string &prefix = "fusion")
      : cfg_(cfg) {
    if (!cfg.use_crossmodal)
      return;
    if (cfg.use_self_attention)
      for (std::size_t i = 0; i < cfg.depth; ++i) {
        const std::string p = prefix + ".attn" + std::to_string(i);
        params_.layers.push_back({Linear(store, p + ".query"),
                                  Linear(store, p + ".key"),
                                  Linear(store, p + ".value"),
                                  Linear(store, p + ".ff1"),
                                  Linear(store, p + ".ff2"),
                                  LayerNorm(store, p + ".norm")});
      }
    params_.gate = {store.get(prefix + ".gate.wv"),
                    store.get(prefix + ".gate.wa"),
                    store.get(prefix + ".gate.bv")};
  }

  const FusionConfig &config() const { return cfg_; }
  const FusionParams &params() const { return params_; }

  FusionOutput operator()(const Tensor &xv, const Tensor &xa_seq) const {
    return fuse(xv, xa_seq, params_, cfg_);
  }

private:
  FusionConfig cfg_;
  FusionParams params_;
};

} // namespace cfnsr

#endif // CFNSR_FUSION_HPP_
