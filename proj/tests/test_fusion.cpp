// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include <cfnsr/fusion.hpp>
#include <cfnsr/gradcheck.hpp>

#include "test_util.hpp"

using namespace cfnsr;
using namespace cfnsr::testing;

namespace {

std::vector<double> values(const Tensor &t) {
  return {t.data().begin(), t.data().end()};
}

void randomize(ParameterStore &store, Rng &rng, double lo = -1.0,
               double hi = 1.0) {
  for (const auto &[name, t] : store.params())
    for (double &v : Tensor(t).mutable_data())
      v = rng.uniform(lo, hi);
}

void zero(const Tensor &t) {
  for (double &v : Tensor(t).mutable_data())
    v = 0.0;
}

FusionConfig small_config(std::size_t C = 4, std::size_t d = 8) {
  FusionConfig c;
  c.d_f = c.d_k = c.d_ff = d;
  c.C = c.k = C;
  c.S = c.H = c.W = 2;
  return c;
}

struct Block {
  ParameterStore store{3};
  FusionBlock block;
  explicit Block(const FusionConfig &cfg) {
    build(store, FusionBlock::layout(cfg));
    block = FusionBlock(cfg, store);
  }
  const AttentionLayerParams &layer() const { return block.params().layers[0]; }
};

} // namespace

TEST(SelfAttention, SingleStepWeightIsOne) {
  Block b(small_config());
  Rng rng(1);
  randomize(b.store, rng);
  const Tensor z = random_tensor(rng, {1, 8});
  const Tensor w = attention_weights(z, b.layer());
  EXPECT_EQ(w[0], 1.0);
  const Tensor y = self_attention_layer(z, b.layer());
  const Tensor v = b.layer().value(z);
  for (std::size_t i = 0; i < 8; ++i)
    EXPECT_EQ(y[i], v[i]);
}

TEST(SelfAttention, DuplicateRowsGiveDuplicateOutputs) {
  Block b(small_config());
  Rng rng(2);
  randomize(b.store, rng);
  auto z = rng.uniform_vector(3 * 8, -1, 1);
  for (std::size_t j = 0; j < 8; ++j)
    z[2 * 8 + j] = z[j];
  const Tensor y = self_attention_layer(Tensor::from({3, 8}, z), b.layer());
  for (std::size_t j = 0; j < 8; ++j)
    EXPECT_EQ(y[j], y[16 + j]);
}

TEST(SelfAttention, MatchesExplicitOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.below(6), d = 2 + rng.below(7);
    FusionConfig cfg = small_config(4, d);
    cfg.d_k = 1 + rng.below(6);
    Block b(cfg);
    randomize(b.store, rng);
    const auto z = rng.uniform_vector(n * d, -2, 2);
    std::vector<double> ref_w;
    const auto ref = naive_attention(z, n, d, values(b.layer().query.weight),
                                     values(b.layer().key.weight),
                                     values(b.layer().value.weight), cfg.d_k,
                                     &ref_w);
    const Tensor zt = Tensor::from({n, d}, z);
    EXPECT_LE(max_abs_diff(self_attention_layer(zt, b.layer()).data(), ref),
              1e-10);
    EXPECT_LE(max_abs_diff(attention_weights(zt, b.layer()).data(), ref_w),
              1e-12);
  }
}

TEST(SelfAttention, RowsSumToOne) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t N = 1 + rng.below(3), n = 1 + rng.below(9);
    Block b(small_config());
    randomize(b.store, rng, -3, 3);
    const Tensor w =
        attention_weights(random_tensor(rng, {N, n, 8}, -3, 3), b.layer());
    for (std::size_t r = 0; r < N * n; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        s += w[r * n + j];
      ASSERT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(AttentionBlock, BypassReturnsColumnMean) {
  FusionConfig cfg = small_config();
  cfg.use_self_attention = false;
  Rng rng(5);
  const Tensor z = random_tensor(rng, {5, 8});
  const Tensor y = attention_block(z, {}, cfg);
  ASSERT_EQ(y.shape(), (Shape{8}));
  for (std::size_t j = 0; j < 8; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < 5; ++i)
      s += z[i * 8 + j];
    EXPECT_NEAR(y[j], s / 5, 1e-15);
  }
}

TEST(AttentionBlock, ZeroFeedForwardLeavesNormalisedAttention) {
  const FusionConfig cfg = small_config();
  Block b(cfg);
  Rng rng(6);
  randomize(b.store, rng);
  for (const Tensor &t : {b.layer().ff1.weight, b.layer().ff1.bias,
                          b.layer().ff2.weight, b.layer().ff2.bias,
                          b.layer().norm.beta})
    zero(t);
  const std::size_t n = 4, d = 8;
  const auto z = rng.uniform_vector(n * d, -1, 1);
  const auto att = naive_attention(z, n, d, values(b.layer().query.weight),
                                   values(b.layer().key.weight),
                                   values(b.layer().value.weight), d);
  const auto gamma = values(b.layer().norm.gamma);
  std::vector<double> expected(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double mu = 0.0, var = 0.0;
    for (std::size_t j = 0; j < d; ++j)
      mu += att[i * d + j] / d;
    for (std::size_t j = 0; j < d; ++j)
      var += (att[i * d + j] - mu) * (att[i * d + j] - mu) / d;
    for (std::size_t j = 0; j < d; ++j)
      expected[j] += gamma[j] * (att[i * d + j] - mu) / std::sqrt(var + 1e-5) / n;
  }
  const Tensor y = attention_block(Tensor::from({n, d}, z),
                                   b.block.params().layers, cfg);
  EXPECT_LE(max_abs_diff(y.data(), expected), 1e-12);
}

TEST(AttentionBlock, GradientsMatchFiniteDifferences) {
  FusionConfig cfg = small_config(4, 8);
  cfg.depth = 2;
  Block b(cfg);
  Rng rng(7);
  randomize(b.store, rng, -0.5, 0.5);
  const Tensor z = random_tensor(rng, {3, 8});
  const Tensor w = random_tensor(rng, {8});
  std::vector<Tensor> inputs{z};
  for (const auto &[name, t] : b.store.params())
    if (name.find(".attn") != std::string::npos)
      inputs.push_back(t);
  const auto r = check_gradients(
      "attention_block",
      [&] {
        return weighted_sum(attention_block(z, b.block.params().layers, cfg),
                            w);
      },
      inputs);
  EXPECT_LE(r.max_rel_error, 1e-4);
}

TEST(CrossmodalGate, ZeroWeightsGiveZero) {
  const FusionConfig cfg = small_config();
  Block b(cfg);
  for (const Tensor &t :
       {b.block.params().gate.wv, b.block.params().gate.wa,
        b.block.params().gate.bv})
    zero(t);
  Rng rng(8);
  const Tensor g = crossmodal_gate(random_tensor(rng, {4, 2, 2, 2}),
                                   random_tensor(rng, {8}),
                                   b.block.params().gate);
  ASSERT_EQ(g.shape(), (Shape{4, 2, 2, 2}));
  for (double v : g.data())
    EXPECT_EQ(v, 0.0);
}

TEST(CrossmodalGate, IdentityProjectionGivesTanhOfChannelValue) {
  GateParams p{Tensor::zeros({3, 3}), Tensor::zeros({3, 5}),
               Tensor::zeros({3})};
  for (std::size_t c = 0; c < 3; ++c)
    p.wv.mutable_data()[c * 3 + c] = 1.0;
  std::vector<double> xv(3 * 8);
  const double level[3] = {-0.7, 0.2, 1.5};
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 8; ++i)
      xv[c * 8 + i] = level[c];
  Rng rng(9);
  const Tensor g = crossmodal_gate(Tensor::from({3, 2, 2, 2}, xv),
                                   random_tensor(rng, {5}), p);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 8; ++i)
      EXPECT_DOUBLE_EQ(g[c * 8 + i], std::tanh(level[c]));
}

TEST(CrossmodalGate, MatchesPerLocationOracle) {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t C = 1 + rng.below(6), d = 1 + rng.below(7);
    const std::size_t S = 1 + rng.below(3), H = 1 + rng.below(3),
                      W = 1 + rng.below(3);
    const std::size_t P = S * H * W;
    const auto xv = rng.uniform_vector(C * P, -1, 1);
    const auto xa = rng.uniform_vector(d, -1, 1);
    const auto wv = rng.uniform_vector(C * C, -1, 1);
    const auto wa = rng.uniform_vector(C * d, -1, 1);
    const auto bv = rng.uniform_vector(C, -1, 1);
    GateParams p{Tensor::from({C, C}, wv), Tensor::from({C, d}, wa),
                 Tensor::from({C}, bv)};
    const Tensor g =
        crossmodal_gate(Tensor::from({C, S, H, W}, xv), Tensor::from({d}, xa), p);
    EXPECT_LE(max_abs_diff(g.data(), naive_gate(xv, C, P, xa, d, wv, wa, bv, C)),
              1e-12);
  }
}

TEST(CrossmodalGate, ShapeMismatchIsDimensionError) {
  GateParams p{Tensor::zeros({4, 4}), Tensor::zeros({4, 8}), Tensor::zeros({4})};
  EXPECT_THROW(crossmodal_gate(Tensor::zeros({3, 2, 2, 2}), Tensor::zeros({8}), p),
               DimensionError);
  EXPECT_THROW(crossmodal_gate(Tensor::zeros({4, 2, 2, 2}), Tensor::zeros({7}), p),
               DimensionError);
}

TEST(GatedResidualFuse, SingleChannelDoublesInput) {
  FusionConfig cfg = small_config(1);
  Rng rng(11);
  const Tensor xv = random_tensor(rng, {1, 2, 2, 2});
  const Tensor y = gated_residual_fuse(random_tensor(rng, {1, 2, 2, 2}), xv, cfg);
  for (std::size_t i = 0; i < xv.size(); ++i)
    EXPECT_EQ(y[i], 2.0 * xv[i]);
}

TEST(GatedResidualFuse, UniformGateWithoutResidualAverages) {
  FusionConfig cfg = small_config(4);
  cfg.use_residual = false;
  Rng rng(12);
  const Tensor xv = random_tensor(rng, {4, 2, 2, 2});
  const Tensor y = gated_residual_fuse(Tensor::full({4, 2, 2, 2}, 0.3), xv, cfg);
  for (std::size_t i = 0; i < xv.size(); ++i)
    EXPECT_EQ(y[i], xv[i] / 4);
}

TEST(GatedResidualFuse, MatchesOracleAndSumsToOne) {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t C = 1 + rng.below(7), S = 1 + rng.below(3),
                      H = 1 + rng.below(3), W = 1 + rng.below(3);
    const std::size_t P = S * H * W;
    FusionConfig cfg = small_config(C);
    cfg.use_residual = trial % 2 == 0;
    const auto gate = rng.uniform_vector(C * P, -1, 1);
    const auto xv = rng.uniform_vector(C * P, -2, 2);
    std::vector<double> sums;
    const auto ref = naive_fuse(gate, xv, C, P, cfg.use_residual, &sums);
    const Tensor y = gated_residual_fuse(Tensor::from({C, S, H, W}, gate),
                                         Tensor::from({C, S, H, W}, xv), cfg);
    EXPECT_LE(max_abs_diff(y.data(), ref), 1e-12);
    for (double s : sums)
      EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(GatedResidualFuse, SpatialSoftmaxOption) {
  FusionConfig cfg = small_config(2);
  cfg.gate_softmax = GateSoftmax::spatial;
  cfg.use_residual = false;
  const Tensor xv = Tensor::full({2, 2, 2, 2}, 1.0);
  const Tensor y = gated_residual_fuse(Tensor::zeros({2, 2, 2, 2}), xv, cfg);
  for (double v : y.data())
    EXPECT_EQ(v, 1.0 / 8);
}

TEST(Fuse, ZeroGateWithoutAttentionOrResidualAverages) {
  FusionConfig cfg = small_config();
  cfg.use_self_attention = false;
  cfg.use_residual = false;
  Block b(cfg);
  for (const Tensor &t : {b.block.params().gate.wv, b.block.params().gate.wa,
                          b.block.params().gate.bv})
    zero(t);
  Rng rng(14);
  const Tensor xv = random_tensor(rng, {4, 2, 2, 2});
  const auto out = b.block(xv, random_tensor(rng, {3, 8}));
  ASSERT_EQ(out.video.shape(), xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i)
    EXPECT_EQ(out.video[i], xv[i] / 4);
}

TEST(Fuse, ResidualGuaranteeWithZeroGatePath) {
  for (std::size_t C : {1u, 2u, 4u, 8u, 16u}) {
    FusionConfig cfg = small_config(C);
    Block b(cfg);
    Rng rng(15 + C);
    randomize(b.store, rng);
    for (const Tensor &t : {b.block.params().gate.wv, b.block.params().gate.wa,
                            b.block.params().gate.bv})
      zero(t);
    const Tensor xv = random_tensor(rng, {C, 2, 2, 2});
    const auto out = b.block(xv, random_tensor(rng, {3, 8}));
    for (std::size_t i = 0; i < xv.size(); ++i)
      ASSERT_EQ(out.video[i], xv[i] / double(C) + xv[i]) << "C=" << C;
  }
}

TEST(Fuse, OutputShapeMatchesVideoMap) {
  const FusionConfig cfg = small_config();
  Block b(cfg);
  Rng rng(16);
  const auto out = b.block(random_tensor(rng, {3, 4, 2, 2, 2}),
                           random_tensor(rng, {3, 5, 8}));
  EXPECT_EQ(out.video.shape(), (Shape{3, 4, 2, 2, 2}));
  EXPECT_EQ(out.audio.shape(), (Shape{3, 8}));
}

TEST(Fuse, VideoToAudioGatesTheAudioVector) {
  FusionConfig cfg = small_config();
  cfg.direction = Direction::V_to_A;
  Block b(cfg);
  EXPECT_EQ(b.block.params().gate.wv.shape(), (Shape{8, 4}));
  Rng rng(17);
  randomize(b.store, rng);
  const Tensor xv = random_tensor(rng, {4, 2, 2, 2});
  const Tensor seq = random_tensor(rng, {3, 8});
  const auto out = b.block(xv, seq);
  ASSERT_EQ(out.video.shape(), (Shape{4}));
  ASSERT_EQ(out.audio.shape(), (Shape{8}));
  // Oracle: q = tanh(W_a xa + W_v mean(xv) + b), out = softmax(q) xa + xa.
  const Tensor xa = attention_block(seq, b.block.params().layers, cfg);
  const auto wv = values(b.block.params().gate.wv);
  const auto wa = values(b.block.params().gate.wa);
  const auto bv = values(b.block.params().gate.bv);
  std::vector<double> pooled(4, 0.0), q(8);
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t p = 0; p < 8; ++p)
      pooled[c] += xv[c * 8 + p] / 8;
  double total = 0.0;
  for (std::size_t r = 0; r < 8; ++r) {
    double s = bv[r];
    for (std::size_t c = 0; c < 4; ++c)
      s += wv[r * 4 + c] * pooled[c];
    for (std::size_t j = 0; j < 8; ++j)
      s += wa[r * 8 + j] * xa[j];
    q[r] = std::exp(std::tanh(s));
    total += q[r];
  }
  for (std::size_t r = 0; r < 8; ++r)
    EXPECT_NEAR(out.audio[r], q[r] / total * xa[r] + xa[r], 1e-12);
  EXPECT_LE(max_abs_diff(out.video.data(), pooled), 1e-15);
}

TEST(Fuse, GradientsMatchFiniteDifferences) {
  for (Direction dir : {Direction::A_to_V, Direction::V_to_A}) {
    FusionConfig cfg = small_config(4, 8);
    cfg.direction = dir;
    Block b(cfg);
    Rng rng(18);
    randomize(b.store, rng, -0.5, 0.5);
    const Tensor xv = random_tensor(rng, {4, 2, 2, 2});
    const Tensor seq = random_tensor(rng, {3, 8});
    const Shape vshape = dir == Direction::A_to_V ? Shape{4, 2, 2, 2} : Shape{4};
    const Tensor wv = random_tensor(rng, vshape), wa = random_tensor(rng, {8});
    std::vector<Tensor> inputs{xv, seq};
    for (const auto &[name, t] : b.store.params())
      inputs.push_back(t);
    const auto r = check_gradients(
        "fuse",
        [&] {
          const auto out = b.block(xv, seq);
          return add(weighted_sum(out.video, wv), weighted_sum(out.audio, wa));
        },
        inputs);
    EXPECT_LE(r.max_rel_error, 1e-4);
  }
}

TEST(FusionConfig, KMustEqualChannels) {
  FusionConfig cfg = small_config();
  cfg.k = 5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.depth = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(FusionConfig, AblationParameterDeltas) {
  FusionConfig full;
  const std::size_t n_full = count_params(FusionBlock::layout(full));
  FusionConfig no_sa = full;
  no_sa.use_self_attention = false;
  EXPECT_EQ(n_full - count_params(FusionBlock::layout(no_sa)),
            FusionBlock::attention_param_count(full));
  // 3 projections of 64x64, two 64x64 dense layers with bias, LN affine.
  EXPECT_EQ(FusionBlock::attention_param_count(full),
            3u * 64 * 64 + 2u * (64 * 64 + 64) + 2u * 64);
  FusionConfig no_res = full;
  no_res.use_residual = false;
  EXPECT_EQ(count_params(FusionBlock::layout(no_res)), n_full);
  FusionConfig v2a = full;
  v2a.direction = Direction::V_to_A;
  EXPECT_NE(count_params(FusionBlock::layout(v2a)), n_full);
  FusionConfig off = full;
  off.use_crossmodal = false;
  EXPECT_EQ(count_params(FusionBlock::layout(off)), 0u);
}
