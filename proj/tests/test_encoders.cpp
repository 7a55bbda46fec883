// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include <cfnsr/encoders.hpp>
#include <cfnsr/gradcheck.hpp>

#include "test_util.hpp"

using namespace cfnsr;
using namespace cfnsr::testing;

namespace {

// Parameter counts written out by hand from the layer definitions, without
// going through any Layout.
std::size_t hand_audio_count(std::size_t in, std::size_t c1, std::size_t c2,
                             std::size_t k) {
  const std::size_t conv1 = in * c1 * k + c1;
  const std::size_t bn1 = 2 * c1, bn2 = 2 * c1;
  const std::size_t conv2 = c1 * c2 * k + c2;
  const std::size_t bn3 = 2 * c2;
  return conv1 + bn1 + bn2 + conv2 + bn3;
}

std::size_t hand_block_count(std::size_t in, std::size_t mid, std::size_t out,
                             std::size_t g, bool projected) {
  std::size_t n = in * mid + 2 * mid;   // 1^3 reduce + BN
  n += mid * (mid / g) * 27 + 2 * mid;  // grouped 3^3 + BN
  n += mid * out + 2 * out;             // 1^3 expand + BN
  if (projected)
    n += in * out + 2 * out;            // projection + BN
  return n;
}

VideoEncoderConfig toy_video() {
  VideoEncoderConfig c;
  c.input = {4, 8, 8};
  c.stem_channels = 4;
  c.cardinality = 2;
  c.stage_mid = {4, 4};
  c.stage_out = {8, 8};
  c.stage_blocks = {1, 1};
  c.stage_strides = {1, 2};
  return c;
}

struct AudioFixture {
  ParameterStore store{7};
  AudioEncoder enc;
  explicit AudioFixture(const AudioEncoderConfig &cfg) {
    build(store, AudioEncoder::layout(cfg));
    enc = AudioEncoder(cfg, store);
  }
};

struct VideoFixture {
  ParameterStore store{9};
  VideoEncoder enc;
  explicit VideoFixture(const VideoEncoderConfig &cfg) {
    build(store, VideoEncoder::layout(cfg));
    enc = VideoEncoder(cfg, store);
  }
};

std::vector<Tensor> all_params(const ParameterStore &store) {
  std::vector<Tensor> out;
  for (const auto &[name, t] : store.params())
    out.push_back(t);
  return out;
}

} // namespace

TEST(CountParams, DenseLayerTenToFive) {
  EXPECT_EQ(count_params(Linear::layout("fc", 10, 5)), 55u);
  EXPECT_EQ(count_params(Linear::layout("fc", 10, 5, false)), 50u);
}

TEST(CountParams, AudioDeskMatchesHandCount) {
  const auto cfg = AudioEncoderConfig::desk();
  EXPECT_EQ(count_params(AudioEncoder::layout(cfg)),
            hand_audio_count(13, 32, 64, 3));
  EXPECT_EQ(hand_audio_count(13, 32, 64, 3), 7744u);
  AudioFixture f(cfg);
  EXPECT_EQ(f.store.count(), 7744u);
}

TEST(CountParams, AudioFullIsAboutThirtyThousand) {
  const std::size_t n = count_params(AudioEncoder::layout(AudioEncoderConfig::full()));
  EXPECT_EQ(n, hand_audio_count(13, 64, 128, 3));
  EXPECT_NEAR(double(n), 0.03e6, 0.5 * 0.03e6);
}

TEST(CountParams, VideoDeskMatchesHandCount) {
  std::size_t expected = 3 * 16 * 27 + 2 * 16; // stem + BN
  expected += hand_block_count(16, 32, 64, 4, true);
  expected += hand_block_count(64, 32, 64, 4, false);
  expected += hand_block_count(64, 64, 128, 4, true);
  expected += hand_block_count(128, 64, 128, 4, false);
  EXPECT_EQ(count_params(VideoEncoder::layout(VideoEncoderConfig::desk())),
            expected);
}

TEST(CountParams, VideoFullNearResNeXt50Size) {
  const std::size_t n =
      count_params(VideoEncoder::layout(VideoEncoderConfig::full()));
  EXPECT_NEAR(double(n), 25.88e6, 0.05 * 25.88e6);
}

TEST(CountParams, RunningStatsAreNotCounted) {
  AudioFixture f(AudioEncoderConfig::desk());
  Rng rng(1);
  f.enc(random_tensor(rng, {2, 13, 30}), Mode::train, 1);
  EXPECT_FALSE(f.store.bn_states().empty());
  EXPECT_EQ(f.store.count(), 7744u);
}

TEST(AudioEncoder, SequenceShapeForDefaultLengths) {
  AudioFixture f(AudioEncoderConfig::desk());
  Rng rng(2);
  for (std::size_t T : {100u, 243u, 244u}) {
    const Tensor y = f.enc(random_tensor(rng, {13, T}), Mode::train, 3);
    const std::size_t n = ((T - 2) - 2) / 2 + 1 - 2;
    EXPECT_EQ(y.shape(), (Shape{n, 64})) << "T=" << T;
    EXPECT_EQ(f.enc.config().sequence_length(T), n);
  }
}

TEST(AudioEncoder, ZeroInputGivesZeroOutputInEval) {
  AudioFixture f(AudioEncoderConfig::desk());
  const Tensor zeros = Tensor::zeros({2, 13, 40});
  f.enc(zeros, Mode::train, 1);
  const Tensor y = f.enc(zeros, Mode::eval, 1);
  for (double v : y.data())
    ASSERT_EQ(v, 0.0);
}

TEST(AudioEncoder, ShortInputNamesFailingStage) {
  AudioFixture f(AudioEncoderConfig::desk());
  try {
    f.enc(Tensor::zeros({13, 4}), Mode::train, 1);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError &e) {
    EXPECT_NE(std::string(e.what()).find("stage"), std::string::npos);
  }
  EXPECT_THROW(f.enc(Tensor::zeros({12, 40}), Mode::train, 1), DimensionError);
}

TEST(AudioEncoder, OutDimMustMatchLastConv) {
  AudioEncoderConfig cfg;
  cfg.out_dim = 128;
  EXPECT_THROW(AudioEncoder::layout(cfg), ConfigError);
}

TEST(AudioEncoder, GradientsMatchFiniteDifferences) {
  AudioFixture f(AudioEncoderConfig::desk());
  Rng rng(4);
  const Tensor x = random_tensor(rng, {2, 13, 20});
  // Small weights keep the loss O(1), so cancellation noise in the
  // difference quotient stays below the relative-error floor.
  const Tensor w = random_tensor(rng, {2, 7, 64}, -0.1, 0.1);
  auto params = all_params(f.store);
  params.push_back(x);
  const auto r = check_gradients(
      "audio_encoder",
      [&] { return weighted_sum(f.enc(x, Mode::train, 11), w); }, params);
  EXPECT_GT(r.checked, 7744u);
  EXPECT_LE(r.max_rel_error, 1e-4);
}

TEST(AudioEncoder, EvalIsDeterministic) {
  AudioFixture f(AudioEncoderConfig::desk());
  Rng rng(5);
  const Tensor x = random_tensor(rng, {3, 13, 50});
  f.enc(x, Mode::train, 1);
  const Tensor a = f.enc(x, Mode::eval, 1), b = f.enc(x, Mode::eval, 2);
  for (std::size_t i = 0; i < a.size(); ++i)
    ASSERT_EQ(a[i], b[i]);
}

TEST(VideoEncoder, DeskOutputShape) {
  const auto cfg = VideoEncoderConfig::desk();
  EXPECT_EQ(cfg.output_shape(), (Shape{128, 2, 4, 4}));
  VideoFixture f(cfg);
  Rng rng(6);
  const Tensor y = f.enc(random_tensor(rng, {3, 8, 32, 32}), Mode::train);
  EXPECT_EQ(y.shape(), (Shape{128, 2, 4, 4}));
}

TEST(VideoEncoder, ShapeInferenceAgreesWithRuntime) {
  Rng rng(7);
  for (Triple in : {Triple{4, 8, 8}, Triple{8, 16, 16}, Triple{8, 8, 24}}) {
    for (std::size_t stride2 : {1u, 2u}) {
      auto cfg = toy_video();
      cfg.input = in;
      cfg.stage_strides = {1, stride2};
      VideoFixture f(cfg);
      const Tensor y = f.enc(random_tensor(rng, {2, 3, in.s, in.h, in.w}),
                             Mode::train);
      const Shape s = cfg.output_shape();
      EXPECT_EQ(y.shape(), (Shape{2, s[0], s[1], s[2], s[3]}));
    }
  }
}

TEST(VideoEncoder, IndivisibleExtentIsConfigError) {
  auto cfg = toy_video();
  cfg.input = {6, 8, 8}; // 3 x 2 x 2 after stem pool; stride 2 does not divide 3
  EXPECT_THROW(cfg.output_shape(), ConfigError);
  cfg = toy_video();
  cfg.stage_mid = {6, 4};
  cfg.cardinality = 4;
  EXPECT_THROW(VideoEncoder::layout(cfg), ConfigError);
}

TEST(VideoEncoder, ZeroedIdentityBlockReproducesInput) {
  VideoFixture f(VideoEncoderConfig::desk());
  const Bottleneck &block = f.enc.blocks()[1];
  ASSERT_FALSE(block.projected());
  for (const auto &[name, t] : f.store.params())
    if (name.rfind("video.layer1.1.", 0) == 0)
      for (double &v : Tensor(t).mutable_data())
        v = 0.0;
  Rng rng(8);
  const Tensor x = relu(random_tensor(rng, {2, 64, 4, 8, 8}));
  const Tensor y = block(x, Mode::train);
  for (std::size_t i = 0; i < x.size(); ++i)
    ASSERT_EQ(y[i], x[i]);
}

TEST(VideoEncoder, GroupedConvolutionPartitionsChannels) {
  VideoFixture f(VideoEncoderConfig::desk());
  const Conv3d &conv = f.enc.blocks()[0].conv2; // 32 -> 32, 4 groups
  Rng rng(9);
  const Tensor x = random_tensor(rng, {32, 2, 4, 4});
  const Tensor base = conv(x);
  for (std::size_t g = 0; g < 4; ++g) {
    auto values = std::vector<double>(x.data().begin(), x.data().end());
    for (std::size_t c = g * 8; c < g * 8 + 8; ++c)
      for (std::size_t i = 0; i < 32; ++i)
        values[c * 32 + i] += 1.0;
    const Tensor y = conv(Tensor::from(x.shape(), values));
    const std::size_t plane = 2 * 4 * 4;
    for (std::size_t c = 0; c < 32; ++c) {
      double diff = 0.0;
      for (std::size_t i = 0; i < plane; ++i)
        diff = std::max(diff, std::abs(y[c * plane + i] - base[c * plane + i]));
      if (c / 8 == g)
        EXPECT_GT(diff, 0.0) << "group " << g << " channel " << c;
      else
        EXPECT_EQ(diff, 0.0) << "group " << g << " channel " << c;
    }
  }
}

TEST(VideoEncoder, EvalIsDeterministic) {
  VideoFixture f(toy_video());
  Rng rng(10);
  const Tensor x = random_tensor(rng, {2, 3, 4, 8, 8});
  f.enc(x, Mode::train);
  const Tensor a = f.enc(x, Mode::eval), b = f.enc(x, Mode::eval);
  for (std::size_t i = 0; i < a.size(); ++i)
    ASSERT_EQ(a[i], b[i]);
}

TEST(VideoEncoder, GradientsMatchFiniteDifferences) {
  VideoFixture f(toy_video());
  Rng rng(11);
  const Tensor x = random_tensor(rng, {2, 3, 4, 8, 8});
  const Tensor w = random_tensor(rng, {2, 8, 1, 1, 1});
  auto params = all_params(f.store);
  params.push_back(x);
  const auto r = check_gradients(
      "video_encoder",
      [&] { return weighted_sum(f.enc(x, Mode::train), w); }, params);
  EXPECT_LE(r.max_rel_error, 1e-4);
}
