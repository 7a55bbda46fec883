// SPDX-License-Identifier: Apache-2.0
/**
 * @file   gradcheck_suite.hpp
 * @brief  Finite-difference checks for every op family, the fusion block,
 *         both encoders and the end-to-end model.
 *
 * Each family builds a scalar loss sum(w * f(inputs)) with fixed random
 * weights w and compares tape gradients of every input against central
 * differences.
 */
#ifndef CFNSR_GRADCHECK_SUITE_HPP_
#define CFNSR_GRADCHECK_SUITE_HPP_

#include <functional>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "model.hpp"

namespace cfnsr {

namespace detail {

/// Identity forward whose backward scales the gradient by 1.5: a wrong
/// rule the harness must catch.
inline Tensor corrupt_backward(const Tensor &x) {
  std::vector<double> values(x.data().begin(), x.data().end());
  return make_result("corrupt", x.shape(), std::move(values), {x},
                     [](Node &self) {
                       if (double *g = input_grad(self, 0))
                         for (std::size_t i = 0; i < self.grad.size(); ++i)
                           g[i] += 1.5 * self.grad[i];
                     });
}

} // namespace detail

struct GradCheckSuiteOptions {
  std::uint64_t seed = 0;
  std::string corrupt;      // family whose output gets a wrong backward rule
  bool include_desk = true; // sampled check of the end-to-end desk model
  std::size_t desk_samples_per_tensor = 6;
  ModelConfig desk = ModelConfig::desk();
};

inline const std::vector<std::string> &gradcheck_families() {
  static const std::vector<std::string> f{
      "elementwise",     "shape",          "matmul",
      "broadcast",       "relu",           "tanh",
      "softmax",         "reduction",      "conv1d",
      "maxpool1d",       "conv3d_grouped", "avgpool3d",
      "batchnorm",       "layernorm",      "dropout",
      "cross_entropy",   "linear",         "self_attention",
      "attention_block", "crossmodal_gate", "gated_residual_fuse",
      "fuse_A_to_V",     "fuse_V_to_A",    "classify",
      "audio_encoder",   "video_encoder",  "model_tiny",
      "model_desk"};
  return f;
}

inline std::vector<GradCheckResult>
run_gradcheck_suite(const GradCheckSuiteOptions &o = {},
                    const std::function<void(const GradCheckResult &)> &on_result = {}) {
  Rng rng(o.seed);
  auto rand = [&rng](Shape s, double lo = -1.0, double hi = 1.0) {
    const std::size_t n = numel(s);
    return Tensor::from(std::move(s), rng.uniform_vector(n, lo, hi));
  };
  // Values bounded away from zero so relu sits away from its kink.
  auto rand_off_zero = [&rng](Shape s) {
    std::vector<double> v(numel(s));
    for (double &x : v)
      x = (rng.below(2) ? 1.0 : -1.0) * rng.uniform(0.1, 1.0);
    return Tensor::from(std::move(s), std::move(v));
  };
  auto wsum = [](const Tensor &y, const Tensor &w) { return sum(mul(y, w)); };

  std::vector<GradCheckResult> results;
  auto run = [&](const std::string &name, std::function<Tensor()> f,
                 std::vector<Tensor> inputs, GradCheckOptions opts = {}) {
    if (name == "model_desk" && !o.include_desk)
      return;
    const bool bad = name == o.corrupt;
    const Tensor probe = f();
    Rng wr(derive_seed(o.seed, fnv1a(name)));
    const Tensor w =
        Tensor::from(probe.shape(), wr.uniform_vector(probe.size(), -1, 1));
    auto loss = [&, f, bad, w] {
      Tensor y = f();
      if (bad)
        y = detail::corrupt_backward(y);
      return y.rank() == 0 ? y : wsum(y, w);
    };
    results.push_back(check_gradients(name, loss, std::move(inputs), opts));
    if (on_result)
      on_result(results.back());
  };

  {
    const Tensor a = rand({3, 4}), b = rand({3, 4});
    run("elementwise",
        [=] { return scale(mul(add(a, b), sub(a, b)), 0.7); }, {a, b});
  }
  {
    const Tensor a = rand({2, 3, 4}), b = rand({2, 3, 2});
    run("shape",
        [=] {
          const Tensor t = transpose(concat({a, b}, 2));
          return squeeze0(unsqueeze0(reshape(t, {2, 18})));
        },
        {a, b});
  }
  {
    const Tensor a = rand({2, 3, 4}), b = rand({4, 5});
    run("matmul", [=] { return matmul(a, b); }, {a, b});
  }
  {
    const Tensor t = rand({3, 2, 4}), v = rand({3}), bias = rand({4});
    run("broadcast", [=] { return bias_add(broadcast_add(t, v), bias); },
        {t, v, bias});
  }
  {
    const Tensor x = rand_off_zero({4, 5});
    run("relu", [=] { return relu(x); }, {x});
  }
  {
    const Tensor x = rand({4, 5}, -2, 2);
    run("tanh", [=] { return tanh(x); }, {x});
  }
  {
    const Tensor x = rand({3, 4, 5}, -2, 2);
    run("softmax", [=] { return add(softmax(x, 1), softmax(x, 2)); }, {x});
  }
  {
    const Tensor x = rand({3, 4, 5});
    run("reduction",
        [=] {
          return add(scale(sum(mean_axis(x, 1)), 0.5), mean(x));
        },
        {x});
  }
  {
    const Tensor x = rand({2, 3, 9}), k = rand({4, 3, 3}), b = rand({4});
    run("conv1d", [=] { return conv1d(x, k, b, 2, 1); }, {x, k, b});
  }
  {
    const Tensor x = rand({2, 3, 10});
    run("maxpool1d", [=] { return maxpool1d(x, 3, 2); }, {x});
  }
  {
    const Tensor x = rand({2, 4, 3, 4, 4}), k = rand({6, 2, 3, 3, 3}),
                 b = rand({6});
    run("conv3d_grouped",
        [=] { return conv3d_grouped(x, k, b, 2, {1, 2, 2}, {1, 1, 1}); },
        {x, k, b});
  }
  {
    const Tensor x = rand({2, 3, 4, 4, 4});
    run("avgpool3d", [=] { return avgpool3d(x, {2, 2, 2}, {2, 2, 2}); }, {x});
  }
  {
    const Tensor x = rand({4, 3, 5}), g = rand({3}), b = rand({3});
    auto st = std::make_shared<BatchNormState>();
    run("batchnorm",
        [=] { return batchnorm(x, g, b, *st, Mode::train, 0.1, 1e-5); },
        {x, g, b});
  }
  {
    const Tensor x = rand({3, 6}), g = rand({6}), b = rand({6});
    run("layernorm", [=] { return layernorm(x, g, b); }, {x, g, b});
  }
  {
    const Tensor x = rand({4, 6});
    run("dropout", [=] { return dropout(x, 0.3, Mode::train, 17); }, {x});
  }
  {
    const Tensor z = rand({4, 8}, -3, 3);
    run("cross_entropy",
        [=] {
          const std::vector<std::size_t> y{0, 3, 7, 3};
          return cross_entropy(z, y);
        },
        {z});
  }

  FusionConfig fc;
  fc.d_f = fc.d_k = fc.d_ff = 8;
  fc.C = fc.k = 4;
  fc.S = fc.H = fc.W = 2;
  auto small_store = [&](const Layout &layout, double range) {
    auto store = std::make_shared<ParameterStore>(o.seed);
    build(*store, layout);
    for (const auto &[name, t] : store->params())
      for (double &v : Tensor(t).mutable_data())
        v = rng.uniform(-range, range);
    return store;
  };
  auto params_of = [](const ParameterStore &s) {
    std::vector<Tensor> p;
    for (const auto &[name, t] : s.params())
      p.push_back(t);
    return p;
  };
  {
    auto store = small_store(Linear::layout("fc", 5, 3), 1.0);
    const Linear fc_layer(*store, "fc");
    const Tensor x = rand({4, 5});
    auto in = params_of(*store);
    in.push_back(x);
    run("linear", [=] { return fc_layer(x); }, in);
  }
  {
    auto store = small_store(FusionBlock::layout(fc), 0.5);
    const FusionBlock block(fc, *store);
    const Tensor z = rand({2, 3, 8});
    auto in = params_of(*store);
    in.push_back(z);
    const AttentionLayerParams layer = block.params().layers[0];
    run("self_attention", [=] { return self_attention_layer(z, layer); }, in);
    run("attention_block",
        [=] { return attention_block(z, block.params().layers, fc); }, in);
    const Tensor xv = rand({2, 4, 2, 2, 2}), xa = rand({2, 8});
    const GateParams gate = block.params().gate;
    run("crossmodal_gate", [=] { return crossmodal_gate(xv, xa, gate); },
        {xv, xa, gate.wv, gate.wa, gate.bv});
    const Tensor g = rand({2, 4, 2, 2, 2}, -2, 2);
    run("gated_residual_fuse", [=] { return gated_residual_fuse(g, xv, fc); },
        {g, xv});
    in.push_back(xv);
    run("fuse_A_to_V", [=] { return block(xv, z).video; }, in);
  }
  {
    FusionConfig v2a = fc;
    v2a.direction = Direction::V_to_A;
    auto store = small_store(FusionBlock::layout(v2a), 0.5);
    const FusionBlock block(v2a, *store);
    const Tensor z = rand({2, 3, 8}), xv = rand({2, 4, 2, 2, 2});
    auto in = params_of(*store);
    in.push_back(z);
    in.push_back(xv);
    run("fuse_V_to_A",
        [=] {
          const FusionOutput out = block(xv, z);
          return concat({out.video, out.audio}, 1);
        },
        in);
  }
  {
    auto store = small_store(Linear::layout("head", 4 + 6, 8), 1.0);
    const Linear head(*store, "head");
    const Tensor map = rand({3, 4, 2, 1, 2}), xa = rand({3, 6});
    run("classify", [=] { return classify(map, xa, head); },
        {map, xa, head.weight, head.bias});
  }

  const ModelConfig tiny = ModelConfig::tiny();
  {
    auto store = std::make_shared<ParameterStore>(o.seed);
    build(*store, AudioEncoder::layout(tiny.audio));
    const AudioEncoder enc(tiny.audio, *store);
    const Tensor x = rand({2, 13, 20});
    auto in = params_of(*store);
    in.push_back(x);
    // Small output weights keep the loss O(1) so difference noise stays
    // under the relative-error floor.
    run("audio_encoder",
        [=] { return scale(enc(x, Mode::train, 5), 0.1); }, in);
  }
  {
    auto store = std::make_shared<ParameterStore>(o.seed);
    build(*store, VideoEncoder::layout(tiny.video));
    const VideoEncoder enc(tiny.video, *store);
    const Tensor x = rand({2, 3, 4, 8, 8});
    auto in = params_of(*store);
    in.push_back(x);
    run("video_encoder", [=] { return enc(x, Mode::train); }, in);
  }
  auto model_family = [&](const std::string &name, const ModelConfig &cfg,
                          std::size_t per_tensor) {
    if (name == "model_desk" && !o.include_desk)
      return;
    auto model = std::make_shared<Model>(cfg);
    const std::size_t T = cfg.mfcc.n_frames();
    const Triple in3 = cfg.video.input;
    const Tensor audio = rand({2, cfg.mfcc.n_coeffs, T});
    const Tensor video = rand({2, 3, in3.s, in3.h, in3.w});
    auto in = params_of(model->store());
    in.push_back(audio);
    in.push_back(video);
    GradCheckOptions opts;
    opts.max_per_input = per_tensor;
    opts.sample_seed = derive_seed(o.seed, fnv1a(name));
    run(name,
        [=] {
          const std::vector<std::size_t> y{1, 6};
          return cross_entropy((*model)(audio, video, Mode::train, 9), y);
        },
        in, opts);
  };
  model_family("model_tiny", tiny, 0);
  model_family("model_desk", o.desk, o.desk_samples_per_tensor);
  return results;
}

} // namespace cfnsr

#endif // CFNSR_GRADCHECK_SUITE_HPP_
