// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one PASS/FAIL line per criterion, exit 1 if any fails.
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <cfnsr/data.hpp>
#include <cfnsr/gradcheck_suite.hpp>
#include <cfnsr/training.hpp>

#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace cfnsr;
using namespace cfnsr::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char *f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

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

const fs::path &root() {
  static const fs::path dir = fs::temp_directory_path() /
                              ("cfnsr_acceptance_" + std::to_string(::getpid()));
  return dir;
}

// ---------------------------------------------------------------- 1

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  std::size_t checked = 0, retried = 0, failed = 0;
  double worst = 0.0;
  std::string failures;
  GradCheckSuiteOptions o;
  run_gradcheck_suite(o, [&](const GradCheckResult &r) {
    checked += r.checked;
    retried += r.refined;
    worst = std::max(worst, r.max_rel_error);
    if (!r.passed) {
      ++failed;
      failures += " " + r.name;
    }
  });
  const double secs = seconds_since(t0);
  const std::size_t families = gradcheck_families().size();
  Outcome out;
  out.pass = failed == 0 && secs <= 120.0;
  out.detail = std::to_string(families) + " families incl. desk model, " +
               std::to_string(checked) + " coordinates (" +
               std::to_string(retried) + " at narrower steps), max rel err " +
               fmt("%.2e", worst) + ", " + fmt("%.1f s", secs);
  if (failed)
    out.detail += ", failed:" + failures;
  return out;
}

// ---------------------------------------------------------------- 2

std::vector<double> naive_maxpool(const std::vector<double> &x,
                                  std::size_t rows, std::size_t len,
                                  std::size_t win, std::size_t stride) {
  const std::size_t lout = (len - win) / stride + 1;
  std::vector<double> y(rows * lout);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < lout; ++o) {
      double m = -INFINITY;
      for (std::size_t t = 0; t < win; ++t)
        m = std::max(m, x[r * len + o * stride + t]);
      y[r * lout + o] = m;
    }
  return y;
}

std::vector<double> naive_avgpool(const std::vector<double> &x,
                                  std::size_t outer, Dims3 in, Dims3 win,
                                  Dims3 stride) {
  const Dims3 o{(in.s - win.s) / stride.s + 1, (in.h - win.h) / stride.h + 1,
                (in.w - win.w) / stride.w + 1};
  std::vector<double> y;
  for (std::size_t c = 0; c < outer; ++c)
    for (std::size_t a = 0; a < o.s; ++a)
      for (std::size_t b = 0; b < o.h; ++b)
        for (std::size_t d = 0; d < o.w; ++d) {
          double s = 0.0;
          for (std::size_t i = 0; i < win.s; ++i)
            for (std::size_t j = 0; j < win.h; ++j)
              for (std::size_t k = 0; k < win.w; ++k)
                s += x[((c * in.s + a * stride.s + i) * in.h + b * stride.h +
                        j) *
                           in.w +
                       d * stride.w + k];
          y.push_back(s / double(win.s * win.h * win.w));
        }
  return y;
}

Outcome oracle_equivalence() {
  constexpr int kTrials = 20;
  Rng rng(2024);
  std::map<std::string, double> worst;
  auto note = [&](const std::string &name, std::span<const double> got,
                  const std::vector<double> &ref) {
    worst[name] = std::max(worst[name], scaled_rel_diff(got, ref));
  };

  for (int t = 0; t < kTrials; ++t) {
    const std::size_t N = 1 + rng.below(3), cin = 1 + rng.below(4),
                      cout = 1 + rng.below(5), len = 8 + rng.below(20),
                      k = 1 + rng.below(5), stride = 1 + rng.below(2),
                      pad = rng.below(3);
    const Tensor x = random_tensor(rng, {N, cin, len});
    const Tensor w = random_tensor(rng, {cout, cin, k});
    const Tensor b = random_tensor(rng, {cout});
    const Tensor y = conv1d(x, w, b, stride, pad);
    std::vector<double> ref;
    for (std::size_t n = 0; n < N; ++n) {
      const std::vector<double> xs(x.data().begin() + n * cin * len,
                                   x.data().begin() + (n + 1) * cin * len);
      auto part = naive_conv1d(xs, cin, len, values(w), cout, k, stride, pad);
      const std::size_t lout = part.size() / cout;
      for (std::size_t oc = 0; oc < cout; ++oc)
        for (std::size_t i = 0; i < lout; ++i)
          part[oc * lout + i] += b[oc];
      ref.insert(ref.end(), part.begin(), part.end());
    }
    note("conv1d", y.data(), ref);
  }

  for (int t = 0; t < kTrials; ++t) {
    const std::size_t N = 1 + rng.below(2), g = 1 + rng.below(3),
                      cin = g * (1 + rng.below(2)), cout = g * (1 + rng.below(3));
    const Dims3 in{2 + rng.below(3), 3 + rng.below(4), 3 + rng.below(4)};
    const Dims3 kd{1 + rng.below(2) * 2, 1 + rng.below(2) * 2, 3};
    const Dims3 st{1, 1 + rng.below(2), 1 + rng.below(2)};
    const Dims3 pd{kd.s / 2, kd.h / 2, 1};
    const Tensor x = random_tensor(rng, {N, cin, in.s, in.h, in.w});
    const Tensor w = random_tensor(rng, {cout, cin / g, kd.s, kd.h, kd.w});
    const Tensor b = random_tensor(rng, {cout});
    const Tensor y = conv3d_grouped(x, w, b, g, {st.s, st.h, st.w},
                                    {pd.s, pd.h, pd.w});
    const std::size_t plane = in.s * in.h * in.w;
    const std::size_t wblock = (cout / g) * (cin / g) * kd.s * kd.h * kd.w;
    std::vector<double> ref;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t j = 0; j < g; ++j) {
        const auto xb = x.data().begin() + (n * cin + j * (cin / g)) * plane;
        const std::vector<double> xs(xb, xb + (cin / g) * plane);
        const std::vector<double> ws(w.data().begin() + j * wblock,
                                     w.data().begin() + (j + 1) * wblock);
        Dims3 od{};
        auto part = naive_conv3d(xs, cin / g, in, ws, cout / g, kd, st, pd, &od);
        const std::size_t per = od.s * od.h * od.w;
        for (std::size_t oc = 0; oc < cout / g; ++oc)
          for (std::size_t i = 0; i < per; ++i)
            part[oc * per + i] += b[j * (cout / g) + oc];
        ref.insert(ref.end(), part.begin(), part.end());
      }
    note("conv3d_grouped", y.data(), ref);
  }

  for (int t = 0; t < kTrials; ++t) {
    const std::size_t rows = 1 + rng.below(6), len = 4 + rng.below(20),
                      win = 1 + rng.below(4), stride = 1 + rng.below(3);
    const Tensor x = random_tensor(rng, {rows, len});
    note("maxpool1d", maxpool1d(x, win, stride).data(),
         naive_maxpool(values(x), rows, len, win, stride));
    const std::size_t outer = 1 + rng.below(4);
    const Dims3 in{2 + rng.below(4), 2 + rng.below(5), 2 + rng.below(5)};
    const Dims3 win3{1 + rng.below(2), 1 + rng.below(2), 2};
    const Dims3 st3{1 + rng.below(2), 1 + rng.below(2), 1 + rng.below(2)};
    const Tensor v = random_tensor(rng, {outer, in.s, in.h, in.w});
    note("avgpool3d",
         avgpool3d(v, {win3.s, win3.h, win3.w}, {st3.s, st3.h, st3.w}).data(),
         naive_avgpool(values(v), outer, in, win3, st3));
  }

  for (int t = 0; t < kTrials; ++t) {
    FusionConfig cfg;
    cfg.d_f = cfg.d_ff = 2 + rng.below(10);
    cfg.d_k = 1 + rng.below(10);
    cfg.C = cfg.k = 1 + rng.below(6);
    cfg.S = 1 + rng.below(2);
    cfg.H = 1 + rng.below(3);
    cfg.W = 1 + rng.below(3);
    ParameterStore store(static_cast<std::uint64_t>(t));
    build(store, FusionBlock::layout(cfg));
    const FusionBlock block(cfg, store);
    randomize(store, rng);
    const auto &layer = block.params().layers[0];
    const std::size_t n = 1 + rng.below(12), d = cfg.d_f;
    const auto z = rng.uniform_vector(n * d, -2, 2);
    note("attention",
         self_attention_layer(Tensor::from({n, d}, z), layer).data(),
         naive_attention(z, n, d, values(layer.query.weight),
                         values(layer.key.weight), values(layer.value.weight),
                         cfg.d_k));

    const std::size_t C = cfg.C, P = cfg.S * cfg.H * cfg.W;
    const Shape vshape{C, cfg.S, cfg.H, cfg.W};
    const auto xv = rng.uniform_vector(C * P, -2, 2);
    const auto xa = rng.uniform_vector(d, -2, 2);
    const GateParams &gp = block.params().gate;
    const Tensor gate =
        crossmodal_gate(Tensor::from(vshape, xv), Tensor::from({d}, xa), gp);
    const auto gate_ref = naive_gate(xv, C, P, xa, d, values(gp.wv),
                                     values(gp.wa), values(gp.bv), C);
    note("gate", gate.data(), gate_ref);

    cfg.use_residual = t % 2 == 0;
    note("fusion",
         gated_residual_fuse(gate, Tensor::from(vshape, xv), cfg).data(),
         naive_fuse(gate_ref, xv, C, P, cfg.use_residual));
  }

  for (int t = 0; t < kTrials; ++t) {
    MfccConfig cfg;
    if (t % 4 == 1)
      cfg.n_mels = 26 + rng.below(20);
    if (t % 5 == 0)
      cfg.fmin = 100.0;
    const auto len =
        std::size_t(cfg.sample_rate * (cfg.trim_head + cfg.keep)) + rng.below(400);
    const auto pcm = rng.uniform_vector(len, -0.5, 0.5);
    worst["mfcc"] = std::max(
        worst["mfcc"],
        scaled_rel_diff(mfcc(pcm, cfg.sample_rate, cfg).coeffs.data(),
                        naive_mfcc(pcm, cfg)));
  }

  Outcome out{true, std::to_string(kTrials) + " instances each, max rel err"};
  for (const auto &[name, err] : worst) {
    const double tol = name == "mfcc" ? 1e-8 : 1e-10;
    if (!(err <= tol))
      out.pass = false;
    out.detail += " " + name + " " + fmt("%.1e", err);
  }
  return out;
}

// ---------------------------------------------------------------- 3

Outcome normalization() {
  Rng rng(77);
  double worst = 0.0;
  std::size_t slices = 0;
  auto check_rows = [&](const Tensor &w, std::size_t row_len) {
    for (std::size_t r = 0; r < w.size() / row_len; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < row_len; ++j)
        s += w[r * row_len + j];
      worst = std::max(worst, std::abs(s - 1.0));
      ++slices;
    }
  };
  for (int t = 0; t < 40; ++t) {
    FusionConfig cfg;
    cfg.d_f = cfg.d_ff = 1 + rng.below(16);
    cfg.d_k = 1 + rng.below(16);
    cfg.C = cfg.k = 1 + rng.below(9);
    cfg.S = 1 + rng.below(3);
    cfg.H = 1 + rng.below(4);
    cfg.W = 1 + rng.below(4);
    ParameterStore store(static_cast<std::uint64_t>(t));
    build(store, FusionBlock::layout(cfg));
    const FusionBlock block(cfg, store);
    randomize(store, rng, -2, 2);
    const std::size_t N = 1 + rng.below(3), n = 1 + rng.below(20);
    const Tensor z = random_tensor(rng, {N, n, cfg.d_f}, -3, 3);
    check_rows(attention_weights(z, block.params().layers[0]), n);

    // Channel softmax of the gate, read off by fusing an all-ones map.
    cfg.use_residual = false;
    const Shape shape{N, cfg.C, cfg.S, cfg.H, cfg.W};
    const Tensor gate = crossmodal_gate(random_tensor(rng, shape, -3, 3),
                                        random_tensor(rng, {N, cfg.d_f}), block.params().gate);
    const Tensor w = gated_residual_fuse(scale(gate, 5.0),
                                         Tensor::full(shape, 1.0), cfg);
    const std::size_t P = cfg.S * cfg.H * cfg.W;
    for (std::size_t b = 0; b < N; ++b)
      for (std::size_t p = 0; p < P; ++p) {
        double s = 0.0;
        for (std::size_t c = 0; c < cfg.C; ++c)
          s += w[(b * cfg.C + c) * P + p];
        worst = std::max(worst, std::abs(s - 1.0));
        ++slices;
      }
  }
  return {worst <= 1e-12, std::to_string(slices) +
                              " attention rows and gate locations, max |sum-1| " +
                              fmt("%.1e", worst)};
}

// ---------------------------------------------------------------- 4

Outcome residual_guarantee() {
  Rng rng(91);
  std::size_t mismatches = 0, compared = 0;
  std::string sizes;
  for (std::size_t C : {1u, 2u, 4u, 8u, 32u, 128u}) {
    for (bool residual : {true, false}) {
      FusionConfig cfg;
      cfg.d_f = cfg.d_k = cfg.d_ff = 8;
      cfg.C = cfg.k = C;
      cfg.S = cfg.H = cfg.W = 2;
      cfg.use_residual = residual;
      ParameterStore store(C);
      build(store, FusionBlock::layout(cfg));
      const FusionBlock block(cfg, store);
      randomize(store, rng);
      const GateParams &gp = block.params().gate;
      for (const Tensor &t : {gp.wv, gp.wa, gp.bv})
        zero(t);
      const Tensor xv = random_tensor(rng, {2, C, 2, 2, 2}, -5, 5);
      const Tensor y = block(xv, random_tensor(rng, {2, 5, 8})).video;
      for (std::size_t i = 0; i < xv.size(); ++i) {
        const double want =
            residual ? xv[i] / double(C) + xv[i] : xv[i] / double(C);
        mismatches += y[i] != want;
        ++compared;
      }
    }
    sizes += (sizes.empty() ? "" : ",") + std::to_string(C);
  }
  return {mismatches == 0,
          std::to_string(compared) + " outputs over C in {" + sizes +
              "} with and without residual, " + std::to_string(mismatches) +
              " not bitwise equal"};
}

// ---------------------------------------------------------------- 5

std::size_t hand_audio_count(std::size_t in, std::size_t c1, std::size_t c2,
                             std::size_t k) {
  return (in * c1 * k + c1) + 2 * c1 + 2 * c1 + (c1 * c2 * k + c2) + 2 * c2;
}

std::size_t hand_block_count(std::size_t in, std::size_t mid, std::size_t out,
                             std::size_t g, bool projected) {
  std::size_t n = in * mid + 2 * mid;
  n += mid * (mid / g) * 27 + 2 * mid;
  n += mid * out + 2 * out;
  if (projected)
    n += in * out + 2 * out;
  return n;
}

std::size_t hand_fusion_count(std::size_t d, std::size_t dk, std::size_t dff,
                              std::size_t C) {
  const std::size_t attention =
      2 * dk * d + d * d + (dff * d + dff) + (d * dff + d) + 2 * d;
  const std::size_t gate = C * C + C * d + C;
  return attention + gate;
}

Outcome parameter_accounting() {
  const ModelConfig desk = ModelConfig::desk();
  std::size_t hand = hand_audio_count(13, 32, 64, 3);
  hand += 3 * 16 * 27 + 2 * 16;
  hand += hand_block_count(16, 32, 64, 4, true);
  hand += hand_block_count(64, 32, 64, 4, false);
  hand += hand_block_count(64, 64, 128, 4, true);
  hand += hand_block_count(128, 64, 128, 4, false);
  hand += hand_fusion_count(64, 64, 64, 128);
  hand += (128 + 64) * 8 + 8;
  const std::size_t desk_n = count_params(Model::layout(desk));

  const ModelConfig full = ModelConfig::full();
  const auto fb = Model::breakdown(full);
  const double video = double(fb.at("video")), audio = double(fb.at("audio"));
  auto total = [](const ModelConfig &c, Variant v) {
    return count_params(Model::layout(apply_variant(c, v)));
  };
  const bool no_res_equal =
      total(full, Variant::no_residual) == total(full, Variant::full) &&
      total(desk, Variant::no_residual) == total(desk, Variant::full);
  const bool video_ok = std::abs(video - 25.88e6) <= 0.05 * 25.88e6;
  const bool audio_ok = std::abs(audio - 0.03e6) <= 0.5 * 0.03e6;
  const std::size_t delta_full =
      total(full, Variant::full) - total(full, Variant::no_crossmodal);
  const std::size_t delta_desk =
      total(desk, Variant::full) - total(desk, Variant::no_crossmodal);

  Outcome out;
  out.pass = desk_n == hand && video_ok && audio_ok && no_res_equal;
  out.detail = "desk " + std::to_string(desk_n) + " vs hand " +
               std::to_string(hand) + ", full video " +
               fmt("%.2fM", video / 1e6) + " (25.88M +-5%), full audio " +
               fmt("%.3fM", audio / 1e6) + " (0.03M +-50%), no_residual " +
               (no_res_equal ? "==" : "!=") + " full; fusion delta full " +
               fmt("%.2fM", double(delta_full) / 1e6) + ", desk " +
               std::to_string(delta_desk) +
               " (published: 0.38M and 30K, not asserted)";
  return out;
}

// ---------------------------------------------------------------- 6

Outcome fold_protocol() {
  bool ok = true;
  const auto five = make_folds(5);
  std::set<std::size_t> seen;
  ok &= five.size() == 5;
  for (const FoldSplit &f : five) {
    std::size_t female = 0;
    for (std::size_t a : f.test_actors) {
      ok &= seen.insert(a).second;
      female += a % 2 == 0;
      ok &= std::find(f.train_actors.begin(), f.train_actors.end(), a) ==
            f.train_actors.end();
    }
    ok &= f.test_actors.size() == 4 && female == 2;
    ok &= f.train_actors.size() + f.test_actors.size() == 24;
  }
  std::set<std::size_t> covered;
  for (const FoldSplit &f : make_folds(6))
    covered.insert(f.test_actors.begin(), f.test_actors.end());
  ok &= covered.size() == 24 && *covered.begin() == 1 && *covered.rbegin() == 24;
  return {ok, "5 folds: " + std::to_string(seen.size()) +
                  " distinct test actors, 2 female + 2 male each; 6 folds cover " +
                  std::to_string(covered.size()) + " actors"};
}

// ---------------------------------------------------------------- 7, 8

struct SyntheticData {
  ModelConfig cfg;
  Dataset data;
};

SyntheticData &synthetic() {
  static SyntheticData s = [] {
    SyntheticData d;
    d.cfg = ModelConfig::desk();
    SynthOptions so;
    so.clips = 64;
    so.frames = d.cfg.video.input;
    write_synthetic(root() / "raw", so);
    preprocess(root() / "raw", root() / "pre", d.cfg.mfcc, 1);
    d.data = load_dataset(root() / "pre", d.cfg);
    return d;
  }();
  return s;
}

constexpr std::size_t kSmokeEpochs = 15;

Outcome learning_smoke() {
  const auto t0 = Clock::now();
  const SyntheticData &s = synthetic();
  ModelConfig cfg = s.cfg;
  cfg.epochs = kSmokeEpochs;
  const CrossValidationSummary cv = cross_validate(s.data, cfg);
  const double secs = seconds_since(t0);
  bool reached = true;
  std::string firsts;
  for (const TrainReport &r : cv.folds) {
    std::size_t first = 0;
    for (const EpochRecord &e : r.epochs)
      if (e.train_acc >= 0.95) {
        first = e.epoch;
        break;
      }
    reached &= first != 0;
    firsts += (firsts.empty() ? "" : ",") +
              (first ? std::to_string(first) : std::string("-"));
  }
  Outcome out;
  out.pass = reached && cv.mean_accuracy >= 0.125 + 0.30 && secs <= 600.0;
  out.detail = std::to_string(s.data.samples.size()) + " clips, " +
               std::to_string(cv.folds.size()) + " folds x " +
               std::to_string(kSmokeEpochs) +
               " epochs; first epoch with train acc >= 95% per fold {" + firsts +
               "}, mean held-out acc " + fmt("%.3f", cv.mean_accuracy) +
               " (need >= 0.425), " + fmt("%.1f s", secs);
  return out;
}

Outcome ablation_plumbing() {
  const SyntheticData &s = synthetic();
  std::map<std::string, std::size_t> desk, full;
  std::string trained;
  for (const auto &[v, name] : variant_names()) {
    ModelConfig cfg = apply_variant(s.cfg, v);
    cfg.epochs = 1;
    CrossValidationOptions o;
    o.fold_limit = 1;
    const CrossValidationSummary cv = cross_validate(s.data, cfg, o, name);
    if (cv.folds.size() != 1 || cv.folds[0].epochs.size() != 1)
      return {false, name + " did not train one epoch"};
    desk[name] = cv.param_count;
    full[name] =
        count_params(Model::layout(apply_variant(ModelConfig::full(), v)));
    trained += (trained.empty() ? "" : ",") + name;
  }
  bool ok = true;
  for (auto *m : {&desk, &full})
    ok &= m->at("no_crossmodal") < m->at("full") &&
          m->at("V_to_A") != m->at("A_to_V");
  std::string counts;
  for (const auto &[v, name] : variant_names())
    counts += " " + name + " " + fmt("%.2fM", double(full.at(name)) / 1e6);
  return {ok, "trained 1 epoch each {" + trained +
                  "}; full-scale counts" + counts +
                  " (published 26.30M, 25.92M, 25.67M); desk no_crossmodal " +
                  std::to_string(desk.at("no_crossmodal")) + " < " +
                  std::to_string(desk.at("full")) + ", V_to_A " +
                  std::to_string(desk.at("V_to_A")) + " != A_to_V " +
                  std::to_string(desk.at("A_to_V"))};
}

// ---------------------------------------------------------------- 9

int run_cli(const std::string &args, const fs::path &stdout_file) {
  const std::string cmd = std::string(CFNSR_CLI) + " " + args + " > " +
                          stdout_file.string() + " 2> " +
                          (root() / "cli_stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

/// Every regular file under dir except wall-clock timing, keyed by path.
/// Mentions of dir itself are replaced so two run directories compare equal.
std::map<std::string, std::string> tree(const fs::path &dir) {
  const std::string self = dir.string();
  std::map<std::string, std::string> files;
  for (const auto &e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().filename() == "timing.json")
      continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    std::string text = ss.str();
    for (std::size_t p; (p = text.find(self)) != std::string::npos;)
      text.replace(p, self.size(), "{}");
    files[fs::relative(e.path(), dir).string()] = std::move(text);
  }
  return files;
}

Outcome determinism() {
  const std::string cfg = (root() / "desk.json").string();
  const std::vector<std::pair<std::string, std::string>> commands{
      {"config", "config"},
      {"params", "params --full --json"},
      {"synth", "synth --clips 24 --seed 4 --config " + cfg + " --out {}/raw"},
      {"preprocess", "preprocess --config " + cfg + " --data " +
                         (root() / "det_a" / "synth" / "raw").string() +
                         " --out {}/pre"},
      {"train", "train --config " + cfg + " --data " +
                    (root() / "pre").string() +
                    " --epochs 2 --fold-limit 2 --jobs 2 --out {}/run"},
      {"ablate", "ablate --config " + cfg + " --data " +
                     (root() / "pre").string() +
                     " --epochs 1 --fold-limit 1 --variants no_crossmodal,V_to_A"
                     " --out {}/run"},
      {"gradcheck", "gradcheck --seed 3 --no-desk"}};
  if (run_cli("config", cfg) != 0)
    return {false, "config failed"};
  synthetic();
  std::size_t files = 0;
  std::string differing;
  for (const auto &[name, args] : commands) {
    std::map<std::string, std::string> runs[2];
    for (int i = 0; i < 2; ++i) {
      const fs::path dir = root() / (i ? "det_b" : "det_a") / name;
      fs::create_directories(dir);
      std::string a = args;
      for (std::size_t p; (p = a.find("{}")) != std::string::npos;)
        a.replace(p, 2, dir.string());
      if (run_cli(a, dir / "stdout.txt") != 0)
        return {false, name + " exited nonzero"};
      runs[i] = tree(dir);
    }
    files += runs[0].size();
    if (runs[0] != runs[1])
      differing += " " + name;
  }
  return {differing.empty(),
          std::to_string(commands.size()) + " commands run twice, " +
              std::to_string(files) + " output files compared byte for byte" +
              (differing.empty() ? "" : ", differing:" + differing)};
}

} // namespace

int main() {
  fs::remove_all(root());
  fs::create_directories(root());
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"oracle equivalence", oracle_equivalence},
      {"normalization invariants", normalization},
      {"residual guarantee", residual_guarantee},
      {"parameter accounting", parameter_accounting},
      {"fold protocol", fold_protocol},
      {"learning smoke test", learning_smoke},
      {"ablation plumbing", ablation_plumbing},
      {"determinism", determinism}};
  int failed = 0, index = 0;
  for (const auto &[name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception &e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("[%s] %d %s: %s\n", o.pass ? "PASS" : "FAIL", ++index,
                name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", index - failed, criteria.size());
  fs::remove_all(root());
  return failed ? 1 : 0;
}
