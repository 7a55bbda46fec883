// SPDX-License-Identifier: Apache-2.0
/**
 * @file   training.hpp
 * @brief  Adam, actor-rotating folds, batching with video augmentation,
 *         the per-fold training loop, cross-validation, ablations and
 *         checkpoints.
 */
#ifndef CFNSR_TRAINING_HPP_
#define CFNSR_TRAINING_HPP_

#include <chrono>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "config_io.hpp"
#include "data.hpp"
#include "model.hpp"
#include "serialize.hpp"

namespace cfnsr {

// ---------------------------------------------------------------------------
// Adam

struct AdamOptions {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m, v;
};

/// One bias-corrected Adam update at step t >= 1. State is sized lazily.
inline void adam_step(std::span<double> param, std::span<const double> grad,
                      AdamState &state, std::size_t t,
                      const AdamOptions &o = {}) {
  if (t == 0)
    throw ContractError("adam_step: step counter starts at 1");
  if (grad.size() != param.size())
    throw DimensionError("adam_step: " + std::to_string(grad.size()) +
                         " gradients for " + std::to_string(param.size()) +
                         " parameters");
  if (state.m.empty()) {
    state.m.assign(param.size(), 0.0);
    state.v.assign(param.size(), 0.0);
  }
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    state.m[i] = o.beta1 * state.m[i] + (1.0 - o.beta1) * grad[i];
    state.v[i] = o.beta2 * state.v[i] + (1.0 - o.beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    param[i] -= o.lr * m_hat / (std::sqrt(v_hat) + o.eps);
  }
}

class Adam {
public:
  Adam(std::vector<Tensor> params, AdamOptions opts)
      : params_(std::move(params)), opts_(opts), state_(params_.size()) {}

  /// Applies the accumulated gradients, then clears them.
  void step() {
    ++t_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const std::vector<double> g = params_[i].grad();
      adam_step(params_[i].mutable_data(), g, state_[i], t_, opts_);
      params_[i].zero_grad();
    }
  }
  std::size_t steps() const { return t_; }

private:
  std::vector<Tensor> params_;
  AdamOptions opts_;
  std::vector<AdamState> state_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Folds

struct FoldSplit {
  std::size_t fold_index = 0;
  std::vector<std::size_t> test_actors;
  std::vector<std::size_t> train_actors;
};

/// Fold i tests actors {r*i+1, ..., r*i+r}; the rest train.
inline std::vector<FoldSplit> make_folds(std::size_t n_folds,
                                         std::size_t rotation = 4,
                                         std::size_t n_actors = 24) {
  if (n_folds == 0 || rotation == 0 || n_folds * rotation > n_actors)
    throw ConfigError("make_folds: " + std::to_string(n_folds) + " folds of " +
                      std::to_string(rotation) + " actors need " +
                      std::to_string(n_folds * rotation) + " actors, only " +
                      std::to_string(n_actors) + " exist");
  std::vector<FoldSplit> folds;
  for (std::size_t i = 0; i < n_folds; ++i) {
    FoldSplit f{i, {}, {}};
    for (std::size_t a = 1; a <= n_actors; ++a) {
      const bool test = a > rotation * i && a <= rotation * (i + 1);
      (test ? f.test_actors : f.train_actors).push_back(a);
    }
    folds.push_back(std::move(f));
  }
  return folds;
}

/// Actors that no fold tests.
inline std::vector<std::size_t> untested_actors(const std::vector<FoldSplit> &folds,
                                                std::size_t n_actors = 24) {
  std::set<std::size_t> tested;
  for (const auto &f : folds)
    tested.insert(f.test_actors.begin(), f.test_actors.end());
  std::vector<std::size_t> out;
  for (std::size_t a = 1; a <= n_actors; ++a)
    if (!tested.count(a))
      out.push_back(a);
  return out;
}

// ---------------------------------------------------------------------------
// Batching

struct Batch {
  Tensor audio; // [N x n_coeffs x T]
  Tensor video; // [N x 3 x S x H x W], normalised
  std::vector<std::size_t> labels;
};

/// Normalises one clip and, when `rng` is given, applies a random shift
/// (zero fill) and a horizontal flip. Writes into `out`.
inline void prepare_video(const Tensor &raw, const AugmentConfig &aug,
                          Rng *rng, double *out) {
  const std::size_t C = raw.dim(0), S = raw.dim(1), H = raw.dim(2),
                    W = raw.dim(3);
  std::ptrdiff_t dy = 0, dx = 0;
  bool flip = false;
  if (rng && aug.enabled) {
    const auto span = static_cast<std::ptrdiff_t>(aug.max_shift);
    dy = static_cast<std::ptrdiff_t>(rng->below(2 * aug.max_shift + 1)) - span;
    dx = static_cast<std::ptrdiff_t>(rng->below(2 * aug.max_shift + 1)) - span;
    flip = aug.flip && rng->below(2) == 1;
  }
  const auto in = raw.data();
  const auto Hi = static_cast<std::ptrdiff_t>(H), Wi = static_cast<std::ptrdiff_t>(W);
  for (std::size_t c = 0; c < C; ++c) {
    const double mean = aug.mean[c], inv = 1.0 / aug.stddev[c];
    for (std::size_t s = 0; s < S; ++s)
      for (std::ptrdiff_t h = 0; h < Hi; ++h)
        for (std::ptrdiff_t w = 0; w < Wi; ++w) {
          const std::ptrdiff_t sh = h + dy;
          std::ptrdiff_t sw = w + dx;
          if (flip)
            sw = Wi - 1 - sw;
          double v = 0.0;
          if (sh >= 0 && sh < Hi && sw >= 0 && sw < Wi)
            v = (in[((c * S + s) * H + static_cast<std::size_t>(sh)) * W +
                    static_cast<std::size_t>(sw)] -
                 mean) *
                inv;
          out[((c * S + s) * H + static_cast<std::size_t>(h)) * W +
              static_cast<std::size_t>(w)] = v;
        }
  }
}

inline Batch make_batch(const Dataset &data, std::span<const std::size_t> idx,
                        const AugmentConfig &aug, Rng *augment_rng) {
  const Sample &first = data.samples.at(idx.front());
  const std::size_t na = first.audio.size(), nv = first.video.size();
  std::vector<double> audio(idx.size() * na), video(idx.size() * nv);
  Batch b;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Sample &s = data.samples.at(idx[i]);
    std::copy(s.audio.data().begin(), s.audio.data().end(),
              audio.begin() + static_cast<std::ptrdiff_t>(i * na));
    prepare_video(s.video, aug, augment_rng, video.data() + i * nv);
    b.labels.push_back(s.label);
  }
  Shape as{idx.size()}, vs{idx.size()};
  as.insert(as.end(), first.audio.shape().begin(), first.audio.shape().end());
  vs.insert(vs.end(), first.video.shape().begin(), first.video.shape().end());
  b.audio = Tensor::from(std::move(as), std::move(audio));
  b.video = Tensor::from(std::move(vs), std::move(video));
  return b;
}

inline std::size_t argmax_row(std::span<const double> row) {
  return static_cast<std::size_t>(
      std::max_element(row.begin(), row.end()) - row.begin());
}

/// Eval-mode accuracy over `idx`, in batches.
inline double evaluate(const Model &model, const Dataset &data,
                       const std::vector<std::size_t> &idx,
                       std::size_t batch_size) {
  if (idx.empty())
    return 0.0;
  NoGradGuard no_grad;
  std::size_t correct = 0;
  const std::size_t d = model.config().n_classes;
  for (std::size_t lo = 0; lo < idx.size(); lo += batch_size) {
    const std::size_t hi = std::min(idx.size(), lo + batch_size);
    const Batch b = make_batch(
        data, std::span(idx).subspan(lo, hi - lo), model.config().augment, nullptr);
    const Tensor logits = model(b.audio, b.video, Mode::eval, 0);
    for (std::size_t r = 0; r < b.labels.size(); ++r)
      correct += argmax_row(logits.data().subspan(r * d, d)) == b.labels[r];
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

// ---------------------------------------------------------------------------
// Checkpoints

/// Values of every parameter and batch-norm buffer at one moment.
struct Snapshot {
  std::vector<std::pair<std::string, Tensor>> tensors;
};

inline Snapshot snapshot(const ParameterStore &store) {
  Snapshot s;
  for (const auto &[name, t] : store.params())
    s.tensors.emplace_back(name, t.detach());
  for (const auto &[name, st] : store.bn_states()) {
    const std::size_t c = st.running_mean.size();
    s.tensors.emplace_back(name + ".running_mean",
                           Tensor::from({c}, st.running_mean));
    s.tensors.emplace_back(name + ".running_var",
                           Tensor::from({c}, st.running_var));
  }
  return s;
}

/// Writes `dir`/<name>.cfnt per tensor and a manifest.json with the config,
/// the name-to-file map and the parameter count.
inline void save_checkpoint(const fs::path &dir, const Snapshot &snap,
                            const ModelConfig &cfg, const Json &extra = {}) {
  fs::create_directories(dir);
  Json files = Json::object();
  for (const auto &[name, t] : snap.tensors) {
    const std::string file = name + ".cfnt";
    save_cfnt(dir / file, t);
    files[name] = file;
  }
  Json j{{"config", to_json(cfg)},
         {"config_hash", config_hash(cfg)},
         {"parameter_count", count_params(Model::layout(cfg))},
         {"files", files}};
  if (extra.is_object())
    for (const auto &[k, v] : extra.items())
      j[k] = v;
  write_json(dir / "manifest.json", j);
}

/// Restores parameters and batch-norm buffers written by save_checkpoint
/// into a model built from the same config.
inline void load_checkpoint(const fs::path &dir, Model &model) {
  const Json j = read_json(dir / "manifest.json");
  if (j.value("config_hash", "") != config_hash(model.config()))
    throw DataError(dir.string() + ": checkpoint config differs from model");
  const Json &files = j.at("files");
  ParameterStore &store = model.store();
  for (const auto &[name, t] : store.params()) {
    if (!files.contains(name))
      throw DataError(dir.string() + ": checkpoint lacks " + name);
    const Tensor v = load_cfnt(dir / files[name].get<std::string>());
    if (v.shape() != t.shape())
      throw DataError(dir.string() + ": shape mismatch for " + name);
    std::copy(v.data().begin(), v.data().end(), Tensor(t).mutable_data().begin());
  }
  for (auto it = files.begin(); it != files.end(); ++it) {
    const std::string &key = it.key();
    for (const char *suffix : {".running_mean", ".running_var"}) {
      const std::string sfx = suffix;
      if (key.size() > sfx.size() &&
          key.compare(key.size() - sfx.size(), sfx.size(), sfx) == 0) {
        const Tensor v = load_cfnt(dir / it.value().get<std::string>());
        BatchNormState &st =
            store.bn_state(key.substr(0, key.size() - sfx.size()));
        auto &dst = sfx == ".running_mean" ? st.running_mean : st.running_var;
        dst.assign(v.data().begin(), v.data().end());
        st.batches_tracked = std::max<std::size_t>(st.batches_tracked, 1);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  std::size_t epoch = 0; // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
};

struct TrainReport {
  std::string variant = "full";
  FoldSplit fold;
  std::size_t n_train = 0, n_test = 0;
  std::vector<EpochRecord> epochs;
  double final_test_acc = 0.0; // accuracy after the last epoch
  double best_test_acc = 0.0;
  std::size_t best_epoch = 0;
  std::size_t param_count = 0;
  std::string config_hash;
  double wall_time = 0.0; // seconds; kept out of the deterministic JSON
};

struct TrainOptions {
  std::optional<fs::path> checkpoint_dir;
  std::function<void(const TrainReport &, const EpochRecord &)> on_epoch;
};

/// Trains a freshly initialised model on the fold's training actors and
/// evaluates on its test actors after every epoch. Deterministic given
/// cfg.seed: initialisation, shuffling, augmentation and dropout all draw
/// from streams derived from it and the fold index.
inline TrainReport train_fold(const Dataset &data, const FoldSplit &fold,
                              const ModelConfig &cfg,
                              const TrainOptions &opts = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  const std::set<std::size_t> test_set(fold.test_actors.begin(),
                                       fold.test_actors.end());
  const std::set<std::size_t> train_set(fold.train_actors.begin(),
                                        fold.train_actors.end());
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    if (test_set.count(data.samples[i].actor_id))
      test_idx.push_back(i);
    else if (train_set.count(data.samples[i].actor_id))
      train_idx.push_back(i);
  }
  if (train_idx.empty() || test_idx.empty())
    throw ConfigError("fold " + std::to_string(fold.fold_index) + ": " +
                      (train_idx.empty() ? "training" : "test") +
                      " partition is empty");

  const std::uint64_t fold_seed = derive_seed(cfg.seed, fold.fold_index);
  ModelConfig model_cfg = cfg;
  model_cfg.seed = fold_seed;
  Model model(model_cfg);
  std::vector<Tensor> params;
  for (const auto &[name, t] : model.store().params())
    params.push_back(t);
  Adam adam(params, {cfg.lr});

  TrainReport report;
  report.fold = fold;
  report.n_train = train_idx.size();
  report.n_test = test_idx.size();
  report.param_count = model.store().count();
  report.config_hash = config_hash(cfg);
  std::optional<Snapshot> best;

  Rng shuffle_rng(derive_seed(fold_seed, fnv1a("shuffle")));
  Rng augment_rng(derive_seed(fold_seed, fnv1a("augment")));
  std::uint64_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = train_idx;
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
      const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
      const Batch b = make_batch(data, std::span(order).subspan(lo, hi - lo),
                                 cfg.augment, &augment_rng);
      const Tensor loss = cross_entropy(
          model(b.audio, b.video, Mode::train,
                derive_seed(fold_seed, fnv1a("dropout"), ++step)),
          b.labels);
      if (!std::isfinite(loss.item()))
        throw NumericError("fold " + std::to_string(fold.fold_index) +
                           ": non-finite loss at epoch " +
                           std::to_string(epoch));
      loss.backward();
      adam.step();
      loss_sum += loss.item() * static_cast<double>(hi - lo);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.train_acc = evaluate(model, data, train_idx, cfg.batch_size);
    rec.test_acc = evaluate(model, data, test_idx, cfg.batch_size);
    report.epochs.push_back(rec);
    if (report.best_epoch == 0 || rec.test_acc > report.best_test_acc) {
      report.best_test_acc = rec.test_acc;
      report.best_epoch = epoch;
      if (opts.checkpoint_dir)
        best = snapshot(model.store());
    }
    if (opts.on_epoch)
      opts.on_epoch(report, rec);
  }
  report.final_test_acc = report.epochs.back().test_acc;
  if (opts.checkpoint_dir && best)
    save_checkpoint(*opts.checkpoint_dir, *best, model_cfg,
                    {{"fold_index", fold.fold_index},
                     {"epoch", report.best_epoch},
                     {"test_acc", report.best_test_acc}});
  report.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

struct CrossValidationSummary {
  std::string variant = "full";
  std::vector<TrainReport> folds;
  std::vector<double> fold_accuracies;
  double mean_accuracy = 0.0;
  std::size_t param_count = 0;
  std::string config_hash;
  std::vector<std::size_t> untested_actors;
  double wall_time = 0.0;
};

struct CrossValidationOptions {
  std::size_t fold_limit = 0; // run only the first k folds when nonzero
  std::optional<fs::path> checkpoint_root; // fold_<i>/checkpoint per fold
  /// Called from worker threads when jobs > 1.
  std::function<void(const TrainReport &, const EpochRecord &)> on_epoch;
  /// Folds trained concurrently. Each fold owns its model and seeds, so the
  /// reports do not depend on this.
  std::size_t jobs = 1;
};

inline CrossValidationSummary cross_validate(const Dataset &data,
                                             const ModelConfig &cfg,
                                             const CrossValidationOptions &o = {},
                                             const std::string &variant = "full") {
  cfg.validate();
  auto folds = make_folds(cfg.n_folds);
  CrossValidationSummary s;
  s.variant = variant;
  s.untested_actors = untested_actors(folds);
  if (o.fold_limit && o.fold_limit < folds.size())
    folds.resize(o.fold_limit);
  s.param_count = count_params(Model::layout(cfg));
  s.config_hash = config_hash(cfg);
  std::vector<TrainReport> reports(folds.size());
  std::vector<std::exception_ptr> errors(folds.size());
  parallel_for(folds.size(), std::max<std::size_t>(o.jobs, 1), [&](std::size_t i) {
    try {
      TrainOptions to;
      if (o.checkpoint_root)
        to.checkpoint_dir = *o.checkpoint_root /
                            ("fold_" + std::to_string(folds[i].fold_index)) /
                            "checkpoint";
      to.on_epoch = o.on_epoch;
      reports[i] = train_fold(data, folds[i], cfg, to);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  });
  for (const auto &e : errors)
    if (e)
      std::rethrow_exception(e);
  for (TrainReport &r : reports) {
    r.variant = variant;
    s.fold_accuracies.push_back(r.final_test_acc);
    s.wall_time += r.wall_time;
    s.folds.push_back(std::move(r));
  }
  s.mean_accuracy =
      std::accumulate(s.fold_accuracies.begin(), s.fold_accuracies.end(), 0.0) /
      static_cast<double>(s.fold_accuracies.size());
  return s;
}

struct AblationRow {
  std::string variant;
  double accuracy = 0.0;
  std::size_t params = 0;
  CrossValidationSummary summary;
};

/// Cross-validates every variant under the shared seed.
inline std::vector<AblationRow> run_ablation(const Dataset &data,
                                             const ModelConfig &cfg,
                                             const std::vector<Variant> &variants,
                                             const CrossValidationOptions &o = {}) {
  if (variants.empty())
    throw ConfigError("ablation: no variants given (valid: " +
                      valid_variant_list() + ")");
  std::vector<AblationRow> rows;
  for (Variant v : variants) {
    const ModelConfig vc = apply_variant(cfg, v);
    AblationRow row;
    row.variant = to_string(v);
    row.summary = cross_validate(data, vc, o, row.variant);
    row.accuracy = row.summary.mean_accuracy;
    row.params = row.summary.param_count;
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Reports

inline Json to_json(const FoldSplit &f) {
  return {{"fold_index", f.fold_index},
          {"test_actors", f.test_actors},
          {"train_actors", f.train_actors}};
}

inline Json to_json(const TrainReport &r) {
  Json epochs = Json::array();
  for (const auto &e : r.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"train_acc", e.train_acc},
                      {"test_acc", e.test_acc}});
  return {{"variant", r.variant},
          {"fold", to_json(r.fold)},
          {"n_train", r.n_train},
          {"n_test", r.n_test},
          {"final_test_acc", r.final_test_acc},
          {"best_test_acc", r.best_test_acc},
          {"best_epoch", r.best_epoch},
          {"parameter_count", r.param_count},
          {"config_hash", r.config_hash},
          {"epochs", epochs}};
}

inline Json to_json(const CrossValidationSummary &s) {
  return {{"variant", s.variant},
          {"folds_run", s.folds.size()},
          {"fold_accuracies", s.fold_accuracies},
          {"mean_accuracy", s.mean_accuracy},
          {"parameter_count", s.param_count},
          {"config_hash", s.config_hash},
          {"untested_actors", s.untested_actors}};
}

/// Shortest round-trip decimal form, so CSVs are as exact as the JSON.
inline std::string fmt_double(double v) { return Json(v).dump(); }

inline std::string epochs_csv(const TrainReport &r) {
  std::string s = "epoch,train_loss,train_acc,test_acc\n";
  for (const auto &e : r.epochs)
    s += std::to_string(e.epoch) + "," + fmt_double(e.train_loss) + "," +
         fmt_double(e.train_acc) + "," + fmt_double(e.test_acc) + "\n";
  return s;
}

inline std::string ablation_csv(const std::vector<AblationRow> &rows) {
  std::string s = "variant,accuracy,params\n";
  for (const auto &r : rows)
    s += r.variant + "," + fmt_double(r.accuracy) + "," +
         std::to_string(r.params) + "\n";
  return s;
}

} // namespace cfnsr

#endif // CFNSR_TRAINING_HPP_
