// SPDX-License-Identifier: Apache-2.0
/**
 * @file   cfnsr.cpp
 * @brief  Command-line front end: synth, preprocess, train, ablate,
 *         gradcheck, params and config.
 *
 * Exit codes: 0 success, 1 usage or configuration error, 2 data error,
 * 3 gradient check failure.
 */
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <cfnsr/gradcheck_suite.hpp>
#include <cfnsr/training.hpp>

#include "svg_plot.hpp"

namespace fs = std::filesystem;
using namespace cfnsr;

namespace {

constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kGradcheck = 3;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> folds;
};

ModelConfig resolve(const Common &c) {
  ModelConfig cfg = c.config_path.empty() ? ModelConfig::desk()
                                          : load_config(c.config_path);
  if (c.seed)
    cfg.seed = *c.seed;
  if (c.epochs)
    cfg.epochs = *c.epochs;
  if (c.folds)
    cfg.n_folds = *c.folds;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path &path, const std::string &text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw DataError("cannot write " + path.string());
  out << text;
}

double since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fixed(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string curves_svg(const TrainReport &r) {
  tools::Series loss{"train loss", "#c0392b", {}}, train{"train acc", "#2471a3", {}},
      test{"test acc", "#229954", {}};
  for (const auto &e : r.epochs) {
    loss.y.push_back(e.train_loss);
    train.y.push_back(e.train_acc);
    test.y.push_back(e.test_acc);
  }
  return tools::line_chart("fold " + std::to_string(r.fold.fold_index) + " (" +
                               r.variant + ")",
                           {loss, train, test});
}

/// Writes fold_<i>/report.json and epochs.csv (plus curves.svg) under `dir`.
void write_fold_reports(const fs::path &dir, const CrossValidationSummary &s,
                        bool plot) {
  for (const auto &r : s.folds) {
    const fs::path fd = dir / ("fold_" + std::to_string(r.fold.fold_index));
    fs::create_directories(fd);
    write_json(fd / "report.json", to_json(r));
    write_text(fd / "epochs.csv", epochs_csv(r));
    if (plot)
      write_text(fd / "curves.svg", curves_svg(r));
  }
}

Json timing_json(const CrossValidationSummary &s, double total) {
  Json folds = Json::array();
  for (const auto &r : s.folds)
    folds.push_back({{"fold_index", r.fold.fold_index},
                     {"seconds", r.wall_time},
                     {"seconds_per_epoch",
                      r.wall_time / static_cast<double>(r.epochs.size())}});
  return {{"variant", s.variant}, {"folds", folds}, {"total_seconds", total}};
}

std::function<void(const TrainReport &, const EpochRecord &)> progress_printer(
    const std::string &variant) {
  auto mutex = std::make_shared<std::mutex>();
  return [mutex, variant](const TrainReport &r, const EpochRecord &e) {
    std::lock_guard lock(*mutex);
    std::cout << variant << " fold " << r.fold.fold_index << " epoch " << e.epoch
              << " loss " << fixed(e.train_loss) << " train_acc "
              << fixed(e.train_acc) << " test_acc " << fixed(e.test_acc) << "\n"
              << std::flush;
  };
}

// ---------------------------------------------------------------------------

int cmd_synth(const fs::path &out, std::size_t clips, std::uint64_t seed,
              const Common &c) {
  const ModelConfig cfg = resolve(c);
  SynthOptions o;
  o.clips = clips;
  o.seed = seed;
  o.sample_rate = cfg.mfcc.sample_rate;
  o.frames = cfg.video.input;
  const DatasetManifest m = write_synthetic(out, o);
  std::cout << "wrote " << m.entries.size() << " clips to " << out.string() << "\n";
  return 0;
}

int cmd_preprocess(const fs::path &data, const fs::path &out, const Common &c) {
  const ModelConfig cfg = resolve(c);
  const PreprocessReport r = preprocess(data, out, cfg.mfcc, thread_budget());
  std::cout << "clips " << r.clips << " written " << r.written << " skipped "
            << r.skipped << " failed " << r.failed.size() << " flagged "
            << r.flagged.size() << "\n";
  for (const auto &[clip, err] : r.failed)
    std::cerr << "failed " << clip << ": " << err << "\n";
  return r.clips > 0 && r.failed.size() == r.clips ? kData : 0;
}

int cmd_train(const fs::path &data, const fs::path &out, std::size_t fold_limit,
              std::size_t jobs, bool plot, const Common &c) {
  const auto t0 = std::chrono::steady_clock::now();
  const ModelConfig cfg = resolve(c);
  const Dataset ds = load_dataset(data, cfg);
  CrossValidationOptions o;
  o.fold_limit = fold_limit;
  o.jobs = jobs;
  o.checkpoint_root = out;
  o.on_epoch = progress_printer("full");
  const CrossValidationSummary s = cross_validate(ds, cfg, o);
  fs::create_directories(out);
  write_fold_reports(out, s, plot);
  write_json(out / "summary.json", to_json(s));
  write_json(out / "timing.json", timing_json(s, since(t0)));
  std::cout << "mean test accuracy " << fixed(s.mean_accuracy) << " over "
            << s.folds.size() << " folds\n";
  return 0;
}

int cmd_ablate(const fs::path &data, const fs::path &out,
               const std::string &variant_list, std::size_t fold_limit,
               std::size_t jobs, bool plot, const Common &c) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<Variant> variants;
  std::stringstream ss(variant_list);
  for (std::string name; std::getline(ss, name, ',');)
    if (!name.empty())
      variants.push_back(parse_variant(name));
  if (variants.empty())
    throw ConfigError("ablate: empty variant list (valid: " +
                      valid_variant_list() + ")");
  const ModelConfig cfg = resolve(c);
  const Dataset ds = load_dataset(data, cfg);
  std::vector<AblationRow> rows;
  Json timing = Json::array();
  for (Variant v : variants) {
    CrossValidationOptions o;
    o.fold_limit = fold_limit;
    o.jobs = jobs;
    o.on_epoch = progress_printer(to_string(v));
    const auto tv = std::chrono::steady_clock::now();
    auto part = run_ablation(ds, cfg, {v}, o);
    write_fold_reports(out / to_string(v), part.front().summary, plot);
    timing.push_back(timing_json(part.front().summary, since(tv)));
    rows.push_back(std::move(part.front()));
  }
  Json j = Json::array();
  for (const auto &r : rows)
    j.push_back({{"variant", r.variant},
                 {"accuracy", r.accuracy},
                 {"params", r.params},
                 {"summary", to_json(r.summary)}});
  fs::create_directories(out);
  write_text(out / "ablation.csv", ablation_csv(rows));
  write_json(out / "ablation.json", j);
  write_json(out / "timing.json",
             {{"variants", timing}, {"total_seconds", since(t0)}});
  std::cout << ablation_csv(rows);
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, const std::string &corrupt, bool desk,
                  std::size_t samples, const Common &c) {
  const auto &families = gradcheck_families();
  if (!corrupt.empty() &&
      std::find(families.begin(), families.end(), corrupt) == families.end()) {
    std::string valid;
    for (const auto &f : families)
      valid += (valid.empty() ? "" : ", ") + f;
    throw ConfigError("gradcheck: unknown family '" + corrupt + "' (valid: " +
                      valid + ")");
  }
  GradCheckSuiteOptions o;
  o.seed = seed;
  o.corrupt = corrupt;
  o.include_desk = desk;
  o.desk_samples_per_tensor = samples;
  o.desk = resolve(c);
  std::size_t failures = 0;
  std::printf("%-22s %8s %8s %14s  %s\n", "family", "checked", "retried",
              "max_rel_error", "status");
  run_gradcheck_suite(o, [&](const GradCheckResult &r) {
    failures += r.passed ? 0 : 1;
    std::printf("%-22s %8zu %8zu %14.3e  %s\n", r.name.c_str(), r.checked,
                r.refined, r.max_rel_error, r.passed ? "ok" : "FAIL");
    std::fflush(stdout);
  });
  std::printf("%zu failure(s)\n", failures);
  return failures ? kGradcheck : 0;
}

int cmd_params(bool full, bool as_json, const Common &c) {
  const ModelConfig cfg = full ? ModelConfig::full() : resolve(c);
  const auto b = Model::breakdown(cfg);
  Json variants = Json::object();
  for (const auto &[v, name] : variant_names())
    variants[name] = count_params(Model::layout(apply_variant(cfg, v)));
  Json j{{"layout", full ? "full" : "config"},
         {"breakdown", b},
         {"variants", variants}};
  // Published figures, printed for comparison and never asserted.
  const Json published{{"video", "25.88M"},
                       {"audio", "0.03M"},
                       {"total", "26.30M"},
                       {"fusion_block_from_ablation_table", "0.38M"},
                       {"fusion_block_from_text", "30K"},
                       {"no_crossmodal", "25.92M"},
                       {"V_to_A", "25.67M"}};
  if (full)
    j["published"] = published;
  if (as_json) {
    std::cout << j.dump(2) << "\n";
    return 0;
  }
  auto m = [](std::size_t n) { return fixed(static_cast<double>(n) / 1e6, 3) + "M"; };
  std::printf("%-18s %12s %10s\n", "component", "params", "millions");
  for (const char *k : {"audio", "video", "fusion", "fusion_attention", "classifier",
                        "total"})
    std::printf("%-18s %12zu %10s\n", k, b.at(k), m(b.at(k)).c_str());
  std::printf("\n%-18s %12s %10s\n", "variant", "params", "millions");
  for (const auto &[name, n] : variants.items())
    std::printf("%-18s %12zu %10s\n", name.c_str(), n.get<std::size_t>(),
                m(n.get<std::size_t>()).c_str());
  if (full) {
    std::printf("\npublished figures (not asserted):\n");
    for (const auto &[k, v] : published.items())
      std::printf("  %-34s %s\n", k.c_str(), v.get<std::string>().c_str());
  }
  return 0;
}

int cmd_config(const std::string &preset, const Common &c) {
  ModelConfig cfg;
  if (preset == "tiny")
    cfg = ModelConfig::tiny();
  else if (preset == "full")
    cfg = ModelConfig::full();
  else
    cfg = c.config_path.empty() ? ModelConfig::desk() : load_config(c.config_path);
  std::cout << to_json(cfg).dump(2) << "\n";
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Cross-modal fusion network for audio-video emotion recognition"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App *sub, bool training) {
    sub->add_option("--config", common.config_path,
                    "JSON config overlaid on the desk defaults")
        ->check(CLI::ExistingFile);
    if (training) {
      sub->add_option("--seed", common.seed, "master seed");
      sub->add_option("--epochs", common.epochs, "epochs per fold");
      sub->add_option("--folds", common.folds, "number of folds");
    }
  };

  std::string out, data, variants = "", corrupt, preset;
  std::size_t clips = 64, fold_limit = 0, jobs = 1, samples = 6;
  std::uint64_t seed = 0;
  bool plot = false, full = false, as_json = false, no_desk = false;

  auto *synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--out", out, "output directory")->required();
  synth->add_option("--clips", clips, "number of clips (>= 8)");
  synth->add_option("--seed", seed, "generator seed");
  add_common(synth, false);

  auto *pre = app.add_subcommand("preprocess", "extract MFCC tensors");
  pre->add_option("--data", data, "dataset directory with manifest.json")->required();
  pre->add_option("--out", out, "output directory")->required();
  add_common(pre, false);

  auto *train = app.add_subcommand("train", "actor-fold cross-validation");
  train->add_option("--data", data, "preprocessed directory")->required();
  train->add_option("--out", out, "report directory")->required();
  train->add_option("--fold-limit", fold_limit, "run only the first k folds");
  train->add_option("--jobs", jobs, "folds trained concurrently");
  train->add_flag("--plot", plot, "also write SVG training curves");
  add_common(train, true);

  auto *ablate = app.add_subcommand("ablate", "cross-validate model variants");
  ablate->add_option("--data", data, "preprocessed directory")->required();
  ablate->add_option("--out", out, "report directory")->required();
  ablate->add_option("--variants", variants,
                     "comma-separated list of: " + valid_variant_list())
      ->required();
  ablate->add_option("--fold-limit", fold_limit, "run only the first k folds");
  ablate->add_option("--jobs", jobs, "folds trained concurrently");
  ablate->add_flag("--plot", plot, "also write SVG training curves");
  add_common(ablate, true);

  auto *grad = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  grad->add_option("--seed", seed, "input seed");
  grad->add_option("--corrupt", corrupt,
                   "give this family a wrong backward rule (harness check)");
  grad->add_flag("--no-desk", no_desk, "skip the end-to-end desk model");
  grad->add_option("--desk-samples", samples,
                   "coordinates checked per desk tensor");
  add_common(grad, false);

  auto *params = app.add_subcommand("params", "parameter counts");
  params->add_flag("--full", full, "full-scale layout instead of the config");
  params->add_flag("--json", as_json, "print JSON");
  add_common(params, false);

  auto *config = app.add_subcommand("config", "print a config document");
  config->add_option("--preset", preset, "desk (default), tiny or full")
      ->check(CLI::IsMember({"desk", "tiny", "full"}));
  add_common(config, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*synth)
      return cmd_synth(out, clips, seed, common);
    if (*pre)
      return cmd_preprocess(data, out, common);
    if (*train)
      return cmd_train(data, out, fold_limit, jobs, plot, common);
    if (*ablate)
      return cmd_ablate(data, out, variants, fold_limit, jobs, plot, common);
    if (*grad)
      return cmd_gradcheck(seed, corrupt, !no_desk, samples, common);
    if (*params)
      return cmd_params(full, as_json, common);
    if (*config)
      return cmd_config(preset, common);
  } catch (const ConfigError &e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError &e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const WavError &e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const FormatError &e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
