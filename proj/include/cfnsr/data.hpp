// SPDX-License-Identifier: Apache-2.0
/**
 * @file   data.hpp
 * @brief  Dataset manifests, the synthetic clip generator, MFCC
 *         preprocessing and in-memory dataset loading.
 *
 * Raw dataset directory:
 *   manifest.json   {"entries": [{clip_id, actor_id, emotion, audio_path,
 *                                 frames_path}, ...]}, paths relative to it
 *   audio is WAV; frames are CFNT tensors [3 x S x H x W] in [0, 1],
 *   already cropped to the face.
 *
 * Preprocessed directory:
 *   mfcc/<clip>.cfnt + mfcc/<clip>.json sidecar, manifest.json,
 *   preprocess_report.json.
 */
#ifndef CFNSR_DATA_HPP_
#define CFNSR_DATA_HPP_

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "config_io.hpp"
#include "mfcc.hpp"
#include "serialize.hpp"
#include "wav.hpp"

namespace cfnsr {

namespace fs = std::filesystem;

/// Missing, unreadable or malformed input data.
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline const std::array<const char *, 8> kEmotionNames{
    "neutral", "calm", "happy", "sad", "angry", "fearful", "disgust",
    "surprised"};

struct ManifestEntry {
  std::string clip_id;
  std::size_t actor_id = 0; // 1..24
  std::size_t emotion = 0;  // 0..7
  std::string audio_path;   // raw manifests
  std::string frames_path;
  std::string mfcc_path; // preprocessed manifests
};

struct DatasetManifest {
  fs::path root;
  std::vector<ManifestEntry> entries;
};

inline Json to_json(const ManifestEntry &e) {
  Json j{{"clip_id", e.clip_id},
         {"actor_id", e.actor_id},
         {"emotion", e.emotion},
         {"emotion_name", kEmotionNames.at(e.emotion)}};
  if (!e.audio_path.empty())
    j["audio_path"] = e.audio_path;
  if (!e.mfcc_path.empty())
    j["mfcc_path"] = e.mfcc_path;
  j["frames_path"] = e.frames_path;
  return j;
}

inline void write_json(const fs::path &path, const Json &j) {
  std::ofstream os(path);
  if (!os)
    throw DataError("cannot write " + path.string());
  os << j.dump(2) << "\n";
}

inline Json read_json(const fs::path &path) {
  std::ifstream is(path);
  if (!is)
    throw DataError("cannot open " + path.string());
  try {
    return Json::parse(is);
  } catch (const nlohmann::json::exception &e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

/// Reads `dir`/manifest.json and enforces the field ranges. With
/// `check_paths`, every referenced file must exist.
inline DatasetManifest load_manifest(const fs::path &dir,
                                     bool check_paths = true) {
  const Json j = read_json(dir / "manifest.json");
  DatasetManifest m{dir, {}};
  if (!j.contains("entries") || !j["entries"].is_array())
    throw DataError(dir.string() + "/manifest.json: missing 'entries' array");
  for (const auto &item : j["entries"]) {
    ManifestEntry e;
    try {
      e.clip_id = item.at("clip_id").get<std::string>();
      e.actor_id = item.at("actor_id").get<std::size_t>();
      e.emotion = item.at("emotion").get<std::size_t>();
      e.frames_path = item.at("frames_path").get<std::string>();
      e.audio_path = item.value("audio_path", "");
      e.mfcc_path = item.value("mfcc_path", "");
    } catch (const nlohmann::json::exception &ex) {
      throw DataError("manifest entry " + item.dump() + ": " + ex.what());
    }
    if (e.actor_id < 1 || e.actor_id > 24)
      throw DataError("clip " + e.clip_id + ": actor_id " +
                      std::to_string(e.actor_id) + " outside 1..24");
    if (e.emotion > 7)
      throw DataError("clip " + e.clip_id + ": emotion " +
                      std::to_string(e.emotion) + " outside 0..7");
    if (e.audio_path.empty() && e.mfcc_path.empty())
      throw DataError("clip " + e.clip_id + ": no audio_path or mfcc_path");
    if (check_paths)
      for (const auto &p : {e.audio_path, e.mfcc_path, e.frames_path})
        if (!p.empty() && !fs::exists(dir / p))
          throw DataError("clip " + e.clip_id + ": missing file " +
                          (dir / p).string());
    m.entries.push_back(std::move(e));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthOptions {
  std::size_t clips = 64;
  std::uint64_t seed = 0;
  double sample_rate = 16000.0;
  double duration = 3.0; // seconds; trim_head + keep = 2.95
  Triple frames{8, 32, 32};
};

/// Class-dependent two-tone mixture with per-clip jitter and noise.
inline std::vector<double> synth_audio(std::size_t label, Rng &rng,
                                       const SynthOptions &o) {
  const double f1 = (300.0 + 150.0 * label) * rng.uniform(0.98, 1.02);
  const double f2 = 2.0 * f1 + 50.0 * label;
  const double p1 = rng.uniform(0, 2 * std::numbers::pi);
  const double p2 = rng.uniform(0, 2 * std::numbers::pi);
  const auto n = static_cast<std::size_t>(std::lround(o.duration * o.sample_rate));
  std::vector<double> pcm(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / o.sample_rate;
    pcm[i] = 0.3 * std::sin(2 * std::numbers::pi * f1 * t + p1) +
             0.15 * std::sin(2 * std::numbers::pi * f2 * t + p2) +
             0.02 * rng.normal();
  }
  return pcm;
}

/// A Gaussian blob drifting horizontally. Its row band encodes label % 4
/// and its colour encodes label / 4.
inline Tensor synth_frames(std::size_t label, Rng &rng, const SynthOptions &o) {
  const std::size_t S = o.frames.s, H = o.frames.h, W = o.frames.w;
  const double row = (static_cast<double>(label % 4) + 0.5) * H / 4.0;
  const std::array<double, 3> colour =
      label < 4 ? std::array<double, 3>{1.0, 0.2, 0.2}
                : std::array<double, 3>{0.2, 0.3, 1.0};
  const double x0 = rng.uniform(0.25 * W, 0.75 * W);
  const double vx = rng.uniform(-1.0, 1.0);
  const double radius = H / 10.0;
  std::vector<double> v(3 * S * H * W);
  for (std::size_t s = 0; s < S; ++s) {
    const double cx = x0 + vx * static_cast<double>(s);
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) {
        const double d2 = (h - row) * (h - row) + (w - cx) * (w - cx);
        const double blob = std::exp(-d2 / (2 * radius * radius));
        for (std::size_t c = 0; c < 3; ++c) {
          const double bg = 0.4 + 0.05 * rng.normal();
          v[((c * S + s) * H + h) * W + w] =
              std::clamp(bg + blob * (colour[c] - bg), 0.0, 1.0);
        }
      }
  }
  return Tensor::from({3, S, H, W}, std::move(v));
}

/// Writes a RAVDESS-shaped raw dataset: clip i has actor (i % 24) + 1 and
/// emotion (i + i / 24) % 8, so N = 64 gives 8 clips per class.
inline DatasetManifest write_synthetic(const fs::path &dir,
                                       const SynthOptions &o) {
  if (o.clips < 8)
    throw ConfigError("synth: need at least 8 clips, got " +
                      std::to_string(o.clips));
  fs::create_directories(dir / "audio");
  fs::create_directories(dir / "frames");
  DatasetManifest m{dir, {}};
  Json entries = Json::array();
  for (std::size_t i = 0; i < o.clips; ++i) {
    ManifestEntry e;
    // The shift per pass over the actors keeps any actor from being tied to
    // a single class.
    e.actor_id = i % 24 + 1;
    e.emotion = (i + i / 24) % 8;
    char id[64];
    std::snprintf(id, sizeof id, "03-01-%02zu-01-%02zu-01-%02zu", e.emotion + 1,
                  i / 24 + 1, e.actor_id);
    e.clip_id = id;
    e.audio_path = "audio/" + e.clip_id + ".wav";
    e.frames_path = "frames/" + e.clip_id + ".cfnt";
    Rng rng(derive_seed(o.seed, i));
    write_wav(dir / e.audio_path, synth_audio(e.emotion, rng, o),
              static_cast<std::uint32_t>(o.sample_rate));
    save_cfnt(dir / e.frames_path, synth_frames(e.emotion, rng, o));
    entries.push_back(to_json(e));
    m.entries.push_back(std::move(e));
  }
  write_json(dir / "manifest.json", Json{{"entries", entries}});
  return m;
}

// ---------------------------------------------------------------------------
// Preprocessing

struct PreprocessReport {
  std::size_t clips = 0, written = 0, skipped = 0;
  std::vector<std::pair<std::string, std::string>> failed;  // clip, error
  std::vector<std::pair<std::string, std::string>> flagged; // clip, flag
};

inline Json to_json(const PreprocessReport &r) {
  Json failed = Json::array(), flagged = Json::array();
  for (const auto &[clip, err] : r.failed)
    failed.push_back({{"clip_id", clip}, {"error", err}});
  for (const auto &[clip, flag] : r.flagged)
    flagged.push_back({{"clip_id", clip}, {"flag", flag}});
  return {{"clips", r.clips},     {"written", r.written},
          {"skipped", r.skipped}, {"failed", failed},
          {"flagged", flagged}};
}

/// Worker count: CFNSR_THREADS if set and positive, else the hardware
/// concurrency.
inline std::size_t thread_budget() {
  if (const char *env = std::getenv("CFNSR_THREADS")) {
    char *end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0)
      return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn &&fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i)
      fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++)
        fn(i);
    });
  for (auto &th : pool)
    th.join();
}

/// Extracts one MFCC tensor per clip. A clip whose sidecar already records
/// the current MFCC hash is skipped. Results are listed in manifest order
/// regardless of thread scheduling.
inline PreprocessReport preprocess(const fs::path &data_dir,
                                   const fs::path &out_dir,
                                   const MfccConfig &cfg,
                                   std::size_t threads = thread_budget()) {
  cfg.validate();
  const DatasetManifest raw = load_manifest(data_dir, false);
  fs::create_directories(out_dir / "mfcc");
  const std::string hash = mfcc_hash(cfg);
  const fs::path frames_root = fs::absolute(data_dir);

  enum class Outcome { written, skipped, failed };
  struct Result {
    Outcome outcome = Outcome::failed;
    std::string error;
    std::vector<std::string> flags;
  };
  std::vector<Result> results(raw.entries.size());
  parallel_for(raw.entries.size(), threads, [&](std::size_t i) {
    const ManifestEntry &e = raw.entries[i];
    Result &r = results[i];
    const fs::path tensor = out_dir / "mfcc" / (e.clip_id + ".cfnt");
    const fs::path sidecar = out_dir / "mfcc" / (e.clip_id + ".json");
    try {
      if (e.audio_path.empty())
        throw DataError("no audio_path");
      if (!fs::exists(data_dir / e.frames_path))
        throw DataError("missing frames " + e.frames_path);
      if (fs::exists(tensor) && fs::exists(sidecar)) {
        const Json side = read_json(sidecar);
        if (side.value("config_hash", "") == hash) {
          r.outcome = Outcome::skipped;
          for (const auto &f : side.value("flags", Json::array()))
            r.flags.push_back(f.get<std::string>());
          return;
        }
      }
      const WavAudio wav = read_wav(data_dir / e.audio_path);
      const std::vector<double> pcm =
          resample_linear(wav.samples, wav.sample_rate, cfg.sample_rate);
      const MfccMatrix m = mfcc(pcm, cfg.sample_rate, cfg, e.clip_id);
      save_cfnt(tensor, m.coeffs);
      Json flags = Json::array();
      if (m.padded)
        flags.push_back("short_clip_padded");
      if (wav.sample_rate != cfg.sample_rate)
        flags.push_back("resampled");
      write_json(sidecar, {{"source_id", e.clip_id},
                           {"sample_rate", cfg.sample_rate},
                           {"source_sample_rate", wav.sample_rate},
                           {"config_hash", hash},
                           {"flags", flags}});
      r.outcome = Outcome::written;
      r.flags = flags.get<std::vector<std::string>>();
    } catch (const std::exception &ex) {
      r.outcome = Outcome::failed;
      r.error = ex.what();
    }
  });

  PreprocessReport report;
  report.clips = raw.entries.size();
  Json entries = Json::array();
  for (std::size_t i = 0; i < results.size(); ++i) {
    const ManifestEntry &e = raw.entries[i];
    const Result &r = results[i];
    if (r.outcome == Outcome::failed) {
      report.failed.emplace_back(e.clip_id, r.error);
      continue;
    }
    ++(r.outcome == Outcome::written ? report.written : report.skipped);
    for (const auto &f : r.flags)
      report.flagged.emplace_back(e.clip_id, f);
    ManifestEntry out = e;
    out.audio_path.clear();
    out.mfcc_path = "mfcc/" + e.clip_id + ".cfnt";
    out.frames_path = (frames_root / e.frames_path).lexically_normal().string();
    entries.push_back(to_json(out));
  }
  write_json(out_dir / "manifest.json",
             {{"source", frames_root.string()},
              {"mfcc_config_hash", hash},
              {"entries", entries}});
  write_json(out_dir / "preprocess_report.json", to_json(report));
  return report;
}

// ---------------------------------------------------------------------------
// In-memory dataset

struct Sample {
  std::string clip_id;
  std::size_t actor_id = 0;
  std::size_t label = 0;
  Tensor audio; // [n_coeffs x T]
  Tensor video; // [3 x S x H x W], raw [0, 1] values
};

struct Dataset {
  std::vector<Sample> samples;
};

/// Loads a preprocessed directory, checking every tensor against `cfg`.
inline Dataset load_dataset(const fs::path &dir, const ModelConfig &cfg) {
  const DatasetManifest m = load_manifest(dir);
  const std::string hash = mfcc_hash(cfg.mfcc);
  const Shape audio_shape{cfg.mfcc.n_coeffs, cfg.mfcc.n_frames()};
  const Shape video_shape{cfg.video.in_channels, cfg.video.input.s,
                          cfg.video.input.h, cfg.video.input.w};
  Dataset d;
  for (const auto &e : m.entries) {
    if (e.mfcc_path.empty())
      throw DataError("clip " + e.clip_id +
                      ": not preprocessed (run 'preprocess' first)");
    const fs::path sidecar = fs::path(dir / e.mfcc_path).replace_extension(".json");
    if (fs::exists(sidecar) && read_json(sidecar).value("config_hash", "") != hash)
      throw DataError("clip " + e.clip_id +
                      ": MFCC features were extracted with a different mfcc "
                      "config; rerun 'preprocess'");
    Sample s{e.clip_id, e.actor_id, e.emotion, {}, {}};
    try {
      s.audio = load_cfnt(dir / e.mfcc_path);
      s.video = load_cfnt(dir / e.frames_path);
    } catch (const std::exception &ex) {
      throw DataError("clip " + e.clip_id + ": " + ex.what());
    }
    if (s.audio.shape() != audio_shape)
      throw DataError("clip " + e.clip_id + ": MFCC shape " +
                      to_string(s.audio.shape()) + ", expected " +
                      to_string(audio_shape));
    if (s.video.shape() != video_shape)
      throw DataError("clip " + e.clip_id + ": frames shape " +
                      to_string(s.video.shape()) + ", expected " +
                      to_string(video_shape));
    if (s.label >= cfg.n_classes)
      throw DataError("clip " + e.clip_id + ": emotion " +
                      std::to_string(s.label) + " >= n_classes");
    d.samples.push_back(std::move(s));
  }
  if (d.samples.empty())
    throw DataError(dir.string() + ": dataset is empty");
  return d;
}

} // namespace cfnsr

#endif // CFNSR_DATA_HPP_
