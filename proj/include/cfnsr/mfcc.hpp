// SPDX-License-Identifier: Apache-2.0
/**
 * @file   mfcc.hpp
 * @brief  MFCC audio front-end.
 *
 * Pipeline per frame: periodic Hann window, zero-pad to n_fft, |rFFT|^2,
 * triangular mel filterbank (HTK mel scale), log with a floor, orthonormal
 * DCT-II, first n_coeffs coefficients. Output is [n_coeffs x T].
 */
#ifndef CFNSR_MFCC_HPP_
#define CFNSR_MFCC_HPP_

#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <fftw3.h>

#include "tensor.hpp"

namespace cfnsr {

struct MfccConfig {
  double sample_rate = 16000.0;
  double trim_head = 0.5; // seconds dropped from the start of each clip
  double keep = 2.45;     // seconds retained after the trim
  double frame_len = 0.025;
  double hop = 0.010;
  std::size_t n_fft = 2048;
  std::size_t n_mels = 40;
  std::size_t n_coeffs = 13;
  double fmin = 0.0;
  std::optional<double> fmax; // Nyquist when unset
  double log_floor = 1e-10;

  double upper_hz() const { return fmax.value_or(sample_rate / 2.0); }
  std::size_t frame_samples() const {
    return static_cast<std::size_t>(std::lround(frame_len * sample_rate));
  }
  std::size_t hop_samples() const {
    return static_cast<std::size_t>(std::lround(hop * sample_rate));
  }
  std::size_t keep_samples() const {
    return static_cast<std::size_t>(std::lround(keep * sample_rate));
  }
  std::size_t trim_samples() const {
    return static_cast<std::size_t>(std::lround(trim_head * sample_rate));
  }
  std::size_t n_bins() const { return n_fft / 2 + 1; }

  /// Closed-form frame count of one kept window.
  std::size_t n_frames() const {
    return 1 + (keep_samples() - frame_samples()) / hop_samples();
  }

  /// Every violated invariant, one message each; empty when valid.
  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (!(sample_rate > 0))
      v.push_back("mfcc.sample_rate must be positive");
    if (!(trim_head >= 0))
      v.push_back("mfcc.trim_head must be >= 0");
    if (!(frame_len > 0) || !(hop > 0) || !(keep > 0))
      v.push_back("mfcc.frame_len, mfcc.hop and mfcc.keep must be positive");
    if (n_coeffs == 0 || n_coeffs > n_mels)
      v.push_back("mfcc.n_coeffs must lie in [1, n_mels]");
    if (!(fmin >= 0) || !(upper_hz() > fmin))
      v.push_back("mfcc.fmin must be >= 0 and below fmax");
    if (upper_hz() > sample_rate / 2.0)
      v.push_back("mfcc.fmax must not exceed sample_rate/2");
    if (n_fft < 2 || frame_samples() > n_fft)
      v.push_back("mfcc.frame_len * sample_rate must not exceed n_fft");
    if (sample_rate > 0 && frame_len > 0 && hop > 0 &&
        (frame_samples() == 0 || hop_samples() == 0))
      v.push_back("mfcc.frame_len and mfcc.hop must span at least one sample");
    if (sample_rate > 0 && keep > 0 && frame_len > 0 &&
        keep_samples() < frame_samples())
      v.push_back("mfcc.keep must hold at least one frame");
    if (!(log_floor > 0))
      v.push_back("mfcc.log_floor must be positive");
    return v;
  }

  void validate() const {
    auto v = violations();
    if (!v.empty())
      throw ConfigError(v.front());
  }
};

struct MfccMatrix {
  Tensor coeffs; // [n_coeffs x T]
  MfccConfig config;
  std::string source_id;
  bool padded = false; // clip was shorter than trim_head + keep
};

struct TrimmedClip {
  std::vector<double> samples;
  std::size_t real_samples = 0;
  bool padded = false;
};

/// Drops trim_head seconds and keeps exactly keep seconds, zero-padding and
/// flagging clips that end early.
inline TrimmedClip trim_clip(std::span<const double> pcm, double sr,
                             const MfccConfig &cfg) {
  const auto start = static_cast<std::size_t>(std::lround(cfg.trim_head * sr));
  const auto want = static_cast<std::size_t>(std::lround(cfg.keep * sr));
  TrimmedClip out;
  out.samples.assign(want, 0.0);
  const std::size_t avail = pcm.size() > start ? pcm.size() - start : 0;
  out.real_samples = std::min(avail, want);
  std::copy_n(pcm.begin() + static_cast<std::ptrdiff_t>(
                                std::min(start, pcm.size())),
              out.real_samples, out.samples.begin());
  out.padded = out.real_samples < want;
  return out;
}

namespace detail {

/// FFTW real-to-complex plan for one transform size. Planning is serialised;
/// execution with fresh arrays is thread-safe.
class RealFft {
public:
  explicit RealFft(std::size_t n) : n_(n) {
    std::vector<double> in(n);
    std::vector<std::complex<double>> out(n / 2 + 1);
    plan_ = fftw_plan_dft_r2c_1d(
        static_cast<int>(n), in.data(),
        reinterpret_cast<fftw_complex *>(out.data()),
        FFTW_ESTIMATE | FFTW_UNALIGNED | FFTW_PRESERVE_INPUT);
  }
  ~RealFft() { fftw_destroy_plan(plan_); }
  RealFft(const RealFft &) = delete;
  RealFft &operator=(const RealFft &) = delete;

  void forward(std::vector<double> &in,
               std::vector<std::complex<double>> &out) const {
    out.resize(n_ / 2 + 1);
    fftw_execute_dft_r2c(plan_, in.data(),
                         reinterpret_cast<fftw_complex *>(out.data()));
  }

  static const RealFft &get(std::size_t n) {
    static std::mutex mutex;
    static std::map<std::size_t, std::unique_ptr<RealFft>> cache;
    std::lock_guard lock(mutex);
    auto &slot = cache[n];
    if (!slot)
      slot = std::make_unique<RealFft>(n);
    return *slot;
  }

private:
  std::size_t n_;
  fftw_plan plan_;
};

} // namespace detail

/// Periodic Hann window of length n.
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                static_cast<double>(n));
  return w;
}

/// |rFFT(hann(frame) zero-padded to n_fft)|^2, n_fft/2+1 bins.
inline std::vector<double> power_spectrum(std::span<const double> frame,
                                          std::size_t n_fft) {
  if (frame.size() > n_fft)
    throw DimensionError("power_spectrum: frame of " +
                         std::to_string(frame.size()) +
                         " samples exceeds n_fft=" + std::to_string(n_fft));
  const auto window = hann_window(frame.size());
  std::vector<double> buf(n_fft, 0.0);
  for (std::size_t i = 0; i < frame.size(); ++i)
    buf[i] = frame[i] * window[i];
  std::vector<std::complex<double>> spec;
  detail::RealFft::get(n_fft).forward(buf, spec);
  std::vector<double> power(spec.size());
  for (std::size_t k = 0; k < spec.size(); ++k)
    power[k] = std::norm(spec[k]);
  return power;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

/// Centre frequencies (Hz) of the filters, n_mels + 2 edge points included.
inline std::vector<double> mel_edges_hz(const MfccConfig &cfg) {
  const double lo = hz_to_mel(cfg.fmin), hi = hz_to_mel(cfg.upper_hz());
  std::vector<double> edges(cfg.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) /
                                  static_cast<double>(cfg.n_mels + 1));
  return edges;
}

/// Triangular filters [n_mels x (n_fft/2+1)], unit peak, evaluated at the
/// bin frequencies k * sr / n_fft.
inline Tensor mel_filterbank(const MfccConfig &cfg) {
  cfg.validate();
  const auto edges = mel_edges_hz(cfg);
  const std::size_t bins = cfg.n_bins();
  std::vector<double> w(cfg.n_mels * bins, 0.0);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[m], centre = edges[m + 1], right = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate /
                       static_cast<double>(cfg.n_fft);
      double v = 0.0;
      if (f > left && f <= centre)
        v = (f - left) / (centre - left);
      else if (f > centre && f < right)
        v = (right - f) / (right - centre);
      w[m * bins + k] = v;
    }
  }
  return Tensor::from({cfg.n_mels, bins}, std::move(w));
}

/// First n_out coefficients of the orthonormal DCT-II of x.
inline std::vector<double> dct_ii(std::span<const double> x, std::size_t n_out) {
  const std::size_t n = x.size();
  std::vector<double> out(n_out);
  const double s0 = std::sqrt(1.0 / static_cast<double>(n));
  const double s = std::sqrt(2.0 / static_cast<double>(n));
  for (std::size_t j = 0; j < n_out; ++j) {
    double acc = 0.0;
    for (std::size_t m = 0; m < n; ++m)
      acc += x[m] * std::cos(std::numbers::pi * static_cast<double>(j) *
                             (static_cast<double>(m) + 0.5) /
                             static_cast<double>(n));
    out[j] = (j == 0 ? s0 : s) * acc;
  }
  return out;
}

/// MFCCs of an already-trimmed window; frames start every hop samples.
inline Tensor mfcc_frames(std::span<const double> window,
                          const MfccConfig &cfg) {
  cfg.validate();
  const std::size_t frame = cfg.frame_samples(), hop = cfg.hop_samples();
  if (window.size() < frame)
    throw DimensionError("mfcc: window of " + std::to_string(window.size()) +
                         " samples is shorter than one frame");
  const std::size_t frames = 1 + (window.size() - frame) / hop;
  const Tensor bank = mel_filterbank(cfg);
  const std::size_t bins = cfg.n_bins();
  std::vector<double> out(cfg.n_coeffs * frames);
  std::vector<double> logmel(cfg.n_mels);
  for (std::size_t t = 0; t < frames; ++t) {
    const auto power = power_spectrum(window.subspan(t * hop, frame), cfg.n_fft);
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      const auto row = bank.data().subspan(m * bins, bins);
      for (std::size_t k = 0; k < bins; ++k)
        e += row[k] * power[k];
      logmel[m] = std::log(std::max(e, cfg.log_floor));
    }
    const auto c = dct_ii(logmel, cfg.n_coeffs);
    for (std::size_t j = 0; j < cfg.n_coeffs; ++j)
      out[j * frames + t] = c[j];
  }
  return Tensor::from({cfg.n_coeffs, frames}, std::move(out));
}

/// Full front-end: trim, frame, MFCC. `sr` is the rate of `pcm`; the trim
/// and framing use cfg.sample_rate, so callers resample first if they differ.
inline MfccMatrix mfcc(std::span<const double> pcm, double sr,
                       const MfccConfig &cfg, std::string source_id = {}) {
  if (sr != cfg.sample_rate)
    throw ConfigError("mfcc: clip rate " + std::to_string(sr) +
                      " differs from configured " +
                      std::to_string(cfg.sample_rate));
  auto clip = trim_clip(pcm, sr, cfg);
  MfccMatrix m;
  m.coeffs = mfcc_frames(clip.samples, cfg);
  m.config = cfg;
  m.source_id = std::move(source_id);
  m.padded = clip.padded;
  return m;
}

} // namespace cfnsr

#endif // CFNSR_MFCC_HPP_
