// SPDX-License-Identifier: Apache-2.0
/**
 * @file   wav.hpp
 * @brief  Minimal RIFF/WAVE reader and writer.
 *
 * Reads 16-bit PCM and 32-bit float (plain or WAVE_FORMAT_EXTENSIBLE),
 * averaging multi-channel audio to mono. Writes 16-bit PCM mono.
 */
#ifndef CFNSR_WAV_HPP_
#define CFNSR_WAV_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cfnsr {

class WavError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct WavAudio {
  double sample_rate = 0.0;
  std::vector<double> samples; // mono, nominally in [-1, 1]
};

namespace detail {

inline std::uint32_t le32(const unsigned char *p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
         std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}
inline std::uint16_t le16(const unsigned char *p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

} // namespace detail

inline WavAudio parse_wav(std::span<const unsigned char> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw WavError("wav: not a RIFF/WAVE stream");
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char *data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char *chunk = bytes.data() + pos;
    const std::uint32_t len = detail::le32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size() && std::memcmp(chunk, "data", 4) != 0)
      throw WavError("wav: truncated chunk");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16)
        throw WavError("wav: short fmt chunk");
      format = detail::le16(bytes.data() + body);
      channels = detail::le16(bytes.data() + body + 2);
      rate = detail::le32(bytes.data() + body + 4);
      bits = detail::le16(bytes.data() + body + 14);
      if (format == 0xFFFE && len >= 26)
        format = detail::le16(bytes.data() + body + 24);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_len = std::min<std::size_t>(len, bytes.size() - body);
    }
    pos = body + len + (len & 1u);
  }
  if (!channels || !rate || !data)
    throw WavError("wav: missing fmt or data chunk");
  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32)
    throw WavError("wav: unsupported encoding (format " +
                   std::to_string(format) + ", " + std::to_string(bits) +
                   " bits)");
  const std::size_t width = bits / 8;
  const std::size_t frames = data_len / (width * channels);
  WavAudio out;
  out.sample_rate = rate;
  out.samples.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char *p = data + (f * channels + c) * width;
      if (pcm16) {
        acc += static_cast<std::int16_t>(detail::le16(p)) / 32768.0;
      } else {
        const std::uint32_t raw = detail::le32(p);
        float v;
        std::memcpy(&v, &raw, 4);
        acc += v;
      }
    }
    out.samples[f] = acc / channels;
  }
  return out;
}

inline WavAudio read_wav(const std::filesystem::path &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw WavError("wav: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  return parse_wav(bytes);
}

inline std::vector<unsigned char> encode_wav_pcm16(std::span<const double> pcm,
                                                   std::uint32_t rate) {
  std::vector<unsigned char> out;
  auto put32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
      out.push_back(static_cast<unsigned char>(v >> (8 * i)));
  };
  auto put16 = [&](std::uint16_t v) {
    out.push_back(static_cast<unsigned char>(v));
    out.push_back(static_cast<unsigned char>(v >> 8));
  };
  const auto data_len = static_cast<std::uint32_t>(pcm.size() * 2);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put32(36 + data_len);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put32(16);
  put16(1);
  put16(1);
  put32(rate);
  put32(rate * 2);
  put16(2);
  put16(16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put32(data_len);
  for (double s : pcm) {
    const double q = std::clamp(std::round(s * 32767.0), -32768.0, 32767.0);
    put16(static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return out;
}

inline void write_wav(const std::filesystem::path &path,
                      std::span<const double> pcm, std::uint32_t rate) {
  auto bytes = encode_wav_pcm16(pcm, rate);
  std::ofstream os(path, std::ios::binary);
  if (!os)
    throw WavError("wav: cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char *>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
}

/// Linear-interpolation resampling.
inline std::vector<double> resample_linear(std::span<const double> pcm,
                                           double from_rate, double to_rate) {
  if (from_rate == to_rate || pcm.empty())
    return {pcm.begin(), pcm.end()};
  const auto n = static_cast<std::size_t>(
      std::floor(static_cast<double>(pcm.size()) * to_rate / from_rate));
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * from_rate / to_rate;
    const auto j = static_cast<std::size_t>(t);
    const double frac = t - static_cast<double>(j);
    const double a = pcm[std::min(j, pcm.size() - 1)];
    const double b = pcm[std::min(j + 1, pcm.size() - 1)];
    out[i] = a + frac * (b - a);
  }
  return out;
}

} // namespace cfnsr

#endif // CFNSR_WAV_HPP_
