// SPDX-License-Identifier: Apache-2.0
/**
 * @file   config_io.hpp
 * @brief  ModelConfig <-> JSON, and the configuration hash.
 *
 * A config file is a partial document: keys it omits keep their defaults,
 * keys the defaults do not have are rejected so typos surface immediately.
 */
#ifndef CFNSR_CONFIG_IO_HPP_
#define CFNSR_CONFIG_IO_HPP_

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "model.hpp"

namespace cfnsr {

using Json = nlohmann::ordered_json;

namespace detail {

inline Json triple_json(Triple t) { return Json::array({t.s, t.h, t.w}); }

inline Triple json_triple(const Json &j) {
  const auto v = j.get<std::vector<std::size_t>>();
  if (v.size() != 3)
    throw ConfigError("expected a 3-element [S, H, W] array, got " + j.dump());
  return {v[0], v[1], v[2]};
}

/// Overlays `patch` onto `base`, rejecting keys that `base` lacks.
inline void overlay(Json &base, const Json &patch, const std::string &path) {
  if (!patch.is_object())
    throw ConfigError("config" + path + ": expected an object");
  for (const auto &[key, value] : patch.items()) {
    const std::string where = path + "." + key;
    if (!base.contains(key))
      throw ConfigError("config" + where + ": unknown key");
    if (base[key].is_object())
      overlay(base[key], value, where);
    else
      base[key] = value;
  }
}

} // namespace detail

inline Json to_json(const ModelConfig &c) {
  const auto &m = c.mfcc;
  const auto &a = c.audio;
  const auto &v = c.video;
  const auto &f = c.fusion;
  Json j;
  j["mfcc"] = {{"sample_rate", m.sample_rate},
               {"trim_head", m.trim_head},
               {"keep", m.keep},
               {"frame_len", m.frame_len},
               {"hop", m.hop},
               {"n_fft", m.n_fft},
               {"n_mels", m.n_mels},
               {"n_coeffs", m.n_coeffs},
               {"fmin", m.fmin},
               {"fmax", m.fmax ? Json(*m.fmax) : Json(nullptr)},
               {"log_floor", m.log_floor}};
  j["audio"] = {{"in_channels", a.in_channels},
                {"conv_channels", a.conv_channels},
                {"kernel_size", a.kernel_size},
                {"pool_window", a.pool_window},
                {"dropout_rate", a.dropout_rate},
                {"out_dim", a.out_dim}};
  j["video"] = {{"variant", v.variant},
                {"in_channels", v.in_channels},
                {"input", detail::triple_json(v.input)},
                {"stem_channels", v.stem_channels},
                {"stem_kernel", detail::triple_json(v.stem_kernel)},
                {"stem_stride", detail::triple_json(v.stem_stride)},
                {"stem_padding", detail::triple_json(v.stem_padding)},
                {"pool_window", detail::triple_json(v.pool_window)},
                {"pool_stride", detail::triple_json(v.pool_stride)},
                {"cardinality", v.cardinality},
                {"stage_mid", v.stage_mid},
                {"stage_out", v.stage_out},
                {"stage_blocks", v.stage_blocks},
                {"stage_strides", v.stage_strides}};
  j["fusion"] = {
      {"d_f", f.d_f},
      {"d_k", f.d_k},
      {"d_ff", f.d_ff},
      {"depth", f.depth},
      {"k", f.k},
      {"C", f.C},
      {"S", f.S},
      {"H", f.H},
      {"W", f.W},
      {"use_crossmodal", f.use_crossmodal},
      {"use_self_attention", f.use_self_attention},
      {"use_residual", f.use_residual},
      {"direction", f.direction == Direction::A_to_V ? "A_to_V" : "V_to_A"},
      {"gate_softmax",
       f.gate_softmax == GateSoftmax::channel ? "channel" : "spatial"}};
  j["training"] = {{"n_classes", c.n_classes}, {"seed", c.seed},
                   {"lr", c.lr},               {"batch_size", c.batch_size},
                   {"epochs", c.epochs},       {"n_folds", c.n_folds}};
  j["augment"] = {{"enabled", c.augment.enabled},
                  {"max_shift", c.augment.max_shift},
                  {"flip", c.augment.flip},
                  {"mean", c.augment.mean},
                  {"stddev", c.augment.stddev}};
  return j;
}

/// Reads a (possibly partial) config document over the desk defaults.
/// Does not validate cross-module invariants; call validate() for that.
inline ModelConfig config_from_json(const Json &patch) {
  Json j = to_json(ModelConfig::desk());
  if (!patch.is_null())
    detail::overlay(j, patch, "");
  ModelConfig c;
  try {
    const Json &m = j["mfcc"];
    c.mfcc.sample_rate = m["sample_rate"].get<double>();
    c.mfcc.trim_head = m["trim_head"].get<double>();
    c.mfcc.keep = m["keep"].get<double>();
    c.mfcc.frame_len = m["frame_len"].get<double>();
    c.mfcc.hop = m["hop"].get<double>();
    c.mfcc.n_fft = m["n_fft"].get<std::size_t>();
    c.mfcc.n_mels = m["n_mels"].get<std::size_t>();
    c.mfcc.n_coeffs = m["n_coeffs"].get<std::size_t>();
    c.mfcc.fmin = m["fmin"].get<double>();
    if (!m["fmax"].is_null())
      c.mfcc.fmax = m["fmax"].get<double>();
    c.mfcc.log_floor = m["log_floor"].get<double>();

    const Json &a = j["audio"];
    c.audio.in_channels = a["in_channels"].get<std::size_t>();
    c.audio.conv_channels = a["conv_channels"].get<std::vector<std::size_t>>();
    c.audio.kernel_size = a["kernel_size"].get<std::size_t>();
    c.audio.pool_window = a["pool_window"].get<std::size_t>();
    c.audio.dropout_rate = a["dropout_rate"].get<double>();
    c.audio.out_dim = a["out_dim"].get<std::size_t>();

    const Json &v = j["video"];
    c.video.variant = v["variant"].get<std::string>();
    c.video.in_channels = v["in_channels"].get<std::size_t>();
    c.video.input = detail::json_triple(v["input"]);
    c.video.stem_channels = v["stem_channels"].get<std::size_t>();
    c.video.stem_kernel = detail::json_triple(v["stem_kernel"]);
    c.video.stem_stride = detail::json_triple(v["stem_stride"]);
    c.video.stem_padding = detail::json_triple(v["stem_padding"]);
    c.video.pool_window = detail::json_triple(v["pool_window"]);
    c.video.pool_stride = detail::json_triple(v["pool_stride"]);
    c.video.cardinality = v["cardinality"].get<std::size_t>();
    c.video.stage_mid = v["stage_mid"].get<std::vector<std::size_t>>();
    c.video.stage_out = v["stage_out"].get<std::vector<std::size_t>>();
    c.video.stage_blocks = v["stage_blocks"].get<std::vector<std::size_t>>();
    c.video.stage_strides = v["stage_strides"].get<std::vector<std::size_t>>();

    const Json &f = j["fusion"];
    c.fusion.d_f = f["d_f"].get<std::size_t>();
    c.fusion.d_k = f["d_k"].get<std::size_t>();
    c.fusion.d_ff = f["d_ff"].get<std::size_t>();
    c.fusion.depth = f["depth"].get<std::size_t>();
    c.fusion.k = f["k"].get<std::size_t>();
    c.fusion.C = f["C"].get<std::size_t>();
    c.fusion.S = f["S"].get<std::size_t>();
    c.fusion.H = f["H"].get<std::size_t>();
    c.fusion.W = f["W"].get<std::size_t>();
    c.fusion.use_crossmodal = f["use_crossmodal"].get<bool>();
    c.fusion.use_self_attention = f["use_self_attention"].get<bool>();
    c.fusion.use_residual = f["use_residual"].get<bool>();
    const auto dir = f["direction"].get<std::string>();
    if (dir != "A_to_V" && dir != "V_to_A")
      throw ConfigError("config.fusion.direction: expected A_to_V or V_to_A, "
                        "got '" + dir + "'");
    c.fusion.direction = dir == "A_to_V" ? Direction::A_to_V : Direction::V_to_A;
    const auto gs = f["gate_softmax"].get<std::string>();
    if (gs != "channel" && gs != "spatial")
      throw ConfigError("config.fusion.gate_softmax: expected channel or "
                        "spatial, got '" + gs + "'");
    c.fusion.gate_softmax =
        gs == "channel" ? GateSoftmax::channel : GateSoftmax::spatial;

    const Json &t = j["training"];
    c.n_classes = t["n_classes"].get<std::size_t>();
    c.seed = t["seed"].get<std::uint64_t>();
    c.lr = t["lr"].get<double>();
    c.batch_size = t["batch_size"].get<std::size_t>();
    c.epochs = t["epochs"].get<std::size_t>();
    c.n_folds = t["n_folds"].get<std::size_t>();

    const Json &g = j["augment"];
    c.augment.enabled = g["enabled"].get<bool>();
    c.augment.max_shift = g["max_shift"].get<std::size_t>();
    c.augment.flip = g["flip"].get<bool>();
    c.augment.mean = g["mean"].get<std::array<double, 3>>();
    c.augment.stddev = g["stddev"].get<std::array<double, 3>>();
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline ModelConfig load_config(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot open config file " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// FNV-1a over the canonical (fully expanded) JSON dump.
inline std::string config_hash(const ModelConfig &c) {
  return hex64(fnv1a(to_json(c).dump()));
}

/// Hash of the MFCC section alone: preprocessing outputs depend on nothing
/// else, so changing e.g. the learning rate does not invalidate them.
inline std::string mfcc_hash(const MfccConfig &m) {
  ModelConfig c;
  c.mfcc = m;
  return hex64(fnv1a(to_json(c)["mfcc"].dump()));
}

} // namespace cfnsr

#endif // CFNSR_CONFIG_IO_HPP_
