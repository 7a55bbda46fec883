// SPDX-License-Identifier: Apache-2.0
/**
 * @file   layers.hpp
 * @brief  Named parameter storage and the parameterised layers built on it.
 *
 * A module first describes its parameters as a Layout (name, shape, init),
 * which is enough to count them without allocating. Building the module
 * materialises the layout into a ParameterStore and binds tensor handles.
 */
#ifndef CFNSR_LAYERS_HPP_
#define CFNSR_LAYERS_HPP_

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ops.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace cfnsr {

enum class Init { fan_in_uniform, zeros, ones };

struct ParamSpec {
  std::string name;
  Shape shape;
  Init init = Init::fan_in_uniform;
  std::size_t fan_in = 1;
};

using Layout = std::vector<ParamSpec>;

inline std::size_t count_params(const Layout &layout) {
  std::size_t n = 0;
  for (const auto &p : layout)
    n += numel(p.shape);
  return n;
}

inline void append(Layout &dst, const Layout &src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

/// Owns every learnable tensor and batch-norm buffer of a model, keyed by
/// dotted name. Insertion order is preserved for optimizers and checkpoints.
class ParameterStore {
public:
  explicit ParameterStore(std::uint64_t seed = 0) : seed_(seed) {}
  ParameterStore(const ParameterStore &) = delete;
  ParameterStore &operator=(const ParameterStore &) = delete;

  /// Creates and initialises a parameter. Each tensor draws from its own
  /// stream derived from (seed, name), so unrelated layout changes elsewhere
  /// do not perturb it.
  Tensor add(const ParamSpec &spec) {
    if (index_.count(spec.name))
      throw ConfigError("parameter '" + spec.name + "' declared twice");
    const std::size_t n = numel(spec.shape);
    std::vector<double> values(n, 0.0);
    if (spec.init == Init::ones) {
      values.assign(n, 1.0);
    } else if (spec.init == Init::fan_in_uniform) {
      Rng rng(derive_seed(seed_, fnv1a(spec.name)));
      const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
      for (double &v : values)
        v = rng.uniform(-bound, bound);
    }
    Tensor t = Tensor::from(spec.shape, std::move(values), true);
    index_[spec.name] = params_.size();
    params_.emplace_back(spec.name, t);
    return t;
  }

  BatchNormState &bn_state(const std::string &name) { return bn_[name]; }

  const std::vector<std::pair<std::string, Tensor>> &params() const {
    return params_;
  }
  std::map<std::string, BatchNormState> &bn_states() { return bn_; }
  const std::map<std::string, BatchNormState> &bn_states() const { return bn_; }

  bool contains(const std::string &name) const { return index_.count(name); }
  Tensor get(const std::string &name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw ConfigError("no parameter named '" + name + "'");
    return params_[it->second].second;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto &[name, t] : params_)
      n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto &[name, t] : params_)
      t.zero_grad();
  }

private:
  std::uint64_t seed_;
  std::vector<std::pair<std::string, Tensor>> params_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, BatchNormState> bn_;
};

/// Materialises every spec of `layout` into `store`.
inline void build(ParameterStore &store, const Layout &layout) {
  for (const auto &spec : layout)
    store.add(spec);
}

// ---------------------------------------------------------------------------
// Layers. Each has a static layout() and binds to a built store.

inline constexpr double kBnMomentum = 0.1;
inline constexpr double kNormEps = 1e-5;

struct BatchNorm {
  Tensor gamma, beta;
  BatchNormState *state = nullptr;

  static Layout layout(const std::string &name, std::size_t channels) {
    return {{name + ".gamma", {channels}, Init::ones},
            {name + ".beta", {channels}, Init::zeros}};
  }
  BatchNorm() = default;
  BatchNorm(ParameterStore &store, const std::string &name)
      : gamma(store.get(name + ".gamma")), beta(store.get(name + ".beta")),
        state(&store.bn_state(name)) {}

  Tensor operator()(const Tensor &x, Mode mode) const {
    return batchnorm(x, gamma, beta, *state, mode, kBnMomentum, kNormEps);
  }
};

struct LayerNorm {
  Tensor gamma, beta;

  static Layout layout(const std::string &name, std::size_t width) {
    return BatchNorm::layout(name, width);
  }
  LayerNorm() = default;
  LayerNorm(ParameterStore &store, const std::string &name)
      : gamma(store.get(name + ".gamma")), beta(store.get(name + ".beta")) {}

  Tensor operator()(const Tensor &x) const {
    return layernorm(x, gamma, beta, kNormEps);
  }
};

/// y = x W^T + b with W: [out x in].
struct Linear {
  Tensor weight, bias;

  static Layout layout(const std::string &name, std::size_t in,
                       std::size_t out, bool with_bias = true) {
    Layout l{{name + ".weight", {out, in}, Init::fan_in_uniform, in}};
    if (with_bias)
      l.push_back({name + ".bias", {out}, Init::zeros});
    return l;
  }
  Linear() = default;
  Linear(ParameterStore &store, const std::string &name)
      : weight(store.get(name + ".weight")) {
    if (store.contains(name + ".bias"))
      bias = store.get(name + ".bias");
  }

  Tensor operator()(const Tensor &x) const {
    const bool vec = x.rank() == 1;
    Tensor y = matmul(vec ? unsqueeze0(x) : x, transpose(weight));
    if (vec)
      y = squeeze0(y);
    return bias.defined() ? bias_add(y, bias) : y;
  }
};

struct Conv1d {
  Tensor weight, bias;
  std::size_t stride = 1, padding = 0;

  static Layout layout(const std::string &name, std::size_t in,
                       std::size_t out, std::size_t k, bool with_bias = true) {
    Layout l{{name + ".weight", {out, in, k}, Init::fan_in_uniform, in * k}};
    if (with_bias)
      l.push_back({name + ".bias", {out}, Init::zeros});
    return l;
  }
  Conv1d() = default;
  Conv1d(ParameterStore &store, const std::string &name, std::size_t stride_ = 1,
         std::size_t padding_ = 0)
      : weight(store.get(name + ".weight")), stride(stride_),
        padding(padding_) {
    if (store.contains(name + ".bias"))
      bias = store.get(name + ".bias");
  }

  Tensor operator()(const Tensor &x) const {
    return conv1d(x, weight, bias, stride, padding);
  }
};

struct Conv3d {
  Tensor weight, bias;
  std::size_t groups = 1;
  Triple stride{}, padding{0, 0, 0};

  static Layout layout(const std::string &name, std::size_t in,
                       std::size_t out, Triple k, std::size_t groups = 1,
                       bool with_bias = false) {
    const std::size_t fan_in = in / groups * k.s * k.h * k.w;
    Layout l{{name + ".weight",
              {out, in / groups, k.s, k.h, k.w},
              Init::fan_in_uniform,
              fan_in}};
    if (with_bias)
      l.push_back({name + ".bias", {out}, Init::zeros});
    return l;
  }
  Conv3d() = default;
  Conv3d(ParameterStore &store, const std::string &name, std::size_t groups_,
         Triple stride_, Triple padding_)
      : weight(store.get(name + ".weight")), groups(groups_), stride(stride_),
        padding(padding_) {
    if (store.contains(name + ".bias"))
      bias = store.get(name + ".bias");
  }

  Tensor operator()(const Tensor &x) const {
    return conv3d_grouped(x, weight, bias, groups, stride, padding);
  }
};

} // namespace cfnsr

#endif // CFNSR_LAYERS_HPP_
