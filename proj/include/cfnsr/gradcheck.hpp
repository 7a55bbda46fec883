// SPDX-License-Identifier: Apache-2.0
/**
 * @file   gradcheck.hpp
 * @brief  Central finite-difference checks of tape gradients.
 */
#ifndef CFNSR_GRADCHECK_HPP_
#define CFNSR_GRADCHECK_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace cfnsr {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor of the relative error, so gradients that are zero up
  /// to rounding are compared absolutely. Central differences of an O(10)
  /// loss at h = 1e-5 carry about 1e-9 of cancellation noise.
  double floor = 1e-5;
  /// When nonzero, only this many coordinates per input are checked, drawn
  /// without replacement from `sample_seed`. Used for models too large to
  /// difference exhaustively.
  std::size_t max_per_input = 0;
  std::uint64_t sample_seed = 0;
  /// A coordinate that fails at `step` is retried at these narrower steps.
  /// A relu kink within `step` of the point spoils the wide difference but
  /// not a narrow one; a wrong backward rule fails at every step. Rounding
  /// noise grows as the step shrinks, hence several retries. Near-uniform
  /// attention makes one unit's pre-activations almost equal across the
  /// sequence, so kinks can cluster within 1e-7 of each other.
  std::vector<double> retry_steps{1e-6, 1e-7, 1e-8};
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t refined = 0; // coordinates that needed the narrow step
  bool passed = true;
};

inline double relative_error(double analytic, double numeric, double floor) {
  const double denom =
      std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares d(loss)/d(input) from the tape against central differences for
/// every element of every input, or a seeded sample of them. `loss` must
/// rebuild the scalar from the current input values each time it is called.
inline GradCheckResult check_gradients(const std::string &name,
                                       const std::function<Tensor()> &loss,
                                       std::vector<Tensor> inputs,
                                       const GradCheckOptions &opts = {}) {
  GradCheckResult result{name};
  for (Tensor &in : inputs) {
    in.zero_grad();
    in.set_requires_grad(true);
  }
  loss().backward();
  std::vector<std::vector<double>> analytic;
  for (const Tensor &in : inputs)
    analytic.push_back(in.grad());

  NoGradGuard no_grad;
  Rng sampler(opts.sample_seed);
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto values = inputs[t].mutable_data();
    std::vector<std::size_t> coords(values.size());
    for (std::size_t i = 0; i < coords.size(); ++i)
      coords[i] = i;
    if (opts.max_per_input && coords.size() > opts.max_per_input) {
      sampler.shuffle(coords);
      coords.resize(opts.max_per_input);
    }
    auto central = [&](std::size_t i, double h) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss().item();
      values[i] = saved - h;
      const double down = loss().item();
      values[i] = saved;
      return (up - down) / (2.0 * h);
    };
    for (std::size_t i : coords) {
      double err = relative_error(analytic[t][i], central(i, opts.step),
                                  opts.floor);
      for (std::size_t r = 0; err > opts.tolerance && r < opts.retry_steps.size();
           ++r) {
        const double narrow = relative_error(
            analytic[t][i], central(i, opts.retry_steps[r]), opts.floor);
        if (narrow <= opts.tolerance) {
          err = narrow;
          ++result.refined;
        }
      }
      result.max_rel_error = std::max(result.max_rel_error, err);
      ++result.checked;
    }
  }
  result.passed = result.max_rel_error <= opts.tolerance;
  return result;
}

} // namespace cfnsr

#endif // CFNSR_GRADCHECK_HPP_
