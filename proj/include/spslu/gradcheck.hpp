#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "spslu/params.hpp"
#include "spslu/prng.hpp"
#include "spslu/tensor.hpp"

namespace spslu {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates_checked = 0;
};

struct GradCheckOptions {
  double epsilon = 1e-5;
  /// Coordinates sampled per tensor; tensors at or below this size are
  /// checked exhaustively.
  std::size_t samples_per_tensor = 24;
  std::uint64_t seed = 7;
  /// Restricts the check to parameters whose name passes; all when empty.
  std::function<bool(const std::string&)> include;
  /// Test hook: applied to the analytic gradients before comparison.
  std::function<void(ParameterSet<double>&)> corrupt;
};

/// Builds the loss on a fresh tape. Must be deterministic.
using LossBuilder = std::function<Var<double>(Tape<double>&)>;

/// Central-difference check of tape gradients. Relative error per coordinate
/// is |a - n| / max(|a|, |n|, 1e-8); the maximum is returned.
inline GradCheckResult gradient_check(const LossBuilder& build,
                                      ParameterSet<double>& params,
                                      const GradCheckOptions& opts = {}) {
  auto eval = [&]() {
    Tape<double> tape(false);
    return build(tape).item();
  };

  params.zero_grad();
  double base = 0.0;
  {
    Tape<double> tape(true);
    auto loss = build(tape);
    base = loss.item();
    tape.backward(loss);
  }
  if (eval() != base) {
    throw std::runtime_error(
        "gradient_check: loss is not deterministic (two forward passes differ)");
  }
  if (opts.corrupt) opts.corrupt(params);

  Prng rng(opts.seed);
  GradCheckResult result;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.at(i);
    if (opts.include && !opts.include(p.name)) continue;
    auto& data = p.tensor.data;
    std::vector<std::size_t> coords;
    if (data.size() <= opts.samples_per_tensor) {
      for (std::size_t k = 0; k < data.size(); ++k) coords.push_back(k);
    } else {
      for (std::size_t s = 0; s < opts.samples_per_tensor; ++s)
        coords.push_back(rng.below(data.size()));
    }
    for (std::size_t k : coords) {
      const double saved = data[k];
      data[k] = saved + opts.epsilon;
      const double up = eval();
      data[k] = saved - opts.epsilon;
      const double down = eval();
      data[k] = saved;
      const double numeric = (up - down) / (2.0 * opts.epsilon);
      const double analytic = p.tensor.grad[k];
      const double denom =
          std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic - numeric) / denom;
      ++result.coordinates_checked;
      if (rel > result.max_relative_error || result.worst_param.empty()) {
        result.max_relative_error = rel;
        result.worst_param = p.name;
        result.worst_index = k;
        result.worst_analytic = analytic;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace spslu
