#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "spslu/errors.hpp"
#include "spslu/params.hpp"

namespace spslu {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. L2 is folded into the gradient (g + l2 * theta)
/// before the moment updates, for weight matrices only.
template <class T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  std::uint64_t step_count() const { return t_; }
  /// Resumes the bias-correction clock (moments are kept).
  void set_step_count(std::uint64_t t) { t_ = t; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }

  /// Applies one update to every tensor in `params` using its `grad`.
  /// `frozen`, when given, flags tensors (by position) to leave untouched.
  void step(ParameterSet<T>& params, double l2,
            const std::vector<bool>* frozen = nullptr) {
    if (l2 < 0) throw ConfigError("adam: l2 must be non-negative");
    if (t_ == std::numeric_limits<std::uint64_t>::max()) {
      throw NumericError("adam: step count overflow");
    }
    if (m_.empty()) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        m_.emplace_back(params.at(i).tensor.size(), T(0));
        v_.emplace_back(params.at(i).tensor.size(), T(0));
      }
    }
    if (m_.size() != params.size()) {
      throw std::logic_error("adam: parameter set changed between steps");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& p = params.at(i);
      if (p.tensor.grad.size() != p.tensor.size()) continue;
      if (!all_finite<T>(p.tensor.grad)) {
        throw NumericError("non-finite gradient in parameter '" + p.name + "'");
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (frozen && (*frozen)[i]) continue;
      auto& p = params.at(i);
      auto& theta = p.tensor.data;
      const auto& g = p.tensor.grad;
      if (g.size() != theta.size()) continue;
      const T decay = p.kind == ParamKind::kWeight ? static_cast<T>(l2) : T(0);
      auto& m = m_[i];
      auto& v = v_[i];
      if (m.size() != theta.size()) {
        throw std::logic_error("adam: moment shape mismatch for " + p.name);
      }
      for (std::size_t k = 0; k < theta.size(); ++k) {
        const T gk = g[k] + decay * theta[k];
        m[k] = b1 * m[k] + (T(1) - b1) * gk;
        v[k] = b2 * v[k] + (T(1) - b2) * gk * gk;
        const double mhat = m[k] / c1;
        const double vhat = v[k] / c2;
        theta[k] -= static_cast<T>(cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
};

}  // namespace spslu
