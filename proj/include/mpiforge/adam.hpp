#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "mpiforge/errors.hpp"

namespace mpiforge {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adaptive moment estimation over a flat parameter block.
class Adam {
 public:
  Adam() = default;
  explicit Adam(std::size_t size, AdamConfig cfg = {}) : cfg_(cfg), m_(size, 0.0), v_(size, 0.0) {}

  std::size_t size() const { return m_.size(); }
  int steps() const { return t_; }

  /// Advance the moments with `grads` and write the bias-corrected step into `delta`.
  void update(std::span<const double> grads, double lr, std::span<double> delta) {
    if (grads.size() != m_.size() || delta.size() != m_.size()) {
      throw Error(ErrorCode::SizeMismatch, "optimizer state does not match the parameter block");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t i = 0; i < m_.size(); ++i) {
      const double g = grads[i];
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m_[i] / c1;
      const double vhat = v_[i] / c2;
      delta[i] = -lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }

  void step(std::span<double> params, std::span<const double> grads, double lr) {
    if (scratch_.size() != m_.size()) scratch_.assign(m_.size(), 0.0);
    update(grads, lr, scratch_);
    for (std::size_t i = 0; i < params.size(); ++i) params[i] += scratch_[i];
  }

 private:
  AdamConfig cfg_;
  std::vector<double> m_, v_, scratch_;
  int t_ = 0;
};

/// Log-linear decay from `start` at iteration 0 to `end` at iteration `total - 1`.
inline double decayed_learning_rate(double start, double end, int iteration, int total) {
  if (total <= 1) return start;
  const double f = double(iteration) / double(total - 1);
  return start * std::pow(end / start, f);
}

}  // namespace mpiforge
