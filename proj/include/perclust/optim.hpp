#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "perclust/autodiff.hpp"
#include "perclust/common.hpp"

namespace perclust {

// Bias-corrected Adam over a list of parameter tensors. Epsilon is added
// outside the square root, so the first step with gradient g moves by
// almost exactly -lr * sign(g).
struct AdamState {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  void init(const std::vector<ad::Tensor>& params) {
    m.clear();
    v.clear();
    for (const ad::Tensor& p : params) {
      m.emplace_back(p.numel(), 0.0);
      v.emplace_back(p.numel(), 0.0);
    }
    step = 0;
  }
};

inline void adam_step(std::vector<ad::Tensor>& params, const std::vector<std::vector<double>>& grads,
                      AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw Error::numeric("adam_step: parameter/gradient/state size mismatch");
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = params[t].values;
    const auto& g = grads[t];
    if (g.size() != p.size()) throw Error::numeric("adam_step: gradient shape mismatch");
    auto& m = state.m[t];
    auto& v = state.v[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!std::isfinite(g[i])) throw Error::numeric("adam_step: non-finite gradient");
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

// Divides the learning rate by `factor` once the monitored value has gone
// `patience` consecutive epochs without strict improvement. The first
// observation records the baseline and counts toward the patience window;
// improvements and decays both reset the counter.
class PlateauScheduler {
 public:
  PlateauScheduler(double initial_lr, int patience = 50, double factor = 10.0)
      : lr_(initial_lr), patience_(patience), factor_(factor) {}

  // Feed one epoch's monitored value; returns the (possibly reduced) rate.
  double step(double value) {
    if (!has_best_) {
      has_best_ = true;
      best_ = value;
      counter_ = 1;
    } else if (value < best_) {
      best_ = value;
      counter_ = 0;
    } else {
      ++counter_;
    }
    if (counter_ >= patience_) {
      lr_ /= factor_;
      counter_ = 0;
    }
    return lr_;
  }

  double learning_rate() const { return lr_; }
  double best() const { return best_; }
  int counter() const { return counter_; }
  bool has_best() const { return has_best_; }

  void restore(double lr, double best, int counter, bool has_best) {
    lr_ = lr;
    best_ = best;
    counter_ = counter;
    has_best_ = has_best;
  }

 private:
  double lr_;
  int patience_;
  double factor_;
  double best_ = std::numeric_limits<double>::infinity();
  int counter_ = 0;
  bool has_best_ = false;
};

}  // namespace perclust
