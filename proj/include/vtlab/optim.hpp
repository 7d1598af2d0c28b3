// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vtlab/errors.hpp"
#include "vtlab/tensor.hpp"

namespace vtlab {

// Warmup-then-decay learning rate: base_lr * min(step^-0.5, step * warmup^-1.5).
// Rises linearly to the peak at step == warmup_steps, then decays as the
// inverse square root.
struct LrSchedule {
  double base_lr = 1e-3;
  int64_t warmup_steps = 1;
};

inline double schedule_lr(const LrSchedule& sched, int64_t step) {
  if (step < 1) throw ContractError("schedule_lr: undefined for step < 1");
  if (sched.warmup_steps < 1) throw ContractError("schedule_lr: warmup_steps must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(sched.warmup_steps);
  return sched.base_lr * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

template <typename S>
struct AdamStateT {
  int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<std::vector<S>> first_moment;
  std::vector<std::vector<S>> second_moment;
};

using AdamState = AdamStateT<float>;

// Standard Adam with bias correction over a fixed parameter group.
// Gradients are zeroed after each update.
template <typename S>
class AdamT {
 public:
  AdamT() = default;
  explicit AdamT(std::vector<TensorT<S>> params, double beta1 = 0.9, double beta2 = 0.999,
                 double epsilon = 1e-8)
      : params_(std::move(params)) {
    state_.beta1 = beta1;
    state_.beta2 = beta2;
    state_.epsilon = epsilon;
    for (auto& p : params_) {
      state_.first_moment.emplace_back(p.size(), S(0));
      state_.second_moment.emplace_back(p.size(), S(0));
    }
  }

  void step(double lr) { adam_step(params_, state_, lr); }

  // Global-norm gradient clipping; returns the pre-clip norm.
  double clip_grad_norm(double max_norm) {
    double sq = 0.0;
    for (auto& p : params_) {
      if (!p.has_grad()) continue;
      for (S g : p.grad_view()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
      const S factor = static_cast<S>(max_norm / norm);
      for (auto& p : params_) {
        if (!p.has_grad()) continue;
        for (S& g : p.grad()) g *= factor;
      }
    }
    return norm;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::vector<TensorT<S>>& params() { return params_; }
  AdamStateT<S>& state() { return state_; }
  const AdamStateT<S>& state() const { return state_; }

 private:
  std::vector<TensorT<S>> params_;
  AdamStateT<S> state_;
};

using Adam = AdamT<float>;

// One Adam update with bias correction. Every parameter must carry a
// populated gradient; gradients are zeroed afterward.
template <typename S>
void adam_step(std::vector<TensorT<S>>& params, AdamStateT<S>& state, double lr) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw ContractError("adam_step: moment buffers do not match parameter count");
  }
  for (size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) {
      throw ContractError("adam_step: parameter " + std::to_string(i) + " has no gradient");
    }
    if (state.first_moment[i].size() != params[i].size()) {
      throw ContractError("adam_step: moment shape mismatch at parameter " + std::to_string(i));
    }
  }
  state.step += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& value = params[i].data();
    auto& grad = params[i].grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (size_t j = 0; j < value.size(); ++j) {
      const double g = static_cast<double>(grad[j]);
      const double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * g;
      const double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * g * g;
      m[j] = static_cast<S>(mj);
      v[j] = static_cast<S>(vj);
      const double mhat = mj / bias1;
      const double vhat = vj / bias2;
      value[j] -= static_cast<S>(lr * mhat / (std::sqrt(vhat) + state.epsilon));
    }
    std::fill(grad.begin(), grad.end(), S(0));
  }
}

}  // namespace vtlab
