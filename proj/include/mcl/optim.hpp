#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>

#include "mcl/errors.hpp"
#include "mcl/nn.hpp"

namespace mcl {

struct SgdConfig {
  double learning_rate = 1e-2;

  void validate() const { detail::require(learning_rate > 0.0, "learning rate must be positive"); }
};

/// params - lr * grad.
inline ParamVector sgd_step(const ParamVector& params, const Gradient& grad, const SgdConfig& cfg) {
  cfg.validate();
  detail::require(params.size() == grad.size(), "parameter and gradient lengths differ");
  ParamVector out = params;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] -= cfg.learning_rate * grad.values[i];
  return out;
}

/// Slow weights kept as an exponential moving average of the gradient-trained
/// (fast) weights. The slow copy never receives gradients.
struct MclState {
  ParamVector theta_slow;
  double tau = 0.999;
  std::uint64_t update_freq = 1;
  std::optional<std::uint64_t> restart_freq;  // nullopt: never copy slow into fast
  std::uint64_t step_count = 0;

  static MclState start(ParamVector theta_pre, double tau, std::uint64_t update_freq = 1,
                        std::optional<std::uint64_t> restart_freq = std::nullopt) {
    MclState s{std::move(theta_pre), tau, update_freq, restart_freq, 0};
    s.validate();
    return s;
  }

  void validate() const {
    detail::require(tau >= 0.0 && tau <= 1.0, "tau must lie in [0, 1]");
    detail::require(update_freq >= 1, "update frequency must be at least 1");
    detail::require(!restart_freq || *restart_freq >= 1, "restart frequency must be at least 1");
  }
};

struct MclStepEvents {
  bool ema_applied = false;
  bool restarted = false;
};

/// Records one gradient step on the fast weights. EMA runs on multiples of
/// update_freq; a restart (fast <- slow) runs on multiples of restart_freq,
/// after the EMA when both coincide.
inline MclStepEvents mcl_observe_step(MclState& state, ParamVector& theta_fast) {
  state.validate();
  detail::require(theta_fast.size() == state.theta_slow.size(), "fast and slow weights differ in length");
  MclStepEvents ev;
  ++state.step_count;
  if (state.step_count % state.update_freq == 0) {
    const double keep = state.tau;
    const double mix = 1.0 - state.tau;
    auto& slow = state.theta_slow.values;
    const auto& fast = theta_fast.values;
    for (std::size_t i = 0; i < slow.size(); ++i) {
      const double lo = std::min(slow[i], fast[i]);
      const double hi = std::max(slow[i], fast[i]);
      // clamp absorbs the last-ulp rounding of the convex combination
      slow[i] = std::clamp(keep * slow[i] + mix * fast[i], lo, hi);
    }
    ev.ema_applied = true;
  }
  if (state.restart_freq && state.step_count % *state.restart_freq == 0) {
    theta_fast = state.theta_slow;
    ev.restarted = true;
  }
  return ev;
}

inline ParamVector mcl_finalize(const MclState& state) { return state.theta_slow; }

}  // namespace mcl
