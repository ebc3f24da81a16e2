#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "mcl/errors.hpp"
#include "mcl/nn.hpp"
#include "mcl/optim.hpp"
#include "mcl/random.hpp"
#include "mcl/replay.hpp"

namespace mcl {

// ---------------------------------------------------------------------------
// DER++ : current-task CE + logit matching on replayed examples + replayed CE
// ---------------------------------------------------------------------------

struct DerppConfig {
  double alpha_distill = 0.5;
  double beta_replay = 0.5;
  std::size_t replay_batch = 32;

  void validate() const {
    detail::require(alpha_distill >= 0.0 && beta_replay >= 0.0, "DER++ weights must be non-negative");
    detail::require(replay_batch >= 1, "DER++ replay batch must be positive");
  }

  bool operator==(const DerppConfig&) const = default;
};

struct DerppResult {
  double loss = 0.0;
  Gradient grad;
  Matrix current_logits;  // logits of the current batch at the pre-step parameters
};

/// Mean over all elements of (logits - target)^2.
inline double mse(const Matrix& logits, const Matrix& target) {
  detail::require(logits.rows == target.rows && logits.cols == target.cols, "logit shapes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < logits.data.size(); ++i) {
    const double d = logits.data[i] - target.data[i];
    s += d * d;
  }
  return s / static_cast<double>(logits.data.size());
}

/// The composite DER++ objective for fixed replay draws. A null draw drops its term.
inline DerppResult derpp_objective(const MlpSpec& spec, const ParamVector& params, const Batch& current,
                                   const ReplaySample* distill, const ReplaySample* replay,
                                   const DerppConfig& cfg) {
  cfg.validate();
  detail::check_params(spec, params);
  detail::check_batch(spec, current);
  auto cache = forward_cached(spec, params, current.inputs);
  DerppResult out;
  out.loss = loss_ce(cache.logits(), current.labels);
  out.grad = backprop(spec, params, cache, ce_logit_grad(cache.logits(), current.labels));
  out.current_logits = cache.logits();

  if (distill && cfg.alpha_distill > 0.0) {
    detail::check_batch(spec, distill->batch);
    detail::require(distill->logits.cols == spec.n_classes(), "stored logits do not match the model head");
    auto dc = forward_cached(spec, params, distill->batch.inputs);
    out.loss += cfg.alpha_distill * mse(dc.logits(), distill->logits);
    Matrix d = dc.logits();
    const double scale = cfg.alpha_distill * 2.0 / static_cast<double>(d.data.size());
    for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] = scale * (d.data[i] - distill->logits.data[i]);
    out.grad += backprop(spec, params, dc, std::move(d));
  }
  if (replay && cfg.beta_replay > 0.0) {
    detail::check_batch(spec, replay->batch);
    auto rc = forward_cached(spec, params, replay->batch.inputs);
    out.loss += cfg.beta_replay * loss_ce(rc.logits(), replay->batch.labels);
    Matrix d = ce_logit_grad(rc.logits(), replay->batch.labels);
    for (auto& v : d.data) v *= cfg.beta_replay;
    out.grad += backprop(spec, params, rc, std::move(d));
  }
  return out;
}

/// DER++ loss with two independent replay draws from the buffer. Replay terms
/// vanish while the buffer is empty. Does not touch the buffer.
inline DerppResult derpp_loss(const MlpSpec& spec, const ParamVector& params, const Batch& current,
                              const ReplayBuffer& buf, const DerppConfig& cfg, Rng& rng) {
  std::optional<ReplaySample> distill, replay;
  if (!buf.empty()) {
    if (cfg.alpha_distill > 0.0) distill = buffer_sample(buf, cfg.replay_batch, rng);
    if (cfg.beta_replay > 0.0) replay = buffer_sample(buf, cfg.replay_batch, rng);
  }
  return derpp_objective(spec, params, current, distill ? &*distill : nullptr, replay ? &*replay : nullptr, cfg);
}

// ---------------------------------------------------------------------------
// Online EWC
// ---------------------------------------------------------------------------

/// How the diagonal Fisher is estimated at a task boundary.
enum class FisherMode {
  sampled,    // label drawn from the model's predictive distribution
  expected,   // exact expectation over the predictive distribution
  empirical,  // observed label
};

inline std::string_view to_string(FisherMode m) {
  switch (m) {
    case FisherMode::sampled: return "sampled";
    case FisherMode::expected: return "expected";
    case FisherMode::empirical: return "empirical";
  }
  return "?";
}

inline FisherMode parse_fisher_mode(std::string_view s) {
  if (s == "sampled") return FisherMode::sampled;
  if (s == "expected") return FisherMode::expected;
  if (s == "empirical") return FisherMode::empirical;
  throw ContractError("unknown fisher mode '" + std::string(s) + "'");
}

struct OewcState {
  ParamVector anchor;
  std::vector<double> fisher;
  double gamma = 1.0;
  double lambda = 10.0;
  bool consolidated = false;

  static OewcState make(const MlpSpec& spec, double lambda, double gamma) {
    detail::require(lambda >= 0.0, "EWC lambda must be non-negative");
    detail::require(gamma >= 0.0 && gamma <= 1.0, "EWC gamma must lie in [0, 1]");
    return {ParamVector{std::vector<double>(spec.param_count(), 0.0)},
            std::vector<double>(spec.param_count(), 0.0), gamma, lambda, false};
  }

  bool operator==(const OewcState&) const = default;
};

/// Diagonal Fisher of one task at params, averaged over n_samples examples
/// drawn without replacement from data.
inline std::vector<double> estimate_fisher(const MlpSpec& spec, const ParamVector& params, const Batch& data,
                                           std::size_t n_samples, FisherMode mode, Rng& rng) {
  detail::require(data.size() >= 1, "cannot estimate the Fisher on an empty task");
  detail::require(n_samples >= 1, "Fisher estimate needs at least one sample");
  detail::check_params(spec, params);
  detail::check_batch(spec, data);
  const std::size_t n = std::min(n_samples, data.size());
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  if (n < data.size()) std::shuffle(idx.begin(), idx.end(), rng);

  const std::size_t c = spec.n_classes();
  std::vector<double> fisher(spec.param_count(), 0.0);
  Matrix x(1, spec.input_dim());
  auto accumulate = [&](const ForwardCache& cache, const std::vector<double>& probs, std::size_t label,
                        double weight) {
    Matrix d(1, c);
    for (std::size_t k = 0; k < c; ++k) d(0, k) = probs[k];
    d(0, label) -= 1.0;
    const auto g = backprop(spec, params, cache, std::move(d));
    for (std::size_t i = 0; i < fisher.size(); ++i) fisher[i] += weight * g.values[i] * g.values[i];
  };

  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t e = idx[s];
    std::copy_n(data.inputs.row(e).begin(), x.cols, x.data.begin());
    const auto cache = forward_cached(spec, params, x);
    std::vector<double> probs(cache.logits().data);
    softmax_inplace(probs);
    switch (mode) {
      case FisherMode::empirical:
        accumulate(cache, probs, data.labels[e], 1.0);
        break;
      case FisherMode::sampled: {
        std::discrete_distribution<std::size_t> draw(probs.begin(), probs.end());
        accumulate(cache, probs, draw(rng), 1.0);
        break;
      }
      case FisherMode::expected:
        for (std::size_t k = 0; k < c; ++k)
          if (probs[k] > 0.0) accumulate(cache, probs, k, probs[k]);
        break;
    }
  }
  for (auto& v : fisher) v /= static_cast<double>(n);
  return fisher;
}

/// End-of-task consolidation: fisher <- gamma * fisher + F_t, anchor <- params.
inline void oewc_consolidate(const MlpSpec& spec, const ParamVector& params, const Batch& task_train,
                             OewcState& state, std::size_t n_samples, FisherMode mode, Rng& rng) {
  detail::require(task_train.size() >= 1, "cannot consolidate on an empty task");
  detail::require(state.fisher.size() == spec.param_count(), "EWC state does not match the model layout");
  const auto ft = estimate_fisher(spec, params, task_train, n_samples, mode, rng);
  for (std::size_t i = 0; i < ft.size(); ++i) state.fisher[i] = state.gamma * state.fisher[i] + ft[i];
  state.anchor = params;
  state.consolidated = true;
}

struct PenaltyAndGrad {
  double penalty = 0.0;
  Gradient grad;
};

/// (lambda/2) * sum_i F_i (theta_i - anchor_i)^2 and its gradient; zero before the first consolidation.
inline PenaltyAndGrad oewc_penalty(const ParamVector& params, const OewcState& state) {
  PenaltyAndGrad out{0.0, Gradient{std::vector<double>(params.size(), 0.0)}};
  if (!state.consolidated) return out;
  detail::require(params.size() == state.anchor.size() && params.size() == state.fisher.size(),
                  "EWC state does not match the parameter layout");
  double sum = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double d = params.values[i] - state.anchor.values[i];
    sum += state.fisher[i] * d * d;
    out.grad.values[i] = state.lambda * state.fisher[i] * d;
  }
  out.penalty = 0.5 * state.lambda * sum;
  return out;
}

// ---------------------------------------------------------------------------
// Method dispatch
// ---------------------------------------------------------------------------

enum class Method { sgd, oewc, derpp };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::sgd: return "sgd";
    case Method::oewc: return "oewc";
    case Method::derpp: return "derpp";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  if (s == "sgd") return Method::sgd;
  if (s == "oewc") return Method::oewc;
  if (s == "derpp") return Method::derpp;
  throw ContractError("unknown method '" + std::string(s) + "'");
}

struct OewcConfig {
  double lambda = 10.0;
  double gamma = 1.0;
  std::size_t max_fisher_samples = 1024;  // per task: min(task size, this)
  FisherMode fisher = FisherMode::sampled;

  bool operator==(const OewcConfig&) const = default;
};

struct MethodConfig {
  Method method = Method::sgd;
  SgdConfig sgd;
  DerppConfig derpp;
  std::size_t buffer_capacity = 500;
  OewcConfig oewc;
};

struct MethodState {
  OewcState oewc;
  ReplayBuffer buffer;

  static MethodState make(const MethodConfig& cfg, const MlpSpec& spec) {
    MethodState s;
    if (cfg.method == Method::oewc) s.oewc = OewcState::make(spec, cfg.oewc.lambda, cfg.oewc.gamma);
    if (cfg.method == Method::derpp) s.buffer = ReplayBuffer(cfg.buffer_capacity);
    return s;
  }
};

/// One gradient step of the configured method on the fast weights. Returns the
/// total loss that produced the step.
inline double method_step(const MethodConfig& cfg, const MlpSpec& spec, ParamVector& params, const Batch& batch,
                          MethodState& state, Rng& rng) {
  switch (cfg.method) {
    case Method::sgd: {
      auto [loss, grad] = backward(spec, params, batch);
      params = sgd_step(params, grad, cfg.sgd);
      return loss;
    }
    case Method::oewc: {
      auto [loss, grad] = backward(spec, params, batch);
      if (state.oewc.consolidated) {
        auto pen = oewc_penalty(params, state.oewc);
        loss += pen.penalty;
        grad += pen.grad;
      }
      params = sgd_step(params, grad, cfg.sgd);
      return loss;
    }
    case Method::derpp: {
      auto res = derpp_loss(spec, params, batch, state.buffer, cfg.derpp, rng);
      params = sgd_step(params, res.grad, cfg.sgd);
      for (std::size_t r = 0; r < batch.size(); ++r) {
        const auto x = batch.inputs.row(r);
        const auto z = res.current_logits.row(r);
        state.buffer.insert({{x.begin(), x.end()}, batch.labels[r], {z.begin(), z.end()}}, rng);
      }
      return res.loss;
    }
  }
  return 0.0;
}

/// Hook run between tasks with the finished task's training data.
inline void method_end_task(const MethodConfig& cfg, const MlpSpec& spec, const ParamVector& params,
                            const Batch& task_train, MethodState& state, Rng& rng) {
  if (cfg.method != Method::oewc) return;
  const std::size_t n = std::min(task_train.size(), cfg.oewc.max_fisher_samples);
  oewc_consolidate(spec, params, task_train, state.oewc, n, cfg.oewc.fisher, rng);
}

}  // namespace mcl
