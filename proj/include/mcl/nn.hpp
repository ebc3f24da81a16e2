#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mcl/errors.hpp"
#include "mcl/random.hpp"

namespace mcl {

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

enum class Activation { relu, tanh };

inline std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

inline Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw ContractError("unknown activation '" + std::string(s) + "'");
}

/// Shape of a fully connected network. The last entry is the class count; the
/// head is fixed across all tasks.
class MlpSpec {
 public:
  MlpSpec(std::vector<std::size_t> layer_dims, Activation activation = Activation::relu)
      : dims_(std::move(layer_dims)), activation_(activation) {
    detail::require(dims_.size() >= 2, "MlpSpec needs at least an input and an output dimension");
    for (auto d : dims_) detail::require(d >= 1, "MlpSpec dimensions must be positive");
    offsets_.reserve(dims_.size());
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      offsets_.push_back(off);
      off += dims_[l] * dims_[l + 1] + dims_[l + 1];
    }
    offsets_.push_back(off);
  }

  const std::vector<std::size_t>& dims() const { return dims_; }
  Activation activation() const { return activation_; }
  std::size_t input_dim() const { return dims_.front(); }
  std::size_t n_classes() const { return dims_.back(); }
  std::size_t n_layers() const { return dims_.size() - 1; }
  std::size_t param_count() const { return offsets_.back(); }

  // Layer l stores W (out x in, row-major) followed by b (out).
  std::size_t weight_offset(std::size_t l) const { return offsets_[l]; }
  std::size_t bias_offset(std::size_t l) const { return offsets_[l] + dims_[l] * dims_[l + 1]; }

  bool operator==(const MlpSpec& o) const { return dims_ == o.dims_ && activation_ == o.activation_; }

 private:
  std::vector<std::size_t> dims_;
  Activation activation_;
  std::vector<std::size_t> offsets_;
};

/// Flat parameter vector laid out as described by MlpSpec.
struct ParamVector {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  bool operator==(const ParamVector&) const = default;
};

struct Gradient {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  bool operator==(const Gradient&) const = default;

  Gradient& operator+=(const Gradient& o) {
    detail::require(o.size() == size(), "gradient length mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) values[i] += o.values[i];
    return *this;
  }
};

struct Batch {
  Matrix inputs;
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
};

struct LossAndGrad {
  double loss = 0.0;
  Gradient grad;
};

namespace detail {

inline void check_params(const MlpSpec& spec, const ParamVector& params) {
  require(params.size() == spec.param_count(), "parameter vector does not match the model layout");
}

inline void check_inputs(const MlpSpec& spec, const Matrix& inputs) {
  require(inputs.cols == spec.input_dim(), "input width does not match the model input dimension");
  require(inputs.data.size() == inputs.rows * inputs.cols, "malformed input matrix");
}

inline void check_batch(const MlpSpec& spec, const Batch& batch) {
  check_inputs(spec, batch.inputs);
  require(batch.size() >= 1, "batch must hold at least one example");
  require(batch.inputs.rows == batch.size(), "batch inputs and labels disagree in length");
  for (auto y : batch.labels) require(y < spec.n_classes(), "label outside the model's class range");
}

inline double activate(Activation a, double z) { return a == Activation::relu ? (z > 0.0 ? z : 0.0) : std::tanh(z); }

// Derivative expressed through the pre-activation z and the post-activation h.
inline double activate_grad(Activation a, double z, double h) {
  return a == Activation::relu ? (z > 0.0 ? 1.0 : 0.0) : 1.0 - h * h;
}

}  // namespace detail

/// Per-layer pre-activations and activations retained for backpropagation.
struct ForwardCache {
  std::vector<Matrix> pre;   // pre[l]: output of layer l before the nonlinearity
  std::vector<Matrix> post;  // post[0] = inputs, post[l+1] = activation of pre[l]; last = logits

  const Matrix& logits() const { return post.back(); }
};

inline ForwardCache forward_cached(const MlpSpec& spec, const ParamVector& params, const Matrix& inputs) {
  detail::check_params(spec, params);
  detail::check_inputs(spec, inputs);
  const auto& dims = spec.dims();
  const std::size_t n = inputs.rows;
  ForwardCache cache;
  cache.post.push_back(inputs);
  for (std::size_t l = 0; l < spec.n_layers(); ++l) {
    const std::size_t in = dims[l], out = dims[l + 1];
    const double* w = params.values.data() + spec.weight_offset(l);
    const double* b = params.values.data() + spec.bias_offset(l);
    const Matrix& x = cache.post.back();
    Matrix z(n, out);
    for (std::size_t r = 0; r < n; ++r) {
      const double* xr = x.data.data() + r * in;
      for (std::size_t o = 0; o < out; ++o) {
        const double* wo = w + o * in;
        double acc = b[o];
        for (std::size_t i = 0; i < in; ++i) acc += wo[i] * xr[i];
        z(r, o) = acc;
      }
    }
    const bool hidden = l + 1 < spec.n_layers();
    Matrix h = z;
    if (hidden)
      for (auto& v : h.data) v = detail::activate(spec.activation(), v);
    cache.pre.push_back(std::move(z));
    cache.post.push_back(std::move(h));
  }
  return cache;
}

/// Raw logits, one row per input row.
inline Matrix forward(const MlpSpec& spec, const ParamVector& params, const Matrix& inputs) {
  return std::move(forward_cached(spec, params, inputs).post.back());
}

namespace detail {

inline double log_sum_exp(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace detail

inline void softmax_inplace(std::span<double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (auto& v : z) {
    v = std::exp(v - m);
    s += v;
  }
  for (auto& v : z) v /= s;
}

/// Mean cross-entropy of the softmax of each logit row against its label.
inline double loss_ce(const Matrix& logits, std::span<const std::size_t> labels) {
  detail::require(logits.rows == labels.size(), "logits and labels disagree in length");
  detail::require(logits.rows >= 1, "empty logits");
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows; ++r) {
    detail::require(labels[r] < logits.cols, "label outside the logit range");
    const auto row = logits.row(r);
    total += detail::log_sum_exp(row) - row[labels[r]];
  }
  return total / static_cast<double>(logits.rows);
}

/// Gradient of mean cross-entropy with respect to the logits: (softmax - onehot) / n.
inline Matrix ce_logit_grad(const Matrix& logits, std::span<const std::size_t> labels) {
  Matrix g = logits;
  const double inv_n = 1.0 / static_cast<double>(logits.rows);
  for (std::size_t r = 0; r < g.rows; ++r) {
    auto row = g.row(r);
    softmax_inplace(row);
    row[labels[r]] -= 1.0;
    for (auto& v : row) v *= inv_n;
  }
  return g;
}

/// Pulls a logit-space gradient back through the network.
inline Gradient backprop(const MlpSpec& spec, const ParamVector& params, const ForwardCache& cache,
                         Matrix dlogits) {
  const auto& dims = spec.dims();
  Gradient grad{std::vector<double>(spec.param_count(), 0.0)};
  Matrix delta = std::move(dlogits);
  for (std::size_t l = spec.n_layers(); l-- > 0;) {
    const std::size_t in = dims[l], out = dims[l + 1];
    const Matrix& x = cache.post[l];
    const std::size_t n = x.rows;
    double* gw = grad.values.data() + spec.weight_offset(l);
    double* gb = grad.values.data() + spec.bias_offset(l);
    for (std::size_t r = 0; r < n; ++r) {
      const double* xr = x.data.data() + r * in;
      for (std::size_t o = 0; o < out; ++o) {
        const double d = delta(r, o);
        gb[o] += d;
        double* gwo = gw + o * in;
        for (std::size_t i = 0; i < in; ++i) gwo[i] += d * xr[i];
      }
    }
    if (l == 0) break;
    const double* w = params.values.data() + spec.weight_offset(l);
    const Matrix& zprev = cache.pre[l - 1];
    Matrix next(n, in);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t o = 0; o < out; ++o) {
        const double d = delta(r, o);
        const double* wo = w + o * in;
        for (std::size_t i = 0; i < in; ++i) next(r, i) += d * wo[i];
      }
      for (std::size_t i = 0; i < in; ++i)
        next(r, i) *= detail::activate_grad(spec.activation(), zprev(r, i), x(r, i));
    }
    delta = std::move(next);
  }
  return grad;
}

/// Mean cross-entropy and its exact gradient for one batch.
inline LossAndGrad backward(const MlpSpec& spec, const ParamVector& params, const Batch& batch) {
  detail::check_params(spec, params);
  detail::check_batch(spec, batch);
  auto cache = forward_cached(spec, params, batch.inputs);
  const double loss = loss_ce(cache.logits(), batch.labels);
  auto dlogits = ce_logit_grad(cache.logits(), batch.labels);
  return {loss, backprop(spec, params, cache, std::move(dlogits))};
}

/// Central-difference gradient of the batch loss; the gradient-check oracle.
inline Gradient finite_diff_grad(const MlpSpec& spec, const ParamVector& params, const Batch& batch, double eps) {
  detail::require(eps > 0.0, "finite-difference step must be positive");
  detail::check_params(spec, params);
  detail::check_batch(spec, batch);
  Gradient g{std::vector<double>(params.size())};
  ParamVector probe = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = probe.values[i];
    probe.values[i] = orig + eps;
    const double up = loss_ce(forward(spec, probe, batch.inputs), batch.labels);
    probe.values[i] = orig - eps;
    const double down = loss_ce(forward(spec, probe, batch.inputs), batch.labels);
    probe.values[i] = orig;
    g.values[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
inline ParamVector init_params(const MlpSpec& spec, std::uint64_t seed) {
  ParamVector p{std::vector<double>(spec.param_count(), 0.0)};
  Rng rng = make_rng(seed, {stream_tag::init});
  const auto& dims = spec.dims();
  for (std::size_t l = 0; l < spec.n_layers(); ++l) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(dims[l]));
    std::uniform_real_distribution<double> dist(-scale, scale);
    double* w = p.values.data() + spec.weight_offset(l);
    for (std::size_t k = 0; k < dims[l] * dims[l + 1]; ++k) w[k] = dist(rng);
  }
  return p;
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

/// Index of the largest entry; the lowest index wins ties.
inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace mcl
