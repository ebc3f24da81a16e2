#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "mcl/mcl.hpp"

namespace mcl::testing {

/// Largest |a-b| / max(1, |a|, |b|) over all coordinates.
inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

struct GradCase {
  MlpSpec spec;
  ParamVector params;
  Batch batch;
};

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Matrix m(r, c);
  for (auto& v : m.data) v = n(rng);
  return m;
}

/// Smallest |pre-activation| over hidden layers; central differences are only
/// meaningful away from ReLU kinks.
inline double min_hidden_preact(const MlpSpec& spec, const ParamVector& p, const Matrix& x) {
  const auto cache = forward_cached(spec, p, x);
  double m = INFINITY;
  for (std::size_t l = 0; l + 1 < cache.pre.size(); ++l)
    for (double v : cache.pre[l].data) m = std::min(m, std::abs(v));
  return m;
}

/// Random network (every dimension <= 16), parameters and batch.
inline GradCase random_grad_case(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> n_layers(1, 3), dim(1, 16), out(2, 16), bs(1, 8);
  std::bernoulli_distribution use_relu(0.5);
  std::vector<std::size_t> dims{dim(rng)};
  const auto hidden = n_layers(rng) - 1;
  for (std::size_t h = 0; h < hidden; ++h) dims.push_back(dim(rng));
  dims.push_back(out(rng));
  MlpSpec spec(dims, use_relu(rng) ? Activation::relu : Activation::tanh);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ParamVector p{std::vector<double>(spec.param_count())};
  for (auto& v : p.values) v = u(rng);
  const std::size_t n = bs(rng);
  Batch b;
  std::uniform_int_distribution<std::size_t> lab(0, spec.n_classes() - 1);
  do {
    b.inputs = random_matrix(n, spec.input_dim(), rng);
  } while (spec.activation() == Activation::relu && min_hidden_preact(spec, p, b.inputs) < 1e-3);
  b.labels.clear();
  for (std::size_t i = 0; i < n; ++i) b.labels.push_back(lab(rng));
  return {spec, p, b};
}

/// Small synthetic experiment that runs in well under a second.
inline ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.name = "tiny";
  SyntheticSource s;
  s.n_classes = 8;
  s.input_dim = 6;
  s.n_train_per_class = 30;
  s.n_test_per_class = 10;
  s.class_sep = 3.0;
  s.noise = 1.0;
  s.seed = 5;
  c.data = s;
  c.split.n_tasks = 3;
  c.split.classes_per_task = 2;
  c.split.seed = 3;
  c.split.stream_classes = {0, 1, 2, 3, 4, 5};
  c.pretrain.classes = {6, 7};
  c.pretrain.epochs = 3;
  c.pretrain.learning_rate = 0.05;
  c.pretrain.seed = 9;
  c.model.hidden = {12};
  c.epochs_per_task = 2;
  c.batch_size = 8;
  c.learning_rate = 0.05;
  c.buffer_capacity = 20;
  c.derpp.replay_batch = 8;
  c.tau = 0.9;
  c.seeds = {1, 2};
  c.lr_grid = {0.05, 0.01};
  c.tau_grid = {0.9, 0.5};
  return c;
}

}  // namespace mcl::testing

#include <boost/math/distributions/chi_squared.hpp>

namespace mcl::testing {

/// Upper-tail p-value of a chi-square statistic.
inline double chi2_pvalue(double stat, double dof) {
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared(dof), stat));
}

/// Per-item reservoir inclusion counts over `trials` independent streams.
inline std::vector<double> reservoir_inclusion_counts(std::size_t capacity, std::size_t stream, std::size_t trials,
                                                      std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> counts(stream, 0.0);
  for (std::size_t t = 0; t < trials; ++t) {
    ReplayBuffer buf(capacity);
    for (std::size_t i = 0; i < stream; ++i) buf.insert({{static_cast<double>(i)}, 0, {0.0}}, rng);
    for (const auto& e : buf.entries()) counts[static_cast<std::size_t>(e.input[0])] += 1.0;
  }
  return counts;
}

/// Goodness of fit of inclusion counts to probability capacity/stream. Inclusion
/// indicators within one trial sum to `capacity`, so each item count has variance
/// N p (1-p) with correlation -1/(n-1) between items; rescaling by (n-1)/n makes
/// the statistic chi-square with n-1 degrees of freedom.
inline double inclusion_uniformity_pvalue(const std::vector<double>& counts, std::size_t capacity,
                                          std::size_t trials) {
  const double n = static_cast<double>(counts.size());
  const double p = static_cast<double>(capacity) / n;
  const double expected = static_cast<double>(trials) * p;
  const double var = static_cast<double>(trials) * p * (1.0 - p);
  double stat = 0.0;
  for (double c : counts) stat += (c - expected) * (c - expected) / var;
  return chi2_pvalue(stat * (n - 1.0) / n, n - 1.0);
}

}  // namespace mcl::testing
