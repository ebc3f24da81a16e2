#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mcl/errors.hpp"
#include "mcl/nn.hpp"
#include "mcl/stream.hpp"

namespace mcl {

enum class EvalProtocol { class_il, task_il };

inline std::string_view to_string(EvalProtocol p) { return p == EvalProtocol::class_il ? "class_il" : "task_il"; }

enum class Split { val, test };

namespace detail {

inline const std::vector<std::size_t>& split_indices(const Task& t, Split s) { return s == Split::test ? t.test : t.val; }

inline Batch split_batch(const TaskStream& s, std::size_t t, Split which) {
  return which == Split::test ? s.test_batch(t) : s.val_batch(t);
}

struct Count {
  std::size_t correct = 0;
  std::size_t total = 0;
  double percent() const { return total == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(total); }
};

inline Count count_correct(const MlpSpec& spec, const ParamVector& params, const TaskStream& s, std::size_t t,
                           EvalProtocol protocol, Split which) {
  Count c;
  if (split_indices(s.tasks[t], which).empty()) return c;
  const auto batch = split_batch(s, t, which);
  const auto logits = forward(spec, params, batch.inputs);
  const auto& mask = s.tasks[t].classes;
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const auto row = logits.row(r);
    std::size_t pred = 0;
    if (protocol == EvalProtocol::class_il) {
      pred = argmax(row);
    } else {
      // mask is sorted, so a strict comparison keeps the lowest index on ties
      pred = mask.front();
      for (auto k : mask)
        if (row[k] > row[pred]) pred = k;
    }
    c.correct += pred == batch.labels[r];
    ++c.total;
  }
  return c;
}

}  // namespace detail

/// Accuracy (percent) on one task's split under the given protocol.
inline double task_accuracy(const MlpSpec& spec, const ParamVector& params, const TaskStream& s, std::size_t task,
                            EvalProtocol protocol, Split which = Split::test) {
  detail::require(task < s.n_tasks(), "task index out of range");
  return detail::count_correct(spec, params, s, task, protocol, which).percent();
}

/// Percent correct over the union of tasks 0..upto, argmax over every output unit.
inline double eval_class_il(const MlpSpec& spec, const ParamVector& params, const TaskStream& s, std::size_t upto,
                            Split which = Split::test) {
  detail::require(upto < s.n_tasks(), "task index out of range");
  detail::Count total;
  for (std::size_t t = 0; t <= upto; ++t) {
    const auto c = detail::count_correct(spec, params, s, t, EvalProtocol::class_il, which);
    total.correct += c.correct;
    total.total += c.total;
  }
  return total.percent();
}

/// Logits masked to each example's own task classes; macro-averaged over tasks 0..upto.
inline double eval_task_il(const MlpSpec& spec, const ParamVector& params, const TaskStream& s, std::size_t upto,
                           Split which = Split::test) {
  detail::require(upto < s.n_tasks(), "task index out of range");
  double sum = 0.0;
  for (std::size_t t = 0; t <= upto; ++t)
    sum += detail::count_correct(spec, params, s, t, EvalProtocol::task_il, which).percent();
  return sum / static_cast<double>(upto + 1);
}

inline double evaluate(EvalProtocol p, const MlpSpec& spec, const ParamVector& params, const TaskStream& s,
                       std::size_t upto, Split which = Split::test) {
  return p == EvalProtocol::class_il ? eval_class_il(spec, params, s, upto, which)
                                     : eval_task_il(spec, params, s, upto, which);
}

/// values[t][j]: accuracy on task j after training through task t.
struct AccuracyMatrix {
  std::vector<std::vector<std::optional<double>>> values;

  std::size_t n_tasks() const { return values.size(); }
  std::optional<double> at(std::size_t stage, std::size_t task) const { return values.at(stage).at(task); }

  bool operator==(const AccuracyMatrix&) const = default;
};

/// Assembles per-stage evaluation rows; every row t must cover tasks 0..t.
inline AccuracyMatrix build_accuracy_matrix(const std::vector<std::vector<std::optional<double>>>& history,
                                            std::size_t n_tasks) {
  if (history.size() != n_tasks)
    throw IncompleteMatrixError("expected " + std::to_string(n_tasks) + " evaluation stages, got " +
                                std::to_string(history.size()));
  AccuracyMatrix m;
  m.values.resize(n_tasks, std::vector<std::optional<double>>(n_tasks));
  for (std::size_t t = 0; t < n_tasks; ++t) {
    const auto& row = history[t];
    if (row.size() > n_tasks) throw IncompleteMatrixError("stage " + std::to_string(t) + " has too many entries");
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (row[j] && (*row[j] < 0.0 || *row[j] > 100.0))
        throw ContractError("accuracy outside [0, 100] at stage " + std::to_string(t));
      m.values[t][j] = row[j];
    }
    for (std::size_t j = 0; j <= t; ++j)
      if (!m.values[t][j])
        throw IncompleteMatrixError("missing evaluation of task " + std::to_string(j) + " after stage " +
                                    std::to_string(t));
  }
  return m;
}

/// Mean over tasks j < T-1 of the drop from their best accuracy to the final one.
inline double forgetting(const AccuracyMatrix& m) {
  const std::size_t n = m.n_tasks();
  if (n <= 1) return 0.0;
  double sum = 0.0;
  for (std::size_t j = 0; j + 1 < n; ++j) {
    double best = 0.0;
    for (std::size_t t = j; t < n; ++t) {
      const auto v = m.at(t, j);
      if (!v) throw IncompleteMatrixError("forgetting needs the full lower triangle");
      best = std::max(best, *v);
    }
    sum += best - *m.at(n - 1, j);
  }
  return sum / static_cast<double>(n - 1);
}

/// Class-IL accuracy of the untouched pretrained weights on the whole stream.
inline double zero_shot_eval(const MlpSpec& spec, const ParamVector& theta_pre, const TaskStream& s) {
  return eval_class_il(spec, theta_pre, s, s.n_tasks() - 1);
}

/// Trains the pretrained weights IID on the union of all task training splits
/// with the same epoch budget, returning the trained weights.
inline ParamVector joint_train(const MlpSpec& spec, const ParamVector& theta_pre, const TaskStream& s,
                               std::size_t epochs, double lr, std::size_t batch_size, std::uint64_t seed) {
  std::vector<std::size_t> idx;
  for (const auto& t : s.tasks) idx.insert(idx.end(), t.train.begin(), t.train.end());
  Rng rng = make_rng(seed, {stream_tag::joint});
  return train_sgd(spec, theta_pre, *s.train_pool, std::move(idx), epochs, lr, batch_size, rng);
}

inline double joint_train_eval(const MlpSpec& spec, const ParamVector& theta_pre, const TaskStream& s,
                               std::size_t epochs, double lr, std::size_t batch_size, std::uint64_t seed,
                               Split which = Split::test) {
  const auto trained = joint_train(spec, theta_pre, s, epochs, lr, batch_size, seed);
  return eval_class_il(spec, trained, s, s.n_tasks() - 1, which);
}

}  // namespace mcl
