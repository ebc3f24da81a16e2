#include <gtest/gtest.h>

#include <memory>
#include <random>
#include <vector>

#include "mcl/eval.hpp"
#include "test_util.hpp"

using namespace mcl;

namespace {

/// Stream whose train, val and test splits all hold every example of the task's classes.
TaskStream manual_stream(Dataset ds, const std::vector<std::vector<std::size_t>>& classes) {
  auto pool = std::make_shared<const Dataset>(std::move(ds));
  TaskStream s{pool, pool, {}};
  for (const auto& c : classes) {
    const auto idx = indices_of_classes(*pool, c);
    s.tasks.push_back({c, idx, idx, idx});
  }
  return s;
}

/// One-hot inputs e_label, one row per label.
Dataset one_hot(const std::vector<std::size_t>& labels, std::size_t n_classes) {
  Dataset ds{Matrix(labels.size(), n_classes, 0.0), labels, n_classes};
  for (std::size_t r = 0; r < labels.size(); ++r) ds.inputs(r, labels[r]) = 1.0;
  return ds;
}

/// Bias-free linear model with logits W x.
ParamVector linear(const std::vector<std::vector<double>>& w) {
  ParamVector p;
  for (const auto& row : w) p.values.insert(p.values.end(), row.begin(), row.end());
  p.values.resize(p.values.size() + w.size(), 0.0);
  return p;
}

std::vector<std::size_t> balanced_labels(std::size_t classes, std::size_t per_class) {
  std::vector<std::size_t> y;
  for (std::size_t c = 0; c < classes; ++c) y.insert(y.end(), per_class, c);
  return y;
}

}  // namespace

TEST(Eval, SaturatedCorrectModelScoresHundred) {
  const auto s = manual_stream(one_hot(balanced_labels(6, 3), 6), {{0, 1}, {2, 3}, {4, 5}});
  MlpSpec spec({6, 6});
  std::vector<std::vector<double>> w(6, std::vector<double>(6, 0.0));
  for (std::size_t k = 0; k < 6; ++k) w[k][k] = 100.0;
  const auto p = linear(w);
  EXPECT_EQ(eval_class_il(spec, p, s, 2), 100.0);
  EXPECT_EQ(eval_task_il(spec, p, s, 2), 100.0);
}

TEST(Eval, ZeroParametersFollowTieBreak) {
  const auto s = manual_stream(one_hot(balanced_labels(10, 4), 10), {{0, 1}, {2, 3}, {4, 5}, {6, 7}, {8, 9}});
  MlpSpec spec({10, 5, 10});
  const ParamVector zero{std::vector<double>(spec.param_count(), 0.0)};
  EXPECT_EQ(eval_class_il(spec, zero, s, 4), 10.0);
  // Masked to two classes, the lower one always wins.
  EXPECT_EQ(eval_task_il(spec, zero, s, 4), 50.0);
}

TEST(Eval, HandComputedFixture) {
  // Three examples of task {0, 1}; the model predicts class 0 for everything.
  Dataset ds{Matrix(3, 1, 1.0), {0, 0, 1}, 2};
  const auto s = manual_stream(ds, {{0, 1}});
  MlpSpec spec({1, 2});
  const ParamVector p{{1.0, 0.0, 0.0, 0.0}};
  EXPECT_NEAR(eval_class_il(spec, p, s, 0), 200.0 / 3.0, 1e-12);
  EXPECT_NEAR(eval_task_il(spec, p, s, 0), 200.0 / 3.0, 1e-12);
}

TEST(Eval, MaskingRecoversWithinTaskPrediction) {
  // Class 3 dominates every logit row, but within task {0, 1} class 1 beats class 0.
  const auto s = manual_stream(one_hot({1, 1, 2, 3}, 4), {{0, 1}, {2, 3}});
  MlpSpec spec({4, 4});
  const auto p = linear({{0, 0, 0, 0}, {1, 1, 1, 1}, {0, 0, 0, 0}, {5, 5, 5, 5}});
  EXPECT_EQ(task_accuracy(spec, p, s, 0, EvalProtocol::class_il), 0.0);
  EXPECT_EQ(task_accuracy(spec, p, s, 0, EvalProtocol::task_il), 100.0);
  EXPECT_EQ(task_accuracy(spec, p, s, 1, EvalProtocol::task_il), 50.0);
  EXPECT_NEAR(eval_class_il(spec, p, s, 1), 25.0, 1e-12);
  EXPECT_NEAR(eval_task_il(spec, p, s, 1), 75.0, 1e-12);
}

TEST(Eval, TaskIlIsMacroAveraged) {
  // Task 0 has one example (wrong), task 1 has three (all right). With unequal
  // task sizes the macro Task-IL figure can sit below the micro Class-IL one.
  const auto s = manual_stream(one_hot({0, 2, 2, 2}, 4), {{0, 1}, {2, 3}});
  MlpSpec spec({4, 4});
  const auto p = linear({{0, 0, 0, 0}, {1, 1, 1, 1}, {2, 2, 2, 2}, {0, 0, 0, 0}});
  EXPECT_EQ(eval_task_il(spec, p, s, 1), 50.0);
  EXPECT_EQ(eval_class_il(spec, p, s, 1), 75.0);
}

TEST(Eval, SingleTaskProtocolsAgreeWhenHeadIsTheTask) {
  Dataset ds = make_synthetic_gaussians(3, 4, 20, 2.0, 1.0, 1);
  const auto s = manual_stream(ds, {{0, 1, 2}});
  MlpSpec spec({4, 6, 3});
  const auto p = init_params(spec, 2);
  EXPECT_EQ(eval_class_il(spec, p, s, 0), eval_task_il(spec, p, s, 0));
}

TEST(Eval, PerTaskDominanceOnUnbalancedStreams) {
  // Holds pointwise for every task whatever the split sizes.
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    SplitConfig cfg;
    cfg.n_tasks = 2 + rng() % 3;
    cfg.classes_per_task = 2;
    cfg.seed = rng();
    auto ds = make_synthetic_gaussians(cfg.n_tasks * 2, 3, 8 + rng() % 10, 1.0, 1.0, rng());
    // Drop a random prefix of examples so classes are unevenly represented.
    const std::size_t drop = rng() % 4;
    ds.inputs.data.erase(ds.inputs.data.begin(), ds.inputs.data.begin() + static_cast<std::ptrdiff_t>(drop * 3));
    ds.inputs.rows -= drop;
    ds.labels.erase(ds.labels.begin(), ds.labels.begin() + static_cast<std::ptrdiff_t>(drop));
    const auto s = split_tasks(ds, cfg);
    MlpSpec spec({3, 5, cfg.n_tasks * 2});
    const auto p = init_params(spec, rng());
    for (std::size_t t = 0; t < s.n_tasks(); ++t)
      EXPECT_GE(task_accuracy(spec, p, s, t, EvalProtocol::task_il),
                task_accuracy(spec, p, s, t, EvalProtocol::class_il));
  }
}

TEST(Eval, AggregateDominanceOnBalancedStreams) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    SplitConfig cfg;
    cfg.n_tasks = 1 + rng() % 4;
    cfg.classes_per_task = 1 + rng() % 3;
    cfg.seed = rng();
    const std::size_t classes = cfg.n_tasks * cfg.classes_per_task + rng() % 3;
    const std::size_t dim = 1 + rng() % 6;
    auto train = std::make_shared<const Dataset>(make_synthetic_gaussians(classes, dim, 10, 1.5, 1.0, rng()));
    auto test = std::make_shared<const Dataset>(make_synthetic_gaussians(classes, dim, 4, 1.5, 1.0, rng(), 1));
    const auto s = split_tasks(train, test, cfg);
    MlpSpec spec({dim, 1 + rng() % 8, classes}, rng() % 2 ? Activation::relu : Activation::tanh);
    ParamVector p = init_params(spec, rng());
    std::normal_distribution<double> n(0.0, 2.0);
    for (auto& v : p.values) v += n(rng);
    for (std::size_t t = 0; t < s.n_tasks(); ++t) EXPECT_GE(eval_task_il(spec, p, s, t), eval_class_il(spec, p, s, t));
  }
}

TEST(Eval, ValidationSplitIsSeparate) {
  Dataset ds = one_hot({0, 0, 1, 1}, 2);
  auto pool = std::make_shared<const Dataset>(ds);
  TaskStream s{pool, pool, {{{0, 1}, {0}, {1, 2}, {0, 3}}}};
  MlpSpec spec({2, 2});
  const auto p = linear({{1, 0}, {0, 1}});
  EXPECT_EQ(eval_class_il(spec, p, s, 0, Split::test), 100.0);
  EXPECT_EQ(eval_class_il(spec, p, s, 0, Split::val), 100.0);
  const auto wrong = linear({{0, 1}, {1, 0}});
  EXPECT_EQ(eval_class_il(spec, wrong, s, 0, Split::val), 0.0);
}

TEST(Eval, RejectsOutOfRangeTask) {
  const auto s = manual_stream(one_hot({0, 1}, 2), {{0, 1}});
  MlpSpec spec({2, 2});
  EXPECT_THROW(eval_class_il(spec, init_params(spec, 0), s, 1), ContractError);
}

// ----------------------------------------------------------------------------- accuracy matrix

TEST(AccuracyMatrix, FullHistory) {
  const auto m = build_accuracy_matrix({{80, 10}, {60, 90}}, 2);
  EXPECT_EQ(m.at(1, 0), 60.0);
  EXPECT_EQ(m.at(0, 1), 10.0);
}

TEST(AccuracyMatrix, PartialRowsKeepUpperTriangleEmpty) {
  const auto m = build_accuracy_matrix({{80}, {60, 90}}, 2);
  EXPECT_FALSE(m.at(0, 1).has_value());
  EXPECT_EQ(forgetting(m), 20.0);
}

TEST(AccuracyMatrix, MissingEntriesAreIncomplete) {
  EXPECT_THROW(build_accuracy_matrix({{80}}, 2), IncompleteMatrixError);
  EXPECT_THROW(build_accuracy_matrix({{80}, {60}}, 2), IncompleteMatrixError);
  EXPECT_THROW(build_accuracy_matrix({{std::nullopt}, {60, 90}}, 2), IncompleteMatrixError);
  EXPECT_THROW(build_accuracy_matrix({{120}}, 1), ContractError);
}

TEST(AccuracyMatrix, RecomputedFromCheckpoints) {
  // The matrix is a pure function of the per-stage weights.
  Dataset ds = make_synthetic_gaussians(4, 3, 15, 2.0, 1.0, 5);
  SplitConfig cfg;
  cfg.n_tasks = 2;
  const auto s = split_tasks(ds, cfg);
  MlpSpec spec({3, 4, 4});
  const std::vector<ParamVector> stages{init_params(spec, 1), init_params(spec, 2)};
  std::vector<std::vector<std::optional<double>>> hist(2);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t j = 0; j <= t; ++j) hist[t].push_back(task_accuracy(spec, stages[t], s, j, EvalProtocol::class_il));
  const auto m = build_accuracy_matrix(hist, 2);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t j = 0; j <= t; ++j)
      EXPECT_EQ(*m.at(t, j), task_accuracy(spec, stages[t], s, j, EvalProtocol::class_il));
}

TEST(Forgetting, Examples) {
  EXPECT_EQ(forgetting(build_accuracy_matrix({{80, 0}, {60, 90}}, 2)), 20.0);
  EXPECT_EQ(forgetting(build_accuracy_matrix({{50}}, 1)), 0.0);
  // The peak may come from an intermediate stage.
  const auto m = build_accuracy_matrix({{40}, {70, 60}, {55, 80, 90}}, 3);
  EXPECT_DOUBLE_EQ(forgetting(m), 7.5);
}

// ----------------------------------------------------------------------------- reference bounds

class Bounds : public ::testing::Test {
 protected:
  TaskStream stream;
  MlpSpec spec{{4, 8, 6}};
  ParamVector pre;

  void SetUp() override {
    auto train = std::make_shared<const Dataset>(make_synthetic_gaussians(6, 4, 40, 3.0, 1.0, 6));
    auto test = std::make_shared<const Dataset>(make_synthetic_gaussians(6, 4, 10, 3.0, 1.0, 6, 1));
    SplitConfig cfg;
    cfg.n_tasks = 3;
    stream = split_tasks(train, test, cfg);
    pre = init_params(spec, 7);
  }
};

TEST_F(Bounds, ZeroShotIsClassIlOfPretrainedWeights) {
  EXPECT_EQ(zero_shot_eval(spec, pre, stream), eval_class_il(spec, pre, stream, 2));
}

TEST_F(Bounds, JointBeatsZeroShot) {
  EXPECT_GE(joint_train_eval(spec, pre, stream, 5, 0.1, 16, 1), zero_shot_eval(spec, pre, stream));
}

TEST_F(Bounds, JointIsDeterministic) {
  EXPECT_EQ(joint_train(spec, pre, stream, 2, 0.1, 16, 3), joint_train(spec, pre, stream, 2, 0.1, 16, 3));
}

TEST_F(Bounds, JointWithZeroEpochsIsZeroShot) {
  EXPECT_EQ(joint_train(spec, pre, stream, 0, 0.1, 16, 3), pre);
  EXPECT_EQ(joint_train_eval(spec, pre, stream, 0, 0.1, 16, 3), zero_shot_eval(spec, pre, stream));
}
