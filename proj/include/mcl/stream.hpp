#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "mcl/data.hpp"
#include "mcl/errors.hpp"
#include "mcl/nn.hpp"
#include "mcl/optim.hpp"
#include "mcl/random.hpp"

namespace mcl {

struct SplitConfig {
  std::size_t n_tasks = 5;
  std::size_t classes_per_task = 2;
  double val_fraction = 0.10;
  bool shuffle_classes = true;
  std::uint64_t seed = 0;
  /// Candidate classes for the stream; empty means every class of the dataset.
  std::vector<std::size_t> stream_classes;
  /// Only used when the test split is carved out of a single dataset.
  double test_fraction = 0.2;

  bool operator==(const SplitConfig&) const = default;
};

struct Task {
  std::vector<std::size_t> classes;  // sorted
  std::vector<std::size_t> train;    // indices into TaskStream::train_pool
  std::vector<std::size_t> val;      // indices into TaskStream::train_pool
  std::vector<std::size_t> test;     // indices into TaskStream::test_pool

  bool operator==(const Task&) const = default;
};

/// Ordered class-disjoint tasks over shared, immutable example pools.
struct TaskStream {
  std::shared_ptr<const Dataset> train_pool;
  std::shared_ptr<const Dataset> test_pool;  // may alias train_pool
  std::vector<Task> tasks;

  std::size_t n_tasks() const { return tasks.size(); }
  std::size_t n_classes() const { return train_pool->n_classes; }

  Batch train_batch(std::size_t t) const { return train_pool->gather(tasks.at(t).train); }
  Batch val_batch(std::size_t t) const { return train_pool->gather(tasks.at(t).val); }
  Batch test_batch(std::size_t t) const { return test_pool->gather(tasks.at(t).test); }

  std::vector<std::size_t> covered_classes() const {
    std::vector<std::size_t> all;
    for (const auto& t : tasks) all.insert(all.end(), t.classes.begin(), t.classes.end());
    std::sort(all.begin(), all.end());
    return all;
  }

  friend bool operator==(const TaskStream& a, const TaskStream& b) {
    return a.tasks == b.tasks && *a.train_pool == *b.train_pool && *a.test_pool == *b.test_pool &&
           (a.train_pool == a.test_pool) == (b.train_pool == b.test_pool);
  }
};

namespace detail {

inline std::vector<std::size_t> choose_stream_classes(std::size_t n_classes, const SplitConfig& cfg) {
  detail::require(cfg.n_tasks >= 1 && cfg.classes_per_task >= 1, "split needs tasks and classes per task");
  detail::require(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0, "val_fraction must lie in (0, 1)");
  std::vector<std::size_t> pool = cfg.stream_classes;
  if (pool.empty()) {
    pool.resize(n_classes);
    std::iota(pool.begin(), pool.end(), 0);
  }
  {
    auto sorted = pool;
    std::sort(sorted.begin(), sorted.end());
    detail::require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(),
                    "stream classes contain duplicates");
    detail::require(sorted.back() < n_classes, "stream class outside the dataset's range");
  }
  detail::require(cfg.n_tasks * cfg.classes_per_task <= pool.size(),
                  "not enough classes for n_tasks * classes_per_task");
  if (cfg.shuffle_classes) {
    Rng rng = make_rng(cfg.seed, {stream_tag::split, 0});
    std::shuffle(pool.begin(), pool.end(), rng);
  }
  pool.resize(cfg.n_tasks * cfg.classes_per_task);
  return pool;
}

inline std::vector<std::vector<std::size_t>> group_classes(const std::vector<std::size_t>& order,
                                                           const SplitConfig& cfg) {
  std::vector<std::vector<std::size_t>> groups(cfg.n_tasks);
  for (std::size_t t = 0; t < cfg.n_tasks; ++t) {
    groups[t].assign(order.begin() + static_cast<std::ptrdiff_t>(t * cfg.classes_per_task),
                     order.begin() + static_cast<std::ptrdiff_t>((t + 1) * cfg.classes_per_task));
    std::sort(groups[t].begin(), groups[t].end());
  }
  return groups;
}

// Shuffles idx and moves the first round(fraction * n) entries into `carved`.
inline std::vector<std::size_t> carve(std::vector<std::size_t>& idx, double fraction, Rng& rng) {
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
  std::vector<std::size_t> carved(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n));
  idx.erase(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n));
  std::sort(carved.begin(), carved.end());
  std::sort(idx.begin(), idx.end());
  return carved;
}

}  // namespace detail

/// Partitions classes into consecutive groups of classes_per_task. Validation is
/// carved from each task's training examples; the test split comes from `test`.
inline TaskStream split_tasks(std::shared_ptr<const Dataset> train, std::shared_ptr<const Dataset> test,
                              const SplitConfig& cfg) {
  detail::require(train && test, "split needs datasets");
  train->validate();
  detail::require(test->input_dim() == train->input_dim(), "train and test input widths differ");
  detail::require(test->n_classes <= train->n_classes, "test set has classes the training set lacks");
  const bool shared = train == test;
  const auto order = detail::choose_stream_classes(train->n_classes, cfg);
  const auto groups = detail::group_classes(order, cfg);

  TaskStream s{train, test, {}};
  for (std::size_t t = 0; t < groups.size(); ++t) {
    Task task;
    task.classes = groups[t];
    auto idx = indices_of_classes(*train, task.classes);
    Rng rng = make_rng(cfg.seed, {stream_tag::split, 1, t});
    if (shared) {
      task.test = detail::carve(idx, cfg.test_fraction, rng);
    } else {
      std::vector<std::size_t> in_test;
      for (auto c : task.classes) in_test.push_back(c);
      std::erase_if(in_test, [&](std::size_t c) { return c >= test->n_classes; });
      task.test = indices_of_classes(*test, in_test);
    }
    task.val = detail::carve(idx, cfg.val_fraction, rng);
    task.train = std::move(idx);
    detail::require(!task.train.empty(), "task " + std::to_string(t) + " has no training examples");
    s.tasks.push_back(std::move(task));
  }
  return s;
}

/// Single-dataset form: the test split is carved per task at cfg.test_fraction.
inline TaskStream split_tasks(std::shared_ptr<const Dataset> ds, const SplitConfig& cfg) {
  detail::require(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0, "test_fraction must lie in (0, 1)");
  return split_tasks(ds, ds, cfg);
}

inline TaskStream split_tasks(const Dataset& ds, const SplitConfig& cfg) {
  return split_tasks(std::make_shared<const Dataset>(ds), cfg);
}

// ---------------------------------------------------------------------------
// Data sources
// ---------------------------------------------------------------------------

struct SyntheticSource {
  std::size_t n_classes = 20;
  std::size_t input_dim = 32;
  std::size_t n_train_per_class = 200;
  std::size_t n_test_per_class = 50;
  double class_sep = 3.0;
  double noise = 1.0;
  std::uint64_t seed = 0;

  bool operator==(const SyntheticSource&) const = default;
};

struct IdxSource {
  std::string train_images, train_labels, test_images, test_labels;
  bool operator==(const IdxSource&) const = default;
};

struct CsvSource {
  std::string train_path, test_path;  // empty test_path: carve test from train
  int label_column = -1;
  bool operator==(const CsvSource&) const = default;
};

using DataSource = std::variant<SyntheticSource, IdxSource, CsvSource>;

struct LoadedData {
  std::shared_ptr<const Dataset> train;
  std::shared_ptr<const Dataset> test;  // aliases train when the source has no test part
};

inline LoadedData load_source(const DataSource& src) {
  return std::visit(
      [](const auto& s) -> LoadedData {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, SyntheticSource>) {
          auto tr = std::make_shared<const Dataset>(make_synthetic_gaussians(
              s.n_classes, s.input_dim, s.n_train_per_class, s.class_sep, s.noise, s.seed, 0));
          auto te = std::make_shared<const Dataset>(make_synthetic_gaussians(
              s.n_classes, s.input_dim, s.n_test_per_class, s.class_sep, s.noise, s.seed, 1));
          return {tr, te};
        } else if constexpr (std::is_same_v<T, IdxSource>) {
          auto tr = std::make_shared<const Dataset>(load_idx(s.train_images, s.train_labels));
          auto te = std::make_shared<const Dataset>(load_idx(s.test_images, s.test_labels));
          return {tr, te};
        } else {
          auto tr = std::make_shared<const Dataset>(load_csv(s.train_path, s.label_column));
          if (s.test_path.empty()) return {tr, tr};
          return {tr, std::make_shared<const Dataset>(load_csv(s.test_path, s.label_column))};
        }
      },
      src);
}

inline TaskStream build_stream(const LoadedData& data, const SplitConfig& cfg) {
  if (data.train == data.test) return split_tasks(data.train, cfg);
  return split_tasks(data.train, data.test, cfg);
}

// ---------------------------------------------------------------------------
// JSON encoding (config files, manifests)
// ---------------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const SplitConfig& c) {
  j = {{"n_tasks", c.n_tasks},
       {"classes_per_task", c.classes_per_task},
       {"val_fraction", c.val_fraction},
       {"shuffle_classes", c.shuffle_classes},
       {"seed", c.seed},
       {"stream_classes", c.stream_classes},
       {"test_fraction", c.test_fraction}};
}

inline void from_json(const nlohmann::json& j, SplitConfig& c) {
  c.n_tasks = j.value("n_tasks", c.n_tasks);
  c.classes_per_task = j.value("classes_per_task", c.classes_per_task);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.shuffle_classes = j.value("shuffle_classes", c.shuffle_classes);
  c.seed = j.value("seed", c.seed);
  c.stream_classes = j.value("stream_classes", c.stream_classes);
  c.test_fraction = j.value("test_fraction", c.test_fraction);
}

inline void to_json(nlohmann::json& j, const DataSource& src) {
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, SyntheticSource>) {
          j = {{"kind", "synthetic"},          {"n_classes", s.n_classes},
               {"input_dim", s.input_dim},     {"n_train_per_class", s.n_train_per_class},
               {"n_test_per_class", s.n_test_per_class}, {"class_sep", s.class_sep},
               {"noise", s.noise},             {"seed", s.seed}};
        } else if constexpr (std::is_same_v<T, IdxSource>) {
          j = {{"kind", "idx"},
               {"train_images", s.train_images},
               {"train_labels", s.train_labels},
               {"test_images", s.test_images},
               {"test_labels", s.test_labels}};
        } else {
          j = {{"kind", "csv"}, {"train", s.train_path}, {"test", s.test_path}, {"label_column", s.label_column}};
        }
      },
      src);
}

inline void from_json(const nlohmann::json& j, DataSource& src) {
  const auto kind = j.value("kind", std::string("synthetic"));
  if (kind == "synthetic") {
    SyntheticSource s;
    s.n_classes = j.value("n_classes", s.n_classes);
    s.input_dim = j.value("input_dim", s.input_dim);
    s.n_train_per_class = j.value("n_train_per_class", s.n_train_per_class);
    s.n_test_per_class = j.value("n_test_per_class", s.n_test_per_class);
    s.class_sep = j.value("class_sep", s.class_sep);
    s.noise = j.value("noise", s.noise);
    s.seed = j.value("seed", s.seed);
    src = s;
  } else if (kind == "idx") {
    src = IdxSource{j.at("train_images").get<std::string>(), j.at("train_labels").get<std::string>(),
                    j.at("test_images").get<std::string>(), j.at("test_labels").get<std::string>()};
  } else if (kind == "csv") {
    src = CsvSource{j.at("train").get<std::string>(), j.value("test", std::string()), j.value("label_column", -1)};
  } else {
    throw ConfigError("unknown data source kind '" + kind + "'");
  }
}

// ---------------------------------------------------------------------------
// Stream manifest
// ---------------------------------------------------------------------------

inline constexpr const char* kManifestFormat = "mcl-stream-manifest";

/// Everything needed to rebuild a stream: source, split config and the
/// resulting per-task class sets and split sizes (kept as a cross-check).
inline nlohmann::json stream_manifest(const DataSource& src, const SplitConfig& cfg, const TaskStream& s) {
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& t : s.tasks)
    tasks.push_back({{"classes", t.classes}, {"n_train", t.train.size()}, {"n_val", t.val.size()},
                     {"n_test", t.test.size()}});
  return {{"format", kManifestFormat},
          {"version", 1},
          {"source", src},
          {"split", cfg},
          {"validation", "per_task"},
          {"task_il_aggregation", "macro"},
          {"class_il_head", "all_units"},
          {"tasks", tasks}};
}

namespace detail {

inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace detail

inline void save_manifest(const std::filesystem::path& path, const DataSource& src, const SplitConfig& cfg,
                          const TaskStream& s) {
  detail::write_atomic(path, stream_manifest(src, cfg, s).dump(2) + "\n");
}

struct LoadedStream {
  DataSource source;
  SplitConfig split;
  TaskStream stream;
};

/// Rebuilds a stream from its manifest and checks it against the recorded task layout.
inline LoadedStream load_manifest(const std::filesystem::path& path) {
  const auto j = detail::read_json_file(path);
  if (j.value("format", std::string()) != kManifestFormat) throw ConfigError(path.string() + ": not a stream manifest");
  LoadedStream out{j.at("source").get<DataSource>(), j.at("split").get<SplitConfig>(), {}};
  out.stream = build_stream(load_source(out.source), out.split);
  const auto& tasks = j.at("tasks");
  if (tasks.size() != out.stream.n_tasks()) throw ConfigError(path.string() + ": task count differs on rebuild");
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const auto& rec = tasks[t];
    const auto& task = out.stream.tasks[t];
    if (rec.at("classes").get<std::vector<std::size_t>>() != task.classes ||
        rec.at("n_train").get<std::size_t>() != task.train.size() ||
        rec.at("n_val").get<std::size_t>() != task.val.size() ||
        rec.at("n_test").get<std::size_t>() != task.test.size())
      throw ConfigError(path.string() + ": task " + std::to_string(t) + " differs on rebuild");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Plain SGD training loops (pretext pretraining, joint reference)
// ---------------------------------------------------------------------------

/// Minibatch SGD on cross-entropy; batches are reshuffled every epoch from rng.
inline ParamVector train_sgd(const MlpSpec& spec, ParamVector params, const Dataset& ds,
                             std::vector<std::size_t> idx, std::size_t epochs, double lr, std::size_t batch_size,
                             Rng& rng) {
  detail::require(batch_size >= 1, "batch size must be positive");
  const SgdConfig sgd{lr};
  if (epochs > 0) sgd.validate();
  for (std::size_t e = 0; e < epochs; ++e) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t start = 0; start < idx.size(); start += batch_size) {
      const std::size_t end = std::min(idx.size(), start + batch_size);
      const auto batch = ds.gather(std::span(idx).subspan(start, end - start));
      auto [loss, grad] = backward(spec, params, batch);
      if (!std::isfinite(loss)) throw NumericalError("non-finite loss during SGD training");
      params = sgd_step(params, grad, sgd);
    }
  }
  return params;
}

/// Pretrains a fresh network on a pretext dataset; the result serves as the
/// pretrained initialization for the continual stream.
inline ParamVector pretext_pretrain(const MlpSpec& spec, const Dataset& pretext, std::size_t epochs, double lr,
                                    std::uint64_t seed, std::size_t batch_size = 32) {
  detail::require(pretext.input_dim() == spec.input_dim(), "pretext data does not match the model input");
  ParamVector params = init_params(spec, seed);
  std::vector<std::size_t> idx(pretext.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_rng(seed, {stream_tag::pretrain});
  return train_sgd(spec, std::move(params), pretext, std::move(idx), epochs, lr, batch_size, rng);
}

}  // namespace mcl
