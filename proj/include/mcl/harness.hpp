#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mcl/config.hpp"
#include "mcl/eval.hpp"
#include "mcl/methods.hpp"
#include "mcl/nn.hpp"
#include "mcl/optim.hpp"
#include "mcl/stream.hpp"

namespace mcl {

/// Data, stream and pretrained weights shared by every run of one config.
struct ExperimentContext {
  LoadedData data;
  TaskStream stream;
  MlpSpec spec;
  ParamVector theta_pre;
};

inline ExperimentContext prepare(const ExperimentConfig& cfg) {
  cfg.validate();
  auto data = load_source(cfg.data);
  auto stream = build_stream(data, cfg.split);
  auto spec = cfg.mlp_spec(data.train->input_dim(), data.train->n_classes);
  ParamVector theta_pre;
  if (cfg.pretrain.classes.empty()) {
    theta_pre = init_params(spec, cfg.pretrain.seed);
  } else {
    const auto idx = indices_of_classes(*data.train, cfg.pretrain.classes);
    auto b = data.train->gather(idx);
    Dataset pretext{std::move(b.inputs), std::move(b.labels), data.train->n_classes};
    theta_pre = pretext_pretrain(spec, pretext, cfg.pretrain.epochs, cfg.pretrain.learning_rate, cfg.pretrain.seed,
                                 cfg.batch_size);
  }
  return {std::move(data), std::move(stream), std::move(spec), std::move(theta_pre)};
}

/// Everything one (config, seed) run produced.
struct RunRecord {
  ExperimentConfig config;
  std::uint64_t seed = 0;
  std::string status = "ok";  // "ok" or "failed"
  std::string error;
  int error_code = 0;  // CLI exit code class of the failure

  AccuracyMatrix class_il;
  AccuracyMatrix task_il;
  double final_class_il = 0.0;
  double final_task_il = 0.0;
  double forgetting_class_il = 0.0;
  double forgetting_task_il = 0.0;
  double val_class_il = 0.0;
  double val_task_il = 0.0;
  std::uint64_t gradient_steps = 0;
  std::optional<std::uint64_t> mcl_step_count;
  std::vector<std::vector<double>> loss_traces;  // per task, per gradient step
  double wall_seconds = 0.0;

  std::vector<ParamVector> checkpoints;  // evaluated weights after each task, if requested

  bool ok() const { return status == "ok"; }

  /// Equality of everything a rerun must reproduce (wall time excluded).
  bool same_metrics(const RunRecord& o) const {
    return status == o.status && class_il == o.class_il && task_il == o.task_il &&
           final_class_il == o.final_class_il && final_task_il == o.final_task_il &&
           forgetting_class_il == o.forgetting_class_il && forgetting_task_il == o.forgetting_task_il &&
           val_class_il == o.val_class_il && val_task_il == o.val_task_il && gradient_steps == o.gradient_steps &&
           mcl_step_count == o.mcl_step_count && loss_traces == o.loss_traces;
  }
};

namespace detail {

inline std::string run_context(std::size_t task, std::size_t epoch, std::size_t step) {
  return "task " + std::to_string(task) + ", epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
         ": ";
}

}  // namespace detail

/// The continual training loop: tasks in order, epochs within a task, shuffled
/// batches within an epoch. Each batch takes one method step on the fast weights
/// and, with momentum enabled, one slow-weight observation. Evaluation after each
/// task uses the slow weights when momentum is enabled.
inline RunRecord run_experiment(const ExperimentContext& ctx, const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  const auto& spec = ctx.spec;
  const auto& stream = ctx.stream;
  const std::size_t n_tasks = stream.n_tasks();

  RunRecord rec;
  rec.config = cfg;
  rec.seed = seed;

  const MethodConfig mcfg = cfg.method_config();
  MethodState mstate = MethodState::make(mcfg, spec);
  Rng method_rng = make_rng(seed, {stream_tag::method});

  ParamVector fast = ctx.theta_pre;
  std::optional<MclState> mcl;
  if (cfg.momentum) mcl = MclState::start(ctx.theta_pre, cfg.tau, cfg.update_freq, cfg.restart_freq);

  std::vector<std::vector<std::optional<double>>> hist_class(n_tasks), hist_task(n_tasks);
  ParamVector eval_params;

  for (std::size_t t = 0; t < n_tasks; ++t) {
    const auto& task = stream.tasks[t];
    std::vector<double> trace;
    std::size_t step_in_task = 0;
    for (std::size_t e = 0; e < cfg.epochs_per_task; ++e) {
      std::vector<std::size_t> order = task.train;
      Rng shuffle_rng = make_rng(seed, {stream_tag::shuffle, t, e});
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++step_in_task) {
        const std::size_t end = std::min(order.size(), start + cfg.batch_size);
        const auto batch = stream.train_pool->gather(std::span(order).subspan(start, end - start));
        double loss = 0.0;
        try {
          loss = method_step(mcfg, spec, fast, batch, mstate, method_rng);
        } catch (const ContractError& ex) {
          throw ContractError(detail::run_context(t, e, step_in_task) + ex.what());
        }
        if (!std::isfinite(loss) || !all_finite(fast.values))
          throw NumericalError(detail::run_context(t, e, step_in_task) + "non-finite training loss");
        trace.push_back(loss);
        ++rec.gradient_steps;
        if (mcl) mcl_observe_step(*mcl, fast);
      }
    }
    rec.loss_traces.push_back(std::move(trace));

    if (t + 1 < n_tasks) method_end_task(mcfg, spec, fast, stream.train_batch(t), mstate, method_rng);

    eval_params = mcl ? mcl_finalize(*mcl) : fast;
    for (std::size_t j = 0; j < n_tasks; ++j) {
      hist_class[t].push_back(task_accuracy(spec, eval_params, stream, j, EvalProtocol::class_il));
      hist_task[t].push_back(task_accuracy(spec, eval_params, stream, j, EvalProtocol::task_il));
    }
    if (cfg.save_checkpoints) rec.checkpoints.push_back(eval_params);
  }

  rec.class_il = build_accuracy_matrix(hist_class, n_tasks);
  rec.task_il = build_accuracy_matrix(hist_task, n_tasks);
  rec.final_class_il = eval_class_il(spec, eval_params, stream, n_tasks - 1);
  rec.final_task_il = eval_task_il(spec, eval_params, stream, n_tasks - 1);
  rec.forgetting_class_il = forgetting(rec.class_il);
  rec.forgetting_task_il = forgetting(rec.task_il);
  rec.val_class_il = eval_class_il(spec, eval_params, stream, n_tasks - 1, Split::val);
  rec.val_task_il = eval_task_il(spec, eval_params, stream, n_tasks - 1, Split::val);
  if (mcl) rec.mcl_step_count = mcl->step_count;
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return rec;
}

inline RunRecord run_experiment(const ExperimentConfig& cfg, std::uint64_t seed) {
  return run_experiment(prepare(cfg), cfg, seed);
}

/// Exit-code class of an exception: 1 config, 2 data ingestion, 3 numerical, 4 other.
inline int error_code_of(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ContractError*>(&e)) return 1;
  if (dynamic_cast<const IngestError*>(&e)) return 2;
  if (dynamic_cast<const NumericalError*>(&e)) return 3;
  return 4;
}

/// Like run_experiment but a failure becomes a record instead of an exception.
inline RunRecord run_or_record_failure(const ExperimentContext& ctx, const ExperimentConfig& cfg,
                                       std::uint64_t seed) {
  try {
    return run_experiment(ctx, cfg, seed);
  } catch (const std::exception& e) {
    RunRecord rec;
    rec.config = cfg;
    rec.seed = seed;
    rec.status = "failed";
    rec.error = e.what();
    rec.error_code = error_code_of(e);
    return rec;
  }
}

/// Number of gradient steps a run must take.
inline std::uint64_t expected_gradient_steps(const TaskStream& s, const ExperimentConfig& cfg) {
  std::uint64_t n = 0;
  for (const auto& t : s.tasks) n += cfg.epochs_per_task * ((t.train.size() + cfg.batch_size - 1) / cfg.batch_size);
  return n;
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

struct GridRow {
  double lr = 0.0;
  std::optional<double> tau;  // absent when momentum is disabled
  double score = 0.0;
  bool ok = true;
  std::string error;
};

struct GridResult {
  double best_lr = 0.0;
  std::optional<double> best_tau;
  double best_score = 0.0;
  std::vector<GridRow> table;
};

/// Runs the whole stream at every (lr, tau) grid point with the first seed and
/// picks the best final validation accuracy under `protocol`. Ties go to the
/// smaller lr, then the smaller tau. Failed points stay in the table.
inline GridResult grid_search(const ExperimentContext& ctx, const ExperimentConfig& cfg,
                              EvalProtocol protocol = EvalProtocol::class_il) {
  if (cfg.lr_grid.empty()) throw ConfigError("grid search needs a non-empty lr grid");
  if (cfg.momentum && cfg.tau_grid.empty()) throw ConfigError("grid search needs a non-empty tau grid");
  auto lrs = cfg.lr_grid;
  auto taus = cfg.tau_grid;
  std::sort(lrs.begin(), lrs.end());
  std::sort(taus.begin(), taus.end());
  const std::uint64_t seed = cfg.seeds.front();

  GridResult res;
  bool found = false;
  for (double lr : lrs) {
    const std::vector<std::optional<double>> tau_points =
        cfg.momentum ? std::vector<std::optional<double>>(taus.begin(), taus.end())
                     : std::vector<std::optional<double>>{std::nullopt};
    for (const auto& tau : tau_points) {
      ExperimentConfig point = cfg;
      point.learning_rate = lr;
      if (tau) point.tau = *tau;
      GridRow row{lr, tau, 0.0, true, {}};
      const auto rec = run_or_record_failure(ctx, point, seed);
      if (rec.ok()) {
        row.score = protocol == EvalProtocol::class_il ? rec.val_class_il : rec.val_task_il;
        if (!found || row.score > res.best_score) {
          res.best_score = row.score;
          res.best_lr = lr;
          res.best_tau = tau;
          found = true;
        }
      } else {
        row.ok = false;
        row.score = std::nan("");
        row.error = rec.error;
      }
      res.table.push_back(std::move(row));
    }
  }
  if (!found) throw NumericalError("every grid point failed");
  return res;
}

inline GridResult grid_search(const ExperimentConfig& cfg, EvalProtocol protocol = EvalProtocol::class_il) {
  return grid_search(prepare(cfg), cfg, protocol);
}

/// Applies a grid result to a config.
inline ExperimentConfig with_selection(ExperimentConfig cfg, const GridResult& g) {
  cfg.learning_rate = g.best_lr;
  if (g.best_tau) cfg.tau = *g.best_tau;
  return cfg;
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

enum class Knob { tau, restart_freq, update_freq };

inline std::string_view to_string(Knob k) {
  switch (k) {
    case Knob::tau: return "tau";
    case Knob::restart_freq: return "restart_freq";
    case Knob::update_freq: return "update_freq";
  }
  return "?";
}

inline Knob parse_knob(std::string_view s) {
  if (s == "tau") return Knob::tau;
  if (s == "restart_freq" || s == "restart") return Knob::restart_freq;
  if (s == "update_freq" || s == "update") return Knob::update_freq;
  throw ConfigError("unknown ablation knob '" + std::string(s) + "'");
}

/// Knob value; nullopt means "absent" (only meaningful for restart_freq).
using KnobValue = std::optional<double>;

/// Sweep values: the config's tau grid, or the frequency ladders.
inline std::vector<KnobValue> default_knob_values(Knob k, const ExperimentConfig& cfg) {
  switch (k) {
    case Knob::restart_freq: return {std::nullopt, 1.0, 10.0, 100.0};
    case Knob::update_freq: return {1.0, 10.0, 100.0};
    case Knob::tau: return {cfg.tau_grid.begin(), cfg.tau_grid.end()};
  }
  return {};
}

inline std::string knob_value_label(const KnobValue& v) {
  if (!v) return "absent";
  std::ostringstream os;
  os << *v;
  return os.str();
}

inline KnobValue parse_knob_value(const std::string& s) {
  if (s == "absent" || s == "none") return std::nullopt;
  double v = 0.0;
  if (!detail::parse_double(s, v)) throw ConfigError("bad knob value '" + s + "'");
  return v;
}

inline ExperimentConfig with_knob(ExperimentConfig cfg, Knob k, const KnobValue& v) {
  auto as_count = [](const KnobValue& x) -> std::uint64_t {
    if (!x || *x < 1.0 || *x != std::floor(*x)) throw ConfigError("frequency values must be positive integers");
    return static_cast<std::uint64_t>(*x);
  };
  switch (k) {
    case Knob::tau:
      if (!v) throw ConfigError("tau cannot be absent");
      cfg.tau = *v;
      break;
    case Knob::restart_freq:
      cfg.restart_freq = v ? std::optional<std::uint64_t>(as_count(v)) : std::nullopt;
      break;
    case Knob::update_freq:
      cfg.update_freq = as_count(v);
      break;
  }
  return cfg;
}

struct AblationRow {
  std::string value;
  std::uint64_t seed = 0;
  std::string method;
  double class_il = 0.0;
  double task_il = 0.0;
  bool ok = true;
  std::string error;
  RunRecord record;
};

/// One run per (value, seed) with everything else fixed.
inline std::vector<AblationRow> ablation_sweep(const ExperimentContext& ctx, const ExperimentConfig& cfg, Knob knob,
                                               const std::vector<KnobValue>& values) {
  if (!cfg.momentum) throw ConfigError("ablation sweeps require momentum to be enabled");
  std::vector<AblationRow> rows;
  for (const auto& v : values) {
    const auto point = with_knob(cfg, knob, v);
    for (auto seed : cfg.seeds) {
      AblationRow row{knob_value_label(v), seed, cfg.method_label(), 0, 0, true, {}, {}};
      row.record = run_or_record_failure(ctx, point, seed);
      row.ok = row.record.ok();
      row.error = row.record.error;
      row.class_il = row.record.final_class_il;
      row.task_il = row.record.final_task_il;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Reference baselines
// ---------------------------------------------------------------------------

struct BaselineResult {
  double zero_shot = 0.0;
  double joint_lr = 0.0;
  std::vector<double> joint;  // one entry per seed
  std::vector<GridRow> joint_grid;
};

/// Zero-shot accuracy of the pretrained weights and the joint-training upper bound.
/// The joint learning rate is picked on validation with the first seed.
inline BaselineResult run_baselines(const ExperimentContext& ctx, const ExperimentConfig& cfg) {
  BaselineResult out;
  out.zero_shot = zero_shot_eval(ctx.spec, ctx.theta_pre, ctx.stream);
  auto lrs = cfg.lr_grid;
  if (lrs.empty()) lrs.push_back(cfg.learning_rate);
  std::sort(lrs.begin(), lrs.end());
  bool found = false;
  double best = 0.0;
  for (double lr : lrs) {
    GridRow row{lr, std::nullopt, 0.0, true, {}};
    try {
      row.score = joint_train_eval(ctx.spec, ctx.theta_pre, ctx.stream, cfg.epochs_per_task, lr, cfg.batch_size,
                                   cfg.seeds.front(), Split::val);
      if (!found || row.score > best) {
        best = row.score;
        out.joint_lr = lr;
        found = true;
      }
    } catch (const std::exception& e) {
      row.ok = false;
      row.score = std::nan("");
      row.error = e.what();
    }
    out.joint_grid.push_back(row);
  }
  if (!found) throw NumericalError("joint training failed at every learning rate");
  for (auto seed : cfg.seeds)
    out.joint.push_back(
        joint_train_eval(ctx.spec, ctx.theta_pre, ctx.stream, cfg.epochs_per_task, out.joint_lr, cfg.batch_size, seed));
  return out;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json matrix_to_json(const AccuracyMatrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : m.values) {
    nlohmann::json r = nlohmann::json::array();
    for (const auto& v : row) r.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
    rows.push_back(r);
  }
  return rows;
}

inline AccuracyMatrix matrix_from_json(const nlohmann::json& j) {
  AccuracyMatrix m;
  for (const auto& row : j) {
    std::vector<std::optional<double>> r;
    for (const auto& v : row) r.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
    m.values.push_back(std::move(r));
  }
  return m;
}

inline std::string fmt_exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline nlohmann::json record_to_json(const RunRecord& r) {
  return {{"format", "mcl-run-record"},
          {"version", 1},
          {"config", r.config},
          {"seed", r.seed},
          {"status", r.status},
          {"error", r.error},
          {"error_code", r.error_code},
          {"metrics",
           {{"final_class_il", r.final_class_il},
            {"final_task_il", r.final_task_il},
            {"forgetting_class_il", r.forgetting_class_il},
            {"forgetting_task_il", r.forgetting_task_il},
            {"val_class_il", r.val_class_il},
            {"val_task_il", r.val_task_il},
            {"gradient_steps", r.gradient_steps},
            {"mcl_step_count", r.mcl_step_count ? nlohmann::json(*r.mcl_step_count) : nlohmann::json(nullptr)}}},
          {"class_il_matrix", detail::matrix_to_json(r.class_il)},
          {"task_il_matrix", detail::matrix_to_json(r.task_il)},
          {"loss_traces", r.loss_traces},
          {"wall_seconds", r.wall_seconds}};
}

inline RunRecord record_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string()) != "mcl-run-record") throw ConfigError("not a run record");
  RunRecord r;
  r.config = parse_config(j.at("config"));
  r.seed = j.at("seed").get<std::uint64_t>();
  r.status = j.at("status").get<std::string>();
  r.error = j.value("error", std::string());
  r.error_code = j.value("error_code", 0);
  const auto& m = j.at("metrics");
  r.final_class_il = m.at("final_class_il").get<double>();
  r.final_task_il = m.at("final_task_il").get<double>();
  r.forgetting_class_il = m.at("forgetting_class_il").get<double>();
  r.forgetting_task_il = m.at("forgetting_task_il").get<double>();
  r.val_class_il = m.at("val_class_il").get<double>();
  r.val_task_il = m.at("val_task_il").get<double>();
  r.gradient_steps = m.at("gradient_steps").get<std::uint64_t>();
  if (!m.at("mcl_step_count").is_null()) r.mcl_step_count = m.at("mcl_step_count").get<std::uint64_t>();
  r.class_il = detail::matrix_from_json(j.at("class_il_matrix"));
  r.task_il = detail::matrix_from_json(j.at("task_il_matrix"));
  r.loss_traces = j.at("loss_traces").get<std::vector<std::vector<double>>>();
  r.wall_seconds = j.value("wall_seconds", 0.0);
  return r;
}

/// stage,task,class_il,task_il rows for every present entry.
inline std::string matrix_csv(const RunRecord& r) {
  std::string out = "stage,task,class_il,task_il\n";
  for (std::size_t t = 0; t < r.class_il.n_tasks(); ++t)
    for (std::size_t j = 0; j < r.class_il.values[t].size(); ++j) {
      const auto c = r.class_il.at(t, j);
      const auto k = r.task_il.at(t, j);
      if (!c || !k) continue;
      out += std::to_string(t) + "," + std::to_string(j) + "," + detail::fmt_exact(*c) + "," +
             detail::fmt_exact(*k) + "\n";
    }
  return out;
}

inline std::string record_stem(const RunRecord& r) {
  return r.config.name + "_" + std::string(to_string(r.config.method)) +
         (r.config.method == Method::derpp ? std::to_string(r.config.buffer_capacity) : std::string()) + "_" +
         (r.config.momentum ? "mom" : "nomom") + "_seed" + std::to_string(r.seed);
}

/// Raw little-endian doubles behind an 8-byte tag and a count.
inline void save_params(const std::filesystem::path& path, const ParamVector& p) {
  std::string buf = "MCLPARAM";
  const std::uint64_t n = p.size();
  buf.append(reinterpret_cast<const char*>(&n), sizeof n);
  buf.append(reinterpret_cast<const char*>(p.values.data()), n * sizeof(double));
  detail::write_atomic(path, buf);
}

inline ParamVector load_params(const std::filesystem::path& path) {
  const auto raw = detail::read_all(path.string());
  if (raw.size() < 16 || std::memcmp(raw.data(), "MCLPARAM", 8) != 0)
    throw BadMagicError(path.string(), 0, "not a parameter file");
  std::uint64_t n = 0;
  std::memcpy(&n, raw.data() + 8, sizeof n);
  if (raw.size() != 16 + n * sizeof(double)) throw TruncatedFileError(path.string(), raw.size(), "size mismatch");
  ParamVector p{std::vector<double>(n)};
  std::memcpy(p.values.data(), raw.data() + 16, n * sizeof(double));
  return p;
}

struct RecordPaths {
  std::filesystem::path record;
  std::filesystem::path matrix;
  std::vector<std::filesystem::path> checkpoints;
};

/// Writes <stem>.record.json, <stem>.matrix.csv and any checkpoints, each atomically.
inline RecordPaths write_record(const RunRecord& r, const std::filesystem::path& dir) {
  const auto stem = record_stem(r);
  RecordPaths p{dir / (stem + ".record.json"), dir / (stem + ".matrix.csv"), {}};
  detail::write_atomic(p.record, record_to_json(r).dump(2) + "\n");
  if (r.ok()) detail::write_atomic(p.matrix, matrix_csv(r));
  for (std::size_t t = 0; t < r.checkpoints.size(); ++t) {
    p.checkpoints.push_back(dir / (stem + ".stage" + std::to_string(t) + ".params"));
    save_params(p.checkpoints.back(), r.checkpoints[t]);
  }
  return p;
}

inline RunRecord read_record(const std::filesystem::path& path) { return record_from_json(detail::read_json_file(path)); }

}  // namespace mcl
