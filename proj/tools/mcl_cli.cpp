// Command-line front end: run, grid, ablate, report, baselines, show-config.
//
// Exit codes: 0 success, 1 config error, 2 data ingestion error, 3 numerical
// failure, 4 anything else (e.g. an unwritable output directory).

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mcl/mcl.hpp"

namespace fs = std::filesystem;
using namespace mcl;

namespace {

/// Flags shared by every subcommand that builds an experiment.
struct Overrides {
  std::string config_path;
  std::string preset = "desk";
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::string method;
  std::optional<bool> momentum;
  std::optional<double> tau;
  std::optional<double> lr;
  std::optional<std::size_t> buffer;
  std::optional<std::uint64_t> update_freq;
  std::string restart_freq;
  std::optional<std::size_t> epochs;
  std::vector<std::string> sets;
};

void add_experiment_flags(CLI::App& app, Overrides& o) {
  app.add_option("--config", o.config_path, "experiment config file (JSON)")->check(CLI::ExistingFile);
  app.add_option("--preset", o.preset, "built-in config used when --config is absent")
      ->check(CLI::IsMember({"desk"}));
  app.add_option("--seed", o.seeds, "seed(s); repeat or separate with commas")->delimiter(',');
  app.add_option("--out", o.out, "output directory");
  app.add_option("--method", o.method, "sgd | oewc | derpp")->check(CLI::IsMember({"sgd", "oewc", "derpp"}));
  app.add_flag("--momentum,!--no-momentum", o.momentum, "wrap the method with slow weights (--momentum=false disables)");
  app.add_option("--tau", o.tau, "slow-weight retention in [0, 1]");
  app.add_option("--lr", o.lr, "learning rate");
  app.add_option("--buffer", o.buffer, "DER++ buffer capacity");
  app.add_option("--update-freq", o.update_freq, "steps between slow-weight updates");
  app.add_option("--restart-freq", o.restart_freq, "steps between restarts, or 'absent'");
  app.add_option("--epochs", o.epochs, "epochs per task");
  app.add_option("--set", o.sets, "override any config key: dotted.path=json-value");
}

/// Writes v at a dotted path, creating intermediate objects.
void set_path(nlohmann::json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;  // bare words are strings
  }
  nlohmann::json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("bad key path '" + path + "'");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    if (!(*node)[key].is_object()) (*node)[key] = nlohmann::json::object();
    node = &(*node)[key];
    start = dot + 1;
  }
}

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig base = o.config_path.empty() ? desk_benchmark_config() : load_config(o.config_path);
  nlohmann::json j = base;
  for (const auto& s : o.sets) set_path(j, s);
  if (!o.seeds.empty()) j["seeds"] = o.seeds;
  if (!o.out.empty()) j["output_dir"] = o.out;
  if (!o.method.empty()) j["method"] = o.method;
  if (o.momentum) j["momentum"]["enabled"] = *o.momentum;
  if (o.tau) j["momentum"]["tau"] = *o.tau;
  if (o.update_freq) j["momentum"]["update_freq"] = *o.update_freq;
  if (!o.restart_freq.empty()) {
    const auto v = parse_knob_value(o.restart_freq);
    if (v && (*v < 1.0 || *v != static_cast<double>(static_cast<std::uint64_t>(*v))))
      throw ConfigError("--restart-freq must be a positive integer or 'absent'");
    j["momentum"]["restart_freq"] = v ? nlohmann::json(static_cast<std::uint64_t>(*v)) : nlohmann::json(nullptr);
  }
  if (o.lr) j["learning_rate"] = *o.lr;
  if (o.buffer) j["buffer_capacity"] = *o.buffer;
  if (o.epochs) j["epochs_per_task"] = *o.epochs;
  return parse_config(j);
}

void print_record(const RunRecord& r) {
  if (!r.ok()) {
    std::printf("%-12s momentum=%-3s seed %-4llu FAILED: %s\n", r.config.method_label().c_str(),
                r.config.momentum ? "yes" : "no", static_cast<unsigned long long>(r.seed), r.error.c_str());
    return;
  }
  std::printf("%-12s momentum=%-3s seed %-4llu class_il %6.2f  task_il %6.2f  forgetting %6.2f  (%.1fs)\n",
              r.config.method_label().c_str(), r.config.momentum ? "yes" : "no",
              static_cast<unsigned long long>(r.seed), r.final_class_il, r.final_task_il, r.forgetting_class_il,
              r.wall_seconds);
}

int cmd_run(const Overrides& o) {
  const auto cfg = resolve(o);
  const auto ctx = prepare(cfg);
  const fs::path out = cfg.output_dir;
  save_manifest(out / "stream.manifest.json", cfg.data, cfg.split, ctx.stream);
  int code = 0;
  for (auto seed : cfg.seeds) {
    const auto rec = run_or_record_failure(ctx, cfg, seed);
    const auto paths = write_record(rec, out);
    print_record(rec);
    if (rec.ok()) std::printf("  -> %s\n", paths.record.string().c_str());
    if (!rec.ok() && code == 0) code = rec.error_code;
  }
  return code;
}

int cmd_grid(const Overrides& o, const std::string& protocol) {
  const auto cfg = resolve(o);
  const auto g = grid_search(prepare(cfg), cfg, protocol == "task_il" ? EvalProtocol::task_il : EvalProtocol::class_il);
  const fs::path out = cfg.output_dir;
  std::string csv = "lr,tau,status,val_score\n";
  for (const auto& row : g.table)
    csv += detail::fmt_exact(row.lr) + "," + (row.tau ? detail::fmt_exact(*row.tau) : std::string("")) + "," +
           (row.ok ? "ok" : "failed") + "," + (row.ok ? detail::fmt_exact(row.score) : std::string("")) + "\n";
  detail::write_atomic(out / "grid.csv", csv);
  const auto selected = with_selection(cfg, g);
  detail::write_atomic(out / "selected.config.json", nlohmann::json(selected).dump(2) + "\n");
  std::printf("%s momentum=%s: best lr %g", cfg.method_label().c_str(), cfg.momentum ? "yes" : "no", g.best_lr);
  if (g.best_tau) std::printf(", tau %g", *g.best_tau);
  std::printf(" (validation %s %.2f) over %zu points\n", protocol.c_str(), g.best_score, g.table.size());
  std::printf("  -> %s\n", (out / "selected.config.json").string().c_str());
  return 0;
}

int cmd_ablate(const Overrides& o, const std::string& knob_name, const std::vector<std::string>& raw_values) {
  auto cfg = resolve(o);
  const auto knob = parse_knob(knob_name);
  std::vector<KnobValue> values;
  for (const auto& v : raw_values) values.push_back(parse_knob_value(v));
  if (values.empty()) values = default_knob_values(knob, cfg);
  const auto rows = ablation_sweep(prepare(cfg), cfg, knob, values);
  const fs::path out = cfg.output_dir;
  for (const auto& r : rows) write_record(r.record, out / (std::string(to_string(knob)) + "_" + r.value));
  detail::write_atomic(out / ("ablation_" + std::string(to_string(knob)) + ".csv"), ablation_csv(rows, knob));
  std::fputs(ablation_table(rows, knob).c_str(), stdout);
  for (const auto& r : rows)
    if (!r.ok) return r.record.error_code;
  return 0;
}

void collect_records(const fs::path& p, std::vector<fs::path>& into) {
  if (fs::is_directory(p)) {
    for (const auto& e : fs::recursive_directory_iterator(p)) {
      const auto name = e.path().filename().string();
      if (e.is_regular_file() && name.size() > 12 && name.ends_with(".record.json")) into.push_back(e.path());
    }
  } else {
    into.push_back(p);
  }
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out_dir) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) collect_records(in, files);
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no record files found");
  std::vector<RunRecord> recs;
  for (const auto& f : files) recs.push_back(read_record(f));
  std::size_t failed = 0;
  const auto cells = summarize(recs, &failed);
  const auto table = summary_table(cells);
  if (!out_dir.empty()) {
    detail::write_atomic(fs::path(out_dir) / "summary.csv", summary_csv(cells));
    detail::write_atomic(fs::path(out_dir) / "summary.txt", table);
  }
  std::fputs(table.c_str(), stdout);
  std::printf("%zu records, %zu failed\n", recs.size(), failed);
  return 0;
}

int cmd_baselines(const Overrides& o) {
  const auto cfg = resolve(o);
  const auto b = run_baselines(prepare(cfg), cfg);
  const auto joint = mean_std(b.joint);
  nlohmann::json j{{"zero_shot", b.zero_shot},
                   {"joint_lr", b.joint_lr},
                   {"joint", b.joint},
                   {"seeds", cfg.seeds},
                   {"joint_mean", joint.mean},
                   {"joint_std", joint.std}};
  detail::write_atomic(fs::path(cfg.output_dir) / "baselines.json", j.dump(2) + "\n");
  std::printf("zero-shot  class_il %s\n", fmt_mean_std(b.zero_shot, 0.0).c_str());
  std::printf("joint      class_il %s  (lr %g)\n", fmt_mean_std(joint.mean, joint.std).c_str(), b.joint_lr);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Slow-weight continual learning experiments"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  Overrides o;
  auto* run = app.add_subcommand("run", "train and evaluate one config over its seeds");
  add_experiment_flags(*run, o);

  auto* grid = app.add_subcommand("grid", "select lr (and tau) on validation with the first seed");
  add_experiment_flags(*grid, o);
  std::string protocol = "class_il";
  grid->add_option("--protocol", protocol, "selection metric")->check(CLI::IsMember({"class_il", "task_il"}));

  auto* ablate = app.add_subcommand("ablate", "sweep one slow-weight knob");
  add_experiment_flags(*ablate, o);
  std::string knob;
  std::vector<std::string> values;
  ablate->add_option("--knob", knob, "tau | restart_freq | update_freq")->required();
  ablate->add_option("--values", values, "comma-separated values ('absent' for no restarts)")->delimiter(',');

  auto* report = app.add_subcommand("report", "aggregate run records into summary tables");
  std::vector<std::string> inputs;
  std::string report_out;
  report->add_option("inputs", inputs, "record files or directories")->required();
  report->add_option("--out", report_out, "directory for summary.csv and summary.txt");

  auto* baselines = app.add_subcommand("baselines", "zero-shot and joint-training reference rows");
  add_experiment_flags(*baselines, o);

  auto* show = app.add_subcommand("show-config", "print the resolved config");
  add_experiment_flags(*show, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*run) return cmd_run(o);
    if (*grid) return cmd_grid(o, protocol);
    if (*ablate) return cmd_ablate(o, knob, values);
    if (*report) return cmd_report(inputs, report_out);
    if (*baselines) return cmd_baselines(o);
    if (*show) {
      std::cout << nlohmann::json(resolve(o)).dump(2) << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return error_code_of(e);
  }
  return 0;
}
