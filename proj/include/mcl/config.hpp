#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mcl/errors.hpp"
#include "mcl/methods.hpp"
#include "mcl/nn.hpp"
#include "mcl/stream.hpp"

namespace mcl {

struct ModelConfig {
  std::vector<std::size_t> hidden{64};
  Activation activation = Activation::relu;

  bool operator==(const ModelConfig&) const = default;
};

/// Pretext phase producing the pretrained weights. No classes means the stream
/// starts from a plain random initialization.
struct PretrainConfig {
  std::vector<std::size_t> classes;
  std::size_t epochs = 10;
  double learning_rate = 0.05;
  std::uint64_t seed = 0;

  bool operator==(const PretrainConfig&) const = default;
};

/// One file fully determines an experiment.
struct ExperimentConfig {
  std::string name = "experiment";
  DataSource data = SyntheticSource{};
  SplitConfig split;
  PretrainConfig pretrain;
  ModelConfig model;

  Method method = Method::sgd;
  std::size_t buffer_capacity = 500;
  DerppConfig derpp;
  OewcConfig oewc;

  bool momentum = false;
  double tau = 0.999;
  std::uint64_t update_freq = 1;
  std::optional<std::uint64_t> restart_freq;

  double learning_rate = 1e-2;
  std::size_t epochs_per_task = 10;
  std::size_t batch_size = 32;

  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<double> lr_grid{1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7};
  std::vector<double> tau_grid{0.995, 0.997, 0.999, 0.9995, 0.9997, 0.9999};

  std::string output_dir = "runs";
  bool save_checkpoints = false;

  MlpSpec mlp_spec(std::size_t input_dim, std::size_t n_classes) const {
    std::vector<std::size_t> dims{input_dim};
    dims.insert(dims.end(), model.hidden.begin(), model.hidden.end());
    dims.push_back(n_classes);
    return MlpSpec(std::move(dims), model.activation);
  }

  MethodConfig method_config() const {
    MethodConfig m;
    m.method = method;
    m.sgd.learning_rate = learning_rate;
    m.derpp = derpp;
    m.buffer_capacity = buffer_capacity;
    m.oewc = oewc;
    return m;
  }

  /// "sgd", "oewc" or "derpp(<buffer>)".
  std::string method_label() const {
    std::string s(to_string(method));
    if (method == Method::derpp) s += "(" + std::to_string(buffer_capacity) + ")";
    return s;
  }

  void validate() const {
    auto check = [](bool ok, const std::string& what) {
      if (!ok) throw ConfigError(what);
    };
    check(learning_rate > 0.0, "learning_rate must be positive");
    check(epochs_per_task >= 1, "epochs_per_task must be at least 1");
    check(batch_size >= 1, "batch_size must be at least 1");
    check(tau >= 0.0 && tau <= 1.0, "tau must lie in [0, 1]");
    check(update_freq >= 1, "update_freq must be at least 1");
    check(!restart_freq || *restart_freq >= 1, "restart_freq must be at least 1");
    check(!seeds.empty(), "at least one seed is required");
    check(method != Method::derpp || buffer_capacity >= 1, "derpp needs a positive buffer capacity");
    check(derpp.alpha_distill >= 0.0 && derpp.beta_replay >= 0.0 && derpp.replay_batch >= 1,
          "invalid derpp settings");
    check(oewc.lambda >= 0.0 && oewc.gamma >= 0.0 && oewc.gamma <= 1.0 && oewc.max_fisher_samples >= 1,
          "invalid oewc settings");
    for (auto h : model.hidden) check(h >= 1, "hidden layer widths must be positive");
    check(split.val_fraction > 0.0 && split.val_fraction < 1.0, "val_fraction must lie in (0, 1)");
    check(split.n_tasks >= 1 && split.classes_per_task >= 1, "split needs tasks and classes per task");
    for (double lr : lr_grid) check(lr > 0.0, "lr_grid entries must be positive");
    for (double t : tau_grid) check(t >= 0.0 && t <= 1.0, "tau_grid entries must lie in [0, 1]");
  }

  bool operator==(const ExperimentConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{
      {"name", c.name},
      {"data", c.data},
      {"split", c.split},
      {"pretrain",
       {{"classes", c.pretrain.classes},
        {"epochs", c.pretrain.epochs},
        {"learning_rate", c.pretrain.learning_rate},
        {"seed", c.pretrain.seed}}},
      {"model", {{"hidden", c.model.hidden}, {"activation", to_string(c.model.activation)}}},
      {"method", to_string(c.method)},
      {"buffer_capacity", c.buffer_capacity},
      {"derpp",
       {{"alpha_distill", c.derpp.alpha_distill},
        {"beta_replay", c.derpp.beta_replay},
        {"replay_batch", c.derpp.replay_batch}}},
      {"oewc",
       {{"lambda", c.oewc.lambda},
        {"gamma", c.oewc.gamma},
        {"max_fisher_samples", c.oewc.max_fisher_samples},
        {"fisher", to_string(c.oewc.fisher)}}},
      {"momentum",
       {{"enabled", c.momentum},
        {"tau", c.tau},
        {"update_freq", c.update_freq},
        {"restart_freq", c.restart_freq ? nlohmann::json(*c.restart_freq) : nlohmann::json(nullptr)}}},
      {"learning_rate", c.learning_rate},
      {"epochs_per_task", c.epochs_per_task},
      {"batch_size", c.batch_size},
      {"seeds", c.seeds},
      {"grids", {{"lr", c.lr_grid}, {"tau", c.tau_grid}}},
      {"output_dir", c.output_dir},
      {"save_checkpoints", c.save_checkpoints}};
}

/// Missing keys keep their defaults, so a config file only needs to name what it changes.
inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c.name = j.value("name", c.name);
  if (j.contains("data")) c.data = j.at("data").get<DataSource>();
  if (j.contains("split")) c.split = j.at("split").get<SplitConfig>();
  if (j.contains("pretrain")) {
    const auto& p = j.at("pretrain");
    c.pretrain.classes = p.value("classes", c.pretrain.classes);
    c.pretrain.epochs = p.value("epochs", c.pretrain.epochs);
    c.pretrain.learning_rate = p.value("learning_rate", c.pretrain.learning_rate);
    c.pretrain.seed = p.value("seed", c.pretrain.seed);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    c.model.hidden = m.value("hidden", c.model.hidden);
    if (m.contains("activation")) c.model.activation = parse_activation(m.at("activation").get<std::string>());
  }
  if (j.contains("method")) c.method = parse_method(j.at("method").get<std::string>());
  c.buffer_capacity = j.value("buffer_capacity", c.buffer_capacity);
  if (j.contains("derpp")) {
    const auto& d = j.at("derpp");
    c.derpp.alpha_distill = d.value("alpha_distill", c.derpp.alpha_distill);
    c.derpp.beta_replay = d.value("beta_replay", c.derpp.beta_replay);
    c.derpp.replay_batch = d.value("replay_batch", c.derpp.replay_batch);
  }
  if (j.contains("oewc")) {
    const auto& o = j.at("oewc");
    c.oewc.lambda = o.value("lambda", c.oewc.lambda);
    c.oewc.gamma = o.value("gamma", c.oewc.gamma);
    c.oewc.max_fisher_samples = o.value("max_fisher_samples", c.oewc.max_fisher_samples);
    if (o.contains("fisher")) c.oewc.fisher = parse_fisher_mode(o.at("fisher").get<std::string>());
  }
  if (j.contains("momentum")) {
    const auto& m = j.at("momentum");
    c.momentum = m.value("enabled", c.momentum);
    c.tau = m.value("tau", c.tau);
    c.update_freq = m.value("update_freq", c.update_freq);
    if (m.contains("restart_freq")) {
      const auto& r = m.at("restart_freq");
      c.restart_freq = r.is_null() ? std::nullopt : std::optional<std::uint64_t>(r.get<std::uint64_t>());
    }
  }
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs_per_task = j.value("epochs_per_task", c.epochs_per_task);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seeds = j.value("seeds", c.seeds);
  if (j.contains("grids")) {
    c.lr_grid = j.at("grids").value("lr", c.lr_grid);
    c.tau_grid = j.at("grids").value("tau", c.tau_grid);
  }
  c.output_dir = j.value("output_dir", c.output_dir);
  c.save_checkpoints = j.value("save_checkpoints", c.save_checkpoints);
}

/// Parses a config document; every structural or range problem becomes a ConfigError.
inline ExperimentConfig parse_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be an object");
  static const char* const known[] = {"name", "data", "split", "pretrain", "model", "method", "buffer_capacity",
                                      "derpp", "oewc", "momentum", "learning_rate", "epochs_per_task",
                                      "batch_size", "seeds", "grids", "output_dir", "save_checkpoints"};
  for (const auto& [key, _] : j.items())
    if (std::find(std::begin(known), std::end(known), key) == std::end(known))
      throw ConfigError("unknown config key '" + key + "'");
  ExperimentConfig c;
  try {
    c = j.get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  return parse_config(detail::read_json_file(path));
}

/// The shipped desk-scale benchmark: 20 Gaussian classes in 32 dimensions,
/// classes 10-19 pretrain the network, classes 0-9 arrive as 5 tasks of 2.
inline ExperimentConfig desk_benchmark_config() {
  ExperimentConfig c;
  c.name = "desk";
  SyntheticSource src;
  src.n_classes = 20;
  src.input_dim = 32;
  src.n_train_per_class = 200;
  src.n_test_per_class = 50;
  src.class_sep = 3.0;
  src.noise = 1.0;
  src.seed = 2024;
  c.data = src;
  c.split.n_tasks = 5;
  c.split.classes_per_task = 2;
  c.split.val_fraction = 0.10;
  c.split.shuffle_classes = true;
  c.split.seed = 7;
  c.split.stream_classes = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  c.pretrain.classes = {10, 11, 12, 13, 14, 15, 16, 17, 18, 19};
  c.pretrain.epochs = 10;
  c.pretrain.learning_rate = 0.05;
  c.pretrain.seed = 11;
  c.model.hidden = {64};
  c.model.activation = Activation::relu;
  c.batch_size = 32;
  c.epochs_per_task = 10;
  c.learning_rate = 0.03;
  c.tau = 0.975;
  // About 1500 gradient steps per run, so the slow-weight horizon 1/(1-tau) is
  // scaled down to span a few tasks; see the README.
  c.lr_grid = {0.1, 0.03, 0.01, 0.003, 0.001};
  c.tau_grid = {0.87, 0.92, 0.975, 0.987, 0.992, 0.997};
  return c;
}

}  // namespace mcl
