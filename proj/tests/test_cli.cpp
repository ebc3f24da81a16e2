#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include "mcl/mcl.hpp"
#include "test_util.hpp"

using namespace mcl;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("mcl_test_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

/// Runs the CLI with stdout/stderr captured to a file; returns the exit status.
int cli(const std::string& args, std::string* output = nullptr) {
  const auto log = fs::temp_directory_path() / ("mcl_test_cli_" + std::to_string(::getpid()) + ".log");
  const std::string cmd = std::string(MCL_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) {
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    *output = ss.str();
  }
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path write_config(const fs::path& dir, const nlohmann::json& j) {
  const auto p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

nlohmann::json tiny_json() { return nlohmann::json(mcl::testing::tiny_config()); }

std::string read_first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

}  // namespace

TEST(Cli, RunWritesRecordAndMatrix) {
  const auto dir = scratch_dir("run");
  const auto cfg = write_config(dir, tiny_json());
  const auto out = dir / "out";
  std::string log;
  ASSERT_EQ(cli("run --config " + cfg.string() + " --seed 1 --out " + out.string() +
                    " --method derpp --momentum --tau 0.8 --lr 0.04 --buffer 12",
                &log),
            0)
      << log;
  const auto record = out / "tiny_derpp12_mom_seed1.record.json";
  ASSERT_TRUE(fs::exists(record)) << log;
  EXPECT_EQ(read_first_line(out / "tiny_derpp12_mom_seed1.matrix.csv"), "stage,task,class_il,task_il");
  EXPECT_TRUE(fs::exists(out / "stream.manifest.json"));
  const auto rec = read_record(record);
  EXPECT_EQ(rec.config.method, Method::derpp);
  EXPECT_TRUE(rec.config.momentum);
  EXPECT_EQ(rec.config.tau, 0.8);
  EXPECT_EQ(rec.config.learning_rate, 0.04);
  EXPECT_EQ(rec.config.buffer_capacity, 12u);
  // The persisted snapshot reruns to the same metrics in process.
  EXPECT_TRUE(run_experiment(rec.config, rec.seed).same_metrics(rec));
}

TEST(Cli, MultipleSeedsAndGenericOverrides) {
  const auto dir = scratch_dir("seeds");
  const auto cfg = write_config(dir, tiny_json());
  std::string log;
  ASSERT_EQ(cli("run --config " + cfg.string() + " --seed 3,4 --out " + dir.string() +
                    " --momentum=false --set split.n_tasks=2 --set name=two",
                &log),
            0)
      << log;
  EXPECT_TRUE(fs::exists(dir / "two_sgd_nomom_seed3.record.json"));
  const auto rec = read_record(dir / "two_sgd_nomom_seed4.record.json");
  EXPECT_EQ(rec.config.split.n_tasks, 2u);
  EXPECT_EQ(rec.class_il.n_tasks(), 2u);
}

TEST(Cli, ConfigErrorsExitOne) {
  const auto dir = scratch_dir("config");
  std::ofstream(dir / "broken.json") << "{ not json";
  EXPECT_EQ(cli("run --config " + (dir / "broken.json").string() + " --out " + dir.string()), 1);
  const auto cfg = write_config(dir, tiny_json());
  EXPECT_EQ(cli("run --config " + cfg.string() + " --tau 2 --out " + dir.string()), 1);
  EXPECT_EQ(cli("run --config " + cfg.string() + " --method adam --out " + dir.string()), 1);
  EXPECT_EQ(cli("run --config " + cfg.string() + " --set momentum.restart_freq=0 --out " + dir.string()), 1);
  EXPECT_EQ(cli("run --config " + (dir / "missing.json").string()), 1);
  EXPECT_EQ(cli("frobnicate"), 1);
  EXPECT_EQ(cli(""), 1);
}

TEST(Cli, MissingDataExitsTwo) {
  const auto dir = scratch_dir("ingest");
  auto j = tiny_json();
  j["data"] = {{"kind", "idx"},
               {"train_images", (dir / "nope-img").string()},
               {"train_labels", (dir / "nope-lab").string()},
               {"test_images", (dir / "nope-img").string()},
               {"test_labels", (dir / "nope-lab").string()}};
  EXPECT_EQ(cli("run --config " + write_config(dir, j).string() + " --out " + dir.string()), 2);
}

TEST(Cli, NumericalFailureExitsThreeAndKeepsRecord) {
  const auto dir = scratch_dir("numerical");
  const auto cfg = write_config(dir, tiny_json());
  EXPECT_EQ(cli("run --config " + cfg.string() + " --lr 1e300 --seed 1 --out " + dir.string()), 3);
  const auto rec = read_record(dir / "tiny_sgd_nomom_seed1.record.json");
  EXPECT_EQ(rec.status, "failed");
  EXPECT_FALSE(fs::exists(dir / "tiny_sgd_nomom_seed1.matrix.csv"));
}

TEST(Cli, GridThenRunSelectedConfig) {
  const auto dir = scratch_dir("grid");
  const auto cfg = write_config(dir, tiny_json());
  std::string log;
  ASSERT_EQ(cli("grid --config " + cfg.string() + " --momentum --out " + dir.string(), &log), 0) << log;
  EXPECT_EQ(read_first_line(dir / "grid.csv"), "lr,tau,status,val_score");
  const auto selected = load_config(dir / "selected.config.json");
  EXPECT_TRUE(selected.momentum);
  ASSERT_EQ(cli("run --config " + (dir / "selected.config.json").string() + " --seed 1 --out " + dir.string(), &log),
            0)
      << log;
}

TEST(Cli, AblateWritesOneRowPerValueAndSeed) {
  const auto dir = scratch_dir("ablate");
  const auto cfg = write_config(dir, tiny_json());
  std::string log;
  ASSERT_EQ(cli("ablate --config " + cfg.string() + " --momentum --knob restart_freq --values absent,5 --out " +
                    dir.string(),
                &log),
            0)
      << log;
  std::ifstream in(dir / "ablation_restart_freq.csv");
  std::string line;
  std::size_t rows = 0;
  std::getline(in, line);
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 2u * 2u);
  EXPECT_EQ(cli("ablate --config " + cfg.string() + " --knob tau --out " + dir.string()), 1);  // momentum off
}

TEST(Cli, ReportAggregatesRecords) {
  const auto dir = scratch_dir("report");
  const auto cfg = write_config(dir, tiny_json());
  std::string log;
  ASSERT_EQ(cli("run --config " + cfg.string() + " --out " + (dir / "runs").string(), &log), 0) << log;
  ASSERT_EQ(cli("report " + (dir / "runs").string() + " --out " + dir.string(), &log), 0) << log;
  EXPECT_EQ(read_first_line(dir / "summary.csv"), "method,momentum,protocol,mean,std,n");
  std::ifstream in(dir / "summary.txt");
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(ss.str() + "2 records, 0 failed\n", log);
  EXPECT_EQ(cli("report " + (dir / "empty-nowhere").string()), 1);
}

TEST(Cli, Baselines) {
  const auto dir = scratch_dir("baselines");
  const auto cfg = write_config(dir, tiny_json());
  std::string log;
  ASSERT_EQ(cli("baselines --config " + cfg.string() + " --out " + dir.string(), &log), 0) << log;
  std::ifstream in(dir / "baselines.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j.at("joint").size(), 2u);
  EXPECT_GE(j.at("joint_mean").get<double>(), j.at("zero_shot").get<double>());
}

TEST(Cli, ShippedConfigIsTheDeskBenchmark) {
  const fs::path shipped = fs::path(MCL_SOURCE_DIR) / "configs" / "desk_benchmark.json";
  EXPECT_EQ(load_config(shipped), desk_benchmark_config());
  std::string log;
  ASSERT_EQ(cli("show-config", &log), 0);
  EXPECT_EQ(parse_config(nlohmann::json::parse(log)), desk_benchmark_config());
}
