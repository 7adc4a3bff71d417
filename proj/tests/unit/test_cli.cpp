// Copyright 2026 The Sidetune Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <sys/wait.h>

#include <json.hpp>

#include "sidetune/cli.hpp"
#include "sidetune/error.hpp"
#include "sidetune/harness.hpp"
#include "sidetune/tasks.hpp"

using namespace sidetune;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("sidetune_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

json base_config(std::size_t tasks) {
  return json{{"schema_version", 1},
              {"steps_per_task", 5},
              {"batch_size", 8},
              {"sequence",
               {{"family", "permuted"},
                {"num_tasks", tasks},
                {"gaussian", {{"classes", 3}, {"in_dim", 4}, {"train_per_class", 8}, {"val_per_class", 4}}}}},
              {"base", {{"arch", {{"hidden", {6}}, {"features", 4}}}, {"pretrain", {{"steps", 5}}}}}};
}

std::string write(const TempDir& d, const std::string& name, const json& j) {
  const std::string p = d / name;
  std::ofstream(p) << j.dump(2);
  return p;
}

std::set<fs::path> tree(const fs::path& root) {
  std::set<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) files.insert(e.path());
  return files;
}

}  // namespace

TEST_CASE("exit codes follow the error taxonomy") {
  CHECK(exit_code_for(ConfigError("x")) == kExitConfig);
  CHECK(exit_code_for(FormatError("x")) == kExitData);
  CHECK(exit_code_for(NumericError("x")) == kExitNumeric);
  CHECK(exit_code_for(ContractError("x")) == kExitFailure);
  CHECK(exit_code_for(std::runtime_error("x")) == kExitFailure);
  CHECK(exit_code_for(fs::filesystem_error("x", std::error_code())) == kExitData);
}

TEST_CASE("single-task run writes a one-cell table and a manifest") {
  TempDir d("single");
  json c = base_config(1);
  c["strategy"] = {{"kind", "ewc"}, {"ewc", {{"lambda", 1e5}}}};
  const std::string cfg = write(d, "c.json", c);
  const Result r = cli({"run", "--config", cfg, "--out", d / "o"});
  REQUIRE(r.code == 0);
  const auto rows = parse_results_csv(slurp(d / "o/results.csv"));
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].task_trained == 1);
  CHECK(rows[0].task_evaled == 1);
  const json m = json::parse(slurp(d / "o/manifest.json"));
  CHECK(m["status"] == "complete");
  CHECK(m["config"]["strategy"]["ewc"]["lambda"].get<double>() == 100000.0);
  CHECK(m["config"]["strategy"]["ewc"]["lambda"].dump().rfind("100000", 0) == 0);
  CHECK(m["steps_per_task"] == 5);
  CHECK(fs::exists(d / "o/checkpoint.stnt"));
  for (const auto& p : tree(d / "o")) CHECK(p.extension() != ".tmp");
}

TEST_CASE("runs are deterministic and replayable from the manifest") {
  TempDir d("replay");
  json c = base_config(3);
  c["strategy"] = {{"kind", "sidetune"}};
  c["rigidity"] = true;
  const std::string cfg = write(d, "c.json", c);
  REQUIRE(cli({"run", "--config", cfg, "--seed", "7", "--out", d / "a"}).code == 0);
  REQUIRE(cli({"run", "--config", cfg, "--seed", "7", "--out", d / "b"}).code == 0);
  const std::string a = slurp(d / "a/results.csv");
  CHECK(a == slurp(d / "b/results.csv"));
  REQUIRE(cli({"run", "--config", cfg, "--seed", "8", "--out", d / "c"}).code == 0);
  CHECK(a != slurp(d / "c/results.csv"));

  const json m = json::parse(slurp(d / "a/manifest.json"));
  CHECK(m["seed"] == 7);
  const std::string replay = write(d, "replay.json", m["config"]);
  REQUIRE(cli({"run", "--config", replay, "--out", d / "r"}).code == 0);
  CHECK(slurp(d / "r/results.csv") == a);

  const auto rows = parse_results_csv(a);
  CHECK(rows.size() == 6 + 3);
  for (const auto& row : rows) {
    if (row.metric_kind == kRigidityKind) CHECK(row.value == 0.0);
  }
}

TEST_CASE("invalid configurations exit with code 2 and a diagnostic") {
  TempDir d("invalid");
  json c = base_config(1);
  c["strategy"] = {{"kind", "sidetune"}, {"merge", {{"kind", "blend"}}}};
  Result r = cli({"run", "--config", write(d, "c.json", c), "--out", d / "o"});
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("/strategy/merge/kind") != std::string::npos);
  CHECK_FALSE(fs::exists(d / "o/results.csv"));

  r = cli({"run", "--config", d / "missing.json"});
  CHECK(r.code == kExitConfig);
  CHECK_FALSE(r.err.empty());

  CHECK(cli({"run"}).code == kExitConfig);
  CHECK(cli({"bogus"}).code == kExitConfig);
  CHECK(cli({"run", "--config", d / "c.json", "--jobs", "x"}).code == kExitConfig);
  CHECK(cli({"--help"}).code == kExitOk);
}

TEST_CASE("compare writes per-run rows and a summary") {
  TempDir d("compare");
  json c = base_config(2);
  c["seeds"] = {1, 2};
  c["methods"] = json::array({{{"name", "side"}, {"strategy", {{"kind", "sidetune"}}}},
                              {{"name", "fine"}, {"strategy", {{"kind", "finetune"}}}}});
  const std::string cfg = write(d, "c.json", c);
  const Result r = cli({"compare", "--config", cfg, "--jobs", "2", "--out", d / "o"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("side") != std::string::npos);
  const std::string summary = slurp(d / "o/compare.csv");
  CHECK(summary.rfind("method,avg_rank,mean_forgetting,mean_rigidity,trainable_params\n", 0) == 0);
  const auto rows = parse_results_csv(slurp(d / "o/results.csv"));
  CHECK(rows.size() == 2 * 2 * 3);
  REQUIRE(cli({"compare", "--config", cfg, "--jobs", "1", "--out", d / "p"}).code == 0);
  CHECK(slurp(d / "p/results.csv") == slurp(d / "o/results.csv"));
  CHECK(slurp(d / "p/compare.csv") == summary);
}

TEST_CASE("plot renders results and rejects malformed tables") {
  TempDir d("plot");
  std::ofstream(d / "r.csv") << std::string(kResultsHeader) << "\na,s,1,1,loss,0.5,0,5\n";
  REQUIRE(cli({"plot", d / "r.csv", "--out", d / "p.svg"}).code == 0);
  CHECK(slurp(d / "p.svg").find("<svg") != std::string::npos);
  REQUIRE(cli({"plot", d / "r.csv", "--out", d.path.string()}).code == 0);
  CHECK(fs::exists(d / "results.svg"));

  std::ofstream(d / "bad.csv") << "not,a,results,table\n";
  const Result r = cli({"plot", d / "bad.csv", "--out", d / "bad.svg"});
  CHECK(r.code == kExitData);
  CHECK_FALSE(r.err.empty());
  CHECK(cli({"plot", d / "absent.csv", "--out", d / "x.svg"}).code == kExitData);
}

TEST_CASE("gen-data writes readable idx files") {
  TempDir d("gen");
  json c = base_config(2);
  const std::string cfg = write(d, "c.json", c);
  REQUIRE(cli({"gen-data", "--config", cfg, "--seed", "3", "--out", d / "data"}).code == 0);
  const IdxArray x = read_idx(d / "data/task1-train-inputs.idx");
  const IdxArray y = read_idx(d / "data/task2-val-targets.idx");
  CHECK(x.type == IdxType::f64);
  CHECK(x.dims == std::vector<std::size_t>{24, 4});
  CHECK(x.values.size() == 24 * 4);
  CHECK(y.dims == std::vector<std::size_t>{12});
  for (double v : y.values) CHECK((v >= 0.0 && v < 3.0));
  CHECK(fs::exists(d / "data/sequence.json"));
  for (const auto& p : tree(d.path)) {
    const std::string rel = fs::relative(p, d.path).string();
    CHECK((rel == "c.json" || rel.rfind("data", 0) == 0));
  }
}

TEST_CASE("grad-check passes on the default suite") {
  const Result r = cli({"grad-check", "--seeds", "3"});
  CHECK(r.code == 0);
  CHECK(r.out.find("grad-check passed: 18 cases x 3 seeds") != std::string::npos);
}

TEST_CASE("the installed tool reports exit codes to the shell") {
  TempDir d("tool");
  std::ofstream(d / "bad.json") << "{\"schema_version\": 1, \"sead\": 1}";
  const std::string cmd = std::string("\"") + SIDETUNE_TOOL + "\" run --config \"" + (d / "bad.json") +
                          "\" > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == kExitConfig);
}
