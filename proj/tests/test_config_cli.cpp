// Copyright 2026 The rmppi Authors
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


#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "rmppi/cli.hpp"

namespace rmppi {
namespace {

const std::string kConfigDir = RMPPI_CONFIG_DIR;

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("rmppi_cli_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "rmppi_cli");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = parse_and_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(Config, ParsesSectionsAndDefaults) {
  std::istringstream in(
      "[experiment]\nsystem = nonlinear_benchmark\nsteps = 12\n"
      "[sampling]\nsamples = 32\nsigma = 2\n[costs]\ncap = inf\n");
  const ExperimentConfig c = parse_config(in);
  EXPECT_EQ(c.system, "nonlinear_benchmark");
  EXPECT_EQ(c.steps, 12);
  EXPECT_EQ(c.samples, 32);
  EXPECT_EQ(c.sigma, Vector{{2.0}});
  EXPECT_TRUE(std::isinf(c.cap));
  EXPECT_EQ(c.target, Vector({{0.5, 0.0}}));
  EXPECT_EQ(c.resolved_nsp_samples(), 4);
}

TEST(Config, OverridesWinAndAcceptBareKeys) {
  std::istringstream in("[experiment]\ncontroller = mppi\n[rmppi]\nalpha = 5\n");
  const ExperimentConfig c =
      parse_config(in, {"experiment.controller=rmppi", "candidates=6", "alpha=auto"});
  EXPECT_EQ(c.controller, "rmppi");
  EXPECT_EQ(c.candidates, 6);
  EXPECT_EQ(c.resolved_alpha(), c.crash_cost);
}

TEST(Config, UnknownKeyIsNamed) {
  std::istringstream in("[sampling]\nsampels = 3\n");
  try {
    parse_config(in);
    FAIL() << "expected ContractViolation";
  } catch (const ContractViolation& e) {
    EXPECT_NE(std::string(e.what()).find("sampels"), std::string::npos) << e.what();
  }
  ExperimentConfig c;
  EXPECT_THROW(set_config_value(c, "nope", "1"), ContractViolation);
}

TEST(Config, InvalidValuesAreRejected) {
  ExperimentConfig c;
  EXPECT_THROW(set_config_value(c, "samples", "many"), ContractViolation);
  EXPECT_THROW(set_config_value(c, "samples", "3.5"), ContractViolation);
  EXPECT_THROW(set_config_value(c, "lambda", ""), ContractViolation);
  EXPECT_THROW(split_override("novalue"), ContractViolation);
  EXPECT_THROW(split_override("=3"), ContractViolation);
  c = default_config("double_integrator");
  c.noise_multiplier = 0.5;
  EXPECT_THROW(validate(c), ContractViolation);
  c = default_config("double_integrator");
  c.controller = "pid";
  EXPECT_THROW(validate(c), ContractViolation);
}

TEST(Config, EchoRoundTrips) {
  for (const char* file : {"double_integrator.ini", "nonlinear_benchmark.ini"}) {
    const ExperimentConfig c = load_config(kConfigDir + "/" + file, {"kick_step=7", "kick=0.1,0.2"});
    const std::string echo = config_echo(c);
    std::istringstream in(echo);
    EXPECT_EQ(config_echo(parse_config(in)), echo) << file;
  }
}

TEST(Config, ShippedConfigsValidate) {
  for (const char* file : {"double_integrator.ini", "nonlinear_benchmark.ini"}) {
    const ExperimentConfig c = load_config(kConfigDir + "/" + file);
    EXPECT_NO_THROW(validate(c)) << file;
    const SystemPtr model = make_system(c);
    const CostFunction cost = make_cost_function(c, *model);
    EXPECT_TRUE(std::isfinite(cost.lipschitz_q));
    const ControllerSettings s = make_settings(c, *model);
    EXPECT_TRUE(contraction_feedback(s.metric, s.contraction_rate, *model, s.tracking.r).certified)
        << file;
  }
}

TEST(Config, MissingFileIsNamed) {
  try {
    load_config("/nonexistent/x.ini");
    FAIL() << "expected ContractViolation";
  } catch (const ContractViolation& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/x.ini"), std::string::npos);
  }
}

TEST(Cli, SelftestPasses) {
  const CliResult r = cli({"selftest"});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

TEST(Cli, MissingConfigFailsWithPath) {
  const CliResult r = cli({"run", "-c", "/nonexistent/cfg.ini"});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("/nonexistent/cfg.ini"), std::string::npos) << r.err;
}

TEST(Cli, UnknownSubcommandFails) {
  EXPECT_NE(cli({"fly"}).code, 0);
  EXPECT_NE(cli({}).code, 0);
}

TEST(Cli, RunWritesOutputsAndVerifies) {
  const auto dir = scratch("run");
  const CliResult r = cli({"run", "-c", kConfigDir + "/double_integrator.ini", "--out", dir.string(),
                           "--name", "short", "-o", "steps=40", "samples=64", "horizon=20",
                           "controller=rmppi", "--seed", "9"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto run_dir = dir / "short";
  const std::string ini = slurp(run_dir / "config.ini");
  EXPECT_NE(ini.find("controller = rmppi"), std::string::npos);
  EXPECT_NE(ini.find("seed = 9"), std::string::npos);
  EXPECT_NE(ini.find("steps = 40"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(run_dir / "summary.json"));

  const CliResult v = cli({"verify-bound", "-l", (run_dir / "runlog.csv").string()});
  EXPECT_EQ(v.code, 0) << v.err;
  EXPECT_NE(v.out.find("violation_rate="), std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST(Cli, VerifyRejectsExcessViolations) {
  const auto dir = scratch("verify");
  {
    std::ofstream f(dir / "runlog.csv");
    f << "step,fe_real,bound,dfe\n0,1,1,5\n1,6,1,0\n2,6,nan,nan\n";
  }
  const CliResult strict =
      cli({"verify-bound", "-l", (dir / "runlog.csv").string(), "--max-violation-rate", "0.1"});
  EXPECT_EQ(strict.code, 1);
  EXPECT_NE(strict.out.find("violations=1"), std::string::npos) << strict.out;
  EXPECT_EQ(cli({"verify-bound", "-l", (dir / "missing.csv").string()}).code, 2);
  std::filesystem::remove_all(dir);
}

TEST(Cli, CompareWritesTable) {
  const auto dir = scratch("compare");
  const CliResult r = cli({"compare", "-c", kConfigDir + "/double_integrator.ini", "--out",
                           dir.string(), "--name", "cmp", "--seeds", "2", "--controllers",
                           "mppi,rmppi", "-o", "steps=15", "samples=32", "horizon=10"});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = slurp(dir / "cmp" / "comparison.csv");
  int lines = 0;
  for (char ch : csv) lines += ch == '\n';
  EXPECT_EQ(lines, 5);
  EXPECT_NE(r.out.find("rmppi: "), std::string::npos);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace rmppi
