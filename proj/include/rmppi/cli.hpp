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

#pragma once

#include "CLI11.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "rmppi/config.hpp"
#include "rmppi/harness.hpp"
#include "rmppi/selftest.hpp"

namespace rmppi {

struct CliCommand {
  std::string subcommand;
  std::string config_path;
  std::vector<std::string> overrides;
  std::string output;
  std::string name;
  std::string seed;
  int seeds = 1;
  std::vector<std::string> controllers = {"mppi", "tube", "rmppi"};
  std::string log_path;
  double max_violation_rate = 1.0;
};

namespace cli_detail {

inline ExperimentConfig resolve(const CliCommand& cmd) {
  std::vector<std::string> overrides = cmd.overrides;
  if (!cmd.seed.empty()) overrides.push_back("experiment.seed=" + cmd.seed);
  if (!cmd.output.empty()) overrides.push_back("experiment.output=" + cmd.output);
  if (!cmd.name.empty()) overrides.push_back("experiment.name=" + cmd.name);
  ExperimentConfig c = load_config(cmd.config_path, overrides);
  validate(c);
  return c;
}

inline int run(const CliCommand& cmd, std::ostream& out) {
  const ExperimentConfig c = resolve(cmd);
  const RunLog log = run_closed_loop(c);
  const auto dir = write_run(log, std::filesystem::path(c.output) / c.name);
  const auto& s = log.summary;
  out << "wrote " << dir.string() << "\n"
      << "controller=" << s.controller << " steps=" << s.steps
      << " crashed=" << (s.crashed ? "yes" : "no") << " mean_cost=" << s.mean_cost;
  if (s.bound_steps > 0) {
    out << " bound_violation_rate=" << s.violation_rate << " mean_gap=" << s.mean_gap;
  }
  out << "\n";
  return 0;
}

inline int compare(const CliCommand& cmd, std::ostream& out) {
  const ExperimentConfig base = resolve(cmd);
  std::vector<ComparisonRow> table;
  for (int k = 0; k < cmd.seeds; ++k) {
    std::vector<ExperimentConfig> configs;
    for (const auto& name : cmd.controllers) {
      ExperimentConfig c = base;
      c.controller = name;
      c.seed = base.seed + static_cast<std::uint64_t>(k);
      validate(c);
      configs.push_back(c);
    }
    for (auto& row : compare_controllers(configs)) table.push_back(row);
  }
  const auto dir = std::filesystem::path(base.output) / base.name;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory '" + dir.string() + "'");
  std::ofstream f(dir / "comparison.csv", std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write '" + (dir / "comparison.csv").string() + "'");
  write_comparison_csv(f, table);
  std::ofstream echo(dir / "config.ini", std::ios::trunc);
  echo << config_echo(base);
  write_comparison_csv(out, table);
  for (const auto& name : cmd.controllers) {
    int crashes = 0, runs = 0;
    for (const auto& r : table) {
      if (r.controller == name) {
        crashes += r.crashes;
        ++runs;
      }
    }
    out << name << ": " << crashes << " crashes in " << runs << " runs\n";
  }
  return 0;
}

inline int verify(const CliCommand& cmd, std::ostream& out) {
  std::ifstream in(cmd.log_path);
  if (!in) throw ContractViolation("cannot open runlog '" + cmd.log_path + "'");
  const auto rows = read_runlog_csv(in);
  const BoundReport r = verify_bound(rows);
  out << "evaluated_steps=" << r.ok.size() << " violations=" << r.violations
      << " violation_rate=" << r.violation_rate << " mean_gap=" << r.mean_gap << "\n";
  return r.violation_rate <= cmd.max_violation_rate ? 0 : 1;
}

inline int selftest(std::ostream& out) {
  const std::vector<selftest::CheckResult> checks = {
      selftest::mixed_cost_iff(100000),
      selftest::augmented_weight_oracle(2000),
      selftest::free_energy_sandwich(2000),
      selftest::is_weight_oracle(2000),
  };
  bool ok = true;
  for (const auto& c : checks) {
    out << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
    ok = ok && c.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace cli_detail

// Entry point of rmppi_cli. Returns the process exit status.
inline int parse_and_dispatch(int argc, const char* const* argv,
                              std::ostream& out = std::cout,
                              std::ostream& err = std::cerr) {
  CLI::App app{"Robust MPPI experiments"};
  app.require_subcommand(1);
  CliCommand cmd;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", cmd.config_path, "INI config file")->required();
    sub->add_option("-o,--override", cmd.overrides, "key=value or section.key=value")
        ->take_all();
    sub->add_option("--out", cmd.output, "output directory");
    sub->add_option("--name", cmd.name, "experiment name");
    sub->add_option("--seed", cmd.seed, "seed override");
  };
  auto* run = app.add_subcommand("run", "run one closed-loop experiment");
  add_common(run);
  auto* compare = app.add_subcommand("compare", "compare controllers on shared disturbances");
  add_common(compare);
  compare->add_option("--seeds", cmd.seeds, "number of consecutive seeds")->check(CLI::PositiveNumber);
  compare->add_option("--controllers", cmd.controllers, "controllers to compare")->delimiter(',');
  auto* verify = app.add_subcommand("verify-bound", "check a runlog against its bound column");
  verify->add_option("-l,--log", cmd.log_path, "runlog.csv")->required();
  verify->add_option("--max-violation-rate", cmd.max_violation_rate,
                     "exit nonzero above this rate");
  app.add_subcommand("selftest", "run the randomized property checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, e2;
    const int code = app.exit(e, o, e2);
    out << o.str();
    err << e2.str();
    return code;
  }
  cmd.subcommand = app.get_subcommands().front()->get_name();
  try {
    if (cmd.subcommand == "run") return cli_detail::run(cmd, out);
    if (cmd.subcommand == "compare") return cli_detail::compare(cmd, out);
    if (cmd.subcommand == "verify-bound") return cli_detail::verify(cmd, out);
    return cli_detail::selftest(out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace rmppi
