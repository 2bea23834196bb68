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

#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rmppi/config.hpp"
#include "rmppi/controllers.hpp"
#include "rmppi/core.hpp"
#include "rmppi/dynamics.hpp"

namespace rmppi {

struct RunRow {
  int step = 0;
  double t = 0.0;
  double fe_real = std::numeric_limits<double>::quiet_NaN();
  double fe_nom = std::numeric_limits<double>::quiet_NaN();
  double bound = std::numeric_limits<double>::quiet_NaN();
  double dfe = std::numeric_limits<double>::quiet_NaN();
  int cand_idx = -1;
  double gamma_hat = std::numeric_limits<double>::quiet_NaN();
  double emv = std::numeric_limits<double>::quiet_NaN();
  State x;
  Control u;
  State xn;
  bool crash = false;
  double bound_no_d = std::numeric_limits<double>::quiet_NaN();
};

struct RunSummary {
  std::string controller;
  std::string feedback;
  int steps = 0;
  bool crashed = false;
  int crash_step = -1;
  bool completed = false;
  double mean_cost = std::numeric_limits<double>::quiet_NaN();
  double max_dfe = std::numeric_limits<double>::quiet_NaN();
  int bound_steps = 0;
  int bound_violations = 0;
  double violation_rate = std::numeric_limits<double>::quiet_NaN();
  double mean_gap = std::numeric_limits<double>::quiet_NaN();
  int degenerate_steps = 0;
  int resets = 0;
  double real_candidate_rate = std::numeric_limits<double>::quiet_NaN();
  double lipschitz_q = std::numeric_limits<double>::quiet_NaN();
  double lipschitz_phi = std::numeric_limits<double>::quiet_NaN();
  bool contraction_certified = false;
  double contraction_rho = std::numeric_limits<double>::quiet_NaN();
};

struct RunLog {
  int state_dim = 0;
  int control_dim = 0;
  std::vector<RunRow> rows;
  RunSummary summary;
  std::string config;  // resolved config echo
};

struct BoundReport {
  std::vector<bool> ok;  // per evaluated step
  std::vector<int> steps;
  int violations = 0;
  double violation_rate = 0.0;
  double mean_gap = std::numeric_limits<double>::quiet_NaN();
};

// Steps with a finite growth and a bound entry are evaluated; an infinite
// bound counts as satisfied and is left out of the gap.
inline BoundReport verify_bound(const std::vector<RunRow>& rows) {
  BoundReport r;
  double gap_sum = 0.0;
  int gap_n = 0;
  for (const auto& row : rows) {
    if (!std::isfinite(row.dfe) || std::isnan(row.bound)) continue;
    const bool ok = row.dfe <= row.bound;
    r.ok.push_back(ok);
    r.steps.push_back(row.step);
    if (!ok) ++r.violations;
    if (std::isfinite(row.bound)) {
      gap_sum += row.bound - row.dfe;
      ++gap_n;
    }
  }
  r.violation_rate = r.ok.empty() ? 0.0 : static_cast<double>(r.violations) / r.ok.size();
  if (gap_n > 0) r.mean_gap = gap_sum / gap_n;
  return r;
}

inline BoundReport verify_bound(const RunLog& log) { return verify_bound(log.rows); }

namespace harness_detail {

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace harness_detail

// Closed loop: the controller sees only the measured state; the plant adds
// inflated control noise, a bounded disturbance and the optional kick.
inline RunLog run_closed_loop(const ExperimentConfig& config) {
  validate(config);
  const SystemPtr model = make_system(config);
  const CostFunction cost = make_cost_function(config, *model);
  const ControllerSettings settings = make_settings(config, *model);
  const ControllerKind kind = parse_controller_kind(config.controller);
  auto controller = make_controller(kind, model, cost, settings);
  auto* robust = dynamic_cast<RmppiController*>(controller.get());
  if (robust) robust->set_lipschitz(cost.lipschitz_q, cost.lipschitz_phi);

  DisturbanceModel dist;
  dist.noise_scale = config.noise_multiplier;
  dist.w_bound = config.w_bound;
  dist.seed = config.seed ^ splitmix64(config.plant_seed);
  DisturbanceSampler plant(dist, model->state_dim(), cost.sigma);

  RunLog log;
  log.state_dim = model->state_dim();
  log.control_dim = model->control_dim();
  log.config = config_echo(config);
  log.summary.controller = config.controller;
  log.summary.feedback = config.feedback;
  log.summary.lipschitz_q = cost.lipschitz_q;
  log.summary.lipschitz_phi = cost.lipschitz_phi;

  State x = config.initial_state.size() ? config.initial_state
                                         : State::Zero(model->state_dim());
  require_dims(x, model->state_dim(), "system.initial_state");
  if (config.kick_step >= 0) require_dims(config.kick, model->state_dim(), "disturbance.kick");

  const StateCost& q = *cost.state;
  double cost_sum = 0.0;
  int real_choices = 0, choices = 0;
  for (int step = 0; step < config.steps; ++step) {
    RunRow row;
    row.step = step;
    row.t = step * model->dt();
    row.x = x;
    const Control u = controller->compute(x);
    const Diagnostics& d = controller->diagnostics();
    row.u = u;
    row.xn = d.nominal.size() ? d.nominal : x;
    row.fe_real = d.fe_real;
    row.fe_nom = d.fe_nom;
    row.bound = d.bound;
    row.bound_no_d = d.bound_no_d;
    row.cand_idx = d.cand_idx;
    row.gamma_hat = d.gamma_hat;
    row.emv = d.emv;
    if (d.degenerate) ++log.summary.degenerate_steps;
    if (d.reset) ++log.summary.resets;
    if (d.cand_idx >= 0 && step > 0) {
      ++choices;
      if (d.cand_idx == settings.candidates) ++real_choices;
    }
    cost_sum += q.running(x);

    const Vector eps = plant.sample_control_noise();
    Vector w = plant.sample_w();
    if (step == config.kick_step) w += config.kick;
    State next = model->step(x, u + eps);
    next += w;
    row.crash = model->crashed(next);
    log.rows.push_back(std::move(row));
    if (log.rows.back().crash) {
      log.summary.crashed = true;
      log.summary.crash_step = step;
      break;
    }
    x = std::move(next);
  }
  for (std::size_t i = 0; i + 1 < log.rows.size(); ++i) {
    log.rows[i].dfe = log.rows[i + 1].fe_real - log.rows[i].fe_real;
  }

  auto& s = log.summary;
  s.steps = static_cast<int>(log.rows.size());
  s.completed = !s.crashed;
  if (!log.rows.empty()) s.mean_cost = cost_sum / log.rows.size();
  for (const auto& row : log.rows) {
    if (std::isfinite(row.dfe)) {
      s.max_dfe = std::isnan(s.max_dfe) ? row.dfe : std::max(s.max_dfe, row.dfe);
    }
  }
  if (choices > 0) s.real_candidate_rate = static_cast<double>(real_choices) / choices;
  const BoundReport report = verify_bound(log.rows);
  s.bound_steps = static_cast<int>(report.ok.size());
  s.bound_violations = report.violations;
  if (!report.ok.empty()) s.violation_rate = report.violation_rate;
  s.mean_gap = report.mean_gap;
  if (settings.feedback == FeedbackKind::kContraction) {
    const FeedbackPolicy p = contraction_feedback(settings.metric, settings.contraction_rate,
                                                  *model, settings.tracking.r);
    s.contraction_certified = p.certified;
    s.contraction_rho = p.rho;
  }
  return log;
}

inline std::vector<std::string> runlog_columns(int n_x, int n_u) {
  std::vector<std::string> cols = {"step", "t", "fe_real", "fe_nom", "bound",
                                   "dfe", "cand_idx", "gamma_hat", "emv"};
  for (int i = 0; i < n_x; ++i) cols.push_back("x" + std::to_string(i));
  for (int i = 0; i < n_u; ++i) cols.push_back("u" + std::to_string(i));
  for (int i = 0; i < n_x; ++i) cols.push_back("xn" + std::to_string(i));
  cols.push_back("crash");
  cols.push_back("bound_no_d");
  return cols;
}

inline void write_runlog_csv(std::ostream& os, const RunLog& log) {
  using harness_detail::fmt;
  const auto cols = runlog_columns(log.state_dim, log.control_dim);
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
  for (const auto& r : log.rows) {
    os << r.step << ',' << fmt(r.t) << ',' << fmt(r.fe_real) << ',' << fmt(r.fe_nom) << ','
       << fmt(r.bound) << ',' << fmt(r.dfe) << ',' << r.cand_idx << ',' << fmt(r.gamma_hat)
       << ',' << fmt(r.emv);
    for (Eigen::Index i = 0; i < r.x.size(); ++i) os << ',' << fmt(r.x(i));
    for (Eigen::Index i = 0; i < r.u.size(); ++i) os << ',' << fmt(r.u(i));
    for (Eigen::Index i = 0; i < r.xn.size(); ++i) os << ',' << fmt(r.xn(i));
    os << ',' << (r.crash ? 1 : 0) << ',' << fmt(r.bound_no_d) << '\n';
  }
}

inline std::string runlog_csv(const RunLog& log) {
  std::ostringstream os;
  write_runlog_csv(os, log);
  return os.str();
}

namespace harness_detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double to_double(const std::string& s) {
  return std::strtod(s.c_str(), nullptr);
}

}  // namespace harness_detail

// Reads the diagnostics back from a runlog CSV. Only the columns the bound
// check needs are mandatory.
inline std::vector<RunRow> read_runlog_csv(std::istream& in) {
  using namespace harness_detail;
  std::string line;
  if (!std::getline(in, line)) throw ContractViolation("runlog is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* needed : {"step", "fe_real", "bound", "dfe"}) {
    if (!col.count(needed)) {
      throw ContractViolation(std::string("runlog is missing column '") + needed + "'");
    }
  }
  int n_x = 0, n_u = 0;
  while (col.count("x" + std::to_string(n_x))) ++n_x;
  while (col.count("u" + std::to_string(n_u))) ++n_u;
  std::vector<RunRow> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ContractViolation("runlog row has " + std::to_string(cells.size()) +
                              " cells, header has " + std::to_string(header.size()));
    }
    auto get = [&](const std::string& name) {
      auto it = col.find(name);
      return it == col.end() ? std::numeric_limits<double>::quiet_NaN()
                             : to_double(cells[it->second]);
    };
    RunRow r;
    r.step = static_cast<int>(get("step"));
    r.t = get("t");
    r.fe_real = get("fe_real");
    r.fe_nom = get("fe_nom");
    r.bound = get("bound");
    r.dfe = get("dfe");
    const double cand = get("cand_idx");
    r.cand_idx = std::isnan(cand) ? -1 : static_cast<int>(cand);
    r.gamma_hat = get("gamma_hat");
    r.emv = get("emv");
    r.x.resize(n_x);
    r.xn.resize(col.count("xn0") ? n_x : 0);
    r.u.resize(n_u);
    for (int i = 0; i < n_x; ++i) r.x(i) = get("x" + std::to_string(i));
    for (int i = 0; i < r.xn.size(); ++i) r.xn(i) = get("xn" + std::to_string(i));
    for (int i = 0; i < n_u; ++i) r.u(i) = get("u" + std::to_string(i));
    r.crash = get("crash") == 1.0;
    r.bound_no_d = get("bound_no_d");
    rows.push_back(std::move(r));
  }
  return rows;
}

inline nlohmann::json summary_json(const RunSummary& s) {
  auto num = [](double v) -> nlohmann::json {
    if (std::isfinite(v)) return v;
    return nullptr;
  };
  return nlohmann::json{
      {"controller", s.controller},
      {"feedback", s.feedback},
      {"steps", s.steps},
      {"crashed", s.crashed},
      {"crash_step", s.crash_step},
      {"completed", s.completed},
      {"mean_cost", num(s.mean_cost)},
      {"max_dfe", num(s.max_dfe)},
      {"bound_steps", s.bound_steps},
      {"bound_violations", s.bound_violations},
      {"violation_rate", num(s.violation_rate)},
      {"mean_gap", num(s.mean_gap)},
      {"degenerate_steps", s.degenerate_steps},
      {"resets", s.resets},
      {"real_candidate_rate", num(s.real_candidate_rate)},
      {"lipschitz_q", num(s.lipschitz_q)},
      {"lipschitz_phi", num(s.lipschitz_phi)},
      {"contraction_certified", s.contraction_certified},
      {"contraction_rho", num(s.contraction_rho)},
  };
}

// <dir>/{runlog.csv, summary.json, config.ini}.
inline std::filesystem::path write_run(const RunLog& log, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory '" + dir.string() + "': " + ec.message());
  auto open = [&](const char* name) {
    std::ofstream f(dir / name, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write '" + (dir / name).string() + "'");
    return f;
  };
  {
    auto f = open("runlog.csv");
    write_runlog_csv(f, log);
  }
  {
    auto f = open("summary.json");
    nlohmann::json j = summary_json(log.summary);
    j["config"] = log.config;
    f << j.dump(2) << '\n';
  }
  {
    auto f = open("config.ini");
    f << log.config;
  }
  return dir;
}

struct ComparisonRow {
  std::string controller;
  std::uint64_t seed = 0;
  bool completed = false;
  int crashes = 0;
  double mean_cost = std::numeric_limits<double>::quiet_NaN();
  double max_dfe = std::numeric_limits<double>::quiet_NaN();
};

// Runs each config on the same plant-noise realization. Configs must agree
// on everything except controller, name and output.
inline std::vector<ComparisonRow> compare_controllers(const std::vector<ExperimentConfig>& configs) {
  std::vector<ComparisonRow> table;
  if (configs.empty()) return table;
  auto key = [](ExperimentConfig c) {
    c.controller = "";
    c.name = "";
    c.output = "";
    return config_echo(c);
  };
  const std::string reference = key(configs.front());
  for (const auto& c : configs) {
    if (key(c) != reference) {
      throw ContractViolation("compare: configs differ in more than the controller field");
    }
  }
  for (const auto& c : configs) {
    const RunLog log = run_closed_loop(c);
    ComparisonRow row;
    row.controller = c.controller;
    row.seed = c.seed;
    row.completed = log.summary.completed;
    row.crashes = log.summary.crashed ? 1 : 0;
    row.mean_cost = log.summary.mean_cost;
    row.max_dfe = log.summary.max_dfe;
    table.push_back(row);
  }
  return table;
}

inline void write_comparison_csv(std::ostream& os, const std::vector<ComparisonRow>& table) {
  using harness_detail::fmt;
  os << "controller,seed,completed,crashes,mean_cost,max_dfe\n";
  for (const auto& r : table) {
    os << r.controller << ',' << r.seed << ',' << (r.completed ? 1 : 0) << ',' << r.crashes
       << ',' << fmt(r.mean_cost) << ',' << fmt(r.max_dfe) << '\n';
  }
}

}  // namespace rmppi
