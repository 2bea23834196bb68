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

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rmppi/controllers.hpp"
#include "rmppi/core.hpp"
#include "rmppi/costs.hpp"
#include "rmppi/dynamics.hpp"
#include "rmppi/feedback.hpp"

namespace rmppi {

// Fully resolved experiment description. Every field maps to one
// `section.key` entry of the INI file (see README).
struct ExperimentConfig {
  // [experiment]
  std::string name = "run";
  std::string system = "double_integrator";
  std::string controller = "rmppi";
  int steps = 2000;
  std::uint64_t seed = 0;
  std::string output = "out";
  unsigned workers = 1;

  // [system]
  double dt = 0.02;
  double control_limit = 0.0;  // 0 = system default
  Vector box_lower;
  Vector box_upper;
  Vector initial_state;

  // [sampling]
  int samples = 256;
  int horizon = 50;
  double lambda = 1.0;
  Vector sigma;  // diagonal of the control-noise covariance
  double crash_cost = 1e4;
  bool smoothing = false;
  int smoothing_window = 9;
  int smoothing_order = 2;

  // [costs]
  Vector target;
  Vector weights;
  Vector wall_lower;
  Vector wall_upper;
  double wall_slope = 0.0;
  double cap = 100.0;
  double terminal_scale = 1.0;
  double beta = 0.5;

  // [rmppi]
  double alpha = std::numeric_limits<double>::quiet_NaN();  // NaN = crash_cost
  double tube_alpha = std::numeric_limits<double>::quiet_NaN();  // NaN = alpha
  int candidates = 8;
  int nsp_samples = 0;  // 0 = samples / 8
  int emv_repeats = 8;
  double emv_multiplier = 3.0;
  int gamma_window = 50;
  double gamma_floor = 1e-3;

  // [feedback]
  std::string feedback = "contraction";
  Vector q_track;
  Vector r_track;
  Vector q_final;
  Vector metric;  // row-major n_x x n_x
  double contraction_rate = 1.0;

  // [disturbance]
  double noise_multiplier = 1.0;
  double w_bound = 0.0;
  std::uint64_t plant_seed = 0;
  int kick_step = -1;  // one-shot extra state offset applied after this step
  Vector kick;

  double resolved_alpha() const { return std::isnan(alpha) ? crash_cost : alpha; }
  double resolved_tube_alpha() const {
    return std::isnan(tube_alpha) ? resolved_alpha() : tube_alpha;
  }
  int resolved_nsp_samples() const {
    return nsp_samples > 0 ? nsp_samples : std::max(1, samples / 8);
  }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::string format_double(double v) {
  if (std::isnan(v)) return "auto";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ContractViolation("invalid number for '" + key + "': '" + raw + "'");
}

inline long long parse_int(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ContractViolation("invalid integer for '" + key + "': '" + raw + "'");
}

inline bool parse_bool(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "off" || s == "no") return false;
  throw ContractViolation("invalid boolean for '" + key + "': '" + raw + "'");
}

// Comma- or space-separated numbers; empty means "use the default".
inline Vector parse_vector(const std::string& key, const std::string& raw) {
  std::string s = raw;
  for (char& c : s) {
    if (c == ',') c = ' ';
  }
  std::istringstream in(s);
  std::vector<double> values;
  std::string token;
  while (in >> token) values.push_back(parse_double(key, token));
  Vector v(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) v(static_cast<Eigen::Index>(i)) = values[i];
  return v;
}

inline std::string format_vector(const Vector& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += format_double(v(i));
  }
  return out;
}

struct Field {
  const char* section;
  const char* key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define RMPPI_STRING(sec, name)                                                   \
  Field{sec, #name, [](ExperimentConfig& c, const std::string& v) { c.name = trim(v); }, \
        [](const ExperimentConfig& c) { return c.name; }}
#define RMPPI_DOUBLE(sec, name)                                                     \
  Field{sec, #name,                                                                 \
        [](ExperimentConfig& c, const std::string& v) {                             \
          c.name = trim(v) == "auto" ? std::numeric_limits<double>::quiet_NaN()     \
                                     : parse_double(#name, v);                      \
        },                                                                          \
        [](const ExperimentConfig& c) { return format_double(c.name); }}
#define RMPPI_INT(sec, name)                                                              \
  Field{sec, #name,                                                                       \
        [](ExperimentConfig& c, const std::string& v) {                                   \
          c.name = static_cast<decltype(c.name)>(parse_int(#name, v));                   \
        },                                                                                \
        [](const ExperimentConfig& c) { return std::to_string(c.name); }}
#define RMPPI_BOOL(sec, name)                                                         \
  Field{sec, #name, [](ExperimentConfig& c, const std::string& v) { c.name = parse_bool(#name, v); }, \
        [](const ExperimentConfig& c) { return std::string(c.name ? "true" : "false"); }}
#define RMPPI_VECTOR(sec, name)                                                           \
  Field{sec, #name, [](ExperimentConfig& c, const std::string& v) { c.name = parse_vector(#name, v); }, \
        [](const ExperimentConfig& c) { return format_vector(c.name); }}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      RMPPI_STRING("experiment", name),
      RMPPI_STRING("experiment", system),
      RMPPI_STRING("experiment", controller),
      RMPPI_INT("experiment", steps),
      RMPPI_INT("experiment", seed),
      RMPPI_STRING("experiment", output),
      RMPPI_INT("experiment", workers),
      RMPPI_DOUBLE("system", dt),
      RMPPI_DOUBLE("system", control_limit),
      RMPPI_VECTOR("system", box_lower),
      RMPPI_VECTOR("system", box_upper),
      RMPPI_VECTOR("system", initial_state),
      RMPPI_INT("sampling", samples),
      RMPPI_INT("sampling", horizon),
      RMPPI_DOUBLE("sampling", lambda),
      RMPPI_VECTOR("sampling", sigma),
      RMPPI_DOUBLE("sampling", crash_cost),
      RMPPI_BOOL("sampling", smoothing),
      RMPPI_INT("sampling", smoothing_window),
      RMPPI_INT("sampling", smoothing_order),
      RMPPI_VECTOR("costs", target),
      RMPPI_VECTOR("costs", weights),
      RMPPI_VECTOR("costs", wall_lower),
      RMPPI_VECTOR("costs", wall_upper),
      RMPPI_DOUBLE("costs", wall_slope),
      RMPPI_DOUBLE("costs", cap),
      RMPPI_DOUBLE("costs", terminal_scale),
      RMPPI_DOUBLE("costs", beta),
      RMPPI_DOUBLE("rmppi", alpha),
      RMPPI_DOUBLE("rmppi", tube_alpha),
      RMPPI_INT("rmppi", candidates),
      RMPPI_INT("rmppi", nsp_samples),
      RMPPI_INT("rmppi", emv_repeats),
      RMPPI_DOUBLE("rmppi", emv_multiplier),
      RMPPI_INT("rmppi", gamma_window),
      RMPPI_DOUBLE("rmppi", gamma_floor),
      RMPPI_STRING("feedback", feedback),
      RMPPI_VECTOR("feedback", q_track),
      RMPPI_VECTOR("feedback", r_track),
      RMPPI_VECTOR("feedback", q_final),
      RMPPI_VECTOR("feedback", metric),
      RMPPI_DOUBLE("feedback", contraction_rate),
      RMPPI_DOUBLE("disturbance", noise_multiplier),
      RMPPI_DOUBLE("disturbance", w_bound),
      RMPPI_INT("disturbance", plant_seed),
      RMPPI_INT("disturbance", kick_step),
      RMPPI_VECTOR("disturbance", kick),
  };
  return table;
}

#undef RMPPI_STRING
#undef RMPPI_DOUBLE
#undef RMPPI_INT
#undef RMPPI_BOOL
#undef RMPPI_VECTOR

// Accepts "section.key" or a bare key that is unique across sections.
inline const Field& find_field(const std::string& name) {
  const auto dot = name.find('.');
  const Field* found = nullptr;
  for (const auto& f : fields()) {
    const bool match = dot == std::string::npos
                           ? name == f.key
                           : name.substr(0, dot) == f.section && name.substr(dot + 1) == f.key;
    if (match) {
      if (found) throw ContractViolation("ambiguous config key '" + name + "'");
      found = &f;
    }
  }
  if (!found) throw ContractViolation("unknown config key '" + name + "'");
  return *found;
}

}  // namespace config_detail

// Per-system defaults for the task, tracking and metric fields.
inline ExperimentConfig default_config(const std::string& system) {
  ExperimentConfig c;
  c.system = system;
  if (system == "double_integrator") {
    c.initial_state = Vector{{0.0, 0.0}};
    c.sigma = Vector{{1.0}};
    c.target = Vector{{1.0, 0.0}};
    c.weights = Vector{{10.0, 1.0}};
    c.wall_lower = Vector{{-1.5, -std::numeric_limits<double>::infinity()}};
    c.wall_upper = Vector{{1.5, std::numeric_limits<double>::infinity()}};
    c.wall_slope = 200.0;
    c.metric = Vector{{1.0, 0.39331989, 0.39331989, 0.33873091}};
  } else if (system == "nonlinear_benchmark") {
    c.initial_state = Vector{{0.0, 0.0}};
    c.sigma = Vector{{1.0}};
    c.target = Vector{{0.5, 0.0}};
    c.weights = Vector{{10.0, 1.0}};
    c.wall_lower = Vector{{-0.9, -std::numeric_limits<double>::infinity()}};
    c.wall_upper = Vector{{0.9, std::numeric_limits<double>::infinity()}};
    c.wall_slope = 200.0;
    c.metric = Vector{{1.0, 0.48059088, 0.48059088, 0.27392688}};
  }
  c.q_track = Vector{{10.0, 10.0}};
  c.r_track = Vector{{1.0}};
  return c;
}

inline void set_config_value(ExperimentConfig& c, const std::string& key,
                             const std::string& value) {
  config_detail::find_field(key).set(c, value);
}

inline std::string get_config_value(const ExperimentConfig& c, const std::string& key) {
  return config_detail::find_field(key).get(c);
}

inline std::pair<std::string, std::string> split_override(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ContractViolation("invalid override '" + text + "', expected key=value");
  }
  return {config_detail::trim(text.substr(0, eq)), text.substr(eq + 1)};
}

// Reads INI text (sections [experiment], [system], ...) and applies
// overrides afterwards. The system is resolved first so its defaults sit
// underneath both.
inline ExperimentConfig parse_config(std::istream& in,
                                     const std::vector<std::string>& overrides = {}) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ContractViolation(std::string("config parse error: ") + e.what());
  }
  std::vector<std::pair<std::string, std::string>> entries;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ContractViolation("config key '" + section + "' must live in a section");
    }
    for (const auto& [key, node] : body) {
      entries.emplace_back(section + "." + key, node.data());
    }
  }
  std::vector<std::pair<std::string, std::string>> parsed_overrides;
  for (const auto& o : overrides) parsed_overrides.push_back(split_override(o));

  std::string system = "double_integrator";
  for (const auto& [k, v] : entries) {
    if (&config_detail::find_field(k) == &config_detail::find_field("experiment.system")) {
      system = config_detail::trim(v);
    }
  }
  for (const auto& [k, v] : parsed_overrides) {
    if (&config_detail::find_field(k) == &config_detail::find_field("experiment.system")) {
      system = config_detail::trim(v);
    }
  }
  ExperimentConfig c = default_config(system);
  for (const auto& [k, v] : entries) set_config_value(c, k, v);
  for (const auto& [k, v] : parsed_overrides) set_config_value(c, k, v);
  return c;
}

inline ExperimentConfig load_config(const std::string& path,
                                    const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw ContractViolation("cannot open config file '" + path + "'");
  return parse_config(in, overrides);
}

// INI text holding every resolved field; parse_config reads it back to the
// same configuration.
inline std::string config_echo(const ExperimentConfig& c) {
  std::string out;
  std::string section;
  for (const auto& f : config_detail::fields()) {
    if (section != f.section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += std::string(f.key) + " = " + f.get(c) + "\n";
  }
  return out;
}

inline SystemPtr make_system(const ExperimentConfig& c) {
  SystemOptions o;
  o.dt = c.dt;
  o.control_limit = c.control_limit;
  o.box_lower = c.box_lower;
  o.box_upper = c.box_upper;
  require(o.box_lower.size() == o.box_upper.size(),
          "box_lower and box_upper must have the same length");
  return SystemRegistry::instance().make(c.system, o);
}

inline std::shared_ptr<const QuadraticWallCost> make_state_cost(const ExperimentConfig& c,
                                                                const SystemModel& model) {
  const int n = model.state_dim();
  require(c.target.size() == n, "costs.target must have n_x entries");
  require(c.weights.size() == n, "costs.weights must have n_x entries");
  QuadraticWallParams p;
  p.target = c.target;
  p.weights = c.weights;
  p.wall_lower = c.wall_lower;
  p.wall_upper = c.wall_upper;
  p.wall_slope = c.wall_slope;
  p.cap = c.cap;
  p.terminal_scale = c.terminal_scale;
  return std::make_shared<const QuadraticWallCost>(p);
}

inline Matrix metric_matrix(const ExperimentConfig& c, int n_x) {
  require(c.metric.size() == n_x * n_x, "feedback.metric must have n_x^2 entries");
  Matrix m(n_x, n_x);
  for (int i = 0; i < n_x; ++i) {
    for (int j = 0; j < n_x; ++j) m(i, j) = c.metric(i * n_x + j);
  }
  return m;
}

inline Matrix diagonal_matrix(const Vector& v, int n, const char* what) {
  require(v.size() == n, std::string(what) + " must have " + std::to_string(n) + " entries");
  return v.asDiagonal();
}

inline void validate(const ExperimentConfig& c) {
  require(c.steps >= 0, "experiment.steps must be >= 0");
  require(c.samples >= 1, "sampling.samples must be >= 1");
  require(c.horizon >= 1, "sampling.horizon must be >= 1");
  require(c.noise_multiplier >= 1.0, "disturbance.noise_multiplier must be >= 1");
  require(c.w_bound >= 0.0, "disturbance.w_bound must be >= 0");
  require(c.workers >= 1, "experiment.workers must be >= 1");
  parse_controller_kind(c.controller);
  parse_feedback_kind(c.feedback);
  require(SystemRegistry::instance().contains(c.system),
          "unknown system '" + c.system + "'");
}

inline CostFunction make_cost_function(const ExperimentConfig& c, const SystemModel& model) {
  auto state = make_state_cost(c, model);
  const Matrix sigma = diagonal_matrix(c.sigma, model.control_dim(), "sampling.sigma");
  Matrix weight;
  if (parse_feedback_kind(c.feedback) == FeedbackKind::kContraction) {
    weight = metric_matrix(c, model.state_dim());
  }
  return make_cost(state, sigma, c.lambda, c.beta, state->lipschitz_running(weight),
                   state->lipschitz_terminal(weight));
}

inline ControllerSettings make_settings(const ExperimentConfig& c, const SystemModel& model) {
  ControllerSettings s;
  s.samples = c.samples;
  s.horizon = c.horizon;
  s.alpha = c.resolved_alpha();
  s.tube_alpha = c.resolved_tube_alpha();
  s.crash_cost = c.crash_cost;
  s.candidates = c.candidates;
  s.nsp_samples = c.resolved_nsp_samples();
  s.emv_repeats = c.emv_repeats;
  s.emv_multiplier = c.emv_multiplier;
  s.gamma_window = c.gamma_window;
  s.gamma_floor = c.gamma_floor;
  s.workers = c.workers;
  s.seed = c.seed;
  s.smoothing = {c.smoothing, c.smoothing_window, c.smoothing_order};
  s.feedback = parse_feedback_kind(c.feedback);
  const int n_x = model.state_dim();
  const int n_u = model.control_dim();
  s.tracking.q = diagonal_matrix(c.q_track, n_x, "feedback.q_track");
  s.tracking.r = diagonal_matrix(c.r_track, n_u, "feedback.r_track");
  if (c.q_final.size() != 0) s.tracking.q_final = diagonal_matrix(c.q_final, n_x, "feedback.q_final");
  if (c.metric.size() != 0) s.metric = metric_matrix(c, n_x);
  s.contraction_rate = c.contraction_rate;
  s.w_bound = c.w_bound;
  return s;
}

}  // namespace rmppi
