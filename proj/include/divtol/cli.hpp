#pragma once

// Command-line front end. Kept header-only so tests can drive run() in
// process; tools/divtol.cpp is a thin main().

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "divtol/core.hpp"
#include "divtol/error.hpp"
#include "divtol/estimator.hpp"
#include "divtol/ingest.hpp"
#include "divtol/simulation.hpp"

namespace divtol::cli {

using Json = nlohmann::ordered_json;

enum class Command { estimate, curves, simulate_mc, consistency, ingest_check };
enum class WeightMode { none, sixty_minus_midpoint };
enum class Format { json, csv };

struct RunConfig {
  Command command = Command::estimate;
  std::string exposures;
  std::string bins;
  std::string events;
  std::string optimal;
  Norm norm = Norm::l2_squared;
  WeightMode weights = WeightMode::none;
  Method method = Method::closed_form;
  double grid_step = default_grid_step;
  std::size_t grid_points = 201;
  std::size_t bootstrap = 0;
  double level = 0.95;
  std::uint64_t seed = 1;
  std::size_t n = 50;
  std::size_t datasets = 2000;
  double p_exposed = 0.5;
  ShapeScope shape_scope = ShapeScope::per_dataset;
  std::vector<std::size_t> ns{50, 200, 800};
  std::size_t replicates = 200;
  double interval_s = 60.0;
  double bin_width_s = 5.0;
  std::size_t sessions_expected = 0;
  std::size_t workers = 1;
  std::string out;
  Format format = Format::json;
};

constexpr std::string_view to_string(Command c) noexcept {
  switch (c) {
    case Command::estimate: return "estimate";
    case Command::curves: return "curves";
    case Command::simulate_mc: return "simulate-mc";
    case Command::consistency: return "consistency";
    case Command::ingest_check: return "ingest-check";
  }
  return "";
}

constexpr int exit_code(ErrorClass c) noexcept {
  return c == ErrorClass::configuration ? 2 : 1;
}

/// Shortest round-trip decimal.
inline std::string format_number(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

/// Result of one command: scalar metadata plus an optional table. JSON
/// writes the metadata object with a "rows" array of objects; CSV writes
/// "# key=value" lines followed by the table.
struct Document {
  Json metadata = Json::object();
  std::vector<std::string> columns;
  std::vector<std::vector<Json>> rows;
};

inline std::string csv_cell(const Json& v) {
  if (v.is_number_float()) return format_number(v.get<double>());
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

inline std::string render(const Document& doc, Format format) {
  if (format == Format::json) {
    Json j = doc.metadata;
    if (!doc.columns.empty()) {
      Json rows = Json::array();
      for (const auto& r : doc.rows) {
        Json o = Json::object();
        for (std::size_t k = 0; k < doc.columns.size(); ++k) o[doc.columns[k]] = r[k];
        rows.push_back(std::move(o));
      }
      j["rows"] = std::move(rows);
    }
    return j.dump(2) + "\n";
  }
  std::ostringstream os;
  for (const auto& [key, value] : doc.metadata.items()) os << "# " << key << '=' << csv_cell(value) << '\n';
  for (std::size_t k = 0; k < doc.columns.size(); ++k) os << (k ? "," : "") << doc.columns[k];
  if (!doc.columns.empty()) os << '\n';
  for (const auto& r : doc.rows) {
    for (std::size_t k = 0; k < r.size(); ++k) os << (k ? "," : "") << csv_cell(r[k]);
    os << '\n';
  }
  return os.str();
}

inline std::vector<double> parse_number_list(const std::string& text, std::string_view what) {
  std::vector<double> out;
  for (auto field : csv::split(text)) {
    double v = 0.0;
    const auto* end = field.data() + field.size();
    const auto res = std::from_chars(field.data(), end, v);
    if (field.empty() || res.ec != std::errc() || res.ptr != end || !std::isfinite(v))
      throw Error(ErrorClass::configuration,
                  std::string(what) + ": '" + std::string(field) + "' is not a number");
    out.push_back(v);
  }
  return out;
}

inline StudyLayout layout_of(const RunConfig& cfg) {
  StudyLayout layout;
  layout.interval_length_s = cfg.interval_s;
  layout.bin_width_s = cfg.bin_width_s;
  if (cfg.sessions_expected > 0) layout.sessions_expected = cfg.sessions_expected;
  layout.bins();
  return layout;
}

inline Json config_echo(const RunConfig& cfg) {
  Json c = Json::object();
  c["command"] = to_string(cfg.command);
  auto path = [&](const char* key, const std::string& v) {
    if (!v.empty()) c[key] = v;
  };
  switch (cfg.command) {
    case Command::estimate:
    case Command::curves:
    case Command::ingest_check:
      path("exposures", cfg.exposures);
      path("bins", cfg.bins);
      path("events", cfg.events);
      c["interval_s"] = cfg.interval_s;
      c["bin_width_s"] = cfg.bin_width_s;
      if (cfg.command == Command::ingest_check) {
        if (cfg.sessions_expected > 0) c["sessions_expected"] = cfg.sessions_expected;
        break;
      }
      c["optimal"] = cfg.optimal;
      c["norm"] = cfg.norm == Norm::l2_squared ? "l2" : "l1";
      c["weights"] = cfg.weights == WeightMode::none ? "none" : "sixty-minus-midpoint";
      if (cfg.command == Command::estimate) {
        c["method"] = to_string(cfg.method);
        c["grid_step"] = cfg.grid_step;
        c["bootstrap"] = cfg.bootstrap;
        c["level"] = cfg.level;
      } else {
        c["grid_points"] = cfg.grid_points;
      }
      c["seed"] = cfg.seed;
      break;
    case Command::simulate_mc:
      c["n"] = cfg.n;
      c["datasets"] = cfg.datasets;
      c["p_exposed"] = cfg.p_exposed;
      c["optimal"] = cfg.optimal.empty() ? std::string("0") : cfg.optimal;
      c["shape_scope"] = to_string(cfg.shape_scope);
      c["positivity"] = "reject_resample";
      c["seed"] = cfg.seed;
      break;
    case Command::consistency: {
      Json ns = Json::array();
      for (auto n : cfg.ns) ns.push_back(n);
      c["ns"] = std::move(ns);
      c["replicates"] = cfg.replicates;
      c["shape_scope"] = to_string(cfg.shape_scope);
      c["positivity"] = "reject_resample";
      c["seed"] = cfg.seed;
      break;
    }
  }
  return c;
}

struct LoadedData {
  Assembly assembly;
  StudyLayout layout;
};

inline LoadedData load_dataset(const RunConfig& cfg) {
  if (cfg.exposures.empty())
    throw Error(ErrorClass::linkage, "no exposures file given; actions cannot be linked");
  require(cfg.bins.empty() != cfg.events.empty(), ErrorClass::configuration,
          "exactly one of --bins or --events is required");
  LoadedData out;
  out.layout = layout_of(cfg);
  const auto exposures = parse_exposures(cfg.exposures);
  const auto sessions = cfg.bins.empty() ? bin_events(parse_events(cfg.events), out.layout)
                                         : parse_binned_counts(cfg.bins, out.layout);
  out.assembly = assemble_dataset(exposures, average_sessions(sessions, out.layout), out.layout);
  return out;
}

inline DivergenceSpec spec_of(const RunConfig& cfg, const StudyLayout& layout) {
  require(!cfg.optimal.empty(), ErrorClass::configuration, "--optimal is required");
  DivergenceSpec spec;
  spec.optimal = parse_number_list(cfg.optimal, "--optimal");
  spec.norm = cfg.norm;
  const auto d = layout.bins();
  require(spec.optimal.size() == d, ErrorClass::configuration,
          "--optimal has " + std::to_string(spec.optimal.size()) + " entries, layout has " +
              std::to_string(d) + " bins");
  if (cfg.weights == WeightMode::sixty_minus_midpoint) spec.weights = layout.remaining_time_weights();
  return spec;
}

inline std::string interpretation(double theta) {
  if (theta < 0.5) return "exposed animals tolerate divergence from optimality more than controls";
  if (theta > 0.5) return "exposed animals tolerate divergence from optimality less than controls";
  return "both groups tolerate divergence from optimality equally";
}

inline void require_clean(const Dataset& ds) {
  const auto report = validate_dataset(ds);
  if (report.clean()) return;
  std::string msg = "dataset is not estimable:";
  for (const auto& v : report.violations) msg += " " + v.message + ";";
  throw Error(ErrorClass::data, msg);
}

inline Json without_actions_json(const Assembly& a) {
  Json arr = Json::array();
  for (const auto& id : a.without_actions) arr.push_back(id);
  return arr;
}

inline Document cmd_estimate(const RunConfig& cfg, std::string& summary) {
  const auto loaded = load_dataset(cfg);
  const auto& ds = loaded.assembly.dataset;
  require_clean(ds);
  const auto spec = spec_of(cfg, loaded.layout);
  const auto est = estimate_theta(ds, spec, cfg.method, cfg.grid_step);

  Document doc;
  doc.metadata["config"] = config_echo(cfg);
  doc.metadata["n"] = ds.size();
  doc.metadata["n_exposed"] = ds.count(Exposure::exposed);
  doc.metadata["n_control"] = ds.count(Exposure::control);
  doc.metadata["without_actions"] = without_actions_json(loaded.assembly);
  doc.columns = {"theta_e", "objective_at_min", "method", "clamped", "unconstrained_minimizer",
                 "var_u",   "cov_uv",           "var_v",  "group_divergence_contrast"};
  std::vector<Json> row{est.theta_e,          est.objective_at_min,
                        to_string(est.method), est.clamped,
                        est.unconstrained,     est.quadratic.var_u,
                        est.quadratic.cov_uv,  est.quadratic.var_v,
                        group_divergence_contrast(ds, spec)};
  if (cfg.bootstrap > 0) {
    const auto ci = bootstrap_ci(ds, spec, cfg.bootstrap, cfg.seed, cfg.level);
    for (const char* c : {"ci_lo", "ci_hi", "ci_level", "bootstrap_replicates", "bootstrap_skipped"})
      doc.columns.emplace_back(c);
    row.insert(row.end(), {ci.lo, ci.hi, ci.level, ci.replicates, ci.skipped});
  }
  doc.rows.push_back(std::move(row));
  summary = "theta_e = " + format_number(est.theta_e) + " (" + interpretation(est.theta_e) + ")";
  return doc;
}

inline Document cmd_curves(const RunConfig& cfg, std::string& summary) {
  const auto loaded = load_dataset(cfg);
  const auto& ds = loaded.assembly.dataset;
  require_clean(ds);
  const auto spec = spec_of(cfg, loaded.layout);
  const auto grid = uniform_grid(cfg.grid_points);
  const auto curves = reward_curves(ds, spec, grid);
  const auto est = estimate_theta(ds, spec);

  Document doc;
  doc.metadata["config"] = config_echo(cfg);
  doc.metadata["n"] = ds.size();
  doc.metadata["theta_hat"] = est.theta_e;
  if (curves.crossing_theta) {
    doc.metadata["crossing_theta"] = *curves.crossing_theta;
    doc.metadata["crossing_gap"] = std::abs(*curves.crossing_theta - est.theta_e);
  } else {
    doc.metadata["crossing_theta"] = nullptr;
    doc.metadata["crossing_gap"] = nullptr;
  }
  doc.columns = {"theta", "mean_reward_exposed", "mean_reward_control"};
  for (std::size_t k = 0; k < curves.thetas.size(); ++k)
    doc.rows.push_back({curves.thetas[k], curves.mean_reward_exposed[k],
                        curves.mean_reward_control[k]});
  summary = curves.crossing_theta
                ? "curves cross at theta = " + format_number(*curves.crossing_theta) +
                      "; theta_hat = " + format_number(est.theta_e)
                : "curves do not cross on the grid; theta_hat = " + format_number(est.theta_e);
  return doc;
}

inline PolicyConfig policy_of(const RunConfig& cfg) {
  PolicyConfig p;
  p.shape_scope = cfg.shape_scope;
  return p;
}

inline Document cmd_simulate_mc(const RunConfig& cfg, std::string& summary) {
  McConfig mc;
  mc.n_per_dataset = cfg.n;
  mc.num_datasets = cfg.datasets;
  mc.p_exposed = cfg.p_exposed;
  mc.seed = cfg.seed;
  mc.workers = cfg.workers;
  if (!cfg.optimal.empty()) {
    const auto a = parse_number_list(cfg.optimal, "--optimal");
    require(a.size() == 1, ErrorClass::configuration, "simulate-mc takes a scalar --optimal");
    mc.optimal_action = a[0];
  }
  const auto res = run_monte_carlo(mc, policy_of(cfg));

  Document doc;
  doc.metadata["config"] = config_echo(cfg);
  doc.metadata["frac_theta_below_half"] = res.frac_theta_below_half;
  doc.metadata["frac_b1_above_zero"] = res.frac_b1_above_zero;
  doc.metadata["frac_direction_agree"] = res.frac_direction_agree;
  doc.metadata["retained"] = res.theta_estimates.size();
  doc.metadata["degenerate_count"] = res.degenerate_count;
  doc.metadata["assignment_redraws"] = res.assignment_redraws;
  doc.columns = {"theta_e", "b1"};
  for (std::size_t k = 0; k < res.theta_estimates.size(); ++k)
    doc.rows.push_back({res.theta_estimates[k], res.b1_estimates[k]});
  summary = "theta_e < 0.5 in " + format_number(100.0 * res.frac_theta_below_half) +
            "% of datasets, b1 > 0 in " + format_number(100.0 * res.frac_b1_above_zero) + "%";
  return doc;
}

inline Document cmd_consistency(const RunConfig& cfg, std::string& summary) {
  const auto rows = consistency_sweep(policy_of(cfg), cfg.ns, cfg.replicates, cfg.seed);
  Document doc;
  doc.metadata["config"] = config_echo(cfg);
  doc.columns = {"n", "mean_theta", "sd_theta", "degenerate"};
  for (const auto& r : rows) doc.rows.push_back({r.n, r.mean_theta, r.sd_theta, r.degenerate});
  summary = "consistency sweep over " + std::to_string(rows.size()) + " sample sizes";
  return doc;
}

inline std::string_view to_string(ViolationKind k) noexcept {
  switch (k) {
    case ViolationKind::zero_dimension: return "zero_dimension";
    case ViolationKind::too_few_observations: return "too_few_observations";
    case ViolationKind::dimension_mismatch: return "dimension_mismatch";
    case ViolationKind::non_finite_action: return "non_finite_action";
    case ViolationKind::missing_exposed_group: return "missing_exposed_group";
    case ViolationKind::missing_control_group: return "missing_control_group";
  }
  return "";
}

/// Parses and validates; input errors become violations instead of aborting.
inline Document cmd_ingest_check(const RunConfig& cfg, std::string& summary, bool& clean) {
  Document doc;
  doc.metadata["config"] = config_echo(cfg);
  doc.columns = {"kind", "message"};
  std::vector<std::string> notes;
  try {
    const auto loaded = load_dataset(cfg);
    const auto& ds = loaded.assembly.dataset;
    doc.metadata["n"] = ds.size();
    doc.metadata["n_exposed"] = ds.count(Exposure::exposed);
    doc.metadata["n_control"] = ds.count(Exposure::control);
    doc.metadata["without_actions"] = without_actions_json(loaded.assembly);
    for (const auto& v : validate_dataset(ds).violations)
      doc.rows.push_back({std::string(to_string(v.kind)), v.message});
  } catch (const Error& e) {
    if (e.error_class() == ErrorClass::configuration) throw;
    doc.rows.push_back({std::string(divtol::to_string(e.error_class())), std::string(e.what())});
  }
  clean = doc.rows.empty();
  doc.metadata["clean"] = clean;
  summary = clean ? "ingest check: clean"
                  : "ingest check: " + std::to_string(doc.rows.size()) + " violation(s)";
  return doc;
}

inline void write_error(std::ostream& err, std::string_view cls, std::string_view message) {
  Json e;
  e["error"]["class"] = cls;
  e["error"]["message"] = message;
  err << e.dump() << '\n';
}

template <typename T>
T lookup(const std::map<std::string, T>& choices, const std::string& value, std::string_view flag) {
  const auto it = choices.find(value);
  if (it != choices.end()) return it->second;
  std::string names;
  for (const auto& [k, _] : choices) names += (names.empty() ? "" : ", ") + k;
  throw Error(ErrorClass::configuration,
              std::string(flag) + ": unknown value '" + value + "' (expected one of " + names + ")");
}

struct HelpRequested {
  std::string text;
};

/// Parses argv into a RunConfig; throws CLI::ParseError on bad flags and
/// HelpRequested for --help.
inline RunConfig parse_args(int argc, const char* const* argv) {
  RunConfig cfg;
  CLI::App app{"Estimate tolerance for divergence from optimality"};
  const std::map<std::string, Command> commands{{"estimate", Command::estimate},
                                                {"curves", Command::curves},
                                                {"simulate-mc", Command::simulate_mc},
                                                {"consistency", Command::consistency},
                                                {"ingest-check", Command::ingest_check}};
  const std::map<std::string, Norm> norms{{"l2", Norm::l2_squared}, {"l1", Norm::l1}};
  const std::map<std::string, WeightMode> weights{
      {"none", WeightMode::none}, {"sixty-minus-midpoint", WeightMode::sixty_minus_midpoint}};
  const std::map<std::string, Method> methods{{"closed-form", Method::closed_form},
                                              {"grid", Method::grid}};
  const std::map<std::string, ShapeScope> scopes{{"per-dataset", ShapeScope::per_dataset},
                                                 {"per-observation", ShapeScope::per_observation}};
  const std::map<std::string, Format> formats{{"json", Format::json}, {"csv", Format::csv}};

  std::string command, norm = "l2", weight_mode = "none", method = "closed-form",
                     scope = "per-dataset", format = "json";
  app.add_option("--command", command, "estimate | curves | simulate-mc | consistency | ingest-check")
      ->required();
  app.add_option("--exposures", cfg.exposures, "exposures CSV (mouse_id,exposed)");
  auto* bins = app.add_option("--bins", cfg.bins, "binned counts CSV (mouse_id,session,b0..)");
  auto* events = app.add_option("--events", cfg.events, "press events CSV (mouse_id,session,press_time_s)");
  bins->excludes(events);
  app.add_option("--optimal", cfg.optimal, "optimal action, one value per bin (scalar for simulate-mc)");
  app.add_option("--norm", norm, "l2 | l1");
  app.add_option("--weights", weight_mode, "none | sixty-minus-midpoint");
  app.add_option("--method", method, "closed-form | grid");
  app.add_option("--grid-step", cfg.grid_step, "grid step for --method grid")
      ->check(CLI::Range(1e-9, 1.0));
  app.add_option("--grid-points", cfg.grid_points, "theta grid size for curves")
      ->check(CLI::Range(std::size_t{2}, std::size_t{100'000'000}));
  app.add_option("--bootstrap", cfg.bootstrap, "bootstrap replicates (0 = off, else >= 100)");
  app.add_option("--level", cfg.level, "bootstrap interval level")->check(CLI::Range(0.0, 1.0));
  app.add_option("--seed", cfg.seed);
  app.add_option("--n", cfg.n, "observations per simulated dataset");
  app.add_option("--datasets", cfg.datasets, "number of Monte-Carlo datasets");
  app.add_option("--p-exposed", cfg.p_exposed)->check(CLI::Range(0.0, 1.0));
  app.add_option("--shape-scope", scope, "per-dataset | per-observation");
  app.add_option("--ns", cfg.ns, "sample sizes for consistency")->delimiter(',');
  app.add_option("--replicates", cfg.replicates);
  app.add_option("--interval", cfg.interval_s, "fixed interval length in seconds");
  app.add_option("--bin-width", cfg.bin_width_s, "bin width in seconds");
  app.add_option("--sessions", cfg.sessions_expected, "expected sessions per mouse");
  app.add_option("--workers", cfg.workers, "worker threads for simulate-mc");
  app.add_option("--out", cfg.out, "output path (default: standard output)");
  app.add_option("--format", format, "json | csv");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    throw HelpRequested{app.help()};
  }
  cfg.command = lookup(commands, command, "--command");
  cfg.norm = lookup(norms, norm, "--norm");
  cfg.weights = lookup(weights, weight_mode, "--weights");
  cfg.method = lookup(methods, method, "--method");
  cfg.shape_scope = lookup(scopes, scope, "--shape-scope");
  cfg.format = lookup(formats, format, "--format");
  if (cfg.weights == WeightMode::sixty_minus_midpoint &&
      (cfg.command == Command::simulate_mc || cfg.command == Command::consistency))
    throw Error(ErrorClass::configuration,
                "--weights sixty-minus-midpoint needs a binned study layout");
  return cfg;
}

/// Runs one command. Returns the process exit status: 0 success, 1
/// validation or data error, 2 configuration error.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  try {
    cfg = parse_args(argc, argv);
  } catch (const HelpRequested& h) {
    out << h.text;
    return 0;
  } catch (const CLI::ParseError& e) {
    write_error(err, "configuration", e.what());
    return 2;
  } catch (const Error& e) {
    write_error(err, divtol::to_string(e.error_class()), e.what());
    return exit_code(e.error_class());
  }

  try {
    std::string summary;
    bool clean = true;
    Document doc;
    switch (cfg.command) {
      case Command::estimate: doc = cmd_estimate(cfg, summary); break;
      case Command::curves: doc = cmd_curves(cfg, summary); break;
      case Command::simulate_mc: doc = cmd_simulate_mc(cfg, summary); break;
      case Command::consistency: doc = cmd_consistency(cfg, summary); break;
      case Command::ingest_check: doc = cmd_ingest_check(cfg, summary, clean); break;
    }
    const auto text = render(doc, cfg.format);
    if (cfg.out.empty()) {
      out << text;
      err << summary << '\n';
    } else {
      std::ofstream file(cfg.out, std::ios::binary | std::ios::trunc);
      if (!file) throw Error(ErrorClass::io, "cannot write '" + cfg.out + "'");
      file << text;
      file.close();
      if (!file) throw Error(ErrorClass::io, "failed writing '" + cfg.out + "'");
      out << summary << '\n';
    }
    return clean ? 0 : 1;
  } catch (const Error& e) {
    write_error(err, divtol::to_string(e.error_class()), e.what());
    return exit_code(e.error_class());
  } catch (const std::exception& e) {
    write_error(err, "internal", e.what());
    return 1;
  }
}

}  // namespace divtol::cli
