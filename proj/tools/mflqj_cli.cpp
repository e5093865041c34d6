// Command-line front end: solve, check-s, shift, simulate, verify-example, sweep.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "mflqj/mflqj.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mflqj;

namespace {

struct RunConfig {
  std::string target;  // problem file or built-in example id
  int grid = 0;        // 0: take M from the file (or 1000)
  int substeps = 1;
  std::string out;
  double delta = 1.0;
  bool delta_given = false;
  std::size_t paths = 100000;
  std::uint64_t seed = 42;
  unsigned threads = 0;
};

bool is_example_id(const std::string& s) { return s == "5.1" || s == "5.2" || s == "5.3" || s == "5.4"; }

json load_document(const RunConfig& c) {
  json doc;
  if (is_example_id(c.target) && !fs::exists(c.target)) {
    doc = {{"example", c.target}, {"params", json::object()}};
  } else {
    doc = io::read_json(c.target);
  }
  if (c.delta_given && doc.contains("example") && doc["example"] == "5.1") doc["params"]["delta"] = c.delta;
  return doc;
}

json matrix_json(const Matrix& a) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < a.cols(); ++j) r.push_back(a(i, j));
    rows.push_back(r);
  }
  return rows;
}

json s_report_json(const SReport& r) {
  json j{{"pass", r.pass}, {"alpha0", r.alpha0}, {"violation_count", r.violations.size()}};
  j["violations"] = json::array();
  for (std::size_t i = 0; i < r.violations.size() && i < 20; ++i) {
    const auto& v = r.violations[i];
    j["violations"].push_back({{"quantity", v.quantity}, {"t", v.t}, {"min_eig", v.min_eig}});
  }
  return j;
}

fs::path prepare_out(const RunConfig& c) {
  if (c.out.empty()) return {};
  fs::create_directories(c.out);
  return c.out;
}

void emit_summary(const json& summary, const fs::path& dir) {
  std::cout << summary.dump(2) << "\n";
  if (dir.empty()) return;
  std::ofstream f(dir / "summary.json", std::ios::binary);
  if (!f) throw Error(ErrorKind::IoError, "cannot write " + (dir / "summary.json").string());
  f << summary.dump(2) << "\n";
}

int cmd_solve(const RunConfig& c) {
  const Problem pb = io::parse_problem(load_document(c), c.grid);
  const RiccatiSolution sol = solve_riccati(pb, c.substeps);
  const FeedbackLaw law = synthesize_feedback(pb, sol);
  const MeanTrajectory mean = solve_mean_ode(pb, ControlPolicy::feedback(law));
  const RiccatiResidual res = riccati_residual(pb, sol);
  json s{{"n", pb.n()},
         {"m", pb.m()},
         {"T", pb.grid().horizon()},
         {"M", pb.grid().intervals()},
         {"optimal_value", optimal_value(sol, pb.x0())},
         {"P0", matrix_json(sol.P.node(0))},
         {"Pi0", matrix_json(sol.Pi.node(0))},
         {"max_sigma_condition", sol.stats.max_condition},
         {"residual_P", res.P},
         {"residual_Pi", res.Pi}};
  const fs::path dir = prepare_out(c);
  if (!dir.empty()) {
    io::write_riccati_csv(dir / "riccati.csv", sol);
    io::write_gains_csv(dir / "gains.csv", law);
    io::write_mean_csv(dir / "mean.csv", mean);
  }
  emit_summary(s, dir);
  return 0;
}

int cmd_check_s(const RunConfig& c) {
  const Problem pb = io::parse_problem(load_document(c), c.grid);
  const SReport r = check_assumption_S(pb.weights(), pb.grid());
  emit_summary(s_report_json(r), prepare_out(c));
  return r.pass ? 0 : 1;
}

int cmd_shift(const RunConfig& c, const std::string& shift_arg) {
  const Problem pb = io::parse_problem(load_document(c), c.grid);
  const FunctionalShift sh = shift_arg == "canonical" ? canonical_shift(pb, solve_riccati(pb, c.substeps))
                                                      : io::parse_shift(io::read_json(shift_arg), pb);
  const CostWeights w = shift_weights(pb, sh);
  const SReport before = check_assumption_S(pb.weights(), pb.grid());
  const SReport after = check_assumption_S(w, pb.grid());
  json s{{"original", s_report_json(before)}, {"shifted", s_report_json(after)}};
  const fs::path dir = prepare_out(c);
  if (!dir.empty()) io::write_weights_csv(dir / "weights_shifted.csv", w);
  try {
    const Problem spb = pb.with_weights(w);
    const RiccatiSolution ssol = solve_riccati(spb, c.substeps);
    const RiccatiSolution pull = pullback_riccati(pb, ssol, sh);
    const RiccatiResidual res = riccati_residual(pb, pull);
    s["pullback"] = {{"residual_P", res.P},
                     {"residual_Pi", res.Pi},
                     {"optimal_value", optimal_value(pull, pb.x0())},
                     {"shifted_value", optimal_value(ssol, pb.x0())}};
    if (!dir.empty()) io::write_riccati_csv(dir / "riccati.csv", pull);
  } catch (const SigmaSingularError& e) {
    s["pullback"] = {{"error", e.what()}};
  }
  emit_summary(s, dir);
  return after.pass ? 0 : 1;
}

int cmd_simulate(const RunConfig& c, const std::string& control) {
  const Problem pb = io::parse_problem(load_document(c), c.grid);
  json s{{"control", control}, {"paths", c.paths}, {"seed", c.seed}, {"M", pb.grid().intervals()}};
  ControlPolicy pol = ControlPolicy::zero(pb);
  if (control == "optimal") {
    const RiccatiSolution sol = solve_riccati(pb, c.substeps);
    pol = ControlPolicy::feedback(synthesize_feedback(pb, sol));
    s["optimal_value"] = optimal_value(sol, pb.x0());
  }
  const MeanTrajectory mean = solve_mean_ode(pb, pol);
  SimulationOptions so;
  so.paths = c.paths;
  so.seed = c.seed;
  so.threads = c.threads;
  const PathEnsemble ens = simulate_paths(pb, pol, mean, so);
  const CostEstimate J = estimate_cost(ens, pb.weights());
  s["cost"] = J.mean;
  s["cost_se"] = J.se;
  s["flagged_nodes"] = ens.flagged_nodes();
  const fs::path dir = prepare_out(c);
  if (!dir.empty()) {
    io::write_mean_csv(dir / "mean.csv", mean);
    io::write_paths_csv(dir / "paths.csv", ens, std::min<std::size_t>(20, ens.size()));
    io::CsvWriter w(dir / "node_stats.csv");
    std::vector<std::string> h{"t"};
    for (int j = 0; j < pb.n(); ++j) {
      h.push_back("mean_X" + std::to_string(j));
      h.push_back("sd_X" + std::to_string(j));
      h.push_back("ode_m" + std::to_string(j));
    }
    w.row(h);
    for (int k = 0; k < pb.grid().nodes(); ++k) {
      std::vector<double> r{pb.grid().time(k)};
      for (int j = 0; j < pb.n(); ++j) {
        r.push_back(ens.node_mean()[k](j));
        r.push_back(ens.node_sd()[k](j));
        r.push_back(mean.m[k](j));
      }
      w.row(r);
    }
  }
  emit_summary(s, dir);
  return 0;
}

int cmd_verify(const RunConfig& c) {
  VerifyOptions o;
  o.grid = c.grid > 0 ? c.grid : 1000;
  o.substeps = c.substeps;
  o.paths = c.paths;
  o.seed = c.seed;
  o.delta = c.delta;
  o.threads = c.threads;
  o.out_dir = c.out;
  const VerificationReport rep = run_example(c.target, o);
  std::cout << rep.to_text();
  return rep.pass() ? 0 : 1;
}

/// Sets a number at a dotted location ("weights.R", "dynamics.A.0.1"); for
/// example-form documents a bare name is a parameter of the example.
void set_dotted(json& doc, const std::string& where, double v) {
  if (doc.contains("example") && where.find('.') == std::string::npos) {
    doc["params"][where] = v;
    return;
  }
  json* node = &doc;
  std::size_t pos = 0;
  while (true) {
    const std::size_t dot = where.find('.', pos);
    const std::string key = where.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (node->is_array()) {
      std::size_t idx = 0;
      try {
        idx = std::stoul(key);
      } catch (const std::exception&) {
        throw Error(ErrorKind::ParseError, where + ": '" + key + "' is not an array index");
      }
      if (idx >= node->size()) throw Error(ErrorKind::ParseError, where + ": index " + key + " out of range");
      node = &(*node)[idx];
    } else {
      if (!node->is_object()) throw Error(ErrorKind::ParseError, where + ": cannot descend into a number");
      node = &(*node)[key];
    }
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  *node = v;
}

int cmd_sweep(const RunConfig& c, const std::string& param, const std::vector<double>& values) {
  const json base = load_document(c);
  const SweepResult r = sweep(
      [&](double v) {
        json doc = base;
        set_dotted(doc, param, v);
        return io::parse_problem(doc, c.grid);
      },
      param, values, c.substeps);
  json s{{"param", param}, {"values", values}, {"optimal_value", r.cost}};
  const fs::path dir = prepare_out(c);
  if (!dir.empty()) write_sweep(r, dir, "sweep");
  emit_summary(s, dir);
  return 0;
}

void add_common(CLI::App* sub, RunConfig& c, bool target = true) {
  if (target) sub->add_option("problem", c.target, "problem file (JSON) or built-in example id")->required();
  sub->add_option("--grid", c.grid, "number of grid intervals M")->check(CLI::PositiveNumber);
  sub->add_option("--substeps", c.substeps, "RK4 substeps per grid interval")->check(CLI::PositiveNumber);
  sub->add_option("--out", c.out, "output directory");
  sub->add_option("--delta", c.delta, "delta of example 5.1")->check(CLI::PositiveNumber)->each([&](const std::string&) {
    c.delta_given = true;
  });
  sub->add_option("--threads", c.threads, "worker threads (0: hardware concurrency)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Indefinite mean-field LQ control with jumps"};
  app.require_subcommand(1);
  RunConfig c;
  std::string shift_arg, control = "optimal", param;
  std::vector<double> values;

  auto* solve = app.add_subcommand("solve", "integrate the Riccati pair and synthesize feedback");
  add_common(solve, c);
  auto* check = app.add_subcommand("check-s", "check the uniform positivity condition on the weights");
  add_common(check, c);
  auto* shift = app.add_subcommand("shift", "apply a functional shift and pull the solution back");
  add_common(shift, c);
  shift->add_option("--shift", shift_arg, "shift file or 'canonical'")->required();
  auto* sim = app.add_subcommand("simulate", "Monte Carlo cost of a control");
  add_common(sim, c);
  sim->add_option("--control", control, "optimal or zero")->check(CLI::IsMember({"optimal", "zero"}));
  sim->add_option("--seed", c.seed, "random seed");
  sim->add_option("--paths", c.paths, "number of paths")->check(CLI::PositiveNumber);
  auto* verify = app.add_subcommand("verify-example", "run the verification pipeline of a built-in example");
  add_common(verify, c, false);
  verify->add_option("id", c.target, "5.1, 5.2, 5.3 or 5.4")->required()->check(CLI::IsMember({"5.1", "5.2", "5.3", "5.4"}));
  verify->add_option("--seed", c.seed, "random seed");
  verify->add_option("--paths", c.paths, "number of paths")->check(CLI::PositiveNumber);
  auto* sw = app.add_subcommand("sweep", "solve for a list of parameter values");
  add_common(sw, c);
  sw->add_option("--param", param, "example parameter name or dotted JSON location")->required();
  sw->add_option("--values", values, "comma-separated values")->delimiter(',')->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*solve) return cmd_solve(c);
    if (*check) return cmd_check_s(c);
    if (*shift) return cmd_shift(c, shift_arg);
    if (*sim) return cmd_simulate(c, control);
    if (*verify) return cmd_verify(c);
    if (*sw) return cmd_sweep(c, param, values);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
