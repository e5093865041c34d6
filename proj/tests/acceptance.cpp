// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <iostream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include "support.hpp"

using namespace mflqj;
namespace fs = std::filesystem;

namespace {

int failures = 0;
std::optional<std::pair<bool, std::string>> equivalence_line;  // computed alongside criterion 2

void report(int id, bool pass, const std::string& what) {
  std::printf("criterion %2d %s  %s\n", id, pass ? "PASS" : "FAIL", what.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string g(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.3g", v);
  return b;
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

double max_err(const MatrixPath& p, const std::function<double(double)>& f) {
  double e = 0.0;
  for (int k = 0; k < p.grid().nodes(); ++k) e = std::max(e, std::abs(p.node(k)(0, 0) - f(p.grid().time(k))));
  return e;
}

SimulationOptions sim(std::size_t paths, bool check = false, bool keep = false) {
  SimulationOptions so;
  so.paths = paths;
  so.seed = 42;
  so.check_consistency = check;
  so.materialize = keep;
  return so;
}

void criterion_1() {
  const Stopwatch sw;
  const double T = 1.0, delta = 1.0;
  const Problem pb = examples::example_51(1000, delta, T);
  const RiccatiSolution sol = solve_riccati(pb);
  const FeedbackLaw law = synthesize_feedback(pb, sol);
  const double eP = max_err(sol.P, [](double) { return 2.0; });
  const double ePi = max_err(sol.Pi, [&](double t) { return delta / (2 * T - 2 * t + delta); });
  const double eV = std::abs(optimal_value(sol, pb.x0()) - 1.0 / 6.0);
  const double eK0 = max_err(law.K0, [](double) { return 0.5; });
  const double eK1 = max_err(law.K1, [&](double t) { return 1.0 / (2 * T - 2 * t + delta); });
  const double secs = sw.seconds();
  report(1, eP <= 1e-8 && ePi <= 1e-6 && eV <= 1e-6 && eK0 <= 1e-8 && eK1 <= 1e-6 && secs < 5.0,
         "closed-form Riccati: |P-2| " + g(eP) + ", |Pi-cf| " + g(ePi) + ", |V-1/6| " + g(eV) + ", |K0-1/2| " +
             g(eK0) + ", |K1-cf| " + g(eK1) + ", " + g(secs) + " s");
}

void criteria_2_and_7() {
  const Stopwatch sw;
  const Problem pb = examples::example_51(500);
  const RiccatiSolution sol = solve_riccati(pb);
  const FeedbackLaw law = synthesize_feedback(pb, sol);
  const ControlPolicy pol = ControlPolicy::feedback(law);
  const PathEnsemble ens = simulate_paths(pb, pol, solve_mean_ode(pb, pol), sim(100000));
  const CostEstimate J = estimate_cost(ens, pb.weights());
  const double secs = sw.seconds();
  const double gap = std::abs(J.mean - 1.0 / 6.0);
  report(2, gap <= std::max(3.0 * J.se, 2e-3) && secs < 60.0,
         "Monte Carlo value: J_hat " + g(J.mean) + ", SE " + g(J.se) + ", |J_hat-1/6| " + g(gap) + ", " + g(secs) +
             " s");

  const FunctionalShift canon = canonical_shift(pb, sol);
  const CostWeights cw = shift_weights(pb, canon);
  bool ok = true;
  std::string detail;
  auto run = [&](const std::string& name, const ControlPolicy& p, const PathEnsemble* e) {
    std::optional<PathEnsemble> own;
    if (!e) {
      own.emplace(simulate_paths(pb, p, solve_mean_ode(pb, p), sim(100000)));
      e = &*own;
    }
    const EquivalenceCheck q = equivalence_by_constant(pb, canon, cw, *e);
    const bool pass = std::abs(q.gap.mean) <= 3.0 * q.gap.se + 5e-3;
    ok = ok && pass;
    detail += name + " " + g(q.gap.mean) + " (SE " + g(q.gap.se) + ") ";
  };
  run("optimal", pol, &ens);
  run("zero", ControlPolicy::zero(pb), nullptr);
  run("open-loop", ControlPolicy::open_loop(pb, random_direction(pb, 1042, 0)), nullptr);
  equivalence_line.emplace(ok, "equivalence by constant, gaps: " + detail);
}

void criterion_3() {
  const Stopwatch sw;
  const Problem pb = examples::example_51(500);
  const RiccatiSolution sol = solve_riccati(pb);
  PerturbationOptions po;
  po.directions = 8;
  po.eps = {0.4, 0.2};
  po.paths = 100000;
  po.seed = 42;
  const PerturbationReport r = perturbation_test(pb, synthesize_feedback(pb, sol), sol, po);
  const double secs = sw.seconds();
  double min_z = 1e300;
  for (const auto& e : r.entries) min_z = std::min(min_z, e.delta.mean / std::max(e.delta.se, 1e-300));
  int tested = 0;
  double lo = 1e300, hi = -1e300;
  for (const auto& q : r.ratios) {
    if (!q.tested) continue;
    ++tested;
    lo = std::min(lo, q.ratio);
    hi = std::max(hi, q.ratio);
  }
  report(3, r.pass() && secs < 300.0,
         "perturbation: min Delta J / SE " + g(min_z) + ", ratios tested " + std::to_string(tested) + " in [" +
             g(lo) + ", " + g(hi) + "], " + g(secs) + " s");
}

void criterion_4() {
  std::mt19937_64 rng(20240607);
  std::uniform_int_distribution<int> dim(1, 3), natoms(0, 3);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    testing_support::RandomOptions o{dim(rng), dim(rng), 10, natoms(rng), false, 0.8};
    const Problem pb = testing_support::random_problem(rng, o);
    const Problem red = nc_reduce(pb);
    const TimePoint p{static_cast<int>(rng() % 10), 0.5};
    const Matrix L = testing_support::sym(rng, o.n), W = testing_support::spd(rng, o.n, 0.2);
    auto rel = [](const Matrix& a, const Matrix& b) {
      return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
    };
    worst = std::max(worst, rel(g_function(primary_bundle(red, p), L, W), g_function(primary_bundle(pb, p), L, W)));
    worst = std::max(worst, rel(g_function(mean_bundle(red, p), L, W), g_function(mean_bundle(pb, p), L, W)));
  }
  report(4, worst <= 1e-9, "cross-weight removal leaves the bracket unchanged: worst relative gap " + g(worst));
}

void criterion_5() {
  const int M = 20000;
  const Problem pb = examples::example_52(M);
  const FunctionalShift sh = examples::example_52_shift(pb.grid());
  const Problem spb = pb.with_weights(shift_weights(pb, sh));
  const RiccatiSolution pull = pullback_riccati(pb, solve_riccati(spb), sh);
  const double res = riccati_residual(pb, pull).max();
  const RiccatiSolution direct = solve_riccati(pb);
  const double diff = std::max(max_abs_diff(pull.P, direct.P), max_abs_diff(pull.Pi, direct.Pi));
  report(5, res <= 1e-5 && diff <= 1e-6,
         "pullback on the time-varying example (M=" + std::to_string(M) + "): residual " + g(res) +
             ", vs direct " + g(diff));
}

void criterion_6() {
  std::string detail;
  bool ok = true;
  {
    const Problem pb = examples::example_51(1000);
    const SReport r = check_assumption_S(pb.weights(), pb.grid());
    bool on_r = false;
    for (const auto& v : r.violations) on_r |= v.quantity == "R";
    ok = ok && !r.pass && on_r;
    detail += "5.1 original fails on R: " + std::string(!r.pass && on_r ? "yes" : "no") + "; ";
  }
  {
    const Problem pb = examples::example_52(1000);
    const SReport a = check_assumption_S(pb.weights(), pb.grid());
    const SReport b = check_assumption_S(shift_weights(pb, examples::example_52_shift(pb.grid())), pb.grid());
    ok = ok && !a.pass && b.pass && b.alpha0 >= 1.0 - 1e-12;
    detail += "5.2 original fails: " + std::string(a.pass ? "no" : "yes") + ", shifted alpha0 " + g(b.alpha0) + "; ";
  }
  {
    const Problem pb = examples::example_53(1000);
    const SReport b = check_assumption_S(shift_weights(pb, examples::example_53_shift(pb.grid())), pb.grid());
    ok = ok && b.pass && std::abs(b.alpha0 - 1.0) <= 1e-12;
    detail += "5.3 shifted alpha0 " + g(b.alpha0) + "; ";
  }
  double forced = 0.0;
  bool canon_pass = true;
  std::mt19937_64 rng(7);
  std::vector<Problem> instances{examples::example_51(1000)};
  for (int i = 0; i < 5; ++i) instances.push_back(testing_support::random_problem(rng, {2, 2, 400, 2, true, 0.4}));
  for (const Problem& pb : instances) {
    const CostWeights w = shift_weights(pb, canonical_shift(pb, solve_riccati(pb)));
    canon_pass = canon_pass && check_assumption_S(w, pb.grid()).pass;
    forced = std::max({forced, w.G.cwiseAbs().maxCoeff(), (w.G + w.Gbar).cwiseAbs().maxCoeff(),
                       mflqj::detail::schur_magnitude(w)});
  }
  ok = ok && canon_pass && forced <= 1e-8;
  detail += "canonical shift passes: " + std::string(canon_pass ? "yes" : "no") + ", forced quantities " + g(forced);
  report(6, ok, "positivity checker: " + detail);
}

void criterion_8() {
  VerifyOptions o;
  o.grid = 1000;
  const VerificationReport rep = verify_53(o);
  double uyz = 1e300, stat = 1e300;
  for (const auto& c : rep.checks) {
    if (c.name == "max |-u + Y + Z|") uyz = c.observed;
    if (c.name == "stationarity of the pulled-back adjoint") stat = c.observed;
  }
  report(8, uyz <= 1e-8 && stat <= 1e-8 && rep.pass(),
         "forward-backward certification on 100 paths: |u-Y-Z| " + g(uyz) + ", stationarity " + g(stat) +
             ", all pipeline checks " + (rep.pass() ? "pass" : "do not pass"));
}

void criterion_9() {
  const examples::AssetLiabilityParams q;
  const Problem pb = examples::example_54(q, 1000);
  const SReport s = check_assumption_S(shift_weights(pb, examples::example_54_shift(q, pb.grid())), pb.grid());
  bool solved = true;
  try {
    solve_riccati(pb);
  } catch (const SigmaSingularError&) {
    solved = false;
  }
  const SweepResult r = sweep_54(q, "r", {0.05, 0.1, 0.15, 0.2}, 1000, 1);
  examples::AssetLiabilityParams qa = q;
  qa.r = 0.05;
  const SweepResult a = sweep_54(qa, "a", {0.1, 0.2, 0.3, 0.4}, 1000, 1);
  const bool mr = increasing_in_param(r), ma = increasing_in_param(a);
  report(9, s.pass && solved && mr && ma,
         std::string("asset-liability: shift feasible ") + (s.pass ? "yes" : "no") + ", solved " +
             (solved ? "yes" : "no") + ", E[u] increasing in r " + (mr ? "yes" : "no") + ", in a " +
             (ma ? "yes" : "no") + " at every interior node");
}

void criterion_10() {
  bool ok = true;
  std::string detail;
  auto one = [&](const std::string& name, const Problem& pb) {
    const RiccatiSolution sol = solve_riccati(pb);
    const FeedbackLaw law = synthesize_feedback(pb, sol);
    const ControlPolicy pol = ControlPolicy::feedback(law);
    const PathEnsemble ens = simulate_paths(pb, pol, solve_mean_ode(pb, pol), sim(100));
    const double stat = stationarity_residual(pb, ens, adjoint_representation(pb, sol, law), 100);
    const double res = riccati_residual(pb, sol).max();
    const double bound = 1e-8 * (1.0 + res / 1e-10);
    // The residual-scaled bound is loose on coarse grids; the strict 1e-8 is what is checked.
    ok = ok && stat <= std::min(bound, 1e-8);
    detail += name + " " + g(stat) + "; ";
  };
  one("5.1", examples::example_51(1000));
  one("5.2", examples::example_52(1000));
  one("5.3", examples::example_53(1000));
  one("5.4", examples::example_54({}, 1000));
  report(10, ok, "stationarity under synthesized feedback: " + detail);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void criterion_11() {
  const fs::path base = fs::temp_directory_path() / "mflqj_acceptance_determinism";
  fs::remove_all(base);
  const fs::path a = base / "a", b = base / "b";
  auto cmd = [](const fs::path& out) {
    return std::string("\"") + MFLQJ_CLI_PATH + "\" verify-example 5.1 --grid 200 --paths 5000 --seed 7 --out \"" +
           out.string() + "\" > \"" + out.string() + ".log\" 2>&1";
  };
  fs::create_directories(base);
  const int ra = std::system(cmd(a).c_str());
  const int rb = std::system(cmd(b).c_str());
  // Exit status 1 only means a statistical check failed at these small settings; 2 is an error.
  const int sa = WIFEXITED(ra) ? WEXITSTATUS(ra) : -1, sb = WIFEXITED(rb) ? WEXITSTATUS(rb) : -1;
  int files = 0, same = 0;
  if (fs::exists(a)) {
    for (const auto& e : fs::directory_iterator(a)) {
      if (e.path().extension() != ".csv") continue;
      ++files;
      if (fs::exists(b / e.path().filename()) && slurp(e.path()) == slurp(b / e.path().filename())) ++same;
    }
  }
  report(11, files > 0 && same == files && sa == sb && (sa == 0 || sa == 1),
         "two CLI runs of verify-example 5.1: " + std::to_string(same) + " of " + std::to_string(files) +
             " CSV files byte-identical (exit statuses " +
             std::to_string(sa) + ", " + std::to_string(sb) + ")");
}

}  // namespace

int main() {
  const Stopwatch total;
  auto guard = [](int id, const std::function<void()>& f) {
    try {
      f();
    } catch (const std::exception& e) {
      report(id, false, std::string("raised: ") + e.what());
    }
  };
  guard(1, criterion_1);
  guard(2, criteria_2_and_7);
  guard(3, criterion_3);
  guard(4, criterion_4);
  guard(5, criterion_5);
  guard(6, criterion_6);
  if (equivalence_line) {
    report(7, equivalence_line->first, equivalence_line->second);
  } else {
    report(7, false, "not computed");
  }
  guard(8, criterion_8);
  guard(9, criterion_9);
  guard(10, criterion_10);
  guard(11, criterion_11);
  std::printf("%d criteria failed, %.1f s total\n", failures, total.seconds());
  return failures == 0 ? 0 : 1;
}
