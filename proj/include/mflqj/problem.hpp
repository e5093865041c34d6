#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "matrix_path.hpp"

namespace mflqj {

/// One atom theta_i of the jump measure, carrying rate lambda_i = nu({theta_i}).
struct JumpAtom {
  double rate = 0.0;
  double mark = 0.0;
  MatrixPath E, Ebar;  // n x n
  MatrixPath F, Fbar;  // n x m
};

/// Finite atomic Levy measure nu = sum_i rate_i * delta_{mark_i}.
struct JumpMeasure {
  std::vector<JumpAtom> atoms;

  [[nodiscard]] std::size_t size() const noexcept { return atoms.size(); }
  [[nodiscard]] double total_rate() const {
    double s = 0.0;
    for (const auto& a : atoms) s += a.rate;
    return s;
  }
};

struct Dynamics {
  MatrixPath A, Abar;  // n x n
  MatrixPath B, Bbar;  // n x m
  MatrixPath C, Cbar;  // n x n
  MatrixPath D, Dbar;  // n x m
};

/// Cost weights in the uncentered convention; S couples state and control as <S u, X>.
struct CostWeights {
  MatrixPath Q, Qbar;  // n x n
  MatrixPath S, Sbar;  // n x m
  MatrixPath R, Rbar;  // m x m
  Matrix G, Gbar;      // n x n
};

struct ProblemSpec {
  int n = 0;
  int m = 0;
  TimeGrid grid;
  Dynamics dynamics;
  JumpMeasure jumps;
  CostWeights weights;
  Vector x0;
};

struct Violation {
  ErrorKind kind;
  std::string field;
  std::string message;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<Violation> v)
      : Error(v.empty() ? ErrorKind::ShapeMismatch : v.front().kind, summarize(v)), violations_(std::move(v)) {}

  [[nodiscard]] const std::vector<Violation>& violations() const noexcept { return violations_; }

 private:
  static std::string summarize(const std::vector<Violation>& v) {
    std::string s;
    for (const auto& x : v) {
      if (!s.empty()) s += "; ";
      s += x.field + ": " + x.message;
    }
    return s;
  }
  std::vector<Violation> violations_;
};

namespace detail {

inline bool nearly_symmetric(const Matrix& w) {
  const double scale = std::max(1.0, w.cwiseAbs().maxCoeff());
  return (w - w.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale;
}

inline bool all_finite(const Matrix& w) { return w.allFinite(); }

inline void check_path(std::vector<Violation>& out, const std::string& name, const MatrixPath& p,
                       const TimeGrid& grid, Eigen::Index rows, Eigen::Index cols, bool symmetric) {
  if (p.empty()) {
    out.push_back({ErrorKind::ShapeMismatch, name, "missing"});
    return;
  }
  if (p.grid() != grid) {
    out.push_back({ErrorKind::GridMismatch, name, "sampled on a different grid"});
    return;
  }
  if (p.rows() != rows || p.cols() != cols) {
    out.push_back({ErrorKind::ShapeMismatch, name,
                   "expected " + std::to_string(rows) + "x" + std::to_string(cols) + ", got " +
                       std::to_string(p.rows()) + "x" + std::to_string(p.cols())});
    return;
  }
  for (int k = 0; k < grid.nodes(); ++k) {
    if (!all_finite(p.node(k))) {
      out.push_back({ErrorKind::ShapeMismatch, name, "non-finite entry at node " + std::to_string(k)});
      return;
    }
    if (symmetric && !nearly_symmetric(p.node(k))) {
      out.push_back({ErrorKind::AsymmetricWeight, name, "not symmetric at node " + std::to_string(k)});
      return;
    }
  }
}

inline void check_matrix(std::vector<Violation>& out, const std::string& name, const Matrix& w, Eigen::Index n) {
  if (w.rows() != n || w.cols() != n) {
    out.push_back({ErrorKind::ShapeMismatch, name, "expected " + std::to_string(n) + "x" + std::to_string(n)});
  } else if (!all_finite(w)) {
    out.push_back({ErrorKind::ShapeMismatch, name, "non-finite entry"});
  } else if (!nearly_symmetric(w)) {
    out.push_back({ErrorKind::AsymmetricWeight, name, "not symmetric"});
  }
}

}  // namespace detail

/// All violations found in a spec; empty means well formed.
inline std::vector<Violation> collect_violations(const ProblemSpec& s) {
  std::vector<Violation> out;
  if (s.n < 1 || s.m < 1) {
    out.push_back({ErrorKind::ShapeMismatch, "dimensions", "n and m must be positive"});
    return out;
  }
  const auto& g = s.grid;
  const auto& d = s.dynamics;
  detail::check_path(out, "dynamics.A", d.A, g, s.n, s.n, false);
  detail::check_path(out, "dynamics.Abar", d.Abar, g, s.n, s.n, false);
  detail::check_path(out, "dynamics.B", d.B, g, s.n, s.m, false);
  detail::check_path(out, "dynamics.Bbar", d.Bbar, g, s.n, s.m, false);
  detail::check_path(out, "dynamics.C", d.C, g, s.n, s.n, false);
  detail::check_path(out, "dynamics.Cbar", d.Cbar, g, s.n, s.n, false);
  detail::check_path(out, "dynamics.D", d.D, g, s.n, s.m, false);
  detail::check_path(out, "dynamics.Dbar", d.Dbar, g, s.n, s.m, false);
  for (std::size_t i = 0; i < s.jumps.atoms.size(); ++i) {
    const auto& a = s.jumps.atoms[i];
    const std::string p = "jumps[" + std::to_string(i) + "]";
    if (!(a.rate > 0.0) || !std::isfinite(a.rate)) out.push_back({ErrorKind::ShapeMismatch, p + ".rate", "must be positive"});
    detail::check_path(out, p + ".E", a.E, g, s.n, s.n, false);
    detail::check_path(out, p + ".Ebar", a.Ebar, g, s.n, s.n, false);
    detail::check_path(out, p + ".F", a.F, g, s.n, s.m, false);
    detail::check_path(out, p + ".Fbar", a.Fbar, g, s.n, s.m, false);
  }
  const auto& w = s.weights;
  detail::check_path(out, "weights.Q", w.Q, g, s.n, s.n, true);
  detail::check_path(out, "weights.Qbar", w.Qbar, g, s.n, s.n, true);
  detail::check_path(out, "weights.S", w.S, g, s.n, s.m, false);
  detail::check_path(out, "weights.Sbar", w.Sbar, g, s.n, s.m, false);
  detail::check_path(out, "weights.R", w.R, g, s.m, s.m, true);
  detail::check_path(out, "weights.Rbar", w.Rbar, g, s.m, s.m, true);
  detail::check_matrix(out, "weights.G", w.G, s.n);
  detail::check_matrix(out, "weights.Gbar", w.Gbar, s.n);
  if (s.x0.size() != s.n) {
    out.push_back({ErrorKind::ShapeMismatch, "x0", "expected length " + std::to_string(s.n)});
  } else if (!s.x0.allFinite()) {
    out.push_back({ErrorKind::ShapeMismatch, "x0", "non-finite entry"});
  }
  return out;
}

/// A spec that passed validation. Immutable and cheap to copy.
class Problem {
 public:
  [[nodiscard]] const ProblemSpec& spec() const noexcept { return *spec_; }
  [[nodiscard]] const TimeGrid& grid() const noexcept { return spec_->grid; }
  [[nodiscard]] int n() const noexcept { return spec_->n; }
  [[nodiscard]] int m() const noexcept { return spec_->m; }
  [[nodiscard]] const Dynamics& dynamics() const noexcept { return spec_->dynamics; }
  [[nodiscard]] const JumpMeasure& jumps() const noexcept { return spec_->jumps; }
  [[nodiscard]] const CostWeights& weights() const noexcept { return spec_->weights; }
  [[nodiscard]] const Vector& x0() const noexcept { return spec_->x0; }

  /// Same dynamics, different weights.
  [[nodiscard]] Problem with_weights(CostWeights w) const;
  [[nodiscard]] Problem with_x0(Vector x) const;

 private:
  explicit Problem(std::shared_ptr<const ProblemSpec> s) : spec_(std::move(s)) {}
  friend Problem validate_spec(ProblemSpec spec);
  std::shared_ptr<const ProblemSpec> spec_;
};

/// Throws ValidationError listing every violation.
inline Problem validate_spec(ProblemSpec spec) {
  auto v = collect_violations(spec);
  if (!v.empty()) throw ValidationError(std::move(v));
  // Exact symmetry downstream.
  auto symmetrize = [](MatrixPath& p) {
    for (int k = 0; k < p.grid().nodes(); ++k) {
      Matrix s = 0.5 * (p.node(k) + p.node(k).transpose());
      p.node(k) = s;
    }
  };
  symmetrize(spec.weights.Q);
  symmetrize(spec.weights.Qbar);
  symmetrize(spec.weights.R);
  symmetrize(spec.weights.Rbar);
  spec.weights.G = 0.5 * (spec.weights.G + spec.weights.G.transpose()).eval();
  spec.weights.Gbar = 0.5 * (spec.weights.Gbar + spec.weights.Gbar.transpose()).eval();
  return Problem(std::make_shared<const ProblemSpec>(std::move(spec)));
}

inline Problem Problem::with_weights(CostWeights w) const {
  ProblemSpec s = *spec_;
  s.weights = std::move(w);
  return validate_spec(std::move(s));
}

inline Problem Problem::with_x0(Vector x) const {
  ProblemSpec s = *spec_;
  s.x0 = std::move(x);
  return validate_spec(std::move(s));
}

/// Which jump coefficient enters a bilinear form.
enum class JumpSelector { E, Ebar, EplusEbar, F, Fbar, FplusFbar };

inline Matrix select(const JumpAtom& a, JumpSelector s, TimePoint p) {
  switch (s) {
    case JumpSelector::E: return a.E.at(p);
    case JumpSelector::Ebar: return a.Ebar.at(p);
    case JumpSelector::EplusEbar: return a.E.at(p) + a.Ebar.at(p);
    case JumpSelector::F: return a.F.at(p);
    case JumpSelector::Fbar: return a.Fbar.at(p);
    case JumpSelector::FplusFbar: return a.F.at(p) + a.Fbar.at(p);
  }
  return {};
}

inline bool is_state_selector(JumpSelector s) {
  return s == JumpSelector::E || s == JumpSelector::Ebar || s == JumpSelector::EplusEbar;
}

/// sum_i rate_i * L_i^T P R_i, the integral of L^T P R against nu. m is the control dimension.
inline Matrix jump_bilinear(const JumpMeasure& nu, TimePoint p, const Matrix& P, JumpSelector left,
                            JumpSelector right, Eigen::Index m) {
  const Eigen::Index n = P.rows();
  Matrix out = Matrix::Zero(is_state_selector(left) ? n : m, is_state_selector(right) ? n : m);
  for (const auto& a : nu.atoms) out.noalias() += a.rate * (select(a, left, p).transpose() * P * select(a, right, p));
  return out;
}

/// Outcome of checking positivity of the cost weights.
struct SReport {
  struct Entry {
    std::string quantity;
    double t = 0.0;
    double min_eig = 0.0;
  };
  bool pass = false;
  double alpha0 = 0.0;  // min over nodes of lambda_min(R) and lambda_min(R + Rbar)
  std::vector<Entry> violations;
};

namespace detail {

inline double min_eig(const Matrix& w) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (w + w.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline double condition(const Matrix& w) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (w + w.transpose()), Eigen::EigenvaluesOnly);
  const auto ev = es.eigenvalues().cwiseAbs();
  const double lo = ev.minCoeff();
  return lo == 0.0 ? std::numeric_limits<double>::infinity() : ev.maxCoeff() / lo;
}

}  // namespace detail

/// Checks R, R+Rbar >= alpha0_min, the Schur complements of (Q, S, R) and its barred sum, and G, G+Gbar.
inline SReport check_assumption_S(const CostWeights& w, const TimeGrid& grid, double alpha0_min = 1e-6,
                                  double eig_tol = 1e-10) {
  SReport rep;
  rep.alpha0 = std::numeric_limits<double>::infinity();
  auto flag = [&](const std::string& q, double t, double e) { rep.violations.push_back({q, t, e}); };
  for (int k = 0; k < grid.nodes(); ++k) {
    const double t = grid.time(k);
    const Matrix R = w.R.node(k);
    const Matrix Rs = R + w.Rbar.node(k);
    const Matrix S = w.S.node(k);
    const Matrix Ss = S + w.Sbar.node(k);
    const Matrix Q = w.Q.node(k);
    const Matrix Qs = Q + w.Qbar.node(k);
    const double eR = detail::min_eig(R);
    const double eRs = detail::min_eig(Rs);
    rep.alpha0 = std::min({rep.alpha0, eR, eRs});
    if (eR < alpha0_min) flag("R", t, eR);
    if (eRs < alpha0_min) flag("R+Rbar", t, eRs);
    auto schur = [&](const Matrix& q, const Matrix& s, const Matrix& r, const std::string& name) {
      if (detail::condition(r) > 1e12) {
        flag(name + " (R singular)", t, std::numeric_limits<double>::quiet_NaN());
        return;
      }
      const Matrix sc = q - s * r.partialPivLu().solve(s.transpose());
      const double e = detail::min_eig(sc);
      if (e < -eig_tol) flag(name, t, e);
    };
    schur(Q, S, R, "Q-S R^-1 S^T");
    schur(Qs, Ss, Rs, "(Q+Qbar)-(S+Sbar)(R+Rbar)^-1(S+Sbar)^T");
  }
  const double eG = detail::min_eig(w.G);
  const double eGs = detail::min_eig(w.G + w.Gbar);
  if (eG < -eig_tol) flag("G", grid.horizon(), eG);
  if (eGs < -eig_tol) flag("G+Gbar", grid.horizon(), eGs);
  rep.pass = rep.violations.empty();
  return rep;
}

}  // namespace mflqj
