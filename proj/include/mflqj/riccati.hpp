#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "matrix_path.hpp"
#include "problem.hpp"

namespace mflqj {

/// Coefficients of one Riccati bracket frozen at a time point.
/// The primary bundle carries (A, B, C, D, E_i, F_i; Q, R, S); the mean bundle carries the barred sums.
struct CoefficientBundle {
  Matrix A, B, C, D;
  std::vector<Matrix> E, F;
  std::vector<double> rates;
  Matrix Q, R, S;
};

inline CoefficientBundle primary_bundle(const Problem& pb, TimePoint p) {
  const auto& d = pb.dynamics();
  const auto& w = pb.weights();
  CoefficientBundle b{d.A.at(p), d.B.at(p), d.C.at(p), d.D.at(p), {}, {}, {}, w.Q.at(p), w.R.at(p), w.S.at(p)};
  for (const auto& a : pb.jumps().atoms) {
    b.E.push_back(a.E.at(p));
    b.F.push_back(a.F.at(p));
    b.rates.push_back(a.rate);
  }
  return b;
}

inline CoefficientBundle mean_bundle(const Problem& pb, TimePoint p) {
  const auto& d = pb.dynamics();
  const auto& w = pb.weights();
  CoefficientBundle b{d.A.at(p) + d.Abar.at(p), d.B.at(p) + d.Bbar.at(p), d.C.at(p) + d.Cbar.at(p),
                      d.D.at(p) + d.Dbar.at(p), {}, {}, {}, w.Q.at(p) + w.Qbar.at(p), w.R.at(p) + w.Rbar.at(p),
                      w.S.at(p) + w.Sbar.at(p)};
  for (const auto& a : pb.jumps().atoms) {
    b.E.push_back(a.E.at(p) + a.Ebar.at(p));
    b.F.push_back(a.F.at(p) + a.Fbar.at(p));
    b.rates.push_back(a.rate);
  }
  return b;
}

/// R + D^T W D + sum rate F^T W F.
inline Matrix bundle_sigma(const CoefficientBundle& b, const Matrix& W) {
  Matrix s = b.R + b.D.transpose() * W * b.D;
  for (std::size_t i = 0; i < b.rates.size(); ++i) s.noalias() += b.rates[i] * (b.F[i].transpose() * W * b.F[i]);
  return 0.5 * (s + s.transpose());
}

/// N^T = S^T + B^T L + D^T W C + sum rate F^T W E, an m x n matrix.
inline Matrix bundle_coupling(const CoefficientBundle& b, const Matrix& L, const Matrix& W) {
  Matrix nt = b.S.transpose() + b.B.transpose() * L + b.D.transpose() * W * b.C;
  for (std::size_t i = 0; i < b.rates.size(); ++i) nt.noalias() += b.rates[i] * (b.F[i].transpose() * W * b.E[i]);
  return nt;
}

inline constexpr double kSigmaConditionLimit = 1e12;

/// Solves Sigma X = rhs; throws SigmaSingularError when Sigma is ill conditioned.
inline Matrix solve_sigma(const Matrix& sigma, const Matrix& rhs, double t, int which, double* cond_out = nullptr) {
  const double cond = detail::condition(sigma);
  if (cond_out) *cond_out = cond;
  if (!(cond <= kSigmaConditionLimit)) throw SigmaSingularError(t, which, cond);
  return sigma.partialPivLu().solve(rhs);
}

/// The Riccati bracket
///   L A + A^T L + C^T W C + sum rate E^T W E + Q - N Sigma^{-1} N^T,
/// with Sigma = R + D^T W D + sum rate F^T W F and N^T = S^T + B^T L + D^T W C + sum rate F^T W E.
/// L = W = P gives the P bracket on the primary bundle; L = Pi, W = P gives the Pi bracket on the mean bundle.
inline Matrix g_function(const CoefficientBundle& b, const Matrix& L, const Matrix& W, double t = 0.0, int which = 0,
                         double* cond_out = nullptr) {
  Matrix g = L * b.A + b.A.transpose() * L + b.C.transpose() * W * b.C + b.Q;
  for (std::size_t i = 0; i < b.rates.size(); ++i) g.noalias() += b.rates[i] * (b.E[i].transpose() * W * b.E[i]);
  const Matrix nt = bundle_coupling(b, L, W);
  const Matrix sigma = bundle_sigma(b, W);
  g.noalias() -= nt.transpose() * solve_sigma(sigma, nt, t, which, cond_out);
  return 0.5 * (g + g.transpose());
}

/// Sigma_0 and Sigma_1 at a time point for a given P.
inline std::pair<Matrix, Matrix> sigma_pair(const Problem& pb, TimePoint p, const Matrix& P) {
  return {bundle_sigma(primary_bundle(pb, p), P), bundle_sigma(mean_bundle(pb, p), P)};
}

inline std::pair<Matrix, Matrix> sigma_pair(const Problem& pb, double t, const Matrix& P) {
  return sigma_pair(pb, locate(pb.grid(), t), P);
}

struct RhsValue {
  Matrix dP, dPi;
  double cond0 = 0.0, cond1 = 0.0;
};

/// Time derivatives (dP/dt, dPi/dt) of the coupled Riccati pair.
inline RhsValue riccati_rhs(const Problem& pb, TimePoint p, const Matrix& P, const Matrix& Pi) {
  const double t = pb.grid().time(p.k) + p.frac * pb.grid().step();
  RhsValue r;
  r.dP = -g_function(primary_bundle(pb, p), P, P, t, 0, &r.cond0);
  r.dPi = -g_function(mean_bundle(pb, p), Pi, P, t, 1, &r.cond1);
  return r;
}

inline RhsValue riccati_rhs(const Problem& pb, double t, const Matrix& P, const Matrix& Pi) {
  return riccati_rhs(pb, locate(pb.grid(), t), P, Pi);
}

struct SolverStats {
  long steps = 0;
  int substeps = 1;
  double max_condition = 0.0;
};

struct RiccatiSolution {
  MatrixPath P, Pi, Sigma0, Sigma1;
  SolverStats stats;

  [[nodiscard]] const TimeGrid& grid() const { return P.grid(); }
};

namespace detail {

inline void require_finite(const Matrix& a, const Matrix& b, double t) {
  const double big = 1e150;
  if (!a.allFinite() || !b.allFinite() || a.cwiseAbs().maxCoeff() > big || b.cwiseAbs().maxCoeff() > big) {
    throw Error(ErrorKind::NonFiniteState, "Riccati state blew up near t=" + std::to_string(t));
  }
}

inline Matrix sym(const Matrix& a) { return 0.5 * (a + a.transpose()); }

}  // namespace detail

/// Integrates P and Pi jointly backward from P_T = G, Pi_T = G + Gbar with classical RK4.
inline RiccatiSolution solve_riccati(const Problem& pb, int substeps = 1) {
  if (substeps < 1) throw Error(ErrorKind::GridMismatch, "substeps must be >= 1");
  const auto& g = pb.grid();
  const int M = g.intervals();
  const double h = g.step() / substeps;
  std::vector<Matrix> P(g.nodes()), Pi(g.nodes());
  P[M] = pb.weights().G;
  Pi[M] = pb.weights().G + pb.weights().Gbar;
  SolverStats stats;
  stats.substeps = substeps;
  auto track = [&](const RhsValue& r) { stats.max_condition = std::max({stats.max_condition, r.cond0, r.cond1}); };
  auto eval = [&](TimePoint p, const Matrix& a, const Matrix& b) {
    RhsValue r = riccati_rhs(pb, p, a, b);
    track(r);
    return r;
  };

  Matrix y = P[M], z = Pi[M];
  for (int k = M - 1; k >= 0; --k) {
    for (int j = substeps - 1; j >= 0; --j) {
      const TimePoint top{k, static_cast<double>(j + 1) / substeps};
      const TimePoint mid{k, (j + 0.5) / substeps};
      const TimePoint bot{k, static_cast<double>(j) / substeps};
      // Stepping backward in t: y(t - h) = y(t) - h * (weighted slopes).
      const RhsValue k1 = eval(top, y, z);
      const RhsValue k2 = eval(mid, detail::sym(y - 0.5 * h * k1.dP), detail::sym(z - 0.5 * h * k1.dPi));
      const RhsValue k3 = eval(mid, detail::sym(y - 0.5 * h * k2.dP), detail::sym(z - 0.5 * h * k2.dPi));
      const RhsValue k4 = eval(bot, detail::sym(y - h * k3.dP), detail::sym(z - h * k3.dPi));
      y = detail::sym(y - (h / 6.0) * (k1.dP + 2.0 * k2.dP + 2.0 * k3.dP + k4.dP));
      z = detail::sym(z - (h / 6.0) * (k1.dPi + 2.0 * k2.dPi + 2.0 * k3.dPi + k4.dPi));
      ++stats.steps;
      detail::require_finite(y, z, g.time(k) + bot.frac * g.step());
    }
    P[k] = y;
    Pi[k] = z;
  }

  std::vector<Matrix> s0(g.nodes()), s1(g.nodes());
  for (int k = 0; k <= M; ++k) {
    auto [a, b] = sigma_pair(pb, TimePoint::node(k), P[k]);
    const double c0 = detail::condition(a), c1 = detail::condition(b);
    if (!(c0 <= kSigmaConditionLimit)) throw SigmaSingularError(g.time(k), 0, c0);
    if (!(c1 <= kSigmaConditionLimit)) throw SigmaSingularError(g.time(k), 1, c1);
    stats.max_condition = std::max({stats.max_condition, c0, c1});
    s0[k] = std::move(a);
    s1[k] = std::move(b);
  }
  return {MatrixPath(g, std::move(P)), MatrixPath(g, std::move(Pi)), MatrixPath(g, std::move(s0)),
          MatrixPath(g, std::move(s1)), stats};
}

struct RiccatiResidual {
  double P = 0.0;
  double Pi = 0.0;

  [[nodiscard]] double max() const { return std::max(P, Pi); }
};

/// Central differences of (P, Pi) at interior nodes against the right-hand side.
inline RiccatiResidual riccati_residual(const Problem& pb, const RiccatiSolution& sol) {
  const auto& g = pb.grid();
  if (sol.grid() != g) throw Error(ErrorKind::GridMismatch, "solution grid differs from problem grid");
  RiccatiResidual out;
  const double h2 = 2.0 * g.step();
  for (int k = 1; k < g.intervals(); ++k) {
    const RhsValue r = riccati_rhs(pb, TimePoint::node(k), sol.P.node(k), sol.Pi.node(k));
    const Matrix fdP = (sol.P.node(k + 1) - sol.P.node(k - 1)) / h2;
    const Matrix fdPi = (sol.Pi.node(k + 1) - sol.Pi.node(k - 1)) / h2;
    out.P = std::max(out.P, (fdP - r.dP).cwiseAbs().maxCoeff());
    out.Pi = std::max(out.Pi, (fdPi - r.dPi).cwiseAbs().maxCoeff());
  }
  return out;
}

}  // namespace mflqj
