#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <vector>

#include "equivalence.hpp"
#include "errors.hpp"
#include "matrix_path.hpp"
#include "problem.hpp"
#include "riccati.hpp"

namespace mflqj {

/// u = -K0 (X - E[X]) - K1 E[X].
struct FeedbackLaw {
  MatrixPath K0, K1;  // m x n

  [[nodiscard]] const TimeGrid& grid() const { return K0.grid(); }

  static FeedbackLaw zero(const TimeGrid& g, int m, int n) {
    return {MatrixPath::zeros(g, m, n), MatrixPath::zeros(g, m, n)};
  }
};

inline FeedbackLaw synthesize_feedback(const Problem& pb, const RiccatiSolution& sol) {
  if (sol.grid() != pb.grid()) throw Error(ErrorKind::GridMismatch, "solution grid differs from problem grid");
  const auto& g = pb.grid();
  std::vector<Matrix> k0(g.nodes()), k1(g.nodes());
  for (int k = 0; k < g.nodes(); ++k) {
    const TimePoint p = TimePoint::node(k);
    const double t = g.time(k);
    const Matrix& P = sol.P.node(k);
    const CoefficientBundle b0 = primary_bundle(pb, p);
    const CoefficientBundle b1 = mean_bundle(pb, p);
    k0[k] = solve_sigma(bundle_sigma(b0, P), bundle_coupling(b0, P, P), t, 0);
    k1[k] = solve_sigma(bundle_sigma(b1, P), bundle_coupling(b1, sol.Pi.node(k), P), t, 1);
  }
  return {MatrixPath(g, std::move(k0)), MatrixPath(g, std::move(k1))};
}

/// 1/2 <Pi(0) x, x>.
inline double optimal_value(const RiccatiSolution& sol, const Vector& x) {
  return 0.5 * x.dot(sol.Pi.node(0) * x);
}

/// Linear representation of the adjoint processes along the optimal pair:
/// Y = Yc (X - E[X]) + Ym E[X], and likewise for Z and each r_i.
struct AdjointTriple {
  MatrixPath Yc, Ym, Zc, Zm;
  std::vector<MatrixPath> rc, rm;
};

inline AdjointTriple adjoint_representation(const Problem& pb, const RiccatiSolution& sol, const FeedbackLaw& law) {
  const auto& g = pb.grid();
  const auto& d = pb.dynamics();
  const auto& atoms = pb.jumps().atoms;
  std::vector<Matrix> zc(g.nodes()), zm(g.nodes());
  std::vector<std::vector<Matrix>> rc(atoms.size(), std::vector<Matrix>(g.nodes()));
  std::vector<std::vector<Matrix>> rm(atoms.size(), std::vector<Matrix>(g.nodes()));
  for (int k = 0; k < g.nodes(); ++k) {
    const Matrix& P = sol.P.node(k);
    const Matrix& K0 = law.K0.node(k);
    const Matrix& K1 = law.K1.node(k);
    zc[k] = P * (d.C.node(k) - d.D.node(k) * K0);
    zm[k] = P * ((d.C.node(k) + d.Cbar.node(k)) - (d.D.node(k) + d.Dbar.node(k)) * K1);
    for (std::size_t i = 0; i < atoms.size(); ++i) {
      const auto& a = atoms[i];
      rc[i][k] = P * (a.E.node(k) - a.F.node(k) * K0);
      rm[i][k] = P * ((a.E.node(k) + a.Ebar.node(k)) - (a.F.node(k) + a.Fbar.node(k)) * K1);
    }
  }
  AdjointTriple out{sol.P, sol.Pi, MatrixPath(g, std::move(zc)), MatrixPath(g, std::move(zm)), {}, {}};
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    out.rc.emplace_back(g, std::move(rc[i]));
    out.rm.emplace_back(g, std::move(rm[i]));
  }
  return out;
}

/// Left side of the stationarity condition at one node:
/// R u + Rbar E[u] + S^T X + Sbar^T E[X] + B^T Y + Bbar^T E[Y] + D^T Z + Dbar^T E[Z]
///   + sum rate (F^T r + Fbar^T E[r]).
inline Vector stationarity_vector(const Problem& pb, int k, const Vector& X, const Vector& u, const Vector& Y,
                                  const Vector& Z, const std::vector<Vector>& r, const Vector& m, const Vector& ubar,
                                  const Vector& EY, const Vector& EZ, const std::vector<Vector>& Er) {
  const auto& d = pb.dynamics();
  const auto& w = pb.weights();
  Vector v = w.R.node(k) * u + w.Rbar.node(k) * ubar + w.S.node(k).transpose() * X +
             w.Sbar.node(k).transpose() * m + d.B.node(k).transpose() * Y + d.Bbar.node(k).transpose() * EY +
             d.D.node(k).transpose() * Z + d.Dbar.node(k).transpose() * EZ;
  const auto& atoms = pb.jumps().atoms;
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    v += atoms[i].rate * (atoms[i].F.node(k).transpose() * r[i] + atoms[i].Fbar.node(k).transpose() * Er[i]);
  }
  return v;
}

/// Largest stationarity violation over all paths and nodes of a tuple.
inline double tuple_stationarity_residual(const Problem& pb, const HamiltonianTuple& tup) {
  if (tup.grid != pb.grid()) throw Error(ErrorKind::GridMismatch, "tuple grid differs from problem grid");
  double worst = 0.0;
  const auto& mm = tup.means;
  for (const auto& p : tup.paths) {
    for (int k = 0; k < pb.grid().nodes(); ++k) {
      const Vector v = stationarity_vector(pb, k, p.X[k], p.u[k], p.Y[k], p.Z[k], p.r[k], mm.m[k], mm.ubar[k],
                                           mm.EY[k], mm.EZ[k], mm.Er[k]);
      worst = std::max(worst, v.cwiseAbs().maxCoeff());
    }
  }
  return worst;
}

}  // namespace mflqj
