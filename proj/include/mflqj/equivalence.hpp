#pragma once

#include <Eigen/Dense>

#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "matrix_path.hpp"
#include "problem.hpp"
#include "riccati.hpp"

namespace mflqj {

enum class DerivativeSource { Analytic, FiniteDifference };

/// Symmetric pair (H, K) used to shift the weights, with their time derivatives.
struct FunctionalShift {
  MatrixPath H, K, Hdot, Kdot;
  DerivativeSource source = DerivativeSource::Analytic;

  static FunctionalShift analytic(MatrixPath H, MatrixPath K, MatrixPath Hdot, MatrixPath Kdot) {
    FunctionalShift s{std::move(H), std::move(K), std::move(Hdot), std::move(Kdot), DerivativeSource::Analytic};
    s.check();
    return s;
  }

  /// Second-order differences; callers opt in explicitly.
  static FunctionalShift finite_differences(MatrixPath H, MatrixPath K) {
    MatrixPath Hd = differentiate(H), Kd = differentiate(K);
    FunctionalShift s{std::move(H), std::move(K), std::move(Hd), std::move(Kd), DerivativeSource::FiniteDifference};
    s.check();
    return s;
  }

  [[nodiscard]] const TimeGrid& grid() const { return H.grid(); }

  static MatrixPath differentiate(const MatrixPath& f) {
    const auto& g = f.grid();
    const int M = g.intervals();
    const double h = g.step();
    std::vector<Matrix> d(g.nodes());
    d[0] = (-3.0 * f.node(0) + 4.0 * f.node(1) - f.node(2)) / (2.0 * h);
    d[M] = (3.0 * f.node(M) - 4.0 * f.node(M - 1) + f.node(M - 2)) / (2.0 * h);
    for (int k = 1; k < M; ++k) d[k] = (f.node(k + 1) - f.node(k - 1)) / (2.0 * h);
    return MatrixPath(g, std::move(d));
  }

 private:
  void check() const {
    const auto& g = H.grid();
    for (const MatrixPath* p : {&K, &Hdot, &Kdot}) {
      if (p->grid() != g) throw Error(ErrorKind::GridMismatch, "shift components sampled on different grids");
    }
    const auto n = H.rows();
    for (const MatrixPath* p : {&H, &K, &Hdot, &Kdot}) {
      if (p->rows() != n || p->cols() != n) throw Error(ErrorKind::ShapeMismatch, "shift components must be n x n");
      for (int k = 0; k < g.nodes(); ++k) {
        if (!detail::nearly_symmetric(p->node(k))) throw Error(ErrorKind::AsymmetricWeight, "shift must be symmetric");
      }
    }
  }
};

namespace detail {

/// L A + A^T L + C^T W C + sum rate E^T W E.
inline Matrix bracket_linear(const CoefficientBundle& b, const Matrix& L, const Matrix& W) {
  Matrix g = L * b.A + b.A.transpose() * L + b.C.transpose() * W * b.C;
  for (std::size_t i = 0; i < b.rates.size(); ++i) g.noalias() += b.rates[i] * (b.E[i].transpose() * W * b.E[i]);
  return g;
}

inline void require_grid(const Problem& pb, const TimeGrid& g) {
  if (pb.grid() != g) throw Error(ErrorKind::GridMismatch, "shift grid differs from problem grid");
}

}  // namespace detail

/// Weights of the shifted problem, in the same uncentered convention as the input.
inline CostWeights shift_weights(const Problem& pb, const FunctionalShift& sh) {
  detail::require_grid(pb, sh.grid());
  const auto& g = pb.grid();
  std::vector<Matrix> Q(g.nodes()), Qb(g.nodes()), S(g.nodes()), Sb(g.nodes()), R(g.nodes()), Rb(g.nodes());
  for (int k = 0; k < g.nodes(); ++k) {
    const TimePoint p = TimePoint::node(k);
    const Matrix& H = sh.H.node(k);
    const Matrix& K = sh.K.node(k);
    const CoefficientBundle b0 = primary_bundle(pb, p);
    const CoefficientBundle b1 = mean_bundle(pb, p);
    Matrix q = b0.Q + sh.Hdot.node(k) + detail::bracket_linear(b0, H, H);
    Matrix qs = b1.Q + sh.Kdot.node(k) + detail::bracket_linear(b1, K, H);
    // Coupling with the weight S included gives the shifted S directly.
    Matrix s = bundle_coupling(b0, H, H).transpose();
    Matrix ss = bundle_coupling(b1, K, H).transpose();
    Matrix r = bundle_sigma(b0, H);
    Matrix rs = bundle_sigma(b1, H);
    q = detail::sym(q);
    qs = detail::sym(qs);
    Q[k] = q;
    Qb[k] = qs - q;
    S[k] = s;
    Sb[k] = ss - s;
    R[k] = r;
    Rb[k] = rs - r;
  }
  CostWeights w;
  w.Q = MatrixPath(g, std::move(Q));
  w.Qbar = MatrixPath(g, std::move(Qb));
  w.S = MatrixPath(g, std::move(S));
  w.Sbar = MatrixPath(g, std::move(Sb));
  w.R = MatrixPath(g, std::move(R));
  w.Rbar = MatrixPath(g, std::move(Rb));
  const int M = g.intervals();
  w.G = detail::sym(pb.weights().G - sh.H.node(M));
  w.Gbar = detail::sym(pb.weights().G + pb.weights().Gbar - sh.K.node(M)) - w.G;
  return w;
}

/// Shift by the Riccati solution itself; derivatives come from the right-hand side.
inline FunctionalShift canonical_shift(const Problem& pb, const RiccatiSolution& sol) {
  detail::require_grid(pb, sol.grid());
  const auto& g = pb.grid();
  std::vector<Matrix> hd(g.nodes()), kd(g.nodes());
  for (int k = 0; k < g.nodes(); ++k) {
    RhsValue r = riccati_rhs(pb, TimePoint::node(k), sol.P.node(k), sol.Pi.node(k));
    hd[k] = std::move(r.dP);
    kd[k] = std::move(r.dPi);
  }
  return FunctionalShift::analytic(sol.P, sol.Pi, MatrixPath(g, std::move(hd)), MatrixPath(g, std::move(kd)));
}

/// (P, Pi) of the original problem from the shifted solution: P = P^HK + H, Pi = Pi^HK + K.
inline RiccatiSolution pullback_riccati(const Problem& original, const RiccatiSolution& shifted,
                                        const FunctionalShift& sh) {
  detail::require_grid(original, shifted.grid());
  detail::require_grid(original, sh.grid());
  const auto& g = original.grid();
  RiccatiSolution out;
  out.P = shifted.P + sh.H;
  out.Pi = shifted.Pi + sh.K;
  std::vector<Matrix> s0(g.nodes()), s1(g.nodes());
  for (int k = 0; k < g.nodes(); ++k) {
    auto [a, b] = sigma_pair(original, TimePoint::node(k), out.P.node(k));
    s0[k] = std::move(a);
    s1[k] = std::move(b);
  }
  out.Sigma0 = MatrixPath(g, std::move(s0));
  out.Sigma1 = MatrixPath(g, std::move(s1));
  out.stats = shifted.stats;
  return out;
}

namespace detail {

inline Matrix solve_r(const Matrix& r, const Matrix& rhs, double t) {
  if (!(condition(r) <= kSigmaConditionLimit)) {
    throw Error(ErrorKind::RSingular, "R is singular at t=" + std::to_string(t));
  }
  return r.partialPivLu().solve(rhs);
}

}  // namespace detail

/// Equivalent problem without state-control cross terms in the cost.
inline Problem nc_reduce(const Problem& pb) {
  const auto& g = pb.grid();
  const auto& d = pb.dynamics();
  const auto& w = pb.weights();
  ProblemSpec s = pb.spec();
  std::vector<Matrix> A(g.nodes()), Ab(g.nodes()), C(g.nodes()), Cb(g.nodes()), Q(g.nodes()), Qb(g.nodes());
  std::vector<std::vector<Matrix>> E(pb.jumps().size(), std::vector<Matrix>(g.nodes()));
  std::vector<std::vector<Matrix>> Eb(pb.jumps().size(), std::vector<Matrix>(g.nodes()));
  for (int k = 0; k < g.nodes(); ++k) {
    const double t = g.time(k);
    const Matrix R = w.R.node(k), Rs = R + w.Rbar.node(k);
    const Matrix S = w.S.node(k), Ss = S + w.Sbar.node(k);
    const Matrix L0 = detail::solve_r(R, S.transpose(), t);    // R^{-1} S^T
    const Matrix L1 = detail::solve_r(Rs, Ss.transpose(), t);  // (R+Rbar)^{-1} (S+Sbar)^T
    const Matrix B = d.B.node(k), Bs = B + d.Bbar.node(k);
    const Matrix D = d.D.node(k), Ds = D + d.Dbar.node(k);
    A[k] = d.A.node(k) - B * L0;
    Ab[k] = d.A.node(k) + d.Abar.node(k) - Bs * L1 - A[k];
    C[k] = d.C.node(k) - D * L0;
    Cb[k] = d.C.node(k) + d.Cbar.node(k) - Ds * L1 - C[k];
    Q[k] = detail::sym(w.Q.node(k) - S * L0);
    Qb[k] = detail::sym(w.Q.node(k) + w.Qbar.node(k) - Ss * L1) - Q[k];
    for (std::size_t i = 0; i < pb.jumps().size(); ++i) {
      const auto& a = pb.jumps().atoms[i];
      const Matrix F = a.F.node(k), Fs = F + a.Fbar.node(k);
      E[i][k] = a.E.node(k) - F * L0;
      Eb[i][k] = a.E.node(k) + a.Ebar.node(k) - Fs * L1 - E[i][k];
    }
  }
  s.dynamics.A = MatrixPath(g, std::move(A));
  s.dynamics.Abar = MatrixPath(g, std::move(Ab));
  s.dynamics.C = MatrixPath(g, std::move(C));
  s.dynamics.Cbar = MatrixPath(g, std::move(Cb));
  for (std::size_t i = 0; i < pb.jumps().size(); ++i) {
    s.jumps.atoms[i].E = MatrixPath(g, std::move(E[i]));
    s.jumps.atoms[i].Ebar = MatrixPath(g, std::move(Eb[i]));
  }
  s.weights.Q = MatrixPath(g, std::move(Q));
  s.weights.Qbar = MatrixPath(g, std::move(Qb));
  s.weights.S = MatrixPath::zeros(g, pb.n(), pb.m());
  s.weights.Sbar = MatrixPath::zeros(g, pb.n(), pb.m());
  return validate_spec(std::move(s));
}

/// One sample path of a state-control pair together with its deterministic means.
struct PairPath {
  std::vector<Vector> X, u;     // per node
  std::vector<Vector> m, ubar;  // E[X], E[u] per node
};

enum class PairDirection { ToReduced, FromReduced };

/// Maps (X, u) of the original problem to (X~, u~) of the reduced one, or back.
/// X is unchanged; the control picks up R^{-1} S^T on the centered part and
/// (R+Rbar)^{-1} (S+Sbar)^T on the mean part.
inline PairPath transform_pair(const Problem& pb, const PairPath& in, PairDirection dir) {
  const auto& g = pb.grid();
  const auto& w = pb.weights();
  const std::size_t nodes = in.X.size();
  if (in.u.size() != nodes || in.m.size() != nodes || in.ubar.size() != nodes ||
      static_cast<int>(nodes) != g.nodes()) {
    throw Error(ErrorKind::GridMismatch, "pair path must have one entry per grid node");
  }
  const double sign = dir == PairDirection::ToReduced ? 1.0 : -1.0;
  PairPath out = in;
  for (int k = 0; k < g.nodes(); ++k) {
    const double t = g.time(k);
    const Matrix R = w.R.node(k), Rs = R + w.Rbar.node(k);
    const Matrix S = w.S.node(k), Ss = S + w.Sbar.node(k);
    const Vector xc = in.X[k] - in.m[k];
    const Vector shift_c = detail::solve_r(R, S.transpose() * xc, t);
    const Vector shift_m = detail::solve_r(Rs, Ss.transpose() * in.m[k], t);
    out.ubar[k] = in.ubar[k] + sign * shift_m;
    out.u[k] = (in.u[k] - in.ubar[k]) + sign * shift_c + out.ubar[k];
  }
  return out;
}

/// Pathwise values of a forward-backward solution. r[k][i] belongs to atom i at node k.
struct HamiltonianPath {
  std::vector<Vector> X, u, Y, Z;
  std::vector<std::vector<Vector>> r;
};

struct HamiltonianMeans {
  std::vector<Vector> m, ubar, EY, EZ;
  std::vector<std::vector<Vector>> Er;
};

struct HamiltonianTuple {
  TimeGrid grid;
  std::vector<HamiltonianPath> paths;
  HamiltonianMeans means;
};

/// Adjoint processes of the original problem from those of the shifted one.
/// Uses the step-start state X_k as the left limit on the grid.
inline HamiltonianTuple pullback_hamiltonian(const Problem& original, const HamiltonianTuple& shifted,
                                             const FunctionalShift& sh) {
  detail::require_grid(original, shifted.grid);
  detail::require_grid(original, sh.grid());
  const auto& g = original.grid();
  const auto& d = original.dynamics();
  const auto& atoms = original.jumps().atoms;
  HamiltonianTuple out = shifted;
  const auto& mm = shifted.means;
  for (int k = 0; k < g.nodes(); ++k) {
    const Matrix& H = sh.H.node(k);
    const Matrix& K = sh.K.node(k);
    const Matrix C = d.C.node(k), Cb = d.Cbar.node(k), D = d.D.node(k), Db = d.Dbar.node(k);
    const Vector& m = mm.m[k];
    const Vector& ub = mm.ubar[k];
    out.means.EY[k] = mm.EY[k] + K * m;
    out.means.EZ[k] = mm.EZ[k] + H * ((C + Cb) * m + (D + Db) * ub);
    for (std::size_t i = 0; i < atoms.size(); ++i) {
      const auto& a = atoms[i];
      out.means.Er[k][i] =
          mm.Er[k][i] + H * ((a.E.node(k) + a.Ebar.node(k)) * m + (a.F.node(k) + a.Fbar.node(k)) * ub);
    }
    for (std::size_t p = 0; p < shifted.paths.size(); ++p) {
      const auto& sp = shifted.paths[p];
      auto& op = out.paths[p];
      const Vector& x = sp.X[k];
      const Vector& u = sp.u[k];
      op.Y[k] = sp.Y[k] + H * (x - m) + K * m;
      op.Z[k] = sp.Z[k] + H * (C * x + Cb * m + D * u + Db * ub);
      for (std::size_t i = 0; i < atoms.size(); ++i) {
        const auto& a = atoms[i];
        op.r[k][i] = sp.r[k][i] + H * (a.E.node(k) * x + a.Ebar.node(k) * m + a.F.node(k) * u + a.Fbar.node(k) * ub);
      }
    }
  }
  return out;
}

}  // namespace mflqj
