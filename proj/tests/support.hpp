#pragma once

#include <random>

#include "mflqj/mflqj.hpp"

namespace testing_support {

using mflqj::Matrix;
using mflqj::MatrixPath;
using mflqj::TimeGrid;

inline Matrix gaussian(std::mt19937_64& rng, int r, int c, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Matrix a(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) a(i, j) = nd(rng);
  return a;
}

/// Symmetric positive definite with eigenvalues at least `floor`.
inline Matrix spd(std::mt19937_64& rng, int n, double floor = 0.5) {
  const Matrix a = gaussian(rng, n, n, 0.6);
  return a * a.transpose() + floor * Matrix::Identity(n, n);
}

inline Matrix sym(std::mt19937_64& rng, int n, double scale = 1.0) {
  const Matrix a = gaussian(rng, n, n, scale);
  return 0.5 * (a + a.transpose());
}

/// Constant plus a slow sinusoid, so interpolation between nodes is exercised.
inline MatrixPath wobble(const TimeGrid& g, const Matrix& base, const Matrix& amp) {
  return MatrixPath::from_function(g, [&](double t) -> Matrix { return base + std::sin(2.0 * t) * amp; });
}

struct RandomOptions {
  int n = 2, m = 2, M = 200, atoms = 2;
  bool definite = true;  // R, R+Rbar positive definite and Q, G positive semidefinite
  double cross = 0.3;    // scale of S, Sbar
};

inline mflqj::Problem random_problem(std::mt19937_64& rng, const RandomOptions& o) {
  const TimeGrid g(1.0, o.M);
  const int n = o.n, m = o.m;
  mflqj::ProblemSpec p;
  p.n = n;
  p.m = m;
  p.grid = g;
  auto dyn = [&](int r, int c, double s) { return wobble(g, gaussian(rng, r, c, s), gaussian(rng, r, c, 0.1 * s)); };
  p.dynamics.A = dyn(n, n, 0.5);
  p.dynamics.Abar = dyn(n, n, 0.3);
  p.dynamics.B = dyn(n, m, 0.5);
  p.dynamics.Bbar = dyn(n, m, 0.3);
  p.dynamics.C = dyn(n, n, 0.3);
  p.dynamics.Cbar = dyn(n, n, 0.2);
  p.dynamics.D = dyn(n, m, 0.3);
  p.dynamics.Dbar = dyn(n, m, 0.2);
  std::uniform_real_distribution<double> ur(0.2, 1.5);
  for (int i = 0; i < o.atoms; ++i) {
    mflqj::JumpAtom a;
    a.rate = ur(rng);
    a.mark = static_cast<double>(i + 1);
    a.E = dyn(n, n, 0.3);
    a.Ebar = dyn(n, n, 0.2);
    a.F = dyn(n, m, 0.3);
    a.Fbar = dyn(n, m, 0.2);
    p.jumps.atoms.push_back(std::move(a));
  }
  auto& w = p.weights;
  if (o.definite) {
    const Matrix R = spd(rng, m, 1.0), Rs = spd(rng, m, 1.0);
    const Matrix S = gaussian(rng, n, m, o.cross), Ss = gaussian(rng, n, m, o.cross);
    // Q dominates S R^{-1} S^T so the Schur complements stay positive semidefinite.
    const Matrix Q = spd(rng, n, 0.1) + S * R.inverse() * S.transpose();
    const Matrix Qs = spd(rng, n, 0.1) + Ss * Rs.inverse() * Ss.transpose();
    w.Q = MatrixPath::constant(g, Q);
    w.Qbar = MatrixPath::constant(g, Qs - Q);
    w.S = MatrixPath::constant(g, S);
    w.Sbar = MatrixPath::constant(g, Ss - S);
    w.R = MatrixPath::constant(g, R);
    w.Rbar = MatrixPath::constant(g, Rs - R);
    w.G = spd(rng, n, 0.1);
    w.Gbar = spd(rng, n, 0.1) - w.G;
  } else {
    w.Q = MatrixPath::constant(g, sym(rng, n));
    w.Qbar = MatrixPath::constant(g, sym(rng, n));
    w.S = MatrixPath::constant(g, gaussian(rng, n, m, o.cross));
    w.Sbar = MatrixPath::constant(g, gaussian(rng, n, m, o.cross));
    w.R = MatrixPath::constant(g, spd(rng, m, 1.0));
    w.Rbar = MatrixPath::constant(g, sym(rng, m, 0.3));
    w.G = sym(rng, n);
    w.Gbar = sym(rng, n);
  }
  p.x0 = gaussian(rng, n, 1);
  return mflqj::validate_spec(std::move(p));
}

}  // namespace testing_support
