#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "equivalence.hpp"
#include "matrix_path.hpp"
#include "problem.hpp"
#include "riccati.hpp"

namespace mflqj::examples {

namespace detail {

inline Matrix s(double v) { return Matrix::Constant(1, 1, v); }

inline MatrixPath cs(const TimeGrid& g, double v) { return MatrixPath::constant(g, s(v)); }

inline MatrixPath fs(const TimeGrid& g, const std::function<double(double)>& f) {
  return MatrixPath::from_function(g, [&](double t) { return s(f(t)); });
}

inline ProblemSpec scalar_skeleton(const TimeGrid& g) {
  ProblemSpec p;
  p.n = 1;
  p.m = 1;
  p.grid = g;
  for (MatrixPath* x : {&p.dynamics.A, &p.dynamics.Abar, &p.dynamics.B, &p.dynamics.Bbar, &p.dynamics.C,
                        &p.dynamics.Cbar, &p.dynamics.D, &p.dynamics.Dbar, &p.weights.Q, &p.weights.Qbar,
                        &p.weights.S, &p.weights.Sbar, &p.weights.R, &p.weights.Rbar}) {
    *x = cs(g, 0.0);
  }
  p.weights.G = s(0.0);
  p.weights.Gbar = s(0.0);
  p.x0 = Vector::Ones(1);
  return p;
}

inline JumpAtom scalar_atom(const TimeGrid& g, double rate, double mark, double E, double Ebar, double F,
                            double Fbar) {
  return {rate, mark, cs(g, E), cs(g, Ebar), cs(g, F), cs(g, Fbar)};
}

}  // namespace detail

/// Scalar problem with indefinite weights whose solution is known in closed form:
/// P = 2, Pi = delta / (2T - 2t + delta), value delta / (2 (2T + delta)) for x0 = 1.
inline Problem example_51(int M = 1000, double delta = 1.0, double T = 1.0) {
  using namespace detail;
  const TimeGrid g(T, M);
  ProblemSpec p = scalar_skeleton(g);
  p.dynamics.A = cs(g, 1.0);
  p.dynamics.Abar = cs(g, -1.0);
  p.dynamics.B = cs(g, 1.0);
  p.dynamics.Bbar = cs(g, 1.0);
  p.dynamics.D = cs(g, 2.0);
  p.dynamics.Dbar = cs(g, -1.0);
  // One atom at theta0 = 1 with rate delta e^2 and Fbar = e^{-1}, so rate * Fbar^2 = delta.
  const double theta0 = 1.0;
  p.jumps.atoms.push_back(scalar_atom(g, delta * std::exp(2.0 * theta0), theta0, 0.0, 0.0, 0.0, std::exp(-theta0)));
  p.weights.Q = cs(g, -3.0);
  p.weights.Qbar = cs(g, 3.0);
  p.weights.R = cs(g, -4.0);
  p.weights.Rbar = cs(g, 2.0);
  p.weights.G = s(2.0);
  p.weights.Gbar = s(-1.0);
  return validate_spec(std::move(p));
}

struct Example51Closed {
  double T, delta;
  [[nodiscard]] double P(double) const { return 2.0; }
  [[nodiscard]] double Pi(double t) const { return delta / (2.0 * T - 2.0 * t + delta); }
  [[nodiscard]] double K0(double) const { return 0.5; }
  [[nodiscard]] double K1(double t) const { return 1.0 / (2.0 * T - 2.0 * t + delta); }
  [[nodiscard]] double value(double x0 = 1.0) const { return delta / (2.0 * (2.0 * T + delta)) * x0 * x0; }
  [[nodiscard]] double mean(double t, double x0 = 1.0) const {
    return x0 * (2.0 * T - 2.0 * t + delta) / (2.0 * T + delta);
  }
};

/// Jump atoms used for the time-varying example: (rate, E, Ebar).
struct Example52Atoms {
  static constexpr double rate[2] = {1.0, 0.5};
  static constexpr double E[2] = {0.3, 0.4};
  static constexpr double Ebar[2] = {0.2, 0.6};
  static double delta1() { return rate[0] * E[0] * E[0] + rate[1] * E[1] * E[1]; }
  static double delta2() {
    return rate[0] * (E[0] + Ebar[0]) * (E[0] + Ebar[0]) + rate[1] * (E[1] + Ebar[1]) * (E[1] + Ebar[1]);
  }
};

/// Scalar problem with time-varying, indefinite control weights; alpha defaults to (T+1)^2.
inline Problem example_52(int M = 1000, double T = 1.0, double alpha = -1.0) {
  using namespace detail;
  if (alpha < 0.0) alpha = (T + 1.0) * (T + 1.0);
  const TimeGrid g(T, M);
  ProblemSpec p = scalar_skeleton(g);
  p.dynamics.A = cs(g, 2.0);
  p.dynamics.Abar = cs(g, -1.0);
  p.dynamics.B = cs(g, 1.0);
  p.dynamics.D = cs(g, 2.0);
  for (int i = 0; i < 2; ++i) {
    p.jumps.atoms.push_back(
        scalar_atom(g, Example52Atoms::rate[i], 1.0 + i, Example52Atoms::E[i], Example52Atoms::Ebar[i], 0.0, 0.0));
  }
  p.weights.Qbar = cs(g, 4.0);
  p.weights.Sbar = cs(g, 2.0);
  p.weights.R = fs(g, [](double t) { return std::pow(t + 1.0, 3) - 2.0 * (t + 1.0) * (t + 1.0); });
  p.weights.Rbar = fs(g, [](double t) { return 1.0 - std::pow(t + 1.0, 3); });
  p.weights.G = s(alpha);
  p.weights.Gbar = s(-(alpha + 1.0));
  return validate_spec(std::move(p));
}

/// H = (t+1)^2 / 2, K = 1/(1+T-t) - 2, with exact derivatives.
inline FunctionalShift example_52_shift(const TimeGrid& g) {
  using namespace detail;
  const double T = g.horizon();
  return FunctionalShift::analytic(fs(g, [](double t) { return 0.5 * (t + 1.0) * (t + 1.0); }),
                                   fs(g, [T](double t) { return 1.0 / (1.0 + T - t) - 2.0; }),
                                   fs(g, [](double t) { return t + 1.0; }),
                                   fs(g, [T](double t) { return 1.0 / ((1.0 + T - t) * (1.0 + T - t)); }));
}

/// Shifted weights written out by hand, for cross-checking shift_weights.
inline CostWeights example_52_shifted_weights(const TimeGrid& g, double alpha) {
  using namespace detail;
  const double T = g.horizon();
  const double d1 = Example52Atoms::delta1(), d2 = Example52Atoms::delta2();
  CostWeights w;
  w.Q = fs(g, [d1](double t) { return (t + 1.0) + 2.0 * (t + 1.0) * (t + 1.0) + d1 * (t + 1.0) * (t + 1.0) / 2.0; });
  auto qs = [T, d2](double t) {
    const double a = 1.0 / (1.0 + T - t);
    return a * a + 2.0 * a + d2 * (t + 1.0) * (t + 1.0) / 2.0;
  };
  w.Qbar = fs(g, [&](double t) { return qs(t) - w.Q.at(t)(0, 0); });
  w.S = fs(g, [](double t) { return 0.5 * (t + 1.0) * (t + 1.0); });
  w.Sbar = fs(g, [T](double t) { return 1.0 / (1.0 + T - t) - 0.5 * (t + 1.0) * (t + 1.0); });
  w.R = fs(g, [](double t) { return std::pow(t + 1.0, 3); });
  w.Rbar = fs(g, [](double t) { return 1.0 - std::pow(t + 1.0, 3); });
  w.G = s(alpha - 0.5 * (T + 1.0) * (T + 1.0));
  w.Gbar = s(0.0) - w.G;
  return w;
}

/// Atom for the third example: rate 1, Ebar = 1/2, so delta = 1/4.
struct Example53Atom {
  static constexpr double rate = 1.0;
  static constexpr double Ebar = 0.5;
  static double delta() { return rate * Ebar * Ebar; }
};

/// Scalar problem whose optimal control satisfies u = Y + Z.
inline Problem example_53(int M = 1000, double T = 1.0) {
  using namespace detail;
  const TimeGrid g(T, M);
  ProblemSpec p = scalar_skeleton(g);
  p.dynamics.A = cs(g, 2.0);
  p.dynamics.Abar = cs(g, 1.0);
  p.dynamics.B = cs(g, 1.0);
  p.dynamics.D = cs(g, 1.0);
  p.jumps.atoms.push_back(scalar_atom(g, Example53Atom::rate, 1.0, 0.0, Example53Atom::Ebar, 0.0, 0.0));
  p.weights.Q = cs(g, -1.0);
  p.weights.Qbar = cs(g, 1.0);
  p.weights.R = cs(g, -1.0);
  p.weights.G = s(2.0);
  p.weights.Gbar = s(-1.0);
  return validate_spec(std::move(p));
}

/// Constant shift H = 2, K = 1.
inline FunctionalShift example_53_shift(const TimeGrid& g) {
  using namespace detail;
  return FunctionalShift::analytic(cs(g, 2.0), cs(g, 1.0), cs(g, 0.0), cs(g, 0.0));
}

/// Asset-liability management with a mean-field liability coupling.
struct AssetLiabilityParams {
  double T = 1.0;
  double n0 = 1.0;  // initial wealth
  double l0 = 0.5;  // initial liability
  double r = 0.05;  // risk-free rate
  double a = 0.2;   // liability growth
  double mu = 0.3;  // stock drift
  double sigma = 0.5;
  double b = 0.3;  // liability volatility
  double c = 0.5;  // mean-field coupling

  /// Returns false when the name is unknown.
  bool set(const std::string& name, double v) {
    if (name == "T") T = v;
    else if (name == "n0") n0 = v;
    else if (name == "l0") l0 = v;
    else if (name == "r") r = v;
    else if (name == "a") a = v;
    else if (name == "mu") mu = v;
    else if (name == "sigma") sigma = v;
    else if (name == "b") b = v;
    else if (name == "c") c = v;
    else return false;
    return true;
  }
};

/// State (liability, wealth minus liability), control the amount held in the stock.
inline Problem example_54(const AssetLiabilityParams& q = {}, int M = 1000) {
  const TimeGrid g(q.T, M);
  ProblemSpec p;
  p.n = 2;
  p.m = 1;
  p.grid = g;
  Matrix A(2, 2), Ab(2, 2), B(2, 1), C(2, 2), D(2, 1);
  A << q.a, 0.0, q.r - q.a, q.r;
  Ab << q.c, q.c, -q.c, -q.c;
  B << 0.0, q.mu - q.r;
  C << q.b, 0.0, -q.b, 0.0;
  D << 0.0, q.sigma;
  const Matrix Z22 = Matrix::Zero(2, 2), Z21 = Matrix::Zero(2, 1), Z11 = Matrix::Zero(1, 1);
  p.dynamics.A = MatrixPath::constant(g, A);
  p.dynamics.Abar = MatrixPath::constant(g, Ab);
  p.dynamics.B = MatrixPath::constant(g, B);
  p.dynamics.Bbar = MatrixPath::constant(g, Z21);
  p.dynamics.C = MatrixPath::constant(g, C);
  p.dynamics.Cbar = MatrixPath::constant(g, Z22);
  p.dynamics.D = MatrixPath::constant(g, D);
  p.dynamics.Dbar = MatrixPath::constant(g, Z21);
  Matrix Qb = Matrix::Zero(2, 2), G = Matrix::Zero(2, 2), Gb = Matrix::Zero(2, 2);
  Qb(1, 1) = -1.0;
  G(1, 1) = 1.0;
  Gb(1, 1) = -1.0;
  p.weights.Q = MatrixPath::constant(g, Matrix::Identity(2, 2));
  p.weights.Qbar = MatrixPath::constant(g, Qb);
  p.weights.S = MatrixPath::constant(g, Z21);
  p.weights.Sbar = MatrixPath::constant(g, Z21);
  p.weights.R = MatrixPath::constant(g, Z11);
  p.weights.Rbar = MatrixPath::constant(g, Z11);
  p.weights.G = G;
  p.weights.Gbar = Gb;
  p.x0 = Vector(2);
  p.x0 << q.l0, q.n0 - q.l0;
  return validate_spec(std::move(p));
}

/// lambda' = [((mu-r)/sigma)^2 - 2r] lambda + kappa^2 lambda^2, kappa = r - a + b (mu-r)/sigma.
inline double example_54_lambda_rate(const AssetLiabilityParams& q, double lam) {
  const double th = (q.mu - q.r) / q.sigma;
  const double kappa = q.r - q.a + q.b * th;
  return (th * th - 2.0 * q.r) * lam + kappa * kappa * lam * lam;
}

/// H = diag(0, lambda), K = 0, with lambda solved backward from lambda_T = 1/2 by RK4.
inline FunctionalShift example_54_shift(const AssetLiabilityParams& q, const TimeGrid& g, int substeps = 4) {
  const int M = g.intervals();
  std::vector<double> lam(g.nodes());
  lam[M] = 0.5;
  const double h = g.step() / substeps;
  double y = lam[M];
  for (int k = M - 1; k >= 0; --k) {
    for (int j = 0; j < substeps; ++j) {
      const double k1 = example_54_lambda_rate(q, y);
      const double k2 = example_54_lambda_rate(q, y - 0.5 * h * k1);
      const double k3 = example_54_lambda_rate(q, y - 0.5 * h * k2);
      const double k4 = example_54_lambda_rate(q, y - h * k3);
      y -= (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    lam[k] = y;
  }
  std::vector<Matrix> H(g.nodes(), Matrix::Zero(2, 2)), Hd(g.nodes(), Matrix::Zero(2, 2));
  for (int k = 0; k <= M; ++k) {
    H[k](1, 1) = lam[k];
    Hd[k](1, 1) = example_54_lambda_rate(q, lam[k]);
  }
  return FunctionalShift::analytic(MatrixPath(g, std::move(H)), MatrixPath::zeros(g, 2, 2),
                                   MatrixPath(g, std::move(Hd)), MatrixPath::zeros(g, 2, 2));
}

}  // namespace mflqj::examples
