#include <gtest/gtest.h>

#include "support.hpp"

using namespace mflqj;

namespace {

double max_err(const MatrixPath& p, const std::function<double(double)>& f) {
  double e = 0.0;
  for (int k = 0; k < p.grid().nodes(); ++k) e = std::max(e, std::abs(p.node(k)(0, 0) - f(p.grid().time(k))));
  return e;
}

// Scalar problem without noise or mean field: P' = (b^2/r) P^2 - 2 a P - q, P(T) = g.
struct ScalarLq {
  double a, b, q, r, g, T;

  Problem problem(int M) const {
    ProblemSpec s = examples::example_51(M, 1.0, T).spec();
    const TimeGrid& grid = s.grid;
    auto c = [&](double v) { return MatrixPath::constant(grid, Matrix::Constant(1, 1, v)); };
    s.dynamics = {c(a), c(0), c(b), c(0), c(0), c(0), c(0), c(0)};
    s.jumps.atoms.clear();
    s.weights = {c(q), c(0), c(0), c(0), c(r), c(0), Matrix::Constant(1, 1, g), Matrix::Zero(1, 1)};
    return validate_spec(std::move(s));
  }

  // Separation of variables on the two roots of k P^2 - 2 a P - q.
  double exact(double t) const {
    const double k = b * b / r;
    const double d = std::sqrt(a * a + k * q);
    const double p1 = (a + d) / k, p2 = (a - d) / k;
    const double rho = (g - p1) / (g - p2) * std::exp(-k * (p1 - p2) * (T - t));
    return (p1 - rho * p2) / (1.0 - rho);
  }
};

}  // namespace

TEST(Riccati, FirstExampleClosedForms) {
  const double delta = 1.0, T = 1.0;
  const Problem pb = examples::example_51(1000, delta, T);
  const RiccatiSolution sol = solve_riccati(pb);
  EXPECT_LE(max_err(sol.P, [](double) { return 2.0; }), 1e-8);
  EXPECT_LE(max_err(sol.Pi, [&](double t) { return delta / (2 * T - 2 * t + delta); }), 1e-6);
  EXPECT_NEAR(optimal_value(sol, pb.x0()), 1.0 / 6.0, 1e-6);
  EXPECT_NEAR(sol.Pi.node(0)(0, 0), delta / (2 * T + delta), 1e-6);
}

TEST(Riccati, FirstExampleOtherDeltas) {
  for (double delta : {0.25, 3.0}) {
    const Problem pb = examples::example_51(1000, delta);
    const RiccatiSolution sol = solve_riccati(pb);
    const examples::Example51Closed cf{1.0, delta};
    EXPECT_LE(max_err(sol.Pi, [&](double t) { return cf.Pi(t); }), 1e-6) << "delta " << delta;
    EXPECT_LE(max_err(sol.Sigma1, [&](double) { return 2 * delta; }), 1e-8);
  }
}

TEST(Riccati, ScalarSeparableOracle) {
  const ScalarLq lq{0.4, 1.3, 0.7, 0.5, 0.2, 1.5};
  const RiccatiSolution sol = solve_riccati(lq.problem(300));
  EXPECT_LE(max_err(sol.P, [&](double t) { return lq.exact(t); }), 1e-9);
  EXPECT_LE(max_abs_diff(sol.P, sol.Pi), 1e-13);
}

// Coefficients are node samples with linear interpolation at the RK4 midpoints, so
// time-varying problems converge at second order even though the stepper is fourth order.
TEST(Riccati, SecondOrderWithSampledCoefficients) {
  const Problem ref = examples::example_52(6400);
  const RiccatiSolution fine = solve_riccati(ref);
  std::vector<double> err;
  for (int M : {200, 400, 800}) {
    const RiccatiSolution s = solve_riccati(examples::example_52(M));
    double e = 0.0;
    for (int k = 0; k <= M; ++k) {
      const int kf = k * (6400 / M);
      e = std::max({e, std::abs(s.P.node(k)(0, 0) - fine.P.node(kf)(0, 0)),
                    std::abs(s.Pi.node(k)(0, 0) - fine.Pi.node(kf)(0, 0))});
    }
    err.push_back(e);
  }
  EXPECT_GE(err[0] / err[1], 3.5);
  EXPECT_GE(err[1] / err[2], 3.5);
}

TEST(Riccati, SubstepsRefine) {
  const ScalarLq lq{0.4, 1.3, 0.7, 0.5, 0.2, 1.5};
  const Problem pb = lq.problem(20);
  const double e1 = max_err(solve_riccati(pb, 1).P, [&](double t) { return lq.exact(t); });
  const double e4 = max_err(solve_riccati(pb, 4).P, [&](double t) { return lq.exact(t); });
  EXPECT_LT(e4, e1 / 16.0);
  EXPECT_THROW(solve_riccati(pb, 0), Error);
}

TEST(Riccati, ResidualIsSmallOnRandomInstances) {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 5; ++i) {
    const Problem pb = testing_support::random_problem(rng, {2, 2, 400, 2});
    const RiccatiSolution sol = solve_riccati(pb);
    EXPECT_LE(riccati_residual(pb, sol).max(), 1e-4) << "instance " << i;
    for (int k = 0; k < pb.grid().nodes(); k += 50) {
      EXPECT_LE((sol.P.node(k) - sol.P.node(k).transpose()).cwiseAbs().maxCoeff(), 0.0);
    }
  }
}

TEST(Riccati, SingularSigmaRaises) {
  ProblemSpec s = examples::example_51(50).spec();
  const auto zero = MatrixPath::zeros(s.grid, 1, 1);
  s.weights.R = zero;
  s.weights.Rbar = zero;
  s.dynamics.D = zero;
  s.dynamics.Dbar = zero;
  s.jumps.atoms.clear();
  const Problem pb = validate_spec(std::move(s));
  try {
    solve_riccati(pb);
    FAIL() << "expected SigmaSingularError";
  } catch (const SigmaSingularError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SigmaSingular);
    EXPECT_EQ(e.which(), 0);
    EXPECT_NEAR(e.time(), 1.0, 0.05);
  }
}

TEST(Riccati, BlowUpRaisesNonFinite) {
  // P' = -P^2 with P(2) = 1 has the pole P = 1/(t-1).
  const ScalarLq lq{0.0, 1.0, 0.0, -1.0, 1.0, 2.0};
  try {
    solve_riccati(lq.problem(2000));
    FAIL() << "expected NonFiniteState";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFiniteState);
  }
}

TEST(Riccati, GFunctionMatchesDefinition) {
  std::mt19937_64 rng(8);
  const Problem pb = testing_support::random_problem(rng, {3, 2, 10, 2});
  const CoefficientBundle b = primary_bundle(pb, TimePoint{3, 0.4});
  const Matrix L = testing_support::sym(rng, 3), W = testing_support::spd(rng, 3);
  Matrix sigma = b.R + b.D.transpose() * W * b.D;
  Matrix nt = b.S.transpose() + b.B.transpose() * L + b.D.transpose() * W * b.C;
  Matrix g = L * b.A + b.A.transpose() * L + b.C.transpose() * W * b.C + b.Q;
  for (std::size_t i = 0; i < b.rates.size(); ++i) {
    sigma += b.rates[i] * b.F[i].transpose() * W * b.F[i];
    nt += b.rates[i] * b.F[i].transpose() * W * b.E[i];
    g += b.rates[i] * b.E[i].transpose() * W * b.E[i];
  }
  g -= nt.transpose() * sigma.inverse() * nt;
  EXPECT_LE((g_function(b, L, W) - g).cwiseAbs().maxCoeff(), 1e-12 * (1.0 + g.cwiseAbs().maxCoeff()));
}
