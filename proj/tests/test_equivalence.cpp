#include <gtest/gtest.h>

#include "support.hpp"

using namespace mflqj;
using testing_support::RandomOptions;

namespace {

double rel_diff(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

double weights_diff(const CostWeights& a, const CostWeights& b) {
  return std::max({max_abs_diff(a.Q, b.Q), max_abs_diff(a.Qbar, b.Qbar), max_abs_diff(a.S, b.S),
                   max_abs_diff(a.Sbar, b.Sbar), max_abs_diff(a.R, b.R), max_abs_diff(a.Rbar, b.Rbar),
                   (a.G - b.G).cwiseAbs().maxCoeff(), (a.Gbar - b.Gbar).cwiseAbs().maxCoeff()});
}

}  // namespace

// The bracket is unchanged by removing the cross weights, for any symmetric L and W.
TEST(NcReduce, BracketIdentityOnRandomInstances) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dim(1, 3), natoms(0, 3);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    RandomOptions o{dim(rng), dim(rng), 10, natoms(rng), false, 0.8};
    const Problem pb = testing_support::random_problem(rng, o);
    const Problem red = nc_reduce(pb);
    const TimePoint p{static_cast<int>(rng() % 10), 0.3};
    const Matrix L = testing_support::sym(rng, o.n), W = testing_support::spd(rng, o.n, 0.2);
    worst = std::max(worst, rel_diff(g_function(primary_bundle(red, p), L, W), g_function(primary_bundle(pb, p), L, W)));
    worst = std::max(worst, rel_diff(g_function(mean_bundle(red, p), L, W), g_function(mean_bundle(pb, p), L, W)));
    EXPECT_EQ(max_abs_diff(red.weights().S, MatrixPath::zeros(pb.grid(), o.n, o.m)), 0.0);
  }
  EXPECT_LE(worst, 1e-9);
}

TEST(NcReduce, SingularRRaises) {
  ProblemSpec s = examples::example_53(20).spec();
  s.weights.R = MatrixPath::zeros(s.grid, 1, 1);
  s.weights.S = MatrixPath::constant(s.grid, Matrix::Ones(1, 1));
  try {
    nc_reduce(validate_spec(std::move(s)));
    FAIL() << "expected RSingular";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::RSingular);
  }
}

TEST(NcReduce, SameRiccatiPairAndShiftedGains) {
  std::mt19937_64 rng(77);
  const Problem pb = testing_support::random_problem(rng, {2, 2, 200, 2, true, 0.6});
  const Problem red = nc_reduce(pb);
  const RiccatiSolution a = solve_riccati(pb), b = solve_riccati(red);
  EXPECT_LE(max_abs_diff(a.P, b.P), 1e-10);
  EXPECT_LE(max_abs_diff(a.Pi, b.Pi), 1e-10);
  const FeedbackLaw la = synthesize_feedback(pb, a), lb = synthesize_feedback(red, b);
  for (int k = 0; k < pb.grid().nodes(); k += 20) {
    const Matrix R = pb.weights().R.node(k), Rs = R + pb.weights().Rbar.node(k);
    const Matrix S = pb.weights().S.node(k), Ss = S + pb.weights().Sbar.node(k);
    EXPECT_LE((la.K0.node(k) - lb.K0.node(k) - R.inverse() * S.transpose()).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE((la.K1.node(k) - lb.K1.node(k) - Rs.inverse() * Ss.transpose()).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(NcReduce, PairTransformPreservesCostPathwise) {
  std::mt19937_64 rng(99);
  const Problem pb = testing_support::random_problem(rng, {2, 2, 100, 1, false, 0.8});
  const Problem red = nc_reduce(pb);
  const ControlPolicy pol = ControlPolicy::open_loop(pb, random_direction(pb, 5, 0));
  const MeanTrajectory mean = solve_mean_ode(pb, pol);
  SimulationOptions so;
  so.paths = 16;
  so.materialize = true;
  so.check_consistency = false;
  const PathEnsemble ens = simulate_paths(pb, pol, mean, so);
  for (std::size_t i = 0; i < ens.size(); ++i) {
    const PairPath orig = to_pair(ens.path(i), mean);
    const PairPath tr = transform_pair(pb, orig, PairDirection::ToReduced);
    const double j0 = pair_cost(pb.weights(), orig, pb.grid());
    const double j1 = pair_cost(red.weights(), tr, pb.grid());
    EXPECT_NEAR(j1, j0, 1e-10 * std::max(1.0, std::abs(j0))) << "path " << i;
    const PairPath back = transform_pair(pb, tr, PairDirection::FromReduced);
    for (int k = 0; k < pb.grid().nodes(); ++k) {
      EXPECT_LE((back.u[k] - orig.u[k]).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_EQ(tr.X[k], orig.X[k]);
    }
  }
}

TEST(Shift, SecondExampleMatchesClosedForm) {
  const Problem pb = examples::example_52(500);
  const CostWeights w = shift_weights(pb, examples::example_52_shift(pb.grid()));
  const CostWeights hand = examples::example_52_shifted_weights(pb.grid(), pb.weights().G(0, 0));
  EXPECT_LE(weights_diff(w, hand), 1e-12);
  for (int k = 0; k < pb.grid().nodes(); k += 100) {
    const double t = pb.grid().time(k);
    EXPECT_NEAR(w.R.node(k)(0, 0), std::pow(t + 1.0, 3), 1e-12);
  }
}

TEST(Shift, ThirdExampleConstants) {
  const Problem pb = examples::example_53(50);
  const CostWeights w = shift_weights(pb, examples::example_53_shift(pb.grid()));
  const double dl = examples::Example53Atom::delta();
  for (int k = 0; k < pb.grid().nodes(); ++k) {
    EXPECT_DOUBLE_EQ(w.Q.node(k)(0, 0), 7.0);
    EXPECT_DOUBLE_EQ(w.S.node(k)(0, 0), 2.0);
    EXPECT_DOUBLE_EQ(w.R.node(k)(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(w.Q.node(k)(0, 0) + w.Qbar.node(k)(0, 0), 6.0 + 2.0 * dl);
    EXPECT_DOUBLE_EQ(w.S.node(k)(0, 0) + w.Sbar.node(k)(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(w.R.node(k)(0, 0) + w.Rbar.node(k)(0, 0), 1.0);
  }
  EXPECT_DOUBLE_EQ(w.G(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(w.G(0, 0) + w.Gbar(0, 0), 0.0);
}

TEST(Shift, FiniteDifferencesTrackAnalyticDerivatives) {
  const Problem pb = examples::example_52(2000);
  const FunctionalShift an = examples::example_52_shift(pb.grid());
  const FunctionalShift fd = FunctionalShift::finite_differences(an.H, an.K);
  EXPECT_EQ(fd.source, DerivativeSource::FiniteDifference);
  EXPECT_LE(weights_diff(shift_weights(pb, fd), shift_weights(pb, an)), 1e-5);
}

TEST(Shift, CanonicalShiftAnnihilatesStateWeights) {
  std::mt19937_64 rng(31);
  for (int i = 0; i < 5; ++i) {
    const Problem pb = testing_support::random_problem(rng, {2, 2, 200, 2, true, 0.4});
    const RiccatiSolution sol = solve_riccati(pb);
    const CostWeights w = shift_weights(pb, canonical_shift(pb, sol));
    EXPECT_LE(w.G.cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LE((w.G + w.Gbar).cwiseAbs().maxCoeff(), 1e-8);
    for (int k = 0; k < pb.grid().nodes(); ++k) {
      const Matrix R = w.R.node(k), S = w.S.node(k);
      const Matrix Rs = R + w.Rbar.node(k), Ss = S + w.Sbar.node(k);
      EXPECT_LE((w.Q.node(k) - S * R.inverse() * S.transpose()).cwiseAbs().maxCoeff(), 1e-8);
      EXPECT_LE((w.Q.node(k) + w.Qbar.node(k) - Ss * Rs.inverse() * Ss.transpose()).cwiseAbs().maxCoeff(), 1e-8);
      EXPECT_LE((R - sol.Sigma0.node(k)).cwiseAbs().maxCoeff(), 1e-10);
      EXPECT_LE((Rs - sol.Sigma1.node(k)).cwiseAbs().maxCoeff(), 1e-10);
    }
    EXPECT_TRUE(check_assumption_S(w, pb.grid()).pass);
  }
}

TEST(Shift, GridMismatchIsRejected) {
  const Problem pb = examples::example_53(50);
  EXPECT_THROW(shift_weights(pb, examples::example_53_shift(TimeGrid(1.0, 60))), Error);
}

TEST(Pullback, ThirdExampleMatchesDirectSolve) {
  const Problem pb = examples::example_53(500);
  const FunctionalShift sh = examples::example_53_shift(pb.grid());
  const Problem spb = pb.with_weights(shift_weights(pb, sh));
  const RiccatiSolution pull = pullback_riccati(pb, solve_riccati(spb), sh);
  const RiccatiSolution direct = solve_riccati(pb);
  EXPECT_LE(max_abs_diff(pull.P, direct.P), 1e-10);
  EXPECT_LE(max_abs_diff(pull.Pi, direct.Pi), 1e-10);
  EXPECT_LE(max_abs_diff(pull.Sigma0, direct.Sigma0), 1e-10);
}

TEST(Pullback, SecondExampleResidualShrinksWithGrid) {
  double prev = 1e300;
  for (int M : {1000, 4000}) {
    const Problem pb = examples::example_52(M);
    const FunctionalShift sh = examples::example_52_shift(pb.grid());
    const Problem spb = pb.with_weights(shift_weights(pb, sh));
    const RiccatiSolution pull = pullback_riccati(pb, solve_riccati(spb), sh);
    const double r = riccati_residual(pb, pull).max();
    EXPECT_LT(r, prev / 8.0);
    prev = r;
    if (M == 4000) {
      EXPECT_LE(max_abs_diff(pull.P, solve_riccati(pb).P), 1e-6);
    }
  }
}

TEST(Pullback, HamiltonianOfShiftedProblemMapsToOriginal) {
  const Problem pb = examples::example_53(200);
  const FunctionalShift sh = examples::example_53_shift(pb.grid());
  const Problem spb = pb.with_weights(shift_weights(pb, sh));
  const RiccatiSolution ssol = solve_riccati(spb);
  const FeedbackLaw slaw = synthesize_feedback(spb, ssol);
  const RiccatiSolution pull = pullback_riccati(pb, ssol, sh);
  const FeedbackLaw law = synthesize_feedback(pb, pull);
  const ControlPolicy pol = ControlPolicy::feedback(slaw);
  const MeanTrajectory mean = solve_mean_ode(spb, pol);
  SimulationOptions so;
  so.paths = 20;
  so.check_consistency = false;
  const PathEnsemble ens = simulate_paths(spb, pol, mean, so);
  const HamiltonianTuple mapped = pullback_hamiltonian(pb, build_tuple(spb, ens, adjoint_representation(spb, ssol, slaw), 20), sh);
  const HamiltonianTuple direct = build_tuple(pb, ens, adjoint_representation(pb, pull, law), 20);
  double e = 0.0;
  for (std::size_t p = 0; p < mapped.paths.size(); ++p) {
    for (int k = 0; k < pb.grid().nodes(); ++k) {
      e = std::max({e, (mapped.paths[p].Y[k] - direct.paths[p].Y[k]).cwiseAbs().maxCoeff(),
                    (mapped.paths[p].Z[k] - direct.paths[p].Z[k]).cwiseAbs().maxCoeff(),
                    (mapped.paths[p].r[k][0] - direct.paths[p].r[k][0]).cwiseAbs().maxCoeff()});
    }
  }
  EXPECT_LE(e, 1e-9);
  EXPECT_LE(tuple_stationarity_residual(pb, mapped), 1e-9);
}
