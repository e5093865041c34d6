#include <gtest/gtest.h>

#include "support.hpp"

using namespace mflqj;

TEST(TimeGrid, RejectsTooFewIntervals) {
  EXPECT_THROW(TimeGrid(1.0, 1), Error);
  EXPECT_NO_THROW(TimeGrid(1.0, 2));
}

TEST(TimeGrid, LocateSnapsToNodes) {
  const TimeGrid g(1.0, 10);
  const TimePoint p = locate(g, 0.3 + 1e-12);
  EXPECT_EQ(p.k, 3);
  EXPECT_EQ(p.frac, 0.0);
  const TimePoint q = locate(g, 0.35);
  EXPECT_EQ(q.k, 3);
  EXPECT_NEAR(q.frac, 0.5, 1e-12);
  EXPECT_EQ(locate(g, 1.0).k, 10);
}

TEST(MatrixPath, NodesAreExactAndMidpointsLinear) {
  const TimeGrid g(2.0, 8);
  const auto f = MatrixPath::from_function(g, [](double t) { return Matrix::Constant(1, 1, std::exp(t)); });
  for (int k = 0; k < g.nodes(); ++k) EXPECT_EQ(f.at(g.time(k))(0, 0), std::exp(g.time(k)));
  const double mid = 0.5 * (std::exp(0.5) + std::exp(0.75));
  EXPECT_NEAR(f.at(0.625)(0, 0), mid, 1e-15);
}

TEST(Validation, ShapeMismatchIsReported) {
  ProblemSpec s = examples::example_51(50).spec();
  s.dynamics.B = MatrixPath::zeros(s.grid, 2, 1);
  try {
    validate_spec(s);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
    ASSERT_FALSE(e.violations().empty());
    EXPECT_EQ(e.violations().front().field, "dynamics.B");
  }
}

TEST(Validation, AsymmetricWeightIsRejected) {
  std::mt19937_64 rng(3);
  ProblemSpec s = testing_support::random_problem(rng, {}).spec();
  Matrix G = s.weights.G;
  G(0, 1) += 0.1;
  s.weights.G = G;
  try {
    validate_spec(s);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::AsymmetricWeight);
  }
}

TEST(Validation, GridMismatchIsReported) {
  ProblemSpec s = examples::example_51(50).spec();
  s.weights.Q = MatrixPath::constant(TimeGrid(1.0, 60), Matrix::Ones(1, 1));
  try {
    validate_spec(s);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::GridMismatch);
  }
}

TEST(JumpBilinear, MatchesDirectSum) {
  std::mt19937_64 rng(5);
  const Problem pb = testing_support::random_problem(rng, {2, 3, 20, 3});
  const Matrix P = testing_support::spd(rng, 2);
  const TimePoint p{4, 0.25};
  Matrix want = Matrix::Zero(3, 2);
  for (const auto& a : pb.jumps().atoms) want += a.rate * (a.F.at(p).transpose() * P * a.E.at(p));
  const Matrix got = jump_bilinear(pb.jumps(), p, P, JumpSelector::F, JumpSelector::E, 3);
  EXPECT_LE((got - want).cwiseAbs().maxCoeff(), 1e-14);
  const ProblemSpec s = examples::example_51(10).spec();
  JumpMeasure none;
  EXPECT_EQ(jump_bilinear(none, p, Matrix::Ones(1, 1), JumpSelector::E, JumpSelector::F, 1).size(), 1);
}

TEST(AssumptionS, FirstExampleFailsOnR) {
  const Problem pb = examples::example_51(100);
  const SReport r = check_assumption_S(pb.weights(), pb.grid());
  EXPECT_FALSE(r.pass);
  bool saw_r = false;
  for (const auto& v : r.violations) saw_r |= v.quantity == "R";
  EXPECT_TRUE(saw_r);
  EXPECT_DOUBLE_EQ(r.alpha0, -4.0);
}

TEST(AssumptionS, SecondExampleFailsThenPassesAfterShift) {
  const Problem pb = examples::example_52(400);
  const SReport before = check_assumption_S(pb.weights(), pb.grid());
  EXPECT_FALSE(before.pass);
  bool r_near_zero = false;
  for (const auto& v : before.violations) r_near_zero |= (v.quantity == "R" && v.t < 0.1);
  EXPECT_TRUE(r_near_zero);
  const CostWeights w = shift_weights(pb, examples::example_52_shift(pb.grid()));
  const SReport after = check_assumption_S(w, pb.grid());
  EXPECT_TRUE(after.pass);
  EXPECT_NEAR(after.alpha0, 1.0, 1e-12);
}

TEST(AssumptionS, ThirdExampleShiftGivesAlphaOne) {
  const Problem pb = examples::example_53(100);
  EXPECT_FALSE(check_assumption_S(pb.weights(), pb.grid()).pass);
  const CostWeights w = shift_weights(pb, examples::example_53_shift(pb.grid()));
  const SReport r = check_assumption_S(w, pb.grid(), 1.0);
  EXPECT_TRUE(r.pass);
  EXPECT_DOUBLE_EQ(r.alpha0, 1.0);
}

TEST(AssumptionS, DefiniteRandomInstancesPass) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 10; ++i) {
    const Problem pb = testing_support::random_problem(rng, {2, 2, 20, 1});
    EXPECT_TRUE(check_assumption_S(pb.weights(), pb.grid()).pass) << "instance " << i;
  }
}
