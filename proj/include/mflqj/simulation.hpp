#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "equivalence.hpp"
#include "errors.hpp"
#include "matrix_path.hpp"
#include "problem.hpp"
#include "random.hpp"
#include "riccati.hpp"
#include "synthesis.hpp"

namespace mflqj {

/// Deterministic mean state m = E[X], mean control ubar = E[u], and the mean
/// of the reference optimal pair when the control carries an open-loop offset.
struct MeanTrajectory {
  TimeGrid grid;
  std::vector<Vector> m, ubar, reference;
};

/// u = -K0 (X* - m*) - K1 m* + w, where X* is the state driven by the feedback
/// alone on the same noise and w is a deterministic offset held constant on
/// each interval. With no offset X* is the state itself.
struct ControlPolicy {
  FeedbackLaw law;
  std::vector<Vector> offset;  // one entry per interval, or empty

  [[nodiscard]] bool has_offset() const { return !offset.empty(); }

  [[nodiscard]] bool has_feedback() const {
    for (int k = 0; k < law.grid().nodes(); ++k) {
      if (!law.K0.node(k).isZero(0.0) || !law.K1.node(k).isZero(0.0)) return true;
    }
    return false;
  }

  static ControlPolicy feedback(FeedbackLaw law) { return {std::move(law), {}}; }

  static ControlPolicy zero(const Problem& pb) {
    return {FeedbackLaw::zero(pb.grid(), pb.m(), pb.n()), {}};
  }

  static ControlPolicy open_loop(const Problem& pb, std::vector<Vector> w) {
    return checked({FeedbackLaw::zero(pb.grid(), pb.m(), pb.n()), std::move(w)}, pb);
  }

  /// Optimal feedback plus eps * v, with v deterministic.
  static ControlPolicy perturbed(const Problem& pb, FeedbackLaw law, const std::vector<Vector>& v, double eps) {
    std::vector<Vector> w;
    w.reserve(v.size());
    for (const auto& x : v) w.push_back(eps * x);
    return checked({std::move(law), std::move(w)}, pb);
  }

 private:
  static ControlPolicy checked(ControlPolicy p, const Problem& pb) {
    if (static_cast<int>(p.offset.size()) != pb.grid().intervals()) {
      throw Error(ErrorKind::GridMismatch, "open-loop offset needs one value per interval");
    }
    for (const auto& x : p.offset) {
      if (x.size() != pb.m()) throw Error(ErrorKind::ShapeMismatch, "open-loop offset has the wrong length");
    }
    return p;
  }
};

namespace detail {

inline const Vector& offset_at(const ControlPolicy& pol, int k, const Vector& zero) {
  if (!pol.has_offset()) return zero;
  return pol.offset[std::min<std::size_t>(static_cast<std::size_t>(k), pol.offset.size() - 1)];
}

}  // namespace detail

/// RK4 for the mean dynamics m' = (A+Abar) m + (B+Bbar) ubar, jointly with the reference mean when needed.
inline MeanTrajectory solve_mean_ode(const Problem& pb, const ControlPolicy& pol) {
  const auto& g = pb.grid();
  if (pol.law.grid() != g) throw Error(ErrorKind::GridMismatch, "feedback law grid differs from problem grid");
  const auto& d = pb.dynamics();
  const Vector zero_u = Vector::Zero(pb.m());
  const double h = g.step();
  auto rhs = [&](TimePoint p, const Vector& ref, const Vector& m, const Vector& w, Vector& dref, Vector& dm) {
    const Matrix As = d.A.at(p) + d.Abar.at(p);
    const Matrix Bs = d.B.at(p) + d.Bbar.at(p);
    const Vector uref = -(pol.law.K1.at(p) * ref);
    dref = As * ref + Bs * uref;
    dm = As * m + Bs * (uref + w);
  };
  MeanTrajectory out;
  out.grid = g;
  out.m.resize(g.nodes());
  out.ubar.resize(g.nodes());
  out.reference.resize(g.nodes());
  Vector ref = pb.x0(), m = pb.x0();
  out.m[0] = m;
  out.reference[0] = ref;
  Vector a1, b1, a2, b2, a3, b3, a4, b4;
  for (int k = 0; k < g.intervals(); ++k) {
    const Vector& w = detail::offset_at(pol, k, zero_u);
    const TimePoint lo{k, 0.0}, mid{k, 0.5}, hi{k, 1.0};
    rhs(lo, ref, m, w, a1, b1);
    rhs(mid, ref + 0.5 * h * a1, m + 0.5 * h * b1, w, a2, b2);
    rhs(mid, ref + 0.5 * h * a2, m + 0.5 * h * b2, w, a3, b3);
    rhs(hi, ref + h * a3, m + h * b3, w, a4, b4);
    ref += (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
    m += (h / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
    if (!m.allFinite() || !ref.allFinite()) {
      throw Error(ErrorKind::NonFiniteState, "mean trajectory blew up near t=" + std::to_string(g.time(k + 1)));
    }
    out.m[k + 1] = m;
    out.reference[k + 1] = ref;
  }
  for (int k = 0; k < g.nodes(); ++k) {
    out.ubar[k] = -(pol.law.K1.node(k) * out.reference[k]) + detail::offset_at(pol, k, zero_u);
  }
  return out;
}

/// One simulated path. X holds post-jump values, Xminus the pre-jump values, u the
/// control applied on [t_k, t_{k+1}); dW and the jump counts are the noise used.
struct PathSample {
  int n = 0, m = 0, M = 0, atoms = 0;
  std::vector<double> X, Xminus, u, dW;
  std::vector<int> jumps;

  void resize(int n_, int m_, int M_, int atoms_) {
    n = n_;
    m = m_;
    M = M_;
    atoms = atoms_;
    X.resize(static_cast<std::size_t>((M + 1) * n));
    Xminus.resize(X.size());
    u.resize(static_cast<std::size_t>((M + 1) * m));
    dW.resize(static_cast<std::size_t>(M));
    jumps.resize(static_cast<std::size_t>(M * atoms));
  }

  [[nodiscard]] Vector x(int k) const { return Eigen::Map<const Vector>(X.data() + k * n, n); }
  [[nodiscard]] Vector x_minus(int k) const { return Eigen::Map<const Vector>(Xminus.data() + k * n, n); }
  [[nodiscard]] Vector control(int k) const { return Eigen::Map<const Vector>(u.data() + k * m, m); }
  [[nodiscard]] int jump_count(int k, int i) const { return jumps[static_cast<std::size_t>(k * atoms + i)]; }
};

struct SimulationOptions {
  std::size_t paths = 100000;
  std::uint64_t seed = 42;
  unsigned threads = 0;          // 0 = hardware concurrency
  bool check_consistency = true;  // run one pass for node statistics
  bool materialize = false;       // keep every path in memory
};

namespace detail {

/// Flattened per-node coefficients for the Euler-Maruyama kernel (row-major blocks).
struct SimulationPlan {
  int n = 0, m = 0, M = 0, atoms = 0;
  double dt = 0.0, sqrt_dt = 0.0;
  bool shadow = false;
  std::vector<double> x0;
  std::vector<double> mu, exp_neg_mu;  // rate * dt per atom
  // Node-major arrays, node stride given by the block size.
  std::vector<double> Atil, Btil, C, D, K0;  // A - sum rate E, B - sum rate F
  std::vector<double> E, F;                  // [(k * atoms + i) * block]
  std::vector<double> uoff, c, dv, e;        // actual state
  std::vector<double> uoff_s, c_s, dv_s, e_s;  // reference state

  static void put(std::vector<double>& dst, std::size_t at, const Matrix& src) {
    for (Eigen::Index r = 0; r < src.rows(); ++r) {
      for (Eigen::Index q = 0; q < src.cols(); ++q) dst[at + static_cast<std::size_t>(r * src.cols() + q)] = src(r, q);
    }
  }
};

inline void matvec_add(double* out, const double* A, const double* x, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    double s = 0.0;
    const double* row = A + r * cols;
    for (int q = 0; q < cols; ++q) s += row[q] * x[q];
    out[r] += s;
  }
}

inline std::shared_ptr<const SimulationPlan> make_plan(const Problem& pb, const ControlPolicy& pol,
                                                       const MeanTrajectory& mean) {
  const auto& g = pb.grid();
  if (mean.grid != g) throw Error(ErrorKind::GridMismatch, "mean trajectory grid differs from problem grid");
  auto plan = std::make_shared<SimulationPlan>();
  auto& P = *plan;
  const int n = pb.n(), m = pb.m(), M = g.intervals();
  const int L = static_cast<int>(pb.jumps().size());
  P.n = n;
  P.m = m;
  P.M = M;
  P.atoms = L;
  P.dt = g.step();
  P.sqrt_dt = std::sqrt(P.dt);
  P.shadow = pol.has_offset() && pol.has_feedback();
  P.x0.assign(pb.x0().data(), pb.x0().data() + n);
  for (const auto& a : pb.jumps().atoms) {
    P.mu.push_back(a.rate * P.dt);
    P.exp_neg_mu.push_back(std::exp(-a.rate * P.dt));
  }
  const std::size_t N = static_cast<std::size_t>(M + 1);
  const std::size_t nn = static_cast<std::size_t>(n * n), nm = static_cast<std::size_t>(n * m);
  P.Atil.resize(N * nn);
  P.Btil.resize(N * nm);
  P.C.resize(N * nn);
  P.D.resize(N * nm);
  P.K0.resize(N * nm);
  P.E.resize(N * L * nn);
  P.F.resize(N * L * nm);
  P.uoff.resize(N * m);
  P.c.resize(N * n);
  P.dv.resize(N * n);
  P.e.resize(N * L * n);
  if (P.shadow) {
    P.uoff_s.resize(N * m);
    P.c_s.resize(N * n);
    P.dv_s.resize(N * n);
    P.e_s.resize(N * L * n);
  }
  const auto& d = pb.dynamics();
  const Vector zero_u = Vector::Zero(m);
  for (int k = 0; k <= M; ++k) {
    const std::size_t ks = static_cast<std::size_t>(k);
    Matrix Atil = d.A.node(k), Btil = d.B.node(k);
    for (const auto& a : pb.jumps().atoms) {
      Atil -= a.rate * a.E.node(k);
      Btil -= a.rate * a.F.node(k);
    }
    const Matrix& K0 = pol.law.K0.node(k);
    const Matrix& K1 = pol.law.K1.node(k);
    SimulationPlan::put(P.Atil, ks * nn, Atil);
    SimulationPlan::put(P.Btil, ks * nm, Btil);
    SimulationPlan::put(P.C, ks * nn, d.C.node(k));
    SimulationPlan::put(P.D, ks * nm, d.D.node(k));
    SimulationPlan::put(P.K0, ks * nm, K0);
    for (int i = 0; i < L; ++i) {
      const auto& a = pb.jumps().atoms[static_cast<std::size_t>(i)];
      SimulationPlan::put(P.E, (ks * L + i) * nn, a.E.node(k));
      SimulationPlan::put(P.F, (ks * L + i) * nm, a.F.node(k));
    }
    // Deterministic parts given a mean state and mean control.
    auto fill = [&](const Vector& mm, const Vector& ub, const Vector& uo, std::vector<double>& uoff,
                    std::vector<double>& c, std::vector<double>& dv, std::vector<double>& e) {
      Vector cc = d.Abar.node(k) * mm + d.Bbar.node(k) * ub;
      for (int i = 0; i < L; ++i) {
        const auto& a = pb.jumps().atoms[static_cast<std::size_t>(i)];
        const Vector ee = a.Ebar.node(k) * mm + a.Fbar.node(k) * ub;
        cc -= a.rate * ee;
        SimulationPlan::put(e, (ks * L + i) * n, ee);
      }
      SimulationPlan::put(c, ks * n, cc);
      SimulationPlan::put(dv, ks * n, d.Cbar.node(k) * mm + d.Dbar.node(k) * ub);
      SimulationPlan::put(uoff, ks * m, uo);
    };
    const Vector& ref = mean.reference[ks];
    const Vector& w = detail::offset_at(pol, k, zero_u);
    const Vector base_off = K0 * ref - K1 * ref;
    fill(mean.m[ks], mean.ubar[ks], base_off + w, P.uoff, P.c, P.dv, P.e);
    if (P.shadow) fill(ref, -(K1 * ref), base_off, P.uoff_s, P.c_s, P.dv_s, P.e_s);
  }
  return plan;
}

/// Euler-Maruyama kernel; NN, MM fix the state and control sizes at compile time (0 = runtime).
/// Jump amplitudes use the step-start state.
template <int NN, int MM>
void simulate_kernel(const SimulationPlan& P, const Philox4x32& gen, std::uint64_t path, PathSample& out) {
  const int n = NN > 0 ? NN : P.n;
  const int m = MM > 0 ? MM : P.m;
  const int M = P.M, L = P.atoms;
  out.resize(n, m, M, L);
  const PathStream stream(gen, path);
  constexpr int cap = (NN > 0 && MM > 0) ? (NN > MM ? NN : MM) : 1;
  double fixed[7 * cap];
  std::vector<double> heap;
  double* buf = fixed;
  const int w = std::max(n, m);
  if (NN == 0 || MM == 0) {
    heap.resize(static_cast<std::size_t>(7 * w));
    buf = heap.data();
  }
  double* Xs = buf;
  double* Xs_next = buf + w;
  double* Us = buf + 2 * w;
  double* Dr = buf + 3 * w;
  double* Df = buf + 4 * w;
  double* Jm = buf + 5 * w;
  double* Pre = buf + 6 * w;  // pre-jump reference state, not kept
  const std::size_t nn = static_cast<std::size_t>(n * n), nm = static_cast<std::size_t>(n * m);
  double* X = out.X.data();
  double* Xm = out.Xminus.data();
  double* U = out.u.data();
  for (int j = 0; j < n; ++j) X[j] = Xm[j] = Xs[j] = P.x0[static_cast<std::size_t>(j)];

  auto control = [&](std::size_t ks, const double* x, const double* uoff, double* u) {
    const double* K = P.K0.data() + ks * nm;
    for (int r = 0; r < m; ++r) {
      double acc = uoff[ks * m + r];
      for (int q = 0; q < n; ++q) acc -= K[r * n + q] * x[q];
      u[r] = acc;
    }
  };

  // One step from x under control u with deterministic parts (c, dv, e).
  auto step = [&](std::size_t ks, const double* x, const double* u, const double* c, const double* dv,
                  const double* e, double dW, const int* counts, double* pre, double* post) {
    const double* A = P.Atil.data() + ks * nn;
    const double* B = P.Btil.data() + ks * nm;
    const double* C = P.C.data() + ks * nn;
    const double* D = P.D.data() + ks * nm;
    for (int r = 0; r < n; ++r) {
      double dr = c[ks * n + r], df = dv[ks * n + r];
      for (int q = 0; q < n; ++q) {
        dr += A[r * n + q] * x[q];
        df += C[r * n + q] * x[q];
      }
      for (int q = 0; q < m; ++q) {
        dr += B[r * m + q] * u[q];
        df += D[r * m + q] * u[q];
      }
      Dr[r] = dr;
      Df[r] = df;
    }
    for (int r = 0; r < n; ++r) post[r] = pre[r] = x[r] + P.dt * Dr[r] + dW * Df[r];
    for (int i = 0; i < L; ++i) {
      if (counts[i] == 0) continue;
      const std::size_t ai = ks * L + static_cast<std::size_t>(i);
      const double* E = P.E.data() + ai * nn;
      const double* F = P.F.data() + ai * nm;
      for (int r = 0; r < n; ++r) {
        double acc = e[ai * n + r];
        for (int q = 0; q < n; ++q) acc += E[r * n + q] * x[q];
        for (int q = 0; q < m; ++q) acc += F[r * m + q] * u[q];
        Jm[r] = acc;
      }
      for (int r = 0; r < n; ++r) post[r] += counts[i] * Jm[r];
    }
  };

  for (int k = 0; k < M; ++k) {
    const std::size_t ks = static_cast<std::size_t>(k);
    double u0 = 0.0;
    const double dW = P.sqrt_dt * stream.normal(static_cast<std::uint32_t>(k), &u0);
    out.dW[ks] = dW;
    int* counts = out.jumps.data() + ks * L;
    for (int i = 0; i < L; ++i) {
      const double ui = i == 0 ? u0 : stream.uniform(static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(i));
      counts[i] = poisson_inverse(ui, P.mu[static_cast<std::size_t>(i)], P.exp_neg_mu[static_cast<std::size_t>(i)]);
    }
    const double* x = X + ks * n;
    double* u = U + ks * m;
    if (P.shadow) {
      control(ks, Xs, P.uoff_s.data(), Us);
      control(ks, Xs, P.uoff.data(), u);
      step(ks, Xs, Us, P.c_s.data(), P.dv_s.data(), P.e_s.data(), dW, counts, Pre, Xs_next);
      std::swap(Xs, Xs_next);
    } else {
      control(ks, x, P.uoff.data(), u);
    }
    step(ks, x, u, P.c.data(), P.dv.data(), P.e.data(), dW, counts, Xm + (ks + 1) * n, X + (ks + 1) * n);
  }
  const std::size_t Ms = static_cast<std::size_t>(M);
  control(Ms, P.shadow ? Xs : X + Ms * n, P.uoff.data(), U + Ms * m);
}

inline void simulate_one(const SimulationPlan& P, const Philox4x32& gen, std::uint64_t path, PathSample& out) {
  if (P.n == 1 && P.m == 1) return simulate_kernel<1, 1>(P, gen, path, out);
  if (P.n == 2 && P.m == 1) return simulate_kernel<2, 1>(P, gen, path, out);
  simulate_kernel<0, 0>(P, gen, path, out);
}

/// Splits [0, N) into fixed chunks and hands them to worker threads. Results
/// depend only on the chunk layout, never on the thread count.
template <class Fn>
void run_chunks(std::size_t N, std::size_t chunk, unsigned threads, Fn&& fn) {
  const std::size_t chunks = (N + chunk - 1) / chunk;
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(chunks, 1)));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  auto worker = [&]() {
    try {
      for (;;) {
        const std::size_t c = next.fetch_add(1);
        if (c >= chunks || failed.load()) return;
        fn(c, c * chunk, std::min(N, (c + 1) * chunk));
      }
    } catch (...) {
      if (!failed.exchange(true)) failure = std::current_exception();
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
}

inline constexpr std::size_t kChunk = 256;

inline bool finite_path(const PathSample& s) {
  for (double v : s.X) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace detail

/// Pairwise sum in index order.
inline double pairwise_sum(const double* x, std::size_t n) {
  if (n <= 16) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  const std::size_t h = n / 2;
  return pairwise_sum(x, h) + pairwise_sum(x + h, n - h);
}

struct CostEstimate {
  double mean = 0.0;
  double se = 0.0;  // sample std / sqrt(N)
  std::size_t n = 0;
};

inline CostEstimate summarize(const std::vector<double>& v) {
  CostEstimate e;
  e.n = v.size();
  if (v.empty()) return e;
  e.mean = pairwise_sum(v.data(), v.size()) / static_cast<double>(v.size());
  std::vector<double> sq(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - e.mean) * (v[i] - e.mean);
  if (v.size() > 1) {
    const double var = pairwise_sum(sq.data(), sq.size()) / static_cast<double>(v.size() - 1);
    e.se = std::sqrt(var / static_cast<double>(v.size()));
  }
  return e;
}

/// Estimate of E[a - b] for paired samples.
inline CostEstimate paired_difference(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error(ErrorKind::ShapeMismatch, "paired samples differ in size");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return summarize(d);
}

/// Simulated paths under a policy. Paths are regenerated on demand from the
/// counter-based stream unless materialized.
class PathEnsemble {
 public:
  [[nodiscard]] std::size_t size() const noexcept { return N_; }
  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
  [[nodiscard]] const MeanTrajectory& mean() const noexcept { return mean_; }
  [[nodiscard]] const TimeGrid& grid() const noexcept { return mean_.grid; }
  [[nodiscard]] unsigned threads() const noexcept { return threads_; }

  /// Sample average and standard deviation of X per node (filled when checked).
  [[nodiscard]] const std::vector<Vector>& node_mean() const noexcept { return node_mean_; }
  [[nodiscard]] const std::vector<Vector>& node_sd() const noexcept { return node_sd_; }
  /// Nodes where the sample average sits more than 4 standard errors from m.
  [[nodiscard]] const std::vector<int>& flagged_nodes() const noexcept { return flagged_; }

  void path(std::size_t i, PathSample& out) const {
    if (!stored_.empty()) {
      out = stored_[i];
      return;
    }
    detail::simulate_one(*plan_, gen_, i, out);
  }

  [[nodiscard]] PathSample path(std::size_t i) const {
    PathSample s;
    path(i, s);
    return s;
  }

  /// Calls fn(i, sample) for every path; fn may only write per-path outputs.
  template <class Fn>
  void for_each_path(Fn&& fn) const {
    detail::run_chunks(N_, detail::kChunk, threads_, [&](std::size_t, std::size_t b, std::size_t e) {
      PathSample s;
      for (std::size_t i = b; i < e; ++i) {
        path(i, s);
        if (!detail::finite_path(s)) {
          throw Error(ErrorKind::NonFiniteState, "path " + std::to_string(i) + " left the finite range");
        }
        fn(i, static_cast<const PathSample&>(s));
      }
    });
  }

 private:
  friend PathEnsemble simulate_paths(const Problem&, const ControlPolicy&, const MeanTrajectory&,
                                     const SimulationOptions&);
  PathEnsemble(std::shared_ptr<const detail::SimulationPlan> plan, MeanTrajectory mean, std::uint64_t seed,
               std::size_t N, unsigned threads)
      : plan_(std::move(plan)), gen_(seed), mean_(std::move(mean)), seed_(seed), N_(N), threads_(threads) {}

  std::shared_ptr<const detail::SimulationPlan> plan_;
  Philox4x32 gen_;
  MeanTrajectory mean_;
  std::uint64_t seed_;
  std::size_t N_;
  unsigned threads_;
  std::vector<Vector> node_mean_, node_sd_;
  std::vector<int> flagged_;
  std::vector<PathSample> stored_;
};

inline PathEnsemble simulate_paths(const Problem& pb, const ControlPolicy& pol, const MeanTrajectory& mean,
                                   const SimulationOptions& opt = {}) {
  if (opt.paths == 0) throw Error(ErrorKind::ShapeMismatch, "need at least one path");
  PathEnsemble ens(detail::make_plan(pb, pol, mean), mean, opt.seed, opt.paths, opt.threads);
  if (opt.materialize) {
    ens.stored_.resize(opt.paths);
    detail::run_chunks(opt.paths, detail::kChunk, opt.threads, [&](std::size_t, std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) detail::simulate_one(*ens.plan_, ens.gen_, i, ens.stored_[i]);
    });
  }
  if (opt.check_consistency) {
    const int n = pb.n(), nodes = pb.grid().nodes();
    const std::size_t width = static_cast<std::size_t>(nodes * n);
    const std::size_t chunks = (opt.paths + detail::kChunk - 1) / detail::kChunk;
    std::vector<std::vector<double>> s1(chunks), s2(chunks);
    detail::run_chunks(opt.paths, detail::kChunk, opt.threads, [&](std::size_t c, std::size_t b, std::size_t e) {
      std::vector<double> a(width, 0.0), q(width, 0.0);
      PathSample s;
      for (std::size_t i = b; i < e; ++i) {
        ens.path(i, s);
        if (!detail::finite_path(s)) {
          throw Error(ErrorKind::NonFiniteState, "path " + std::to_string(i) + " left the finite range");
        }
        for (std::size_t j = 0; j < width; ++j) {
          a[j] += s.X[j];
          q[j] += s.X[j] * s.X[j];
        }
      }
      s1[c] = std::move(a);
      s2[c] = std::move(q);
    });
    std::vector<double> col(chunks);
    const double N = static_cast<double>(opt.paths);
    ens.node_mean_.assign(static_cast<std::size_t>(nodes), Vector::Zero(n));
    ens.node_sd_.assign(static_cast<std::size_t>(nodes), Vector::Zero(n));
    for (int k = 0; k < nodes; ++k) {
      bool flag = false;
      for (int j = 0; j < n; ++j) {
        const std::size_t idx = static_cast<std::size_t>(k * n + j);
        for (std::size_t c = 0; c < chunks; ++c) col[c] = s1[c][idx];
        const double mu = pairwise_sum(col.data(), chunks) / N;
        for (std::size_t c = 0; c < chunks; ++c) col[c] = s2[c][idx];
        const double var = std::max(0.0, (pairwise_sum(col.data(), chunks) - N * mu * mu) / std::max(1.0, N - 1.0));
        ens.node_mean_[k](j) = mu;
        ens.node_sd_[k](j) = std::sqrt(var);
        const double se = std::sqrt(var / N);
        const double gap = std::abs(mu - mean.m[static_cast<std::size_t>(k)](j));
        if (gap > 4.0 * se && gap > 1e-12 * std::max(1.0, std::abs(mu))) flag = true;
      }
      if (flag) ens.flagged_.push_back(k);
    }
  }
  return ens;
}

/// Per-path quadratic cost in centered form with left-endpoint quadrature:
/// the centered part is random, the mean part is shared by all paths.
class CostEvaluator {
 public:
  CostEvaluator(const CostWeights& w, const MeanTrajectory& mean) : n_(static_cast<int>(w.G.rows())) {
    const auto& g = mean.grid;
    if (w.Q.grid() != g) throw Error(ErrorKind::GridMismatch, "weights grid differs from ensemble grid");
    M_ = g.intervals();
    m_ = static_cast<int>(w.R.rows());
    dt_ = g.step();
    const std::size_t nn = static_cast<std::size_t>(n_ * n_), nm = static_cast<std::size_t>(n_ * m_),
                      mm = static_cast<std::size_t>(m_ * m_);
    Q_.resize(M_ * nn);
    S_.resize(M_ * nm);
    R_.resize(M_ * mm);
    G_.resize(nn);
    mean_.resize(static_cast<std::size_t>((M_ + 1) * n_));
    ubar_.resize(static_cast<std::size_t>((M_ + 1) * m_));
    std::vector<double> terms(static_cast<std::size_t>(M_));
    for (int k = 0; k < M_; ++k) {
      const std::size_t ks = static_cast<std::size_t>(k);
      detail::SimulationPlan::put(Q_, ks * nn, w.Q.node(k));
      detail::SimulationPlan::put(S_, ks * nm, w.S.node(k));
      detail::SimulationPlan::put(R_, ks * mm, w.R.node(k));
      const Vector& mk = mean.m[ks];
      const Vector& uk = mean.ubar[ks];
      terms[ks] = mk.dot((w.Q.node(k) + w.Qbar.node(k)) * mk) + 2.0 * mk.dot((w.S.node(k) + w.Sbar.node(k)) * uk) +
                  uk.dot((w.R.node(k) + w.Rbar.node(k)) * uk);
    }
    detail::SimulationPlan::put(G_, 0, w.G);
    for (int k = 0; k <= M_; ++k) {
      for (int j = 0; j < n_; ++j) mean_[static_cast<std::size_t>(k * n_ + j)] = mean.m[static_cast<std::size_t>(k)](j);
      for (int j = 0; j < m_; ++j) ubar_[static_cast<std::size_t>(k * m_ + j)] = mean.ubar[static_cast<std::size_t>(k)](j);
    }
    const Vector& mT = mean.m.back();
    deterministic_ = 0.5 * (mT.dot((w.G + w.Gbar) * mT) + dt_ * pairwise_sum(terms.data(), terms.size()));
  }

  [[nodiscard]] double deterministic_part() const noexcept { return deterministic_; }

  [[nodiscard]] double operator()(const PathSample& s) const {
    const int n = n_, m = m_;
    double xc[16], uc[16];
    std::vector<double> heap;
    double *Xc = xc, *Uc = uc;
    if (n > 16 || m > 16) {
      heap.resize(static_cast<std::size_t>(n + m));
      Xc = heap.data();
      Uc = Xc + n;
    }
    const std::size_t nn = static_cast<std::size_t>(n * n), nm = static_cast<std::size_t>(n * m),
                      mm = static_cast<std::size_t>(m * m);
    double run = 0.0;
    for (int k = 0; k < M_; ++k) {
      const std::size_t ks = static_cast<std::size_t>(k);
      for (int j = 0; j < n; ++j) Xc[j] = s.X[ks * n + j] - mean_[ks * n + j];
      for (int j = 0; j < m; ++j) Uc[j] = s.u[ks * m + j] - ubar_[ks * m + j];
      run += quad(Q_.data() + ks * nn, Xc, Xc, n, n) + 2.0 * quad(S_.data() + ks * nm, Xc, Uc, n, m) +
             quad(R_.data() + ks * mm, Uc, Uc, m, m);
    }
    const std::size_t Ms = static_cast<std::size_t>(M_);
    for (int j = 0; j < n; ++j) Xc[j] = s.X[Ms * n + j] - mean_[Ms * n + j];
    return 0.5 * (quad(G_.data(), Xc, Xc, n, n) + dt_ * run) + deterministic_;
  }

 private:
  static double quad(const double* A, const double* x, const double* y, int rows, int cols) {
    double s = 0.0;
    for (int r = 0; r < rows; ++r) {
      double t = 0.0;
      for (int q = 0; q < cols; ++q) t += A[r * cols + q] * y[q];
      s += x[r] * t;
    }
    return s;
  }

  int n_ = 0, m_ = 0, M_ = 0;
  double dt_ = 0.0;
  std::vector<double> Q_, S_, R_, G_, mean_, ubar_;
  double deterministic_ = 0.0;
};

/// Cost of every path for each weight set, in one pass over the ensemble.
inline std::vector<std::vector<double>> path_costs(const PathEnsemble& ens, const std::vector<CostWeights>& ws) {
  std::vector<CostEvaluator> evals;
  evals.reserve(ws.size());
  for (const auto& w : ws) evals.emplace_back(w, ens.mean());
  std::vector<std::vector<double>> out(ws.size(), std::vector<double>(ens.size()));
  ens.for_each_path([&](std::size_t i, const PathSample& s) {
    for (std::size_t j = 0; j < evals.size(); ++j) out[j][i] = evals[j](s);
  });
  return out;
}

inline std::vector<double> path_costs(const PathEnsemble& ens, const CostWeights& w) {
  return std::move(path_costs(ens, std::vector<CostWeights>{w}).front());
}

inline CostEstimate estimate_cost(const PathEnsemble& ens, const CostWeights& w) {
  return summarize(path_costs(ens, w));
}

/// Reference cost of one explicit pair, written directly with Eigen; used to cross-check the fast path.
inline double pair_cost(const CostWeights& w, const PairPath& p, const TimeGrid& g) {
  double run = 0.0;
  for (int k = 0; k < g.intervals(); ++k) {
    const Vector xc = p.X[k] - p.m[k], uc = p.u[k] - p.ubar[k];
    const Vector& m = p.m[k];
    const Vector& ub = p.ubar[k];
    run += xc.dot(w.Q.node(k) * xc) + 2.0 * xc.dot(w.S.node(k) * uc) + uc.dot(w.R.node(k) * uc) +
           m.dot((w.Q.node(k) + w.Qbar.node(k)) * m) + 2.0 * m.dot((w.S.node(k) + w.Sbar.node(k)) * ub) +
           ub.dot((w.R.node(k) + w.Rbar.node(k)) * ub);
  }
  const int M = g.intervals();
  const Vector xc = p.X[M] - p.m[M];
  return 0.5 * (xc.dot(w.G * xc) + p.m[M].dot((w.G + w.Gbar) * p.m[M]) + g.step() * run);
}

inline PairPath to_pair(const PathSample& s, const MeanTrajectory& mean) {
  PairPath p;
  for (int k = 0; k <= s.M; ++k) {
    p.X.push_back(s.x(k));
    p.u.push_back(s.control(k));
  }
  p.m = mean.m;
  p.ubar = mean.ubar;
  return p;
}

/// Tuple (X, u, Y, Z, r) along the given paths using the linear adjoint representation.
inline HamiltonianTuple build_tuple(const Problem& pb, const PathEnsemble& ens, const AdjointTriple& tri,
                                    std::size_t max_paths) {
  const auto& g = pb.grid();
  const auto& mean = ens.mean();
  const std::size_t L = pb.jumps().size();
  HamiltonianTuple tup;
  tup.grid = g;
  auto& mm = tup.means;
  mm.m = mean.m;
  mm.ubar = mean.ubar;
  for (int k = 0; k < g.nodes(); ++k) {
    const Vector& m = mean.m[static_cast<std::size_t>(k)];
    mm.EY.push_back(tri.Ym.node(k) * m);
    mm.EZ.push_back(tri.Zm.node(k) * m);
    std::vector<Vector> er;
    for (std::size_t i = 0; i < L; ++i) er.push_back(tri.rm[i].node(k) * m);
    mm.Er.push_back(std::move(er));
  }
  const std::size_t count = std::min(max_paths, ens.size());
  tup.paths.resize(count);
  PathSample s;
  for (std::size_t p = 0; p < count; ++p) {
    ens.path(p, s);
    auto& hp = tup.paths[p];
    for (int k = 0; k < g.nodes(); ++k) {
      const Vector x = s.x(k);
      const Vector xc = x - mean.m[static_cast<std::size_t>(k)];
      hp.X.push_back(x);
      hp.u.push_back(s.control(k));
      hp.Y.push_back(tri.Yc.node(k) * xc + mm.EY[static_cast<std::size_t>(k)]);
      hp.Z.push_back(tri.Zc.node(k) * xc + mm.EZ[static_cast<std::size_t>(k)]);
      std::vector<Vector> r;
      for (std::size_t i = 0; i < L; ++i) r.push_back(tri.rc[i].node(k) * xc + mm.Er[static_cast<std::size_t>(k)][i]);
      hp.r.push_back(std::move(r));
    }
  }
  return tup;
}

/// Largest stationarity violation along up to max_paths simulated paths.
inline double stationarity_residual(const Problem& pb, const PathEnsemble& ens, const AdjointTriple& tri,
                                    std::size_t max_paths = 100) {
  return tuple_stationarity_residual(pb, build_tuple(pb, ens, tri, max_paths));
}

/// Deterministic open-loop direction v on the grid with unit L2 norm.
/// Components are random combinations of the first four cosine modes, sampled at left endpoints.
inline std::vector<Vector> random_direction(const Problem& pb, std::uint64_t seed, std::uint32_t index) {
  const auto& g = pb.grid();
  const Philox4x32 gen(seed ^ 0x5DEECE66DULL);
  const int modes = 4;
  Eigen::MatrixXd a(pb.m(), modes);
  for (int j = 0; j < pb.m(); ++j) {
    for (int q = 0; q < modes; ++q) {
      const auto b = gen({index, static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(q), 0xD1EC7u});
      a(j, q) = normal_quantile((static_cast<double>((std::uint64_t{b[0]} << 32 | b[1]) >> 11) + 0.5) * 0x1.0p-53);
    }
  }
  constexpr double pi = 3.141592653589793238462643383279502884;
  std::vector<Vector> v(static_cast<std::size_t>(g.intervals()), Vector::Zero(pb.m()));
  double norm2 = 0.0;
  for (int k = 0; k < g.intervals(); ++k) {
    const double t = g.time(k);
    for (int q = 0; q < modes; ++q) v[static_cast<std::size_t>(k)] += a.col(q) * std::cos(q * pi * t / g.horizon());
    norm2 += v[static_cast<std::size_t>(k)].squaredNorm() * g.step();
  }
  const double s = 1.0 / std::sqrt(norm2);
  for (auto& x : v) x *= s;
  return v;
}

struct PerturbationReport {
  struct Entry {
    int direction = 0;
    double eps = 0.0;
    CostEstimate delta;  // J(u* + eps v) - J(u*), paired
  };
  struct Ratio {
    int direction = 0;
    double eps = 0.0;  // ratio of Delta J(eps) to Delta J(eps / 2)
    double ratio = 0.0;
    bool tested = false;
    bool pass = true;
  };
  double base_cost = 0.0;
  double base_se = 0.0;
  double value = 0.0;  // 1/2 <Pi(0) x0, x0>
  std::vector<Entry> entries;
  std::vector<Ratio> ratios;
  bool nonnegative = true;  // every Delta J >= -3 SE
  bool quadratic = true;    // every tested ratio inside [3.5, 4.5]
  [[nodiscard]] bool pass() const { return nonnegative && quadratic; }
};

struct PerturbationOptions {
  int directions = 8;
  std::vector<double> eps{0.4, 0.2};
  std::size_t paths = 100000;
  std::uint64_t seed = 42;
  unsigned threads = 0;
};

/// Simulates u* + eps v for random deterministic directions v with common random numbers
/// and checks J(u* + eps v) - J(u*) >= 0 and the quadratic scaling in eps.
inline PerturbationReport perturbation_test(const Problem& pb, const FeedbackLaw& law, const RiccatiSolution& sol,
                                            const PerturbationOptions& opt = {}) {
  PerturbationReport rep;
  rep.value = optimal_value(sol, pb.x0());
  SimulationOptions so;
  so.paths = opt.paths;
  so.seed = opt.seed;
  so.threads = opt.threads;
  so.check_consistency = false;
  const ControlPolicy base_pol = ControlPolicy::feedback(law);
  const MeanTrajectory base_mean = solve_mean_ode(pb, base_pol);
  const auto base = path_costs(simulate_paths(pb, base_pol, base_mean, so), pb.weights());
  const CostEstimate be = summarize(base);
  rep.base_cost = be.mean;
  rep.base_se = be.se;
  for (int d = 0; d < opt.directions; ++d) {
    const auto v = random_direction(pb, opt.seed, static_cast<std::uint32_t>(d));
    std::vector<CostEstimate> per_eps;
    for (double eps : opt.eps) {
      const ControlPolicy pol = ControlPolicy::perturbed(pb, law, v, eps);
      const MeanTrajectory mean = solve_mean_ode(pb, pol);
      const auto costs = path_costs(simulate_paths(pb, pol, mean, so), pb.weights());
      const CostEstimate dj = paired_difference(costs, base);
      rep.entries.push_back({d, eps, dj});
      per_eps.push_back(dj);
      if (dj.mean < -3.0 * dj.se) rep.nonnegative = false;
    }
    for (std::size_t i = 0; i < opt.eps.size(); ++i) {
      for (std::size_t j = 0; j < opt.eps.size(); ++j) {
        if (opt.eps[j] != 0.5 * opt.eps[i]) continue;
        PerturbationReport::Ratio r;
        r.direction = d;
        r.eps = opt.eps[i];
        r.ratio = per_eps[i].mean / per_eps[j].mean;
        r.tested = per_eps[i].mean >= 10.0 * per_eps[i].se;
        r.pass = !r.tested || (r.ratio >= 3.5 && r.ratio <= 4.5);
        if (!r.pass) rep.quadratic = false;
        rep.ratios.push_back(r);
      }
    }
  }
  return rep;
}

}  // namespace mflqj
