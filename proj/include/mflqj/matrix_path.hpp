#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace mflqj {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Uniform grid t_k = k T / M, k = 0..M.
class TimeGrid {
 public:
  TimeGrid() = default;
  TimeGrid(double T, int M) : T_(T), M_(M) {
    if (!(T > 0.0) || !std::isfinite(T)) throw Error(ErrorKind::GridMismatch, "horizon T must be positive");
    if (M < 2) throw Error(ErrorKind::GridMismatch, "grid needs M >= 2 intervals");
  }

  [[nodiscard]] double horizon() const noexcept { return T_; }
  [[nodiscard]] int intervals() const noexcept { return M_; }
  [[nodiscard]] int nodes() const noexcept { return M_ + 1; }
  [[nodiscard]] double step() const noexcept { return T_ / M_; }
  [[nodiscard]] double time(int k) const noexcept { return k * T_ / M_; }

  friend bool operator==(const TimeGrid& a, const TimeGrid& b) { return a.T_ == b.T_ && a.M_ == b.M_; }
  friend bool operator!=(const TimeGrid& a, const TimeGrid& b) { return !(a == b); }

 private:
  double T_ = 1.0;
  int M_ = 2;
};

/// A location inside interval [t_k, t_{k+1}]; frac in [0,1].
struct TimePoint {
  int k = 0;
  double frac = 0.0;

  static TimePoint node(int k) { return {k, 0.0}; }
};

inline TimePoint locate(const TimeGrid& g, double t) {
  const double s = t * g.intervals() / g.horizon();
  const double r = std::round(s);
  if (std::abs(s - r) < 1e-9) {
    return TimePoint::node(std::clamp(static_cast<int>(r), 0, g.intervals()));
  }
  int k = std::clamp(static_cast<int>(std::floor(s)), 0, g.intervals() - 1);
  return {k, std::clamp(s - k, 0.0, 1.0)};
}

/// Time-indexed matrix sampled at grid nodes, linear in between.
class MatrixPath {
 public:
  MatrixPath() = default;

  MatrixPath(TimeGrid grid, std::vector<Matrix> samples) : grid_(grid), samples_(std::move(samples)) {
    if (static_cast<int>(samples_.size()) != grid_.nodes()) {
      throw Error(ErrorKind::GridMismatch, "expected " + std::to_string(grid_.nodes()) + " samples, got " +
                                               std::to_string(samples_.size()));
    }
    for (const auto& s : samples_) {
      if (s.rows() != samples_[0].rows() || s.cols() != samples_[0].cols()) {
        throw Error(ErrorKind::ShapeMismatch, "samples of a matrix path must share one shape");
      }
    }
  }

  static MatrixPath constant(TimeGrid grid, const Matrix& value) {
    return MatrixPath(grid, std::vector<Matrix>(grid.nodes(), value));
  }

  static MatrixPath zeros(TimeGrid grid, Eigen::Index rows, Eigen::Index cols) {
    return constant(grid, Matrix::Zero(rows, cols));
  }

  static MatrixPath from_function(TimeGrid grid, const std::function<Matrix(double)>& f) {
    std::vector<Matrix> s;
    s.reserve(grid.nodes());
    for (int k = 0; k <= grid.intervals(); ++k) s.push_back(f(grid.time(k)));
    return MatrixPath(grid, std::move(s));
  }

  [[nodiscard]] const TimeGrid& grid() const noexcept { return grid_; }
  [[nodiscard]] Eigen::Index rows() const { return samples_.empty() ? 0 : samples_[0].rows(); }
  [[nodiscard]] Eigen::Index cols() const { return samples_.empty() ? 0 : samples_[0].cols(); }
  [[nodiscard]] bool empty() const noexcept { return samples_.empty(); }
  [[nodiscard]] const std::vector<Matrix>& samples() const noexcept { return samples_; }

  [[nodiscard]] const Matrix& node(int k) const { return samples_.at(static_cast<std::size_t>(k)); }
  Matrix& node(int k) { return samples_.at(static_cast<std::size_t>(k)); }

  [[nodiscard]] Matrix at(TimePoint p) const {
    if (p.frac == 0.0 || p.k >= grid_.intervals()) return node(std::min(p.k, grid_.intervals()));
    if (p.frac == 1.0) return node(p.k + 1);
    return (1.0 - p.frac) * samples_[p.k] + p.frac * samples_[p.k + 1];
  }

  /// Exact at nodes.
  [[nodiscard]] Matrix at(double t) const { return at(locate(grid_, t)); }

 private:
  TimeGrid grid_;
  std::vector<Matrix> samples_;
};

inline MatrixPath operator+(const MatrixPath& a, const MatrixPath& b) {
  if (a.grid() != b.grid()) throw Error(ErrorKind::GridMismatch, "adding paths on different grids");
  std::vector<Matrix> s;
  s.reserve(a.samples().size());
  for (int k = 0; k < a.grid().nodes(); ++k) s.push_back(a.node(k) + b.node(k));
  return MatrixPath(a.grid(), std::move(s));
}

inline MatrixPath operator-(const MatrixPath& a, const MatrixPath& b) {
  if (a.grid() != b.grid()) throw Error(ErrorKind::GridMismatch, "subtracting paths on different grids");
  std::vector<Matrix> s;
  s.reserve(a.samples().size());
  for (int k = 0; k < a.grid().nodes(); ++k) s.push_back(a.node(k) - b.node(k));
  return MatrixPath(a.grid(), std::move(s));
}

/// Largest entrywise difference over all nodes.
inline double max_abs_diff(const MatrixPath& a, const MatrixPath& b) {
  if (a.grid() != b.grid()) throw Error(ErrorKind::GridMismatch, "comparing paths on different grids");
  double d = 0.0;
  for (int k = 0; k < a.grid().nodes(); ++k) d = std::max(d, (a.node(k) - b.node(k)).cwiseAbs().maxCoeff());
  return d;
}

}  // namespace mflqj
