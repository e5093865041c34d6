#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "equivalence.hpp"
#include "errors.hpp"
#include "examples.hpp"
#include "matrix_path.hpp"
#include "problem.hpp"
#include "riccati.hpp"
#include "simulation.hpp"
#include "synthesis.hpp"

namespace mflqj::io {

using nlohmann::json;

namespace detail {

[[noreturn]] inline void fail(const std::string& field, const std::string& msg) {
  throw Error(ErrorKind::ParseError, field + ": " + msg);
}

inline double number(const json& j, const std::string& field) {
  if (!j.is_number()) fail(field, "expected a number");
  return j.get<double>();
}

inline const json& require(const json& obj, const std::string& key, const std::string& field) {
  if (!obj.is_object()) fail(field, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) fail(field.empty() ? key : field + "." + key, "missing");
  return *it;
}

inline int depth(const json& j) {
  int d = 0;
  const json* p = &j;
  while (p->is_array()) {
    ++d;
    if (p->empty()) break;
    p = &(*p)[0];
  }
  return d;
}

inline Matrix matrix(const json& j, Eigen::Index rows, Eigen::Index cols, const std::string& field) {
  if (j.is_number()) {
    if (rows != 1 || cols != 1) fail(field, "a bare number only fits a 1x1 entry");
    return Matrix::Constant(1, 1, j.get<double>());
  }
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) {
    fail(field, "expected " + std::to_string(rows) + " rows");
  }
  Matrix out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      fail(field, "row " + std::to_string(r) + " must have " + std::to_string(cols) + " entries");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      out(r, c) = number(row[static_cast<std::size_t>(c)], field + "[" + std::to_string(r) + "][" + std::to_string(c) + "]");
    }
  }
  return out;
}

/// Constant (number or nested rows) or one sample per grid node.
inline MatrixPath path(const json& j, const TimeGrid& g, Eigen::Index rows, Eigen::Index cols,
                       const std::string& field) {
  const int d = depth(j);
  const bool series = (d == 3) || (d == 1 && rows == 1 && cols == 1);
  if (!series) return MatrixPath::constant(g, matrix(j, rows, cols, field));
  if (static_cast<int>(j.size()) != g.nodes()) {
    throw Error(ErrorKind::GridMismatch, field + ": expected " + std::to_string(g.nodes()) + " samples, got " +
                                             std::to_string(j.size()));
  }
  std::vector<Matrix> s;
  s.reserve(j.size());
  for (std::size_t k = 0; k < j.size(); ++k) s.push_back(matrix(j[k], rows, cols, field + "[" + std::to_string(k) + "]"));
  return MatrixPath(g, std::move(s));
}

inline MatrixPath optional_path(const json& obj, const std::string& key, const TimeGrid& g, Eigen::Index rows,
                                Eigen::Index cols, const std::string& prefix) {
  auto it = obj.find(key);
  if (it == obj.end()) return MatrixPath::zeros(g, rows, cols);
  return path(*it, g, rows, cols, prefix + "." + key);
}

inline TimeGrid grid(const json& doc, int default_M = 1000) {
  const json& gj = require(doc, "grid", "");
  const double T = number(require(gj, "T", "grid"), "grid.T");
  int M = default_M;
  if (auto it = gj.find("M"); it != gj.end()) {
    if (!it->is_number_integer()) fail("grid.M", "expected an integer");
    M = it->get<int>();
  }
  try {
    return TimeGrid(T, M);
  } catch (const Error& e) {
    fail("grid", e.what());
  }
}

}  // namespace detail

/// Problem described by a built-in example id and parameter overrides.
inline Problem example_problem(const std::string& id, const json& params, int M) {
  auto num = [&](const char* key, double fallback) {
    auto it = params.find(key);
    return it == params.end() ? fallback : detail::number(*it, std::string("params.") + key);
  };
  if (id == "5.1") return examples::example_51(M, num("delta", 1.0), num("T", 1.0));
  if (id == "5.2") return examples::example_52(M, num("T", 1.0), num("alpha", -1.0));
  if (id == "5.3") return examples::example_53(M, num("T", 1.0));
  if (id == "5.4") {
    examples::AssetLiabilityParams q;
    for (auto it = params.begin(); it != params.end(); ++it) {
      if (!q.set(it.key(), detail::number(it.value(), "params." + it.key()))) detail::fail("params." + it.key(), "unknown parameter");
    }
    return examples::example_54(q, M);
  }
  detail::fail("example", "unknown example id '" + id + "'");
}

/// Parses a problem document. Matrices are nested row-major arrays; a time-varying
/// entry is an array of M+1 such matrices (or M+1 numbers for a 1x1 entry).
inline Problem parse_problem(const json& doc, int grid_override = 0) {
  using namespace detail;
  if (!doc.is_object()) fail("document", "expected an object");
  if (auto it = doc.find("example"); it != doc.end()) {
    if (!it->is_string()) fail("example", "expected a string id");
    int M = 1000;
    if (auto g = doc.find("grid"); g != doc.end() && g->contains("M")) M = g->at("M").get<int>();
    if (grid_override > 0) M = grid_override;
    const json params = doc.contains("params") ? doc.at("params") : json::object();
    return example_problem(it->get<std::string>(), params, M);
  }
  const json& dims = require(doc, "dimensions", "");
  const json& nj = require(dims, "n", "dimensions");
  const json& mj = require(dims, "m", "dimensions");
  if (!nj.is_number_integer() || !mj.is_number_integer()) fail("dimensions", "n and m must be integers");
  ProblemSpec s;
  s.n = nj.get<int>();
  s.m = mj.get<int>();
  if (s.n < 1 || s.m < 1) fail("dimensions", "n and m must be positive");
  TimeGrid g = grid(doc);
  if (grid_override > 0) g = TimeGrid(g.horizon(), grid_override);
  s.grid = g;
  const int n = s.n, m = s.m;
  const json& dy = require(doc, "dynamics", "");
  s.dynamics.A = path(require(dy, "A", "dynamics"), g, n, n, "dynamics.A");
  s.dynamics.B = path(require(dy, "B", "dynamics"), g, n, m, "dynamics.B");
  s.dynamics.Abar = optional_path(dy, "Abar", g, n, n, "dynamics");
  s.dynamics.Bbar = optional_path(dy, "Bbar", g, n, m, "dynamics");
  s.dynamics.C = optional_path(dy, "C", g, n, n, "dynamics");
  s.dynamics.Cbar = optional_path(dy, "Cbar", g, n, n, "dynamics");
  s.dynamics.D = optional_path(dy, "D", g, n, m, "dynamics");
  s.dynamics.Dbar = optional_path(dy, "Dbar", g, n, m, "dynamics");
  if (auto it = doc.find("jumps"); it != doc.end()) {
    if (!it->is_array()) fail("jumps", "expected an array of atoms");
    for (std::size_t i = 0; i < it->size(); ++i) {
      const json& a = (*it)[i];
      const std::string p = "jumps[" + std::to_string(i) + "]";
      JumpAtom atom;
      atom.rate = number(require(a, "rate", p), p + ".rate");
      atom.mark = a.contains("mark") ? number(a.at("mark"), p + ".mark") : 0.0;
      atom.E = optional_path(a, "E", g, n, n, p);
      atom.Ebar = optional_path(a, "Ebar", g, n, n, p);
      atom.F = optional_path(a, "F", g, n, m, p);
      atom.Fbar = optional_path(a, "Fbar", g, n, m, p);
      s.jumps.atoms.push_back(std::move(atom));
    }
  }
  const json& w = require(doc, "weights", "");
  s.weights.Q = path(require(w, "Q", "weights"), g, n, n, "weights.Q");
  s.weights.R = path(require(w, "R", "weights"), g, m, m, "weights.R");
  s.weights.G = matrix(require(w, "G", "weights"), n, n, "weights.G");
  s.weights.Qbar = optional_path(w, "Qbar", g, n, n, "weights");
  s.weights.S = optional_path(w, "S", g, n, m, "weights");
  s.weights.Sbar = optional_path(w, "Sbar", g, n, m, "weights");
  s.weights.Rbar = optional_path(w, "Rbar", g, m, m, "weights");
  s.weights.Gbar = w.contains("Gbar") ? matrix(w.at("Gbar"), n, n, "weights.Gbar") : Matrix::Zero(n, n);
  const json& x0 = require(doc, "x0", "");
  if (!x0.is_array() || static_cast<int>(x0.size()) != n) fail("x0", "expected " + std::to_string(n) + " entries");
  s.x0 = Vector(n);
  for (int j = 0; j < n; ++j) s.x0(j) = number(x0[static_cast<std::size_t>(j)], "x0[" + std::to_string(j) + "]");
  return validate_spec(std::move(s));
}

inline json read_json(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + file);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::ParseError, file + ": " + e.what());
  }
}

inline Problem parse_problem_file(const std::string& file, int grid_override = 0) {
  return parse_problem(read_json(file), grid_override);
}

/// Optional "shift" section: H, K and either Hdot/Kdot or "derivatives": "finite-difference".
inline FunctionalShift parse_shift(const json& doc, const Problem& pb) {
  using namespace detail;
  const json& sj = doc.contains("shift") ? doc.at("shift") : doc;
  const auto& g = pb.grid();
  const int n = pb.n();
  MatrixPath H = path(require(sj, "H", "shift"), g, n, n, "shift.H");
  MatrixPath K = path(require(sj, "K", "shift"), g, n, n, "shift.K");
  const bool fd = sj.contains("derivatives") && sj.at("derivatives") == "finite-difference";
  if (fd) return FunctionalShift::finite_differences(std::move(H), std::move(K));
  if (!sj.contains("Hdot") || !sj.contains("Kdot")) {
    fail("shift", "Hdot and Kdot are required unless \"derivatives\": \"finite-difference\" is set");
  }
  return FunctionalShift::analytic(std::move(H), std::move(K), path(sj.at("Hdot"), g, n, n, "shift.Hdot"),
                                   path(sj.at("Kdot"), g, n, n, "shift.Kdot"));
}

// ---------------------------------------------------------------- CSV

/// Shortest round-trip decimal form.
inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& file) : out_(file, std::ios::binary) {
    if (!out_) throw Error(ErrorKind::IoError, "cannot write " + file.string());
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << csv_quote(cells[i]);
    }
    out_ << "\r\n";
  }

  void row(const std::vector<double>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << fmt(cells[i]);
    }
    out_ << "\r\n";
  }

 private:
  std::ofstream out_;
};

inline void append_names(std::vector<std::string>& h, const std::string& base, Eigen::Index rows, Eigen::Index cols) {
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) h.push_back(base + "_" + std::to_string(r) + std::to_string(c));
  }
}

inline void append_values(std::vector<double>& v, const Matrix& a) {
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    for (Eigen::Index c = 0; c < a.cols(); ++c) v.push_back(a(r, c));
  }
}

/// Columns: t, P, Pi, Sigma0, Sigma1, each flattened row-major.
inline void write_riccati_csv(const std::filesystem::path& file, const RiccatiSolution& sol) {
  CsvWriter w(file);
  std::vector<std::string> h{"t"};
  append_names(h, "P", sol.P.rows(), sol.P.cols());
  append_names(h, "Pi", sol.Pi.rows(), sol.Pi.cols());
  append_names(h, "Sigma0", sol.Sigma0.rows(), sol.Sigma0.cols());
  append_names(h, "Sigma1", sol.Sigma1.rows(), sol.Sigma1.cols());
  w.row(h);
  for (int k = 0; k < sol.grid().nodes(); ++k) {
    std::vector<double> v{sol.grid().time(k)};
    append_values(v, sol.P.node(k));
    append_values(v, sol.Pi.node(k));
    append_values(v, sol.Sigma0.node(k));
    append_values(v, sol.Sigma1.node(k));
    w.row(v);
  }
}

inline std::vector<std::vector<double>> read_csv_numbers(const std::filesystem::path& file, std::vector<std::string>* header) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + file.string());
  std::string line;
  std::vector<std::vector<double>> rows;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (first) {
      first = false;
      if (header) *header = cells;
      continue;
    }
    std::vector<double> v;
    for (const auto& c : cells) {
      char* end = nullptr;
      const double x = std::strtod(c.c_str(), &end);
      if (end == c.c_str()) throw Error(ErrorKind::ParseError, file.string() + ": bad number '" + c + "'");
      v.push_back(x);
    }
    rows.push_back(std::move(v));
  }
  return rows;
}

/// Inverse of write_riccati_csv on the same grid; bit-exact thanks to %.17g.
inline RiccatiSolution read_riccati_csv(const std::filesystem::path& file, const TimeGrid& g, int n, int m) {
  const auto rows = read_csv_numbers(file, nullptr);
  if (static_cast<int>(rows.size()) != g.nodes()) throw Error(ErrorKind::GridMismatch, "row count differs from grid");
  const std::size_t width = 1 + 2 * static_cast<std::size_t>(n * n) + 2 * static_cast<std::size_t>(m * m);
  std::vector<Matrix> P, Pi, S0, S1;
  for (const auto& r : rows) {
    if (r.size() != width) throw Error(ErrorKind::ParseError, "unexpected column count in " + file.string());
    std::size_t at = 1;
    auto take = [&](int a, int b) {
      Matrix x(a, b);
      for (int i = 0; i < a; ++i) {
        for (int j = 0; j < b; ++j) x(i, j) = r[at++];
      }
      return x;
    };
    P.push_back(take(n, n));
    Pi.push_back(take(n, n));
    S0.push_back(take(m, m));
    S1.push_back(take(m, m));
  }
  return {MatrixPath(g, std::move(P)), MatrixPath(g, std::move(Pi)), MatrixPath(g, std::move(S0)),
          MatrixPath(g, std::move(S1)), {}};
}

inline void write_gains_csv(const std::filesystem::path& file, const FeedbackLaw& law) {
  CsvWriter w(file);
  std::vector<std::string> h{"t"};
  append_names(h, "K0", law.K0.rows(), law.K0.cols());
  append_names(h, "K1", law.K1.rows(), law.K1.cols());
  w.row(h);
  for (int k = 0; k < law.grid().nodes(); ++k) {
    std::vector<double> v{law.grid().time(k)};
    append_values(v, law.K0.node(k));
    append_values(v, law.K1.node(k));
    w.row(v);
  }
}

inline void write_mean_csv(const std::filesystem::path& file, const MeanTrajectory& mean) {
  CsvWriter w(file);
  std::vector<std::string> h{"t"};
  append_names(h, "m", mean.m[0].size(), 1);
  append_names(h, "ubar", mean.ubar[0].size(), 1);
  w.row(h);
  for (int k = 0; k < mean.grid.nodes(); ++k) {
    std::vector<double> v{mean.grid.time(k)};
    append_values(v, mean.m[static_cast<std::size_t>(k)]);
    append_values(v, mean.ubar[static_cast<std::size_t>(k)]);
    w.row(v);
  }
}

inline void write_weights_csv(const std::filesystem::path& file, const CostWeights& wt) {
  CsvWriter w(file);
  std::vector<std::string> h{"t"};
  append_names(h, "Q", wt.Q.rows(), wt.Q.cols());
  append_names(h, "Qbar", wt.Qbar.rows(), wt.Qbar.cols());
  append_names(h, "S", wt.S.rows(), wt.S.cols());
  append_names(h, "Sbar", wt.Sbar.rows(), wt.Sbar.cols());
  append_names(h, "R", wt.R.rows(), wt.R.cols());
  append_names(h, "Rbar", wt.Rbar.rows(), wt.Rbar.cols());
  w.row(h);
  const auto& g = wt.Q.grid();
  for (int k = 0; k < g.nodes(); ++k) {
    std::vector<double> v{g.time(k)};
    for (const MatrixPath* p : {&wt.Q, &wt.Qbar, &wt.S, &wt.Sbar, &wt.R, &wt.Rbar}) append_values(v, p->node(k));
    w.row(v);
  }
}

/// First `count` paths, one row per (path, node).
inline void write_paths_csv(const std::filesystem::path& file, const PathEnsemble& ens, std::size_t count) {
  CsvWriter w(file);
  const PathSample first = ens.path(0);
  std::vector<std::string> h{"path", "t"};
  append_names(h, "X", first.n, 1);
  append_names(h, "u", first.m, 1);
  w.row(h);
  PathSample s;
  for (std::size_t p = 0; p < std::min(count, ens.size()); ++p) {
    ens.path(p, s);
    for (int k = 0; k <= s.M; ++k) {
      std::vector<double> v{static_cast<double>(p), ens.grid().time(k)};
      append_values(v, s.x(k));
      append_values(v, s.control(k));
      w.row(v);
    }
  }
}

// ---------------------------------------------------------------- SVG

struct Series {
  std::string name;
  std::vector<double> x, y;
};

/// Minimal line chart.
inline void write_svg_plot(const std::filesystem::path& file, const std::string& title, const std::string& xlabel,
                           const std::vector<Series>& series) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + file.string());
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series) {
    for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
    for (double v : s.y) y0 = std::min(y0, v), y1 = std::max(y1, v);
  }
  if (x1 <= x0) x1 = x0 + 1.0;
  if (y1 - y0 < 1e-12) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const double W = 640, Hh = 400, L = 70, R = 160, Tm = 40, B = 50;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return Hh - B - (y - y0) / (y1 - y0) * (Hh - Tm - B); };
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << Hh << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << Hh - B << "\" x2=\"" << W - R << "\" y2=\"" << Hh - B
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << Tm << "\" x2=\"" << L << "\" y2=\"" << Hh - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    char b[64];
    std::snprintf(b, sizeof b, "%.4g", xv);
    out << "<text x=\"" << px(xv) << "\" y=\"" << Hh - B + 18 << "\" text-anchor=\"middle\" font-size=\"11\">" << b
        << "</text>\n";
    std::snprintf(b, sizeof b, "%.4g", yv);
    out << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << b
        << "</text>\n";
  }
  out << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << Hh - 12 << "\" text-anchor=\"middle\" font-size=\"12\">"
      << xlabel << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* c = colors[i % 8];
    out << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
    const std::size_t stride = std::max<std::size_t>(1, s.x.size() / 400);
    for (std::size_t k = 0; k < s.x.size(); k += stride) out << fmt(px(s.x[k])) << ',' << fmt(py(s.y[k])) << ' ';
    out << fmt(px(s.x.back())) << ',' << fmt(py(s.y.back())) << "\"/>\n";
    out << "<text x=\"" << W - R + 10 << "\" y=\"" << Tm + 16 * (i + 1) << "\" font-size=\"12\" fill=\"" << c << "\">"
        << s.name << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace mflqj::io
