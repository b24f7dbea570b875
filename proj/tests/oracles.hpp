#pragma once

// Reference computations that share no code path with the library solvers.

#include "invmono/core.hpp"
#include "invmono/fitzpatrick.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

namespace oracle {

using invmono::Matrix;
using invmono::Vector;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Minimizer of a convex function on [lo, hi] by golden-section search.
inline double golden_min(const std::function<double(double)>& f, double lo, double hi, double width = 1e-11,
                         double* value = nullptr) {
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > width) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  const double x = 0.5 * (a + b);
  if (value) *value = f(x);
  return x;
}

/// min c^T x s.t. A x <= b and lo <= x <= hi by enumerating every basis
/// (n active constraints). Returns nullopt when no vertex is feasible.
inline std::optional<double> lp_by_vertices(const Vector& c, const Matrix& a, const Vector& b, const Vector& lo,
                                            const Vector& hi, double feas_tol = 1e-9) {
  const Eigen::Index n = c.size();
  const Eigen::Index m = a.rows();
  // Stack all constraints as rows g^T x <= h.
  Matrix g(m + 2 * n, n);
  Vector h(m + 2 * n);
  g.topRows(m) = a;
  h.head(m) = b;
  g.middleRows(m, n) = Matrix::Identity(n, n);
  h.segment(m, n) = hi;
  g.bottomRows(n) = -Matrix::Identity(n, n);
  h.tail(n) = -lo;
  const Eigen::Index total = g.rows();
  std::vector<Eigen::Index> pick(static_cast<std::size_t>(n));
  std::optional<double> best;
  std::function<void(Eigen::Index, Eigen::Index)> rec = [&](Eigen::Index start, Eigen::Index depth) {
    if (depth == n) {
      Matrix sub(n, n);
      Vector rhs(n);
      for (Eigen::Index k = 0; k < n; ++k) {
        sub.row(k) = g.row(pick[static_cast<std::size_t>(k)]);
        rhs[k] = h[pick[static_cast<std::size_t>(k)]];
      }
      Eigen::FullPivLU<Matrix> lu(sub);
      if (lu.rank() < n) return;
      const Vector x = lu.solve(rhs);
      if (((g * x - h).array() > feas_tol).any()) return;
      const double val = c.dot(x);
      if (!best || val < *best) best = val;
      return;
    }
    for (Eigen::Index r = start; r < total; ++r) {
      pick[static_cast<std::size_t>(depth)] = r;
      rec(r + 1, depth + 1);
    }
  };
  rec(0, 0);
  return best;
}

/// Convex QP min 1/2 x^T H x + c^T x s.t. A x <= b by enumerating active sets
/// and keeping KKT points (H positive definite).
inline std::optional<Vector> qp_by_active_sets(const Matrix& hmat, const Vector& c, const Matrix& a,
                                               const Vector& b) {
  const Eigen::Index n = c.size();
  const Eigen::Index m = a.rows();
  for (unsigned mask = 0; mask < (1u << m); ++mask) {
    std::vector<Eigen::Index> act;
    for (Eigen::Index i = 0; i < m; ++i)
      if (mask & (1u << i)) act.push_back(i);
    const auto k = static_cast<Eigen::Index>(act.size());
    if (k > n) continue;
    Matrix kkt = Matrix::Zero(n + k, n + k);
    Vector rhs(n + k);
    kkt.topLeftCorner(n, n) = hmat;
    rhs.head(n) = -c;
    for (Eigen::Index j = 0; j < k; ++j) {
      kkt.block(0, n + j, n, 1) = a.row(act[static_cast<std::size_t>(j)]).transpose();
      kkt.block(n + j, 0, 1, n) = a.row(act[static_cast<std::size_t>(j)]);
      rhs[n + j] = b[act[static_cast<std::size_t>(j)]];
    }
    Eigen::FullPivLU<Matrix> lu(kkt);
    if (lu.rank() < n + k) continue;
    const Vector sol = lu.solve(rhs);
    const Vector x = sol.head(n);
    if (((a * x - b).array() > 1e-9).any()) continue;
    if (k > 0 && (sol.tail(k).array() < -1e-9).any()) continue;
    return x;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// One-dimensional kernel-average evaluation without the inlined program.

struct Graph1d {
  std::vector<double> x;
  std::vector<double> v;
  double lo() const { return *std::min_element(x.begin(), x.end()); }
  double hi() const { return *std::max_element(x.begin(), x.end()); }
};

inline double fitzpatrick1d(const Graph1d& g, double x, double v) {
  double best = -kInf;
  for (std::size_t k = 0; k < g.x.size(); ++k) best = std::max(best, g.v[k] * x + v * g.x[k] - g.v[k] * g.x[k]);
  return best;
}

/// f*(v2, x2) = sup over a in [lo, hi], b in R of v2 a + x2 b - F_A(a, b).
/// The integrand is concave piecewise linear; its maximum sits on a vertex of
/// the arrangement of the lines where two affine pieces of F_A tie, the
/// strip boundaries a = lo, hi, or (when F_A has no b-dependence left) b = 0.
inline double fstar1d(const Graph1d& g, double v2, double x2) {
  const double lo = g.lo(), hi = g.hi();
  if (x2 < lo - 1e-12 || x2 > hi + 1e-12) return kInf;
  const std::size_t n = g.x.size();
  // Piece k: v_k a + x_k b - c_k. Tie line for (k, j): alpha a + beta b = gamma.
  struct Line {
    double alpha, beta, gamma;
  };
  std::vector<Line> lines{{1.0, 0.0, lo}, {1.0, 0.0, hi}, {0.0, 1.0, 0.0}};
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t j = k + 1; j < n; ++j) {
      const double alpha = g.v[k] - g.v[j];
      const double beta = g.x[k] - g.x[j];
      const double gamma = g.v[k] * g.x[k] - g.v[j] * g.x[j];
      if (std::abs(alpha) + std::abs(beta) > 1e-14) lines.push_back({alpha, beta, gamma});
    }
  auto value = [&](double a, double b) { return v2 * a + x2 * b - fitzpatrick1d(g, a, b); };
  double best = -kInf;
  for (std::size_t p = 0; p < lines.size(); ++p)
    for (std::size_t q = p + 1; q < lines.size(); ++q) {
      const double det = lines[p].alpha * lines[q].beta - lines[q].alpha * lines[p].beta;
      if (std::abs(det) < 1e-14) continue;
      const double a = (lines[p].gamma * lines[q].beta - lines[q].gamma * lines[p].beta) / det;
      const double b = (lines[p].alpha * lines[q].gamma - lines[q].alpha * lines[p].gamma) / det;
      if (a < lo - 1e-12 || a > hi + 1e-12) continue;
      best = std::max(best, value(a, b));
    }
  return best;
}

/// R_f(x, v) by nested golden-section search over (x1, v1).
inline double rf1d(const Graph1d& g, double x, double v) {
  const double lo = g.lo(), hi = g.hi();
  const double a = std::max(lo, 2.0 * x - hi), b = std::min(hi, 2.0 * x - lo);
  if (a > b + 1e-12) return kInf;
  double scale = 1.0 + std::abs(v);
  for (double vk : g.v) scale = std::max(scale, 1.0 + std::abs(vk));
  auto inner = [&](double x1) {
    const double x2 = 2.0 * x - x1;
    double val = 0.0;
    golden_min(
        [&](double v1) {
          const double v2 = 2.0 * v - v1;
          return 0.5 * fitzpatrick1d(g, x1, v1) + 0.5 * fstar1d(g, v2, x2) + 0.125 * (x1 - x2) * (x1 - x2) +
                 0.125 * (v1 - v2) * (v1 - v2);
        },
        v - 20.0 * scale, v + 20.0 * scale, 1e-10, &val);
    return val;
  };
  if (b - a < 1e-12) return inner(0.5 * (a + b));
  double val = 0.0;
  golden_min(inner, a, b, 1e-10, &val);
  return val;
}

// ---------------------------------------------------------------------------

/// e^M by scaling and squaring with a Taylor core.
inline Matrix expm(const Matrix& m) {
  const double norm = m.cwiseAbs().rowwise().sum().maxCoeff();
  int s = 0;
  while (std::ldexp(norm, -s) > 0.25) ++s;
  const Matrix a = m * std::ldexp(1.0, -s);
  Matrix term = Matrix::Identity(m.rows(), m.cols());
  Matrix sum = term;
  for (int k = 1; k <= 20; ++k) {
    term = term * a / static_cast<double>(k);
    sum += term;
  }
  for (int i = 0; i < s; ++i) sum = sum * sum;
  return sum;
}

/// All permutations of {0..n-1} in lexicographic order.
inline std::vector<std::vector<std::size_t>> all_permutations(std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  std::vector<std::vector<std::size_t>> out;
  do {
    out.push_back(p);
  } while (std::next_permutation(p.begin(), p.end()));
  return out;
}

// ---------------------------------------------------------------------------
// Convex envelope of g(z) = min_i L|z|^2 + <b_i, z> + c_i without the closed
// form: for fixed simplex weights the inner split sum lam_i z_i = z is solved
// from its KKT system, and the weights are searched on refining grids.

inline double split_value(const std::vector<Vector>& b, const std::vector<double>& c, double L,
                          const std::vector<double>& lam, const Vector& z) {
  const Eigen::Index dim = z.size();
  std::vector<std::size_t> act;
  for (std::size_t i = 0; i < lam.size(); ++i)
    if (lam[i] > 0.0) act.push_back(i);
  const auto k = static_cast<Eigen::Index>(act.size());
  // Unknowns z_i (k blocks) and multiplier nu: 2 L lam_i z_i + lam_i b_i - lam_i nu = 0.
  Matrix kkt = Matrix::Zero((k + 1) * dim, (k + 1) * dim);
  Vector rhs = Vector::Zero((k + 1) * dim);
  for (Eigen::Index j = 0; j < k; ++j) {
    const double l = lam[act[static_cast<std::size_t>(j)]];
    kkt.block(j * dim, j * dim, dim, dim) = 2.0 * L * l * Matrix::Identity(dim, dim);
    kkt.block(j * dim, k * dim, dim, dim) = -l * Matrix::Identity(dim, dim);
    rhs.segment(j * dim, dim) = -l * b[act[static_cast<std::size_t>(j)]];
    kkt.block(k * dim, j * dim, dim, dim) = l * Matrix::Identity(dim, dim);
  }
  rhs.tail(dim) = z;
  const Vector sol = kkt.fullPivLu().solve(rhs);
  double val = 0.0;
  for (Eigen::Index j = 0; j < k; ++j) {
    const std::size_t i = act[static_cast<std::size_t>(j)];
    const Vector zi = sol.segment(j * dim, dim);
    val += lam[i] * (L * zi.squaredNorm() + b[i].dot(zi) + c[i]);
  }
  return val;
}

/// Envelope value at z over simplex weights (n <= 3) on a refining grid.
inline double envelope(const std::vector<Vector>& b, const std::vector<double>& c, double L, const Vector& z,
                       double final_step = 1e-4) {
  const std::size_t n = b.size();
  if (n == 1) return split_value(b, c, L, {1.0}, z);
  double best = kInf;
  std::vector<double> center(n, 1.0 / static_cast<double>(n));
  double step = 0.02, radius = 1.0;
  for (;;) {
    std::vector<double> best_lam = center;
    const auto span = static_cast<long>(std::ceil(radius / step));
    auto consider = [&](std::vector<double> lam) {
      for (double l : lam)
        if (l < -1e-15) return;
      for (double& l : lam) l = std::max(l, 0.0);
      const double v = split_value(b, c, L, lam, z);
      if (v < best) {
        best = v;
        best_lam = lam;
      }
    };
    if (n == 2) {
      for (long a = -span; a <= span; ++a) {
        const double l0 = center[0] + static_cast<double>(a) * step;
        consider({l0, 1.0 - l0});
      }
    } else {
      for (long a = -span; a <= span; ++a)
        for (long e = -span; e <= span; ++e) {
          const double l0 = center[0] + static_cast<double>(a) * step;
          const double l1 = center[1] + static_cast<double>(e) * step;
          consider({l0, l1, 1.0 - l0 - l1});
        }
    }
    center = best_lam;
    if (step <= final_step * 1.0000001) break;
    radius = 3.0 * step;
    step = std::max(step / 10.0, final_step);
  }
  return best;
}

}  // namespace oracle
