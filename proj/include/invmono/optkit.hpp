#pragma once

// Small dense convex-optimization kernel: two-phase simplex for LPs, a primal
// active-set method for convex QPs, Euclidean projection onto the simplex,
// brute-force Legendre-Fenchel transforms on grids and convex-hull membership.
//
// Problem sizes are tiny (tens of variables); everything is dense and every
// pivot rule is deterministic, so identical inputs give bit-identical output.

#include "invmono/core.hpp"

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace invmono::optkit {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class SolveStatus { optimal, infeasible, unbounded, iteration_limit };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::unbounded: return "unbounded";
    case SolveStatus::iteration_limit: return "iteration-limit";
  }
  return "?";
}

/// Multipliers follow the convention  grad + A_eq^T eq + A_in^T in + bounds = 0
/// with `ineq_duals >= 0` for the `<=` rows.
struct SolveReport {
  SolveStatus status = SolveStatus::iteration_limit;
  double value = 0.0;
  Vector x;
  double kkt_residual = kInf;
  int iterations = 0;
  Vector eq_duals;
  Vector ineq_duals;
  /// Unbounded: a recession direction with negative cost slope.
  /// Infeasible (LP): a Farkas vector y for the standard-form system
  /// A x = b, x >= 0, i.e. A^T y <= 0 and b^T y > 0.
  Vector certificate;

  bool optimal() const { return status == SolveStatus::optimal; }
};

/// min cost^T x  s.t.  eq_matrix x = eq_rhs, ineq_matrix x <= ineq_rhs,
/// lower <= x <= upper. Bounds default to a free variable.
struct LinearProgram {
  Vector cost;
  Matrix eq_matrix;
  Vector eq_rhs;
  Matrix ineq_matrix;
  Vector ineq_rhs;
  Vector lower;
  Vector upper;

  LinearProgram() = default;
  explicit LinearProgram(Eigen::Index n)
      : cost(Vector::Zero(n)),
        eq_matrix(0, n),
        eq_rhs(0),
        ineq_matrix(0, n),
        ineq_rhs(0),
        lower(Vector::Constant(n, -kInf)),
        upper(Vector::Constant(n, kInf)) {}

  Eigen::Index num_vars() const { return cost.size(); }

  void add_equality(const Vector& row, double rhs) {
    append_row(eq_matrix, eq_rhs, row, rhs);
  }
  void add_inequality(const Vector& row, double rhs) {
    append_row(ineq_matrix, ineq_rhs, row, rhs);
  }

  void validate() const {
    const auto n = cost.size();
    require(eq_matrix.cols() == n && ineq_matrix.cols() == n,
            "constraint matrix column count differs from cost length");
    require(eq_matrix.rows() == eq_rhs.size(), "equality rhs length mismatch");
    require(ineq_matrix.rows() == ineq_rhs.size(),
            "inequality rhs length mismatch");
    require(lower.size() == n && upper.size() == n, "bound length mismatch");
    require_finite(cost, "cost");
    require_finite(eq_matrix, "equality matrix");
    require_finite(eq_rhs, "equality rhs");
    require_finite(ineq_matrix, "inequality matrix");
    require_finite(ineq_rhs, "inequality rhs");
    for (Eigen::Index j = 0; j < n; ++j) {
      require(!std::isnan(lower[j]) && !std::isnan(upper[j]), "NaN bound");
      require(lower[j] <= upper[j] && lower[j] < kInf && upper[j] > -kInf,
              "empty bound interval for variable " + std::to_string(j));
    }
  }

 protected:
  static void append_row(Matrix& m, Vector& rhs, const Vector& row, double b) {
    require(row.size() == m.cols(), "constraint row length mismatch");
    m.conservativeResize(m.rows() + 1, Eigen::NoChange);
    m.row(m.rows() - 1) = row.transpose();
    rhs.conservativeResize(rhs.size() + 1);
    rhs[rhs.size() - 1] = b;
  }
};

/// min 1/2 x^T hessian x + linear^T x under the same constraint layout.
struct QuadraticProgram : LinearProgram {
  Matrix hessian;

  QuadraticProgram() = default;
  explicit QuadraticProgram(Eigen::Index n)
      : LinearProgram(n), hessian(Matrix::Zero(n, n)) {}

  Vector& linear() { return cost; }
  const Vector& linear() const { return cost; }

  void validate() const {
    LinearProgram::validate();
    const auto n = cost.size();
    require(hessian.rows() == n && hessian.cols() == n,
            "hessian dimension mismatch");
    require_finite(hessian, "hessian");
    const double scale =
        1.0 + (n > 0 ? hessian.cwiseAbs().maxCoeff() : 0.0);
    require((hessian - hessian.transpose()).cwiseAbs().maxCoeff() <=
                1e-12 * scale,
            "hessian is not symmetric");
    if (n > 0) {
      Eigen::SelfAdjointEigenSolver<Matrix> es(hessian,
                                               Eigen::EigenvaluesOnly);
      require(es.eigenvalues().minCoeff() >= -1e-9 * scale,
              "hessian is not positive semidefinite");
    }
  }
};

struct QpOptions {
  double kkt_tolerance = 1e-9;
  int max_iterations = 10000;
};

namespace detail {

// Dense tableau simplex on  min c^T x, A x = b (b >= 0), x >= 0,
// with Bland's rule for both entering and leaving choices.
class StandardFormSimplex {
 public:
  StandardFormSimplex(Matrix a, Vector b, Vector c)
      : a_(std::move(a)), b_(std::move(b)), c_(std::move(c)) {}

  struct Result {
    SolveStatus status = SolveStatus::iteration_limit;
    Vector x;
    Vector y;  // duals of the kept rows (all rows, zero for dropped ones)
    Vector ray;
    Vector farkas;
    int iterations = 0;
  };

  Result solve(int max_pivots = 200000) {
    Result res;
    const Eigen::Index m = a_.rows();
    const Eigen::Index n = a_.cols();
    // Tableau columns: n structural, m artificial, 1 rhs.
    tab_ = Matrix::Zero(m + 1, n + m + 1);
    tab_.topLeftCorner(m, n) = a_;
    tab_.block(0, n, m, m).setIdentity();
    tab_.col(n + m).head(m) = b_;
    basis_.resize(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) basis_[static_cast<std::size_t>(i)] = n + i;
    row_alive_.assign(static_cast<std::size_t>(m), true);
    n_ = n;
    m_ = m;

    // Phase 1 objective: sum of artificials, expressed in reduced costs.
    tab_.row(m).setZero();
    for (Eigen::Index i = 0; i < m; ++i) {
      tab_.row(m).head(n) -= tab_.row(i).head(n);
      tab_(m, n + m) -= tab_(i, n + m);
    }
    const double bscale = 1.0 + (m > 0 ? b_.cwiseAbs().maxCoeff() : 0.0);
    int pivots = 0;
    if (!iterate(n + m, pivots, max_pivots, nullptr)) {
      res.iterations = pivots;
      return res;
    }
    const double phase1 = -tab_(m, n + m);
    if (phase1 > 1e-9 * bscale) {
      res.status = SolveStatus::infeasible;
      res.farkas = Vector::Zero(m);
      for (Eigen::Index i = 0; i < m; ++i) res.farkas[i] = -tab_(m, n + i);
      res.iterations = pivots;
      return res;
    }
    // Drive artificials out of the basis or drop redundant rows.
    for (Eigen::Index i = 0; i < m; ++i) {
      if (!row_alive_[static_cast<std::size_t>(i)]) continue;
      if (basis_[static_cast<std::size_t>(i)] < n) continue;
      Eigen::Index col = -1;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (std::abs(tab_(i, j)) > 1e-9) {
          col = j;
          break;
        }
      }
      if (col >= 0) {
        pivot(i, col);
        ++pivots;
      } else {
        row_alive_[static_cast<std::size_t>(i)] = false;
      }
    }
    // Phase 2 reduced costs.
    tab_.row(m).setZero();
    tab_.row(m).head(n) = c_.transpose();
    for (Eigen::Index i = 0; i < m; ++i) {
      if (!row_alive_[static_cast<std::size_t>(i)]) continue;
      const double cb = c_[basis_[static_cast<std::size_t>(i)]];
      if (cb != 0.0) tab_.row(m) -= cb * tab_.row(i);
    }
    Eigen::Index unbounded_col = -1;
    if (!iterate(n, pivots, max_pivots, &unbounded_col)) {
      res.iterations = pivots;
      if (unbounded_col >= 0) {
        res.status = SolveStatus::unbounded;
        res.ray = Vector::Zero(n);
        res.ray[unbounded_col] = 1.0;
        for (Eigen::Index i = 0; i < m; ++i) {
          if (!row_alive_[static_cast<std::size_t>(i)]) continue;
          res.ray[basis_[static_cast<std::size_t>(i)]] = -tab_(i, unbounded_col);
        }
      }
      return res;
    }
    res.iterations = pivots;
    polish(res);
    res.status = SolveStatus::optimal;
    return res;
  }

 private:
  // Returns false on iteration limit or (phase 2) unboundedness.
  bool iterate(Eigen::Index eligible_cols, int& pivots, int max_pivots,
               Eigen::Index* unbounded_col) {
    const Eigen::Index rhs = n_ + m_;
    const double cscale = 1.0 + tab_.row(m_).head(eligible_cols).cwiseAbs().maxCoeff();
    // Phase 1 is bounded below, so a column without a pivot row only carries
    // round-off in its reduced cost; it is skipped until the next pivot.
    std::vector<bool> skip(static_cast<std::size_t>(eligible_cols), false);
    while (true) {
      Eigen::Index enter = -1;
      for (Eigen::Index j = 0; j < eligible_cols; ++j) {
        if (tab_(m_, j) < -1e-11 * cscale && !is_basic(j) && !skip[static_cast<std::size_t>(j)]) {
          enter = j;
          break;
        }
      }
      if (enter < 0) return true;
      Eigen::Index leave = -1;
      double best = kInf;
      Eigen::Index best_basis = std::numeric_limits<Eigen::Index>::max();
      for (Eigen::Index i = 0; i < m_; ++i) {
        if (!row_alive_[static_cast<std::size_t>(i)]) continue;
        const double aij = tab_(i, enter);
        if (aij <= 1e-9) continue;
        const double ratio = std::max(tab_(i, rhs), 0.0) / aij;
        const Eigen::Index bi = basis_[static_cast<std::size_t>(i)];
        if (ratio < best - 1e-13) {
          best = ratio;
          leave = i;
          best_basis = bi;
        } else if (ratio <= best + 1e-13 && bi < best_basis) {
          best = std::min(best, ratio);
          leave = i;
          best_basis = bi;
        }
      }
      if (leave < 0) {
        if (!unbounded_col) {
          skip[static_cast<std::size_t>(enter)] = true;
          continue;
        }
        *unbounded_col = enter;
        return false;
      }
      if (pivots >= max_pivots) return false;
      std::fill(skip.begin(), skip.end(), false);
      pivot(leave, enter);
      ++pivots;
    }
  }

  bool is_basic(Eigen::Index j) const {
    for (std::size_t i = 0; i < basis_.size(); ++i)
      if (row_alive_[i] && basis_[i] == j) return true;
    return false;
  }

  void pivot(Eigen::Index r, Eigen::Index c) {
    tab_.row(r) /= tab_(r, c);
    for (Eigen::Index i = 0; i <= m_; ++i) {
      if (i == r) continue;
      const double f = tab_(i, c);
      if (f != 0.0) tab_.row(i) -= f * tab_.row(r);
    }
    basis_[static_cast<std::size_t>(r)] = c;
  }

  // Recompute the basic solution and duals from the original data so that
  // tableau round-off does not leak into the reported point.
  void polish(Result& res) const {
    std::vector<Eigen::Index> rows;
    std::vector<Eigen::Index> cols;
    for (Eigen::Index i = 0; i < m_; ++i) {
      if (!row_alive_[static_cast<std::size_t>(i)]) continue;
      rows.push_back(i);
      cols.push_back(basis_[static_cast<std::size_t>(i)]);
    }
    const auto k = static_cast<Eigen::Index>(rows.size());
    res.x = Vector::Zero(n_);
    res.y = Vector::Zero(m_);
    if (k == 0) return;
    Matrix basis(k, k);
    Vector rhs(k);
    Vector cb(k);
    for (Eigen::Index r = 0; r < k; ++r) {
      rhs[r] = b_[rows[static_cast<std::size_t>(r)]];
      cb[r] = c_[cols[static_cast<std::size_t>(r)]];
      for (Eigen::Index s = 0; s < k; ++s)
        basis(r, s) = a_(rows[static_cast<std::size_t>(r)], cols[static_cast<std::size_t>(s)]);
    }
    Eigen::PartialPivLU<Matrix> lu(basis);
    const Vector xb = lu.solve(rhs);
    const Vector yk = lu.transpose().solve(cb);
    for (Eigen::Index s = 0; s < k; ++s) {
      const double v = xb[s];
      res.x[cols[static_cast<std::size_t>(s)]] = (v < 0.0 && v > -1e-11) ? 0.0 : v;
    }
    for (Eigen::Index r = 0; r < k; ++r) res.y[rows[static_cast<std::size_t>(r)]] = yk[r];
  }

  Matrix a_;
  Vector b_;
  Vector c_;
  Matrix tab_;
  std::vector<Eigen::Index> basis_;
  std::vector<bool> row_alive_;
  Eigen::Index n_ = 0;
  Eigen::Index m_ = 0;
};

}  // namespace detail

/// Dense two-phase simplex with Bland's rule.
inline SolveReport solve_lp(const LinearProgram& lp) {
  lp.validate();
  const Eigen::Index n = lp.num_vars();
  const Eigen::Index me = lp.eq_matrix.rows();
  const Eigen::Index mi = lp.ineq_matrix.rows();

  // Variable substitution into x_std >= 0.
  enum class Kind { shift, mirror, split };
  struct Map {
    Kind kind;
    double offset;
    Eigen::Index col;
    Eigen::Index col2;
  };
  std::vector<Map> maps;
  Eigen::Index ncols = 0;
  std::vector<Eigen::Index> boxed;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double l = lp.lower[j];
    const double u = lp.upper[j];
    if (std::isfinite(l)) {
      maps.push_back({Kind::shift, l, ncols++, -1});
      if (std::isfinite(u)) boxed.push_back(j);
    } else if (std::isfinite(u)) {
      maps.push_back({Kind::mirror, u, ncols++, -1});
    } else {
      maps.push_back({Kind::split, 0.0, ncols, ncols + 1});
      ncols += 2;
    }
  }
  const auto nb = static_cast<Eigen::Index>(boxed.size());
  const Eigen::Index m = me + mi + nb;
  const Eigen::Index nslack = mi + nb;
  const Eigen::Index nstd = ncols + nslack;
  Matrix a = Matrix::Zero(m, nstd);
  Vector b = Vector::Zero(m);
  Vector c = Vector::Zero(nstd);
  double c0 = 0.0;

  auto put_row = [&](Eigen::Index r, const Eigen::Ref<const Vector>& row, double rhs) {
    double shifted = rhs;
    for (Eigen::Index j = 0; j < n; ++j) {
      const double v = row[j];
      if (v == 0.0) continue;
      const Map& mp = maps[static_cast<std::size_t>(j)];
      switch (mp.kind) {
        case Kind::shift:
          a(r, mp.col) += v;
          shifted -= v * mp.offset;
          break;
        case Kind::mirror:
          a(r, mp.col) -= v;
          shifted -= v * mp.offset;
          break;
        case Kind::split:
          a(r, mp.col) += v;
          a(r, mp.col2) -= v;
          break;
      }
    }
    b[r] = shifted;
  };
  for (Eigen::Index i = 0; i < me; ++i) put_row(i, lp.eq_matrix.row(i).transpose(), lp.eq_rhs[i]);
  for (Eigen::Index i = 0; i < mi; ++i) {
    put_row(me + i, lp.ineq_matrix.row(i).transpose(), lp.ineq_rhs[i]);
    a(me + i, ncols + i) = 1.0;
  }
  for (Eigen::Index k = 0; k < nb; ++k) {
    const Eigen::Index j = boxed[static_cast<std::size_t>(k)];
    const Eigen::Index r = me + mi + k;
    a(r, maps[static_cast<std::size_t>(j)].col) = 1.0;
    a(r, ncols + mi + k) = 1.0;
    b[r] = lp.upper[j] - lp.lower[j];
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    const Map& mp = maps[static_cast<std::size_t>(j)];
    const double cj = lp.cost[j];
    switch (mp.kind) {
      case Kind::shift:
        c[mp.col] += cj;
        c0 += cj * mp.offset;
        break;
      case Kind::mirror:
        c[mp.col] -= cj;
        c0 += cj * mp.offset;
        break;
      case Kind::split:
        c[mp.col] += cj;
        c[mp.col2] -= cj;
        break;
    }
  }
  Vector row_sign = Vector::Ones(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    if (b[i] < 0.0) {
      a.row(i) *= -1.0;
      b[i] = -b[i];
      row_sign[i] = -1.0;
    }
  }

  detail::StandardFormSimplex simplex(a, b, c);
  auto res = simplex.solve();

  SolveReport report;
  report.status = res.status;
  report.iterations = res.iterations;

  auto to_original = [&](const Vector& xs, bool direction) {
    Vector x(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const Map& mp = maps[static_cast<std::size_t>(j)];
      const double off = direction ? 0.0 : mp.offset;
      switch (mp.kind) {
        case Kind::shift: x[j] = off + xs[mp.col]; break;
        case Kind::mirror: x[j] = off - xs[mp.col]; break;
        case Kind::split: x[j] = xs[mp.col] - xs[mp.col2]; break;
      }
    }
    return x;
  };

  if (res.status == SolveStatus::unbounded) {
    report.certificate = to_original(res.ray, true);
    report.value = -kInf;
    return report;
  }
  if (res.status == SolveStatus::infeasible) {
    report.certificate = res.farkas;
    report.value = kInf;
    return report;
  }
  if (res.status != SolveStatus::optimal) return report;

  report.x = to_original(res.x, false);
  report.value = lp.cost.dot(report.x);

  // KKT residual in standard form: primal feasibility, dual feasibility, gap.
  const double bscale = 1.0 + (m > 0 ? b.cwiseAbs().maxCoeff() : 0.0);
  const double cscale = 1.0 + (nstd > 0 ? c.cwiseAbs().maxCoeff() : 0.0);
  double primal = 0.0;
  if (m > 0) primal = (a * res.x - b).cwiseAbs().maxCoeff() / bscale;
  if (nstd > 0) primal = std::max(primal, std::max(0.0, -res.x.minCoeff()) / bscale);
  const Vector reduced = c - a.transpose() * res.y;
  const double dual = nstd > 0 ? std::max(0.0, -reduced.minCoeff()) / cscale : 0.0;
  const double pobj = c.dot(res.x);
  const double dobj = b.dot(res.y);
  const double gap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj));
  report.kkt_residual = std::max({primal, dual, gap});

  const Vector y = res.y.cwiseProduct(row_sign);
  report.eq_duals = -y.head(me);
  report.ineq_duals = -y.segment(me, mi);
  (void)c0;
  if (report.kkt_residual > 1e-8) report.status = SolveStatus::iteration_limit;
  return report;
}

/// Primal active-set method for convex QPs (PSD hessian, possibly singular).
/// Starts from a feasible point found by the simplex phase, keeps a linearly
/// independent working set, takes Newton steps on its null space and, where
/// the reduced hessian is singular, steps along zero-curvature descent
/// directions until a constraint blocks.
inline SolveReport solve_qp(const QuadraticProgram& qp, const QpOptions& opts = {}) {
  qp.validate();
  const Eigen::Index n = qp.num_vars();
  const Matrix& h = qp.hessian;
  const Vector& g = qp.linear();

  // Unified constraint rows: equalities first, then <= rows, then bounds.
  const Eigen::Index me = qp.eq_matrix.rows();
  const Eigen::Index mi = qp.ineq_matrix.rows();
  std::vector<Eigen::Index> bound_var;
  std::vector<double> bound_sign;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (std::isfinite(qp.lower[j])) {
      bound_var.push_back(j);
      bound_sign.push_back(-1.0);
    }
    if (std::isfinite(qp.upper[j])) {
      bound_var.push_back(j);
      bound_sign.push_back(1.0);
    }
  }
  const auto mb = static_cast<Eigen::Index>(bound_var.size());
  const Eigen::Index mt = me + mi + mb;
  Matrix rows = Matrix::Zero(mt, n);
  Vector rhs(mt);
  rows.topRows(me) = qp.eq_matrix;
  rhs.head(me) = qp.eq_rhs;
  rows.middleRows(me, mi) = qp.ineq_matrix;
  rhs.segment(me, mi) = qp.ineq_rhs;
  for (Eigen::Index k = 0; k < mb; ++k) {
    const auto j = bound_var[static_cast<std::size_t>(k)];
    const double s = bound_sign[static_cast<std::size_t>(k)];
    rows(me + mi + k, j) = s;
    rhs[me + mi + k] = s > 0 ? qp.upper[j] : -qp.lower[j];
  }
  const Vector row_norm = rows.rowwise().norm();

  SolveReport report;
  {
    LinearProgram phase1 = static_cast<const LinearProgram&>(qp);
    phase1.cost.setZero();
    auto feas = solve_lp(phase1);
    if (feas.status == SolveStatus::infeasible) {
      report.status = SolveStatus::infeasible;
      report.value = kInf;
      report.certificate = feas.certificate;
      return report;
    }
    if (!feas.optimal()) {
      report.status = SolveStatus::iteration_limit;
      return report;
    }
    report.x = feas.x;
  }
  Vector x = report.x;

  std::vector<Eigen::Index> work;
  auto working_matrix = [&]() {
    Matrix aw(static_cast<Eigen::Index>(work.size()), n);
    for (std::size_t k = 0; k < work.size(); ++k) aw.row(static_cast<Eigen::Index>(k)) = rows.row(work[k]);
    return aw;
  };
  auto independent_of_work = [&](Eigen::Index r) {
    if (row_norm[r] == 0.0) return false;
    if (work.empty()) return true;
    const Matrix aw = working_matrix();
    Eigen::HouseholderQR<Matrix> qr(aw.transpose());
    const Matrix q = qr.householderQ();
    const auto m = aw.rows();
    if (m >= n) return false;
    const Vector comp = q.rightCols(n - m).transpose() * rows.row(r).transpose();
    return comp.norm() > 1e-9 * row_norm[r];
  };
  for (Eigen::Index r = 0; r < me; ++r)
    if (independent_of_work(r)) work.push_back(r);

  auto project_onto_working = [&]() {
    if (work.empty()) return;
    const Matrix aw = working_matrix();
    Vector res(aw.rows());
    for (Eigen::Index k = 0; k < aw.rows(); ++k)
      res[k] = aw.row(k).dot(x) - rhs[work[static_cast<std::size_t>(k)]];
    const Matrix gram = aw * aw.transpose();
    x -= aw.transpose() * gram.ldlt().solve(res);
  };

  Vector multipliers = Vector::Zero(mt);
  int iter = 0;
  int stalled = 0;
  bool converged = false;
  // Set after an unblocked Newton step: x minimizes over the current working
  // set, and any further step is round-off.
  bool subspace_min = false;
  const double gscale = 1.0 + (n > 0 ? g.cwiseAbs().maxCoeff() : 0.0);
  const double hscale = 1.0 + (n > 0 ? h.cwiseAbs().maxCoeff() : 0.0);

  for (; iter < opts.max_iterations; ++iter) {
    const Vector grad = h * x + g;
    const auto m = static_cast<Eigen::Index>(work.size());
    Matrix q;
    Matrix rfac;
    Matrix z;
    if (m > 0) {
      const Matrix aw = working_matrix();
      Eigen::HouseholderQR<Matrix> qr(aw.transpose());
      q = qr.householderQ();
      rfac = qr.matrixQR().topRows(m).triangularView<Eigen::Upper>();
      z = q.rightCols(n - m);
    } else {
      z = Matrix::Identity(n, n);
    }

    Vector p = Vector::Zero(n);
    bool zero_curvature = false;
    if (z.cols() > 0) {
      const Matrix hr = z.transpose() * h * z;
      const Vector gr = z.transpose() * grad;
      Eigen::SelfAdjointEigenSolver<Matrix> es(hr);
      const Vector& ev = es.eigenvalues();
      const Matrix& vecs = es.eigenvectors();
      const Vector coeff = vecs.transpose() * gr;
      const double ev_tol = 1e-10 * hscale;
      Vector null_part = Vector::Zero(ev.size());
      Vector newton_part = Vector::Zero(ev.size());
      for (Eigen::Index k = 0; k < ev.size(); ++k) {
        if (ev[k] <= ev_tol)
          null_part[k] = coeff[k];
        else
          newton_part[k] = coeff[k] / ev[k];
      }
      if (null_part.norm() > 1e-11 * gscale) {
        zero_curvature = true;
        p = -z * (vecs * null_part);
      } else {
        p = -z * (vecs * newton_part);
      }
    }

    if (subspace_min || p.cwiseAbs().maxCoeff() <= 1e-13 * (1.0 + x.cwiseAbs().maxCoeff())) {
      subspace_min = false;
      // Multipliers on the working set: aw^T y = -grad.
      multipliers.setZero();
      if (m > 0) {
        const Vector qtg = q.leftCols(m).transpose() * (-grad);
        const Vector y = rfac.triangularView<Eigen::Upper>().solve(qtg);
        for (Eigen::Index k = 0; k < m; ++k) multipliers[work[static_cast<std::size_t>(k)]] = y[k];
      }
      Eigen::Index drop = -1;
      double most_negative = -1e-10 * gscale;
      for (std::size_t k = 0; k < work.size(); ++k) {
        const Eigen::Index r = work[k];
        if (r < me) continue;
        const double y = multipliers[r];
        if (stalled > 3 * n) {
          // Bland-style fallback: lowest index with a negative multiplier.
          if (y < -1e-10 * gscale && (drop < 0 || r < work[static_cast<std::size_t>(drop)])) drop = static_cast<Eigen::Index>(k);
        } else if (y < most_negative) {
          most_negative = y;
          drop = static_cast<Eigen::Index>(k);
        }
      }
      if (drop < 0) {
        converged = true;
        break;
      }
      work.erase(work.begin() + drop);
      continue;
    }

    // Ratio test over inequality rows outside the working set.
    double alpha = zero_curvature ? kInf : 1.0;
    Eigen::Index block = -1;
    const double pnorm = p.norm();
    for (Eigen::Index r = me; r < mt; ++r) {
      if (std::find(work.begin(), work.end(), r) != work.end()) continue;
      const double ap = rows.row(r).dot(p);
      if (ap <= 1e-12 * row_norm[r] * pnorm) continue;
      const double slack = std::max(0.0, rhs[r] - rows.row(r).dot(x));
      const double ratio = slack / ap;
      if (ratio < alpha) {
        alpha = ratio;
        block = r;
      }
    }
    if (!std::isfinite(alpha)) {
      report.status = SolveStatus::unbounded;
      report.certificate = p;
      report.value = -kInf;
      report.iterations = iter + 1;
      return report;
    }
    stalled = (alpha == 0.0) ? stalled + 1 : 0;
    x += alpha * p;
    subspace_min = block < 0 && !zero_curvature;
    if (block >= 0) {
      work.push_back(block);
      project_onto_working();
    }
  }

  report.iterations = iter;
  report.x = x;
  report.value = 0.5 * x.dot(h * x) + g.dot(x);

  // KKT residual (scaled): stationarity, primal/dual feasibility, complementarity.
  const Vector grad = h * x + g;
  const double scale = gscale + (h * x).cwiseAbs().maxCoeff();
  const double stationarity =
      (grad + rows.transpose() * multipliers).cwiseAbs().maxCoeff() / scale;
  double primal = 0.0;
  double dual = 0.0;
  double compl_ = 0.0;
  const double rscale = 1.0 + (mt > 0 ? rhs.cwiseAbs().maxCoeff() : 0.0);
  for (Eigen::Index r = 0; r < mt; ++r) {
    const double viol = rows.row(r).dot(x) - rhs[r];
    if (r < me) {
      primal = std::max(primal, std::abs(viol) / rscale);
    } else {
      primal = std::max(primal, std::max(0.0, viol) / rscale);
      dual = std::max(dual, std::max(0.0, -multipliers[r]) / scale);
      compl_ = std::max(compl_, std::abs(multipliers[r] * viol) / scale);
    }
  }
  report.kkt_residual = std::max({stationarity, primal, dual, compl_});
  report.eq_duals = multipliers.head(me);
  report.ineq_duals = multipliers.segment(me, mi);
  report.status = (converged && report.kkt_residual <= opts.kkt_tolerance)
                      ? SolveStatus::optimal
                      : SolveStatus::iteration_limit;
  return report;
}

/// Euclidean projection onto the unit simplex {w >= 0, sum w = 1}
/// (sort-and-threshold).
inline Vector project_simplex(const Vector& w) {
  require(w.size() > 0, "project_simplex: empty input");
  require_finite(w, "project_simplex");
  std::vector<double> sorted(w.data(), w.data() + w.size());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumulative = 0.0;
  double theta = 0.0;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    cumulative += sorted[k];
    const double t = (cumulative - 1.0) / static_cast<double>(k + 1);
    if (sorted[k] - t > 0.0) theta = t;
  }
  return (w.array() - theta).max(0.0).matrix();
}

/// Uniform rectangular grid; node coordinates are lower + k * step per axis,
/// flattened row-major (last axis fastest).
struct GridSpec {
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<std::size_t> count;

  std::size_t dims() const { return count.size(); }
  std::size_t size() const {
    return std::accumulate(count.begin(), count.end(), std::size_t{1}, std::multiplies<>());
  }
  double step(std::size_t axis) const {
    return (upper[axis] - lower[axis]) / static_cast<double>(count[axis] - 1);
  }
  void validate() const {
    require(!count.empty(), "grid has no axes");
    require(lower.size() == count.size() && upper.size() == count.size(),
            "grid axis arrays differ in length");
    for (std::size_t a = 0; a < count.size(); ++a) {
      require(count[a] >= 2, "grid needs at least 2 points per axis");
      require(std::isfinite(lower[a]) && std::isfinite(upper[a]) && lower[a] < upper[a],
              "grid axis bounds must be finite and increasing");
    }
  }
  Vector node(std::size_t flat) const {
    Vector z(static_cast<Eigen::Index>(dims()));
    for (std::size_t a = dims(); a-- > 0;) {
      const std::size_t k = flat % count[a];
      flat /= count[a];
      z[static_cast<Eigen::Index>(a)] = lower[a] + static_cast<double>(k) * step(a);
    }
    return z;
  }
};

struct GridFunction {
  GridSpec grid;
  std::vector<Extended> values;
};

/// Discrete Legendre-Fenchel transform: out[s] = max_z <s,z> - f(z) over the
/// finite primal nodes, evaluated on the nodes of `dual`. Infinite nodes are
/// excluded from the max.
inline GridFunction grid_conjugate(const GridFunction& f, const GridSpec& dual) {
  f.grid.validate();
  dual.validate();
  require(f.values.size() == f.grid.size(), "grid value count mismatch");
  require(dual.dims() == f.grid.dims(), "dual grid dimension mismatch");
  std::vector<Vector> nodes;
  std::vector<double> vals;
  for (std::size_t k = 0; k < f.values.size(); ++k) {
    if (f.values[k].is_infinite()) continue;
    require(std::isfinite(f.values[k].value()), "grid value is NaN");
    nodes.push_back(f.grid.node(k));
    vals.push_back(f.values[k].value());
  }
  require(!nodes.empty(), "grid_conjugate: all values are infinite");
  GridFunction out{dual, std::vector<Extended>(dual.size())};
  for (std::size_t s = 0; s < dual.size(); ++s) {
    const Vector sv = dual.node(s);
    double best = -kInf;
    for (std::size_t k = 0; k < nodes.size(); ++k)
      best = std::max(best, sv.dot(nodes[k]) - vals[k]);
    out.values[s] = best;
  }
  return out;
}

inline GridFunction grid_conjugate(const GridFunction& f) {
  return grid_conjugate(f, f.grid);
}

struct HullMembership {
  bool inside = false;
  Vector weights;
  /// L1 distance between the point and the closest representable combination.
  double residual = kInf;
};

/// Whether `point` lies in conv(generators), decided by the LP
/// min |G w - point|_1 over simplex weights w.
inline HullMembership hull_membership(const Vector& point, const std::vector<Vector>& generators,
                                      double tolerance = 1e-7) {
  require(!generators.empty(), "hull_membership: no generators");
  const Eigen::Index d = point.size();
  const auto n = static_cast<Eigen::Index>(generators.size());
  for (const auto& gvec : generators)
    require(gvec.size() == d, "hull_membership: dimension mismatch");
  require_finite(point, "hull_membership point");

  LinearProgram lp(n + 2 * d);
  lp.lower.setZero();
  lp.cost.tail(2 * d).setOnes();
  for (Eigen::Index r = 0; r < d; ++r) {
    Vector row = Vector::Zero(n + 2 * d);
    for (Eigen::Index k = 0; k < n; ++k) row[k] = generators[static_cast<std::size_t>(k)][r];
    row[n + r] = 1.0;
    row[n + d + r] = -1.0;
    lp.add_equality(row, point[r]);
  }
  Vector ones = Vector::Zero(n + 2 * d);
  ones.head(n).setOnes();
  lp.add_equality(ones, 1.0);
  const auto rep = solve_lp(lp);
  HullMembership out;
  if (!rep.optimal()) throw SolverError("hull_membership LP failed", rep.kkt_residual);
  out.residual = std::max(0.0, rep.value);
  out.weights = rep.x.head(n);
  out.inside = out.residual <= tolerance;
  return out;
}

}  // namespace invmono::optkit
