#pragma once

// Finite monotone graphs A = {(x_k, v_k)} in R^d x R^d and the maximal
// monotone extension with minimal domain obtained from the kernel average
//
//   R_f(x,v) = min { 1/2 f(z1) + 1/2 f*(v2,x2) + 1/4 psi(z1 - z2) :
//                    (x,v) = (z1 + z2)/2 },           z_i = (x_i, v_i),
//
// with f = F_A + indicator(conv D(A) x R^d) and psi(a,b) = |a|^2/2 + |b|^2/2.
//
// Joint program. Write X = [x_1..x_n], V = [v_1..v_n], c_k = <v_k, x_k>.
//  * x1 in conv D(A):  x1 = X mu, mu in the simplex.
//  * F_A(x1,v1) = max_k <v_k,x1> + <v1,x_k> - c_k  <=  t   (one row per k).
//  * f*(v2,x2) = inf_{a + b = v2} P_A(a,x2) + sigma_D(b), where
//      P_A(a,x2) = min { c^T lam : X lam = x2, V lam = a, lam in simplex },
//      sigma_D(b) = max_j <b, x_j>.
//    Inlining both infima: x2 = X lam, a = V lam, and
//      <v2 - V lam, x_j> <= s  for every j,  contributing c^T lam + s.
//  * The averaging constraint fixes x2 = 2x - x1 and v2 = 2v - v1, so
//      1/4 psi(z1 - z2) = 1/8 |x1 - x2|^2 + 1/2 |v1 - v|^2.
// Variables are (mu, lam, v1, t, s); the objective is
//      1/2 t + 1/2 (c^T lam + s) + 1/8 |X(mu - lam)|^2 + 1/2 |v1 - v|^2,
// subject to X(mu + lam) = 2x when (x,v) is fixed.
//
// Resolvent. For tau > 0 and y, the point x = J_tau(y) is the unique zero of
//      Phi(x) = R_f(x, (y-x)/tau) - <(y-x)/tau, x>  >= 0.
// Substituting x = X(mu + lam)/2 and
// v = (y - x)/tau into the same program gives one convex QP whose optimal
// value is the contact gap (zero up to solver tolerance) and whose x-part is
// the resolvent. The contact set itself is never enumerated.

#include "invmono/core.hpp"
#include "invmono/optkit.hpp"

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace invmono::fitzpatrick {

struct Pair {
  Vector x;
  Vector v;
};

struct MonotonicityReport {
  bool monotone = true;
  /// min over i < j of <v_i - v_j, x_i - x_j> (0 when fewer than two pairs).
  double worst_value = 0.0;
  std::size_t first = 0;
  std::size_t second = 0;
};

inline MonotonicityReport check_monotone(std::span<const Pair> pairs, double tolerance = 1e-10) {
  require(!pairs.empty(), "check_monotone: empty pair list");
  const auto d = pairs.front().x.size();
  for (const auto& p : pairs)
    require(p.x.size() == d && p.v.size() == d, "check_monotone: dimension mismatch");
  MonotonicityReport rep;
  bool first = true;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    for (std::size_t j = i + 1; j < pairs.size(); ++j) {
      const double val = (pairs[i].v - pairs[j].v).dot(pairs[i].x - pairs[j].x);
      if (first || val < rep.worst_value) {
        rep.worst_value = val;
        rep.first = i;
        rep.second = j;
        first = false;
      }
    }
  }
  rep.monotone = rep.worst_value >= -tolerance;
  return rep;
}

class MonotoneGraph {
 public:
  static MonotoneGraph create(std::vector<Pair> pairs) {
    require(!pairs.empty(), "monotone graph needs at least one pair");
    const auto d = pairs.front().x.size();
    require(d > 0, "monotone graph dimension must be positive");
    for (const auto& p : pairs) {
      require(p.x.size() == d && p.v.size() == d, "monotone graph: dimension mismatch");
      require_finite(p.x, "graph point");
      require_finite(p.v, "graph point");
    }
    const auto rep = check_monotone(pairs);
    if (!rep.monotone)
      throw InvariantViolation("graph is not monotone: pairs " + std::to_string(rep.first) +
                               " and " + std::to_string(rep.second) + " give " +
                               std::to_string(rep.worst_value));
    MonotoneGraph g;
    g.dim_ = d;
    g.pairs_ = std::move(pairs);
    return g;
  }

  Eigen::Index dim() const { return dim_; }
  std::size_t size() const { return pairs_.size(); }
  const std::vector<Pair>& pairs() const { return pairs_; }
  const Pair& operator[](std::size_t i) const { return pairs_[i]; }

  std::vector<Vector> domain_points() const {
    std::vector<Vector> out;
    out.reserve(pairs_.size());
    for (const auto& p : pairs_) out.push_back(p.x);
    return out;
  }
  Matrix primal_matrix() const {
    Matrix m(dim_, static_cast<Eigen::Index>(size()));
    for (std::size_t k = 0; k < size(); ++k) m.col(static_cast<Eigen::Index>(k)) = pairs_[k].x;
    return m;
  }
  Matrix dual_matrix() const {
    Matrix m(dim_, static_cast<Eigen::Index>(size()));
    for (std::size_t k = 0; k < size(); ++k) m.col(static_cast<Eigen::Index>(k)) = pairs_[k].v;
    return m;
  }
  /// c_k = <v_k, x_k>.
  Vector pairings() const {
    Vector c(static_cast<Eigen::Index>(size()));
    for (std::size_t k = 0; k < size(); ++k) c[static_cast<Eigen::Index>(k)] = pairs_[k].v.dot(pairs_[k].x);
    return c;
  }

 private:
  MonotoneGraph() = default;
  Eigen::Index dim_ = 0;
  std::vector<Pair> pairs_;
};

/// psi(x,v) = |x|^p / p + |v|^q / q with conjugate exponents p, q.
class KernelPsi {
 public:
  explicit KernelPsi(double p = 2.0) : p_(p) {
    require(std::isfinite(p) && p > 1.0, "kernel exponent must lie in (1, inf)");
    q_ = p / (p - 1.0);
  }
  double exponent() const { return p_; }
  double conjugate_exponent() const { return q_; }
  double operator()(const Vector& x, const Vector& v) const {
    return std::pow(x.norm(), p_) / p_ + std::pow(v.norm(), q_) / q_;
  }

 private:
  double p_;
  double q_;
};

/// Finite group of orthogonal matrices acting diagonally, (x,v) -> (Ux, Uv).
class IsometryGroup {
 public:
  static IsometryGroup create(Eigen::Index dim, std::vector<Matrix> elements) {
    require(dim > 0, "group dimension must be positive");
    require(!elements.empty(), "group needs at least one element");
    const Matrix id = Matrix::Identity(dim, dim);
    for (const auto& u : elements) {
      require(u.rows() == dim && u.cols() == dim, "group element has wrong shape");
      require_finite(u, "group element");
      if ((u.transpose() * u - id).cwiseAbs().maxCoeff() > 1e-10)
        throw InvariantViolation("group element is not orthogonal");
    }
    IsometryGroup g;
    g.dim_ = dim;
    g.elements_ = std::move(elements);
    if (g.find(id) < 0) throw InvariantViolation("group does not contain the identity");
    for (const auto& a : g.elements_) {
      if (g.find(a.transpose()) < 0) throw InvariantViolation("group is not closed under inverse");
      for (const auto& b : g.elements_)
        if (g.find(a * b) < 0) throw InvariantViolation("group is not closed under product");
    }
    return g;
  }

  /// Smallest group containing the generators (closure under products).
  static IsometryGroup generate(Eigen::Index dim, const std::vector<Matrix>& generators,
                                std::size_t max_order = 4096) {
    require(dim > 0, "group dimension must be positive");
    const Matrix id = Matrix::Identity(dim, dim);
    for (const auto& gen : generators) {
      require(gen.rows() == dim && gen.cols() == dim, "generator has wrong shape");
      require_finite(gen, "generator");
      if ((gen.transpose() * gen - id).cwiseAbs().maxCoeff() > 1e-10)
        throw InvariantViolation("generator is not orthogonal");
    }
    std::vector<Matrix> elems{id};
    auto contains = [&](const Matrix& m) {
      for (const auto& e : elems)
        if ((e - m).cwiseAbs().maxCoeff() <= 1e-10) return true;
      return false;
    };
    for (std::size_t k = 0; k < elems.size(); ++k) {
      for (const auto& gen : generators) {
        Matrix prod = gen * elems[k];
        if (!contains(prod)) {
          elems.push_back(std::move(prod));
          if (elems.size() > max_order) throw InputError("generated group exceeds order cap");
        }
      }
    }
    return create(dim, std::move(elems));
  }

  static IsometryGroup trivial(Eigen::Index dim) {
    return create(dim, {Matrix::Identity(dim, dim)});
  }

  Eigen::Index dim() const { return dim_; }
  std::size_t order() const { return elements_.size(); }
  const std::vector<Matrix>& elements() const { return elements_; }

 private:
  IsometryGroup() = default;
  long find(const Matrix& m) const {
    for (std::size_t k = 0; k < elements_.size(); ++k)
      if ((elements_[k] - m).cwiseAbs().maxCoeff() <= 1e-10) return static_cast<long>(k);
    return -1;
  }
  Eigen::Index dim_ = 0;
  std::vector<Matrix> elements_;
};

/// F_A(x,v) = max_k <v_k,x> + <v,x_k> - <v_k,x_k>.
inline double fitzpatrick_eval(const MonotoneGraph& graph, const Vector& x, const Vector& v) {
  require(x.size() == graph.dim() && v.size() == graph.dim(), "fitzpatrick_eval: dimension mismatch");
  double best = -optkit::kInf;
  for (const auto& p : graph.pairs())
    best = std::max(best, p.v.dot(x) + v.dot(p.x) - p.v.dot(p.x));
  return best;
}

/// P_A(v,x): the closed convex hull of the pairing restricted to the graph.
inline Extended penot_eval(const MonotoneGraph& graph, const Vector& v, const Vector& x) {
  require(x.size() == graph.dim() && v.size() == graph.dim(), "penot_eval: dimension mismatch");
  const auto n = static_cast<Eigen::Index>(graph.size());
  const Eigen::Index d = graph.dim();
  const Matrix xs = graph.primal_matrix();
  const Matrix vs = graph.dual_matrix();
  optkit::LinearProgram lp(n);
  lp.lower.setZero();
  lp.cost = graph.pairings();
  lp.add_equality(Vector::Ones(n), 1.0);
  for (Eigen::Index r = 0; r < d; ++r) lp.add_equality(xs.row(r).transpose(), x[r]);
  for (Eigen::Index r = 0; r < d; ++r) lp.add_equality(vs.row(r).transpose(), v[r]);
  const auto rep = optkit::solve_lp(lp);
  if (rep.status == optkit::SolveStatus::infeasible) return Extended::infinity();
  if (!rep.optimal()) throw SolverError("penot_eval LP failed", rep.kkt_residual);
  return rep.value;
}

/// f*(v,x) for f = F_A + indicator(C): the inf-convolution of P_A with the
/// conjugate of the indicator, inf_{v1 + v2 = v} P_A(v1, x) + sigma_D(v2).
inline Extended fstar_eval(const MonotoneGraph& graph, const Vector& v, const Vector& x) {
  require(x.size() == graph.dim() && v.size() == graph.dim(), "fstar_eval: dimension mismatch");
  const auto n = static_cast<Eigen::Index>(graph.size());
  const Eigen::Index d = graph.dim();
  const Matrix xs = graph.primal_matrix();
  const Matrix vs = graph.dual_matrix();
  // Variables: lam (n) >= 0, s free.
  optkit::LinearProgram lp(n + 1);
  lp.lower.head(n).setZero();
  lp.cost.head(n) = graph.pairings();
  lp.cost[n] = 1.0;
  Vector simplex = Vector::Zero(n + 1);
  simplex.head(n).setOnes();
  lp.add_equality(simplex, 1.0);
  for (Eigen::Index r = 0; r < d; ++r) {
    Vector row = Vector::Zero(n + 1);
    row.head(n) = xs.row(r).transpose();
    lp.add_equality(row, x[r]);
  }
  // <v - V lam, x_j> <= s.
  for (std::size_t j = 0; j < graph.size(); ++j) {
    const Vector& xj = graph[j].x;
    Vector row = Vector::Zero(n + 1);
    row.head(n) = -(vs.transpose() * xj);
    row[n] = -1.0;
    lp.add_inequality(row, -v.dot(xj));
  }
  const auto rep = optkit::solve_lp(lp);
  if (rep.status == optkit::SolveStatus::infeasible) return Extended::infinity();
  if (!rep.optimal()) throw SolverError("fstar_eval LP failed", rep.kkt_residual);
  return rep.value;
}

/// Orbit closure {(Ux, Uv)} of the graph, de-duplicated.
inline MonotoneGraph saturate_orbit(const MonotoneGraph& graph, const IsometryGroup& group) {
  require(group.dim() == graph.dim(), "saturate_orbit: group dimension mismatch");
  std::vector<Pair> out;
  auto known = [&](const Vector& x, const Vector& v) {
    for (const auto& p : out)
      if ((p.x - x).cwiseAbs().maxCoeff() <= 1e-10 && (p.v - v).cwiseAbs().maxCoeff() <= 1e-10)
        return true;
    return false;
  };
  for (const auto& p : graph.pairs()) {
    for (const auto& u : group.elements()) {
      Vector ux = u * p.x;
      Vector uv = u * p.v;
      if (!known(ux, uv)) out.push_back({std::move(ux), std::move(uv)});
    }
  }
  const auto rep = check_monotone(out);
  if (!rep.monotone)
    throw InvariantViolation("orbit of the graph is not monotone (pairing " +
                             std::to_string(rep.worst_value) + ")");
  return MonotoneGraph::create(std::move(out));
}

inline bool check_invariance(const MonotoneGraph& graph, const IsometryGroup& group,
                             double tolerance = 1e-8) {
  require(group.dim() == graph.dim(), "check_invariance: group dimension mismatch");
  for (const auto& p : graph.pairs()) {
    for (const auto& u : group.elements()) {
      const Vector ux = u * p.x;
      const Vector uv = u * p.v;
      bool hit = false;
      for (const auto& q : graph.pairs()) {
        if ((q.x - ux).norm() <= tolerance && (q.v - uv).norm() <= tolerance) {
          hit = true;
          break;
        }
      }
      if (!hit) return false;
    }
  }
  return true;
}

struct ResolventResult {
  Vector x;
  /// Optimal value of Phi, i.e. R_f(x,v) - <v,x> at the returned point.
  double contact_gap = 0.0;
  optkit::SolveReport report;
};

/// The assembled kernel-average program for one graph.
class ExtensionProgram {
 public:
  explicit ExtensionProgram(MonotoneGraph graph, KernelPsi kernel = KernelPsi{2.0},
                            std::optional<IsometryGroup> group = std::nullopt)
      : graph_(std::move(graph)), kernel_(kernel), group_(std::move(group)) {
    if (group_ && !check_invariance(graph_, *group_))
      throw InvariantViolation("graph is not invariant under the group; saturate its orbit first");
    n_ = static_cast<Eigen::Index>(graph_.size());
    d_ = graph_.dim();
    xs_ = graph_.primal_matrix();
    vs_ = graph_.dual_matrix();
    c_ = graph_.pairings();
    nvar_ = 2 * n_ + d_ + 2;
    build_template();
  }

  const MonotoneGraph& graph() const { return graph_; }
  const KernelPsi& kernel() const { return kernel_; }
  const std::optional<IsometryGroup>& group() const { return group_; }

  /// R_f(x,v); +infinity when x lies outside conv D(A).
  Extended rf_eval(const Vector& x, const Vector& v) const {
    require_quadratic_kernel();
    require(x.size() == d_ && v.size() == d_, "rf_eval: dimension mismatch");
    require_finite(x, "rf_eval x");
    require_finite(v, "rf_eval v");
    optkit::QuadraticProgram qp = template_;
    double constant = 0.0;
    // 1/2 |v1 - v|^2.
    add_square(qp, constant, 0.5, select_v1(), -v);
    // x1 + x2 = 2x.
    for (Eigen::Index r = 0; r < d_; ++r) {
      Vector row = Vector::Zero(nvar_);
      row.segment(mu(), n_) = xs_.row(r).transpose();
      row.segment(lam(), n_) = xs_.row(r).transpose();
      qp.add_equality(row, 2.0 * x[r]);
    }
    // sigma_D rows: -<x_j, v1> - <x_j, V lam> - s <= -2 <x_j, v>.
    for (Eigen::Index j = 0; j < n_; ++j) {
      const Vector xj = xs_.col(j);
      Vector row = Vector::Zero(nvar_);
      row.segment(v1(), d_) = -xj;
      row.segment(lam(), n_) = -(vs_.transpose() * xj);
      row[s()] = -1.0;
      qp.add_inequality(row, -2.0 * xj.dot(v));
    }
    const auto rep = optkit::solve_qp(qp);
    if (rep.status == optkit::SolveStatus::infeasible) return Extended::infinity();
    if (!rep.optimal()) throw SolverError("rf_eval QP did not converge", rep.kkt_residual);
    return rep.value + constant;
  }

  ResolventResult resolvent_detailed(double tau, const Vector& y) const {
    require_quadratic_kernel();
    require(std::isfinite(tau) && tau > 0.0, "resolvent: tau must be positive");
    require(y.size() == d_, "resolvent: dimension mismatch");
    require_finite(y, "resolvent y");
    optkit::QuadraticProgram qp = template_;
    double constant = 0.0;
    // x = X(mu + lam)/2 and v = (y - x)/tau = y/tau + Pv z.
    Matrix px = Matrix::Zero(d_, nvar_);
    px.middleCols(mu(), n_) = 0.5 * xs_;
    px.middleCols(lam(), n_) = 0.5 * xs_;
    const Matrix pv = -px / tau;
    const Vector qv = y / tau;
    // 1/2 |v1 - v|^2 = 1/2 |(S_v1 - Pv) z - qv|^2.
    add_square(qp, constant, 0.5, select_v1() - pv, -qv);
    // -<v, x> = (|x|^2 - <y, x>)/tau.
    add_square(qp, constant, 1.0 / tau, px, Vector::Zero(d_));
    qp.cost -= px.transpose() * y / tau;
    // sigma_D rows: <x_j, 2v - v1 - V lam> <= s.
    for (Eigen::Index j = 0; j < n_; ++j) {
      const Vector xj = xs_.col(j);
      Vector row = 2.0 * pv.transpose() * xj;
      row.segment(v1(), d_) -= xj;
      row.segment(lam(), n_) -= vs_.transpose() * xj;
      row[s()] -= 1.0;
      qp.add_inequality(row, -2.0 * xj.dot(qv));
    }
    auto rep = optkit::solve_qp(qp);
    if (!rep.optimal()) throw SolverError("resolvent QP did not converge", rep.kkt_residual);
    ResolventResult out;
    out.x = px * rep.x;
    out.contact_gap = rep.value + constant;
    out.report = std::move(rep);
    return out;
  }

  /// J_tau(y) = (I + tau A~)^{-1} y for the extension A~.
  Vector resolvent(double tau, const Vector& y) const { return resolvent_detailed(tau, y).x; }

 private:
  Eigen::Index mu() const { return 0; }
  Eigen::Index lam() const { return n_; }
  Eigen::Index v1() const { return 2 * n_; }
  Eigen::Index t() const { return 2 * n_ + d_; }
  Eigen::Index s() const { return 2 * n_ + d_ + 1; }

  void require_quadratic_kernel() const {
    if (std::abs(kernel_.exponent() - 2.0) > 1e-12)
      throw UnsupportedKernel("kernel-average programs support only the quadratic kernel p = 2");
  }

  Matrix select_v1() const {
    Matrix m = Matrix::Zero(d_, nvar_);
    m.middleCols(v1(), d_).setIdentity();
    return m;
  }

  // Adds weight * |M z + m|^2 to the objective.
  static void add_square(optkit::QuadraticProgram& qp, double& constant, double weight,
                         const Matrix& m, const Vector& offset) {
    qp.hessian += 2.0 * weight * m.transpose() * m;
    qp.cost += 2.0 * weight * m.transpose() * offset;
    constant += weight * offset.squaredNorm();
  }

  // Query-independent part: simplices, F_A epigraph, 1/8 |X(mu - lam)|^2 and
  // the linear terms 1/2 t + 1/2 c^T lam + 1/2 s.
  void build_template() {
    template_ = optkit::QuadraticProgram(nvar_);
    template_.lower.segment(mu(), 2 * n_).setZero();
    Vector ones_mu = Vector::Zero(nvar_);
    ones_mu.segment(mu(), n_).setOnes();
    template_.add_equality(ones_mu, 1.0);
    Vector ones_lam = Vector::Zero(nvar_);
    ones_lam.segment(lam(), n_).setOnes();
    template_.add_equality(ones_lam, 1.0);
    for (Eigen::Index k = 0; k < n_; ++k) {
      Vector row = Vector::Zero(nvar_);
      row.segment(mu(), n_) = xs_.transpose() * vs_.col(k);
      row.segment(v1(), d_) = xs_.col(k);
      row[t()] = -1.0;
      template_.add_inequality(row, c_[k]);
    }
    Matrix diff = Matrix::Zero(d_, nvar_);
    diff.middleCols(mu(), n_) = xs_;
    diff.middleCols(lam(), n_) = -xs_;
    double unused = 0.0;
    add_square(template_, unused, 0.125, diff, Vector::Zero(d_));
    template_.cost[t()] += 0.5;
    template_.cost[s()] += 0.5;
    template_.cost.segment(lam(), n_) += 0.5 * c_;
    template_.hessian = 0.5 * (template_.hessian + template_.hessian.transpose()).eval();
  }

  MonotoneGraph graph_;
  KernelPsi kernel_;
  std::optional<IsometryGroup> group_;
  Eigen::Index n_ = 0;
  Eigen::Index d_ = 0;
  Eigen::Index nvar_ = 0;
  Matrix xs_;
  Matrix vs_;
  Vector c_;
  optkit::QuadraticProgram template_;
};

inline Extended rf_eval(const ExtensionProgram& program, const Vector& x, const Vector& v) {
  return program.rf_eval(x, v);
}

inline Vector resolvent_mono(const ExtensionProgram& program, double tau, const Vector& y) {
  return program.resolvent(tau, y);
}

}  // namespace invmono::fitzpatrick
