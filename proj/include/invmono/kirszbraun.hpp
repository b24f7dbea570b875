#pragma once

// L-Lipschitz extension of finite data y_i -> w_i in R^d.
//
// ALM route. With z = (x, y) in R^{2d}, b_i = (-L y_i, w_i), c_i = L|y_i|^2/2,
//   g(z) = min_i h_i(z),  h_i(z) = L|z|^2 + <b_i, z> + c_i.
// All h_i share the Hessian 2L I, so the convex envelope is
//   inf { sum lam_i h_i(z_i) : sum lam_i z_i = z } with z_i = z + (b(lam) - b_i)/(2L),
// where b(lam) = sum lam_i b_i, giving
//   env g(z) = min_lam L|z|^2 + <b(lam), z> + |b(lam)|^2/(4L)
//                      + sum lam_i (c_i - |b_i|^2/(4L)).
// At z = (x, 0) this is a QP over the simplex with Hessian B^T B / (2L), and
// the envelope theorem gives grad_y env g(x, 0) = sum lam*_i w_i. Since b(lam*)
// is unique, the readout does not depend on which minimizer is returned.
//
// Cayley route. T(y, w) = ((y - w)/sqrt2, (y + w)/sqrt2) maps the graph of a
// nonexpansive map to a monotone graph. Extending T(graph of f/L) to a maximal
// monotone operator and reading back through the resolvent at tau = 1 gives
//   f^(x) = L (x - sqrt2 J_1(sqrt2 x)).

#include "invmono/core.hpp"
#include "invmono/fitzpatrick.hpp"
#include "invmono/optkit.hpp"

#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

namespace invmono::kirszbraun {

/// Largest ratio |w_i - w_j| / |y_i - y_j| (0 for a single site).
inline double lip_constant(const std::vector<Vector>& sites, const std::vector<Vector>& values) {
  require(!sites.empty(), "lip_constant: no sites");
  require(sites.size() == values.size(), "lip_constant: sites and values differ in count");
  double best = 0.0;
  for (std::size_t i = 0; i < sites.size(); ++i) {
    for (std::size_t j = i + 1; j < sites.size(); ++j) {
      const double dy = (sites[i] - sites[j]).norm();
      const double dw = (values[i] - values[j]).norm();
      if (dy <= 1e-12) {
        require(dw <= 1e-12, "lip_constant: duplicate site with different values");
        continue;
      }
      best = std::max(best, dw / dy);
    }
  }
  return best;
}

class LipschitzData {
 public:
  static LipschitzData create(std::vector<Vector> sites, std::vector<Vector> values, double L) {
    require(!sites.empty(), "Lipschitz data needs at least one site");
    require(sites.size() == values.size(), "Lipschitz data: sites and values differ in count");
    require(std::isfinite(L) && L >= 0.0, "Lipschitz constant must be finite and nonnegative");
    const auto d = sites.front().size();
    require(d > 0, "Lipschitz data: dimension must be positive");
    for (std::size_t i = 0; i < sites.size(); ++i) {
      require(sites[i].size() == d && values[i].size() == d, "Lipschitz data: dimension mismatch");
      require_finite(sites[i], "site");
      require_finite(values[i], "value");
    }
    for (std::size_t i = 0; i < sites.size(); ++i) {
      for (std::size_t j = i + 1; j < sites.size(); ++j) {
        const double dy = (sites[i] - sites[j]).norm();
        require(dy > 1e-12, "Lipschitz data: sites " + std::to_string(i) + " and " +
                                std::to_string(j) + " coincide");
        if ((values[i] - values[j]).norm() > L * dy + 1e-10)
          throw InvariantViolation("data violate the declared Lipschitz constant at sites " +
                                   std::to_string(i) + " and " + std::to_string(j));
      }
    }
    LipschitzData out;
    out.sites_ = std::move(sites);
    out.values_ = std::move(values);
    out.lip_ = L;
    return out;
  }

  Eigen::Index dim() const { return sites_.front().size(); }
  std::size_t size() const { return sites_.size(); }
  double lipschitz() const { return lip_; }
  const std::vector<Vector>& sites() const { return sites_; }
  const std::vector<Vector>& values() const { return values_; }
  /// Below this constant all values must coincide and extensions are constant.
  bool is_constant() const { return lip_ < 1e-12; }

 private:
  LipschitzData() = default;
  std::vector<Vector> sites_;
  std::vector<Vector> values_;
  double lip_ = 0.0;
};

struct AlmResult {
  Vector value;
  Vector weights;
  optkit::SolveReport report;
};

inline AlmResult alm_extend_detailed(const LipschitzData& data, const Vector& x) {
  require(x.size() == data.dim(), "alm_extend: dimension mismatch");
  require_finite(x, "alm_extend query");
  const auto n = static_cast<Eigen::Index>(data.size());
  const Eigen::Index d = data.dim();
  AlmResult out;
  if (data.is_constant() || n == 1) {
    out.value = data.values().front();
    out.weights = Vector::Zero(n);
    out.weights[0] = 1.0;
    out.report.status = optkit::SolveStatus::optimal;
    out.report.kkt_residual = 0.0;
    return out;
  }
  const double L = data.lipschitz();
  Matrix b(2 * d, n);
  Vector lin(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector& y = data.sites()[static_cast<std::size_t>(i)];
    const Vector& w = data.values()[static_cast<std::size_t>(i)];
    b.col(i).head(d) = -L * y;
    b.col(i).tail(d) = w;
    lin[i] = 0.5 * L * y.squaredNorm() - b.col(i).squaredNorm() / (4.0 * L) - L * x.dot(y);
  }
  optkit::QuadraticProgram qp(n);
  qp.hessian = b.transpose() * b / (2.0 * L);
  qp.hessian = 0.5 * (qp.hessian + qp.hessian.transpose()).eval();
  qp.cost = lin;
  qp.lower.setZero();
  qp.add_equality(Vector::Ones(n), 1.0);
  auto rep = optkit::solve_qp(qp);
  if (!rep.optimal()) throw SolverError("alm_extend QP did not converge", rep.kkt_residual);
  out.weights = rep.x.cwiseMax(0.0);
  out.weights /= out.weights.sum();
  out.value = Vector::Zero(d);
  for (Eigen::Index i = 0; i < n; ++i) out.value += out.weights[i] * data.values()[static_cast<std::size_t>(i)];
  out.report = std::move(rep);
  return out;
}

inline Vector alm_extend(const LipschitzData& data, const Vector& x) {
  return alm_extend_detailed(data, x).value;
}

enum class CayleyDirection { forward, inverse };

inline std::pair<Vector, Vector> cayley_transform(const Vector& a, const Vector& b,
                                                  CayleyDirection direction = CayleyDirection::forward) {
  require(a.size() == b.size(), "cayley_transform: dimension mismatch");
  constexpr double r = 1.0 / std::numbers::sqrt2;
  if (direction == CayleyDirection::forward) return {r * (a - b), r * (a + b)};
  return {r * (a + b), r * (b - a)};
}

/// Cayley route with the monotone extension assembled once.
class CayleyExtension {
 public:
  explicit CayleyExtension(LipschitzData data) : data_(std::move(data)) {
    if (data_.is_constant()) return;
    std::vector<fitzpatrick::Pair> pairs;
    pairs.reserve(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) {
      auto [a, b] = cayley_transform(data_.sites()[i], data_.values()[i] / data_.lipschitz());
      pairs.push_back({std::move(a), std::move(b)});
    }
    const auto rep = fitzpatrick::check_monotone(pairs);
    if (!rep.monotone)
      throw InvariantViolation("Cayley image is not monotone; data exceed their Lipschitz bound");
    program_.emplace(fitzpatrick::MonotoneGraph::create(std::move(pairs)));
  }

  const LipschitzData& data() const { return data_; }

  Vector operator()(const Vector& x) const {
    require(x.size() == data_.dim(), "cayley_extend: dimension mismatch");
    require_finite(x, "cayley_extend query");
    if (!program_) return data_.values().front();
    const Vector xs = program_->resolvent(1.0, std::numbers::sqrt2 * x);
    return data_.lipschitz() * (x - std::numbers::sqrt2 * xs);
  }

 private:
  LipschitzData data_;
  std::optional<fitzpatrick::ExtensionProgram> program_;
};

inline Vector cayley_extend(const LipschitzData& data, const Vector& x) {
  return CayleyExtension(data)(x);
}

}  // namespace invmono::kirszbraun
