#pragma once

// Discrete probability space I_N = {0, .., N-1} with uniform weights, N = 2^m.
// Block i at level k < m is the run of 2^(m-k) consecutive atoms starting at
// i * 2^(m-k). Permutations act on samples by pullback: (X o g)(j) = X(g(j)).
//
// Doubly stochastic matrices carry probability mass: each row and column sums
// to 1/N. Permutation matrices therefore appear scaled, and the Birkhoff
// decomposition returned here satisfies sum_k w_k P_k = N B.

#include "invmono/core.hpp"
#include "invmono/optkit.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace invmono::mps {

inline constexpr int kMaxLevel = 20;

class DyadicSpace {
 public:
  explicit DyadicSpace(int level = 0) : level_(level) {
    require(level >= 0, "dyadic level must be nonnegative");
    if (level > kMaxLevel) throw CapacityError("dyadic level exceeds the refinement cap");
  }
  int level() const { return level_; }
  std::size_t atoms() const { return std::size_t{1} << level_; }
  double atom_weight() const { return 1.0 / static_cast<double>(atoms()); }
  friend bool operator==(const DyadicSpace&, const DyadicSpace&) = default;

 private:
  int level_;
};

class Permutation {
 public:
  Permutation() = default;
  explicit Permutation(std::vector<std::size_t> mapping) : map_(std::move(mapping)) {
    std::vector<bool> seen(map_.size(), false);
    for (std::size_t v : map_) {
      require(v < map_.size() && !seen[v], "permutation is not a bijection");
      seen[v] = true;
    }
  }
  static Permutation identity(std::size_t n) {
    std::vector<std::size_t> m(n);
    std::iota(m.begin(), m.end(), std::size_t{0});
    return Permutation(std::move(m));
  }

  std::size_t size() const { return map_.size(); }
  std::size_t operator()(std::size_t j) const { return map_.at(j); }
  const std::vector<std::size_t>& mapping() const { return map_; }

  Permutation inverse() const {
    std::vector<std::size_t> inv(map_.size());
    for (std::size_t j = 0; j < map_.size(); ++j) inv[map_[j]] = j;
    return Permutation(std::move(inv));
  }
  /// (this o other)(j) = this(other(j)).
  Permutation compose(const Permutation& other) const {
    require(other.size() == size(), "compose: order mismatch");
    std::vector<std::size_t> out(size());
    for (std::size_t j = 0; j < size(); ++j) out[j] = map_[other.map_[j]];
    return Permutation(std::move(out));
  }
  bool is_identity() const {
    for (std::size_t j = 0; j < map_.size(); ++j)
      if (map_[j] != j) return false;
    return true;
  }
  Matrix matrix() const {
    Matrix p = Matrix::Zero(static_cast<Eigen::Index>(size()), static_cast<Eigen::Index>(size()));
    for (std::size_t j = 0; j < size(); ++j)
      p(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(map_[j])) = 1.0;
    return p;
  }
  friend bool operator==(const Permutation&, const Permutation&) = default;

 private:
  std::vector<std::size_t> map_;
};

class DoublyStochastic {
 public:
  static DoublyStochastic create(Matrix m, double tolerance = 1e-12) {
    require(m.rows() > 0 && m.rows() == m.cols(), "coupling matrix must be square and nonempty");
    require_finite(m, "coupling matrix");
    const double target = 1.0 / static_cast<double>(m.rows());
    require(m.minCoeff() >= -tolerance, "coupling matrix has a negative entry");
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      require(std::abs(m.row(i).sum() - target) <= tolerance,
              "coupling row " + std::to_string(i) + " does not sum to 1/N");
      require(std::abs(m.col(i).sum() - target) <= tolerance,
              "coupling column " + std::to_string(i) + " does not sum to 1/N");
    }
    DoublyStochastic out;
    out.m_ = std::move(m);
    return out;
  }
  /// Uniform-marginal coupling sum_k w_k P_k / N from a convex combination.
  static DoublyStochastic mixture(const std::vector<std::pair<double, Permutation>>& terms) {
    require(!terms.empty(), "mixture: no terms");
    const auto n = static_cast<Eigen::Index>(terms.front().second.size());
    Matrix m = Matrix::Zero(n, n);
    for (const auto& [w, p] : terms) m += w * p.matrix();
    return create(m / static_cast<double>(n), 1e-10);
  }
  Eigen::Index order() const { return m_.rows(); }
  const Matrix& matrix() const { return m_; }

 private:
  Matrix m_;
};

class EmpiricalSample {
 public:
  EmpiricalSample(DyadicSpace space, Matrix values) : space_(space), values_(std::move(values)) {
    require(static_cast<std::size_t>(values_.rows()) == space_.atoms(),
            "sample needs exactly 2^level rows");
    require(values_.cols() > 0, "sample dimension must be positive");
    require_finite(values_, "sample values");
  }
  const DyadicSpace& space() const { return space_; }
  int level() const { return space_.level(); }
  std::size_t atoms() const { return space_.atoms(); }
  Eigen::Index dim() const { return values_.cols(); }
  const Matrix& values() const { return values_; }
  Vector row(std::size_t j) const { return values_.row(static_cast<Eigen::Index>(j)).transpose(); }

  /// Pullback X o g.
  EmpiricalSample compose(const Permutation& g) const {
    require(g.size() == atoms(), "compose: permutation order differs from sample size");
    Matrix out(values_.rows(), values_.cols());
    for (std::size_t j = 0; j < atoms(); ++j)
      out.row(static_cast<Eigen::Index>(j)) = values_.row(static_cast<Eigen::Index>(g(j)));
    return {space_, std::move(out)};
  }
  /// Same random variable on a finer space: each atom split into 2^r sub-atoms.
  EmpiricalSample refine(int extra_levels) const {
    require(extra_levels >= 0, "refine: negative level increment");
    DyadicSpace fine(level() + extra_levels);
    const std::size_t rep = std::size_t{1} << extra_levels;
    Matrix out(static_cast<Eigen::Index>(fine.atoms()), dim());
    for (std::size_t j = 0; j < fine.atoms(); ++j)
      out.row(static_cast<Eigen::Index>(j)) = values_.row(static_cast<Eigen::Index>(j / rep));
    return {fine, std::move(out)};
  }

 private:
  DyadicSpace space_;
  Matrix values_;
};

/// Finitely supported probability measure: one point per row.
struct Measure {
  Matrix points;
  Vector weights;

  static Measure create(Matrix points, Vector weights) {
    require(points.rows() > 0, "measure has empty support");
    require(points.rows() == weights.size(), "measure: point and weight counts differ");
    require_finite(points, "measure support");
    require_finite(weights, "measure weights");
    require(weights.minCoeff() > 0.0, "measure weights must be positive");
    require(std::abs(weights.sum() - 1.0) <= 1e-12, "measure weights must sum to 1");
    return {std::move(points), std::move(weights)};
  }
  static Measure uniform(Matrix points) {
    const auto n = points.rows();
    require(n > 0, "measure has empty support");
    return create(std::move(points), Vector::Constant(n, 1.0 / static_cast<double>(n)));
  }
  Eigen::Index size() const { return points.rows(); }
};

/// Law X#P of a sample (one atom per row, duplicates kept).
inline Measure law(const EmpiricalSample& x) { return Measure::uniform(x.values()); }

/// Conditional expectation on the level-k blocks, returned at the sample level.
inline EmpiricalSample coarsen(const EmpiricalSample& x, int k) {
  require(k >= 0 && k <= x.level(), "coarsen: level must lie in [0, sample level]");
  const std::size_t block = std::size_t{1} << (x.level() - k);
  Matrix out = x.values();
  for (std::size_t start = 0; start < x.atoms(); start += block) {
    const auto s = static_cast<Eigen::Index>(start);
    const auto b = static_cast<Eigen::Index>(block);
    const Eigen::RowVectorXd mean = x.values().middleRows(s, b).colwise().mean();
    out.middleRows(s, b).rowwise() = mean;
  }
  return {x.space(), std::move(out)};
}

/// Atom j of block i goes to the same offset inside block sigma(i).
inline Permutation lift_permutation(const Permutation& sigma, int target_level) {
  const std::size_t nb = sigma.size();
  require(nb > 0 && (nb & (nb - 1)) == 0, "lift_permutation: block count must be a power of two");
  const int k = std::countr_zero(nb);
  require(k <= target_level, "lift_permutation: target level below block level");
  if (target_level > kMaxLevel) throw CapacityError("lift_permutation: level exceeds cap");
  const std::size_t block = std::size_t{1} << (target_level - k);
  std::vector<std::size_t> out(nb * block);
  for (std::size_t i = 0; i < nb; ++i)
    for (std::size_t o = 0; o < block; ++o) out[i * block + o] = sigma(i) * block + o;
  return Permutation(std::move(out));
}

// ---------------------------------------------------------------------------
// Assignment and matching primitives.

struct Assignment {
  std::vector<std::size_t> column_of_row;
  double cost = 0.0;
};

/// Minimum-cost perfect assignment (Hungarian method with potentials).
inline Assignment hungarian(const Matrix& cost) {
  require(cost.rows() > 0 && cost.rows() == cost.cols(), "hungarian: cost must be square");
  require_finite(cost, "hungarian cost");
  const auto n = static_cast<std::size_t>(cost.rows());
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<bool> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  Assignment out;
  out.column_of_row.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) out.column_of_row[p[j] - 1] = j - 1;
  for (std::size_t i = 0; i < n; ++i)
    out.cost += cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(out.column_of_row[i]));
  return out;
}

namespace detail {

// Perfect matching on the bipartite graph {(i,j) : allowed(i,j)} by
// augmenting paths, scanning columns in increasing order.
template <class Allowed>
std::optional<std::vector<std::size_t>> perfect_matching(std::size_t n, Allowed allowed) {
  std::vector<long> row_of_col(n, -1);
  std::vector<bool> seen;
  auto augment = [&](auto&& self, std::size_t i) -> bool {
    for (std::size_t j = 0; j < n; ++j) {
      if (!allowed(i, j) || seen[j]) continue;
      seen[j] = true;
      if (row_of_col[j] < 0 || self(self, static_cast<std::size_t>(row_of_col[j]))) {
        row_of_col[j] = static_cast<long>(i);
        return true;
      }
    }
    return false;
  };
  for (std::size_t i = 0; i < n; ++i) {
    seen.assign(n, false);
    if (!augment(augment, i)) return std::nullopt;
  }
  std::vector<std::size_t> col_of_row(n);
  for (std::size_t j = 0; j < n; ++j) col_of_row[static_cast<std::size_t>(row_of_col[j])] = j;
  return col_of_row;
}

using IntMatrix = Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic>;

// Rounds a nonnegative matrix with integral row and column sums to an integer
// matrix with the same sums and every entry in {floor, ceil}.
inline IntMatrix round_preserving_margins(const Matrix& t) {
  const Eigen::Index n = t.rows();
  const Eigen::Index m = t.cols();
  IntMatrix base(n, m);
  Matrix frac(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const double r = std::round(t(i, j));
      const double v = std::abs(t(i, j) - r) <= 1e-9 ? r : t(i, j);
      base(i, j) = static_cast<long long>(std::floor(v));
      frac(i, j) = v - std::floor(v);
    }
  }
  // Unit-capacity flow: row i must take need_r[i] fractional cells, column j
  // must receive need_c[j]. Augment one unit at a time along DFS paths.
  std::vector<long long> need_r(static_cast<std::size_t>(n)), need_c(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < n; ++i) need_r[static_cast<std::size_t>(i)] = std::llround(frac.row(i).sum());
  for (Eigen::Index j = 0; j < m; ++j) need_c[static_cast<std::size_t>(j)] = std::llround(frac.col(j).sum());
  IntMatrix up = IntMatrix::Zero(n, m);
  std::vector<bool> seen_col;
  auto augment = [&](auto&& self, Eigen::Index i) -> bool {
    for (Eigen::Index j = 0; j < m; ++j) {
      if (frac(i, j) <= 0.0 || up(i, j) == 1 || seen_col[static_cast<std::size_t>(j)]) continue;
      seen_col[static_cast<std::size_t>(j)] = true;
      if (need_c[static_cast<std::size_t>(j)] > 0) {
        --need_c[static_cast<std::size_t>(j)];
        up(i, j) = 1;
        return true;
      }
      // Column j is full: reroute one of its units to another column.
      for (Eigen::Index k = 0; k < n; ++k) {
        if (k == i || up(k, j) == 0) continue;
        up(k, j) = 0;
        if (self(self, k)) {
          up(i, j) = 1;
          return true;
        }
        up(k, j) = 1;
      }
    }
    return false;
  };
  for (Eigen::Index i = 0; i < n; ++i) {
    while (need_r[static_cast<std::size_t>(i)] > 0) {
      seen_col.assign(static_cast<std::size_t>(m), false);
      if (!augment(augment, i)) throw InputError("margin-preserving rounding failed");
      --need_r[static_cast<std::size_t>(i)];
    }
  }
  return base + up;
}

// Halves an integer matrix with even margins, keeping every entry in
// {floor(c/2), ceil(c/2)}: odd cells form a bipartite graph with even degrees,
// and along each closed trail row->column steps round up, column->row down.
inline IntMatrix halve_preserving_margins(const IntMatrix& c) {
  const Eigen::Index n = c.rows();
  IntMatrix out(n, n);
  std::vector<std::vector<bool>> odd(static_cast<std::size_t>(n), std::vector<bool>(static_cast<std::size_t>(n)));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      out(i, j) = c(i, j) / 2;
      odd[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = (c(i, j) % 2) != 0;
    }
  for (Eigen::Index start = 0; start < n; ++start) {
    for (;;) {
      // Walk from row `start` until stuck (which happens back at `start`).
      Eigen::Index row = start;
      bool moved = false;
      for (;;) {
        Eigen::Index col = -1;
        for (Eigen::Index j = 0; j < n; ++j)
          if (odd[static_cast<std::size_t>(row)][static_cast<std::size_t>(j)]) {
            col = j;
            break;
          }
        if (col < 0) break;
        odd[static_cast<std::size_t>(row)][static_cast<std::size_t>(col)] = false;
        out(row, col) += 1;
        moved = true;
        Eigen::Index next = -1;
        for (Eigen::Index i = 0; i < n; ++i)
          if (odd[static_cast<std::size_t>(i)][static_cast<std::size_t>(col)]) {
            next = i;
            break;
          }
        if (next < 0) throw InputError("halving: odd cells do not form closed trails");
        odd[static_cast<std::size_t>(next)][static_cast<std::size_t>(col)] = false;
        row = next;
      }
      if (!moved) break;
    }
  }
  return out;
}

// Splits a nonnegative integer matrix with all margins K into K permutations.
inline std::vector<Permutation> regular_decomposition(IntMatrix c, long long k) {
  const auto n = static_cast<std::size_t>(c.rows());
  std::vector<Permutation> out;
  for (long long step = 0; step < k; ++step) {
    auto match = perfect_matching(n, [&](std::size_t i, std::size_t j) {
      return c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) > 0;
    });
    if (!match) throw InputError("count matrix has no perfect matching");
    for (std::size_t i = 0; i < n; ++i) c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>((*match)[i])) -= 1;
    out.emplace_back(std::move(*match));
  }
  return out;
}

// Continued-fraction rational approximation with denominator <= max_den.
inline std::pair<long long, long long> rationalize(double x, long long max_den) {
  long long p0 = 0, q0 = 1, p1 = 1, q1 = 0;
  double r = x;
  for (int it = 0; it < 64; ++it) {
    const double a = std::floor(r);
    const auto ai = static_cast<long long>(a);
    const long long q2 = q0 + ai * q1;
    if (q2 > max_den) break;
    const long long p2 = p0 + ai * p1;
    p0 = p1;
    q0 = q1;
    p1 = p2;
    q1 = q2;
    if (std::abs(x - static_cast<double>(p1) / static_cast<double>(q1)) <= 1e-13 * std::max(1.0, std::abs(x))) break;
    const double f = r - a;
    if (f < 1e-15) break;
    r = 1.0 / f;
  }
  return {p1, q1};
}

}  // namespace detail

/// Block-transition counts C(i,i') = #{j in block i : sigma(j) in block i'}.
inline Matrix count_matrix(const Permutation& sigma, std::size_t blocks) {
  require(blocks > 0 && sigma.size() % blocks == 0, "count_matrix: order not divisible by block count");
  const std::size_t k = sigma.size() / blocks;
  Matrix c = Matrix::Zero(static_cast<Eigen::Index>(blocks), static_cast<Eigen::Index>(blocks));
  for (std::size_t j = 0; j < sigma.size(); ++j)
    c(static_cast<Eigen::Index>(j / k), static_cast<Eigen::Index>(sigma(j) / k)) += 1.0;
  return c;
}

/// Permutation of I_{NK} whose block-transition counts round N K B.
/// Dyadic-rational B is rounded at the finest level where N K 2^r B is
/// integral and halved back down, so count matrices for K and 2K are nested.
inline Permutation approx_coupling(const DoublyStochastic& b, std::size_t refinement) {
  require(refinement >= 1, "approx_coupling: refinement must be at least 1");
  const Eigen::Index n = b.order();
  const auto nd = static_cast<double>(n);
  const auto kd = static_cast<double>(refinement);
  int fine = -1;
  for (int r = 0; r <= kMaxLevel; ++r) {
    const Matrix t = b.matrix() * nd * kd * std::ldexp(1.0, r);
    if ((t - t.array().round().matrix()).cwiseAbs().maxCoeff() <= 1e-9) {
      fine = r;
      break;
    }
  }
  detail::IntMatrix counts;
  if (fine >= 0) {
    counts = detail::round_preserving_margins(b.matrix() * nd * kd * std::ldexp(1.0, fine));
    for (int r = fine; r > 0; --r) counts = detail::halve_preserving_margins(counts);
  } else {
    counts = detail::round_preserving_margins(b.matrix() * nd * kd);
  }
  const auto perms = detail::regular_decomposition(counts, static_cast<long long>(refinement));
  std::vector<std::size_t> sigma(static_cast<std::size_t>(n) * refinement);
  for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i)
    for (std::size_t k = 0; k < refinement; ++k) sigma[i * refinement + k] = perms[k](i) * refinement + k;
  return Permutation(std::move(sigma));
}

namespace detail {

inline Matrix pairwise_cost(const Measure& mu, const Measure& nu, double p) {
  Matrix c(mu.size(), nu.size());
  for (Eigen::Index i = 0; i < mu.size(); ++i)
    for (Eigen::Index j = 0; j < nu.size(); ++j) c(i, j) = std::pow((mu.points.row(i) - nu.points.row(j)).norm(), p);
  return c;
}

// Plans pi(i, j), flattened row-major, with marginals mu and nu.
inline optkit::LinearProgram transport_program(const Measure& mu, const Measure& nu, const Matrix& cost) {
  const Eigen::Index n = mu.size();
  const Eigen::Index m = nu.size();
  optkit::LinearProgram lp(n * m);
  lp.lower.setZero();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) lp.cost[i * m + j] = cost(i, j);
  for (Eigen::Index i = 0; i < n; ++i) {
    Vector row = Vector::Zero(n * m);
    row.segment(i * m, m).setOnes();
    lp.add_equality(row, mu.weights[i]);
  }
  for (Eigen::Index j = 0; j < m; ++j) {
    Vector row = Vector::Zero(n * m);
    for (Eigen::Index i = 0; i < n; ++i) row[i * m + j] = 1.0;
    lp.add_equality(row, nu.weights[j]);
  }
  return lp;
}

}  // namespace detail

struct TransportResult {
  double value = 0.0;
  Matrix plan;
};

/// W_p between finitely supported measures by the transportation LP.
inline TransportResult wasserstein(double p, const Measure& mu, const Measure& nu) {
  require(std::isfinite(p) && p >= 1.0, "wasserstein: p must be >= 1");
  require(mu.size() > 0 && nu.size() > 0, "wasserstein: empty support");
  require(mu.points.cols() == nu.points.cols(), "wasserstein: dimension mismatch");
  require(std::abs(mu.weights.sum() - 1.0) <= 1e-12 && std::abs(nu.weights.sum() - 1.0) <= 1e-12,
          "wasserstein: weights must sum to 1");
  require(mu.weights.minCoeff() > 0.0 && nu.weights.minCoeff() > 0.0, "wasserstein: weights must be positive");
  const auto lp = detail::transport_program(mu, nu, detail::pairwise_cost(mu, nu, p));
  const auto rep = optkit::solve_lp(lp);
  if (!rep.optimal()) throw SolverError("transport LP failed", rep.kkt_residual);
  TransportResult out;
  out.plan = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      rep.x.data(), mu.size(), nu.size());
  out.value = std::pow(std::max(rep.value, 0.0), 1.0 / p);
  return out;
}

/// W_2 between the block-aggregated law of (Z, Z' o sigma) and the coupling
/// sum B(i,i') delta_(Z_i, Z'_i'). Rows of Z and Z' are block values.
inline double coupling_discrepancy(const Permutation& sigma, const DoublyStochastic& b,
                                   const Matrix& z, const Matrix& zp) {
  const Eigen::Index n = b.order();
  require(z.rows() == n && zp.rows() == n, "coupling_discrepancy: samples must have one row per block");
  require(z.cols() == zp.cols(), "coupling_discrepancy: sample dimension mismatch");
  require(sigma.size() % static_cast<std::size_t>(n) == 0,
          "coupling_discrepancy: permutation order is not a refinement of the coupling order");
  const Matrix c = count_matrix(sigma, static_cast<std::size_t>(n)) / static_cast<double>(sigma.size());
  const Eigen::Index d = z.cols();
  auto support = [&](const Matrix& w) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (w(i, j) > 0.0) idx.push_back(i * n + j);
    Matrix pts(static_cast<Eigen::Index>(idx.size()), 2 * d);
    Vector wts(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const Eigen::Index i = idx[k] / n, j = idx[k] % n;
      const auto r = static_cast<Eigen::Index>(k);
      pts.row(r).head(d) = z.row(i);
      pts.row(r).tail(d) = zp.row(j);
      wts[r] = w(i, j);
    }
    wts /= wts.sum();
    return Measure{pts, wts};
  };
  return wasserstein(2.0, support(c), support(b.matrix())).value;
}

inline double coupling_discrepancy(const Permutation& sigma, const DoublyStochastic& b,
                                   const EmpiricalSample& z, const EmpiricalSample& zp) {
  require(z.space() == zp.space(), "coupling_discrepancy: samples live on different spaces");
  return coupling_discrepancy(sigma, b, z.values(), zp.values());
}

struct MongeResult {
  /// Source sample on the common refinement.
  EmpiricalSample x;
  /// Target sample on the same refinement, with law exactly nu.
  EmpiricalSample y;
  /// ||X - Y||_p.
  double cost = 0.0;
  double wasserstein = 0.0;
};

/// Transport map realized on a refinement: Y with Y#P = nu and
/// ||X - Y||_p <= W_p(X#P, nu) + eps.
inline MongeResult monge_match(const EmpiricalSample& x, const Measure& nu, double p, double eps = 0.0) {
  require(nu.points.cols() == x.dim(), "monge_match: dimension mismatch");
  require(eps >= 0.0, "monge_match: eps must be nonnegative");
  int level = -1;
  for (int m = x.level(); m <= kMaxLevel; ++m) {
    const Vector scaled = nu.weights * std::ldexp(1.0, m);
    if ((scaled - scaled.array().round().matrix()).cwiseAbs().maxCoeff() <= 1e-9) {
      level = m;
      break;
    }
  }
  if (level < 0) throw CapacityError("monge_match: target weights are not dyadic up to the refinement cap");
  const auto mu = law(x);
  auto tr = wasserstein(p, mu, nu);
  if (p != 2.0) {
    // Among W_p-optimal plans take one minimizing the quadratic cost, so ties
    // (common for p = 1) resolve to the monotone arrangement.
    const Matrix cp = detail::pairwise_cost(mu, nu, p).transpose();
    auto lp = detail::transport_program(mu, nu, detail::pairwise_cost(mu, nu, 2.0));
    const double opt = std::pow(tr.value, p);
    lp.add_inequality(Eigen::Map<const Vector>(cp.data(), cp.size()), opt + 1e-10 * (1.0 + opt));
    const auto rep = optkit::solve_lp(lp);
    if (rep.optimal())
      tr.plan = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          rep.x.data(), mu.size(), nu.size());
  }
  const std::size_t atoms = std::size_t{1} << level;
  const std::size_t split = std::size_t{1} << (level - x.level());
  const double unit = std::ldexp(1.0, level);
  // Sub-atoms of source atom i are handed out to targets in index order.
  Matrix y(static_cast<Eigen::Index>(atoms), x.dim());
  std::vector<long long> left(static_cast<std::size_t>(nu.size()));
  for (Eigen::Index j = 0; j < nu.size(); ++j) left[static_cast<std::size_t>(j)] = std::llround(nu.weights[j] * unit);
  for (std::size_t i = 0; i < x.atoms(); ++i) {
    std::vector<long long> share(static_cast<std::size_t>(nu.size()));
    long long total = 0;
    for (Eigen::Index j = 0; j < nu.size(); ++j) {
      share[static_cast<std::size_t>(j)] =
          std::min(std::llround(tr.plan(static_cast<Eigen::Index>(i), j) * unit), left[static_cast<std::size_t>(j)]);
      total += share[static_cast<std::size_t>(j)];
    }
    if (total != static_cast<long long>(split))
      throw SolverError("monge_match: transport plan is not representable at the chosen level",
                        static_cast<double>(std::llabs(total - static_cast<long long>(split))));
    std::size_t slot = i * split;
    for (Eigen::Index j = 0; j < nu.size(); ++j) {
      for (long long c = 0; c < share[static_cast<std::size_t>(j)]; ++c)
        y.row(static_cast<Eigen::Index>(slot++)) = nu.points.row(j);
      left[static_cast<std::size_t>(j)] -= share[static_cast<std::size_t>(j)];
    }
  }
  MongeResult out{x.refine(level - x.level()), EmpiricalSample(DyadicSpace(level), std::move(y)), 0.0, tr.value};
  double acc = 0.0;
  for (std::size_t j = 0; j < atoms; ++j)
    acc += std::pow((out.x.row(j) - out.y.row(j)).norm(), p);
  out.cost = std::pow(acc / unit, 1.0 / p);
  if (out.cost > tr.value + eps + 1e-9)
    throw SolverError("monge_match: realized cost exceeds W_p + eps", out.cost - tr.value);
  return out;
}

/// g with (X' o g, Y' o g) = (X, Y) row by row; Y and Y' may have zero columns.
inline Permutation align_same_law(const Matrix& x, const Matrix& y, const Matrix& xp, const Matrix& yp,
                                  double tolerance = 1e-9) {
  require(x.rows() > 0, "align_same_law: empty sample");
  require(x.rows() == y.rows() && xp.rows() == yp.rows() && x.rows() == xp.rows(),
          "align_same_law: row counts differ");
  require(x.cols() == xp.cols() && y.cols() == yp.cols(), "align_same_law: dimension mismatch");
  const Eigen::Index n = x.rows();
  Matrix r(n, x.cols() + y.cols()), rp(n, x.cols() + y.cols());
  r << x, y;
  rp << xp, yp;
  Matrix cost(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) cost(i, j) = (r.row(i) - rp.row(j)).squaredNorm();
  const auto a = hungarian(cost);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto j = static_cast<Eigen::Index>(a.column_of_row[static_cast<std::size_t>(i)]);
    if ((r.row(i) - rp.row(j)).cwiseAbs().maxCoeff() > tolerance)
      throw LawMismatch("laws differ: row " + std::to_string(i) + " of the reference sample has no partner",
                        static_cast<std::size_t>(i));
  }
  return Permutation(a.column_of_row);
}

inline Permutation align_same_law(const EmpiricalSample& x, const EmpiricalSample& xp) {
  require(x.space() == xp.space(), "align_same_law: samples live on different spaces");
  const Matrix none(x.values().rows(), 0);
  return align_same_law(x.values(), none, xp.values(), none);
}

inline Permutation align_same_law(const EmpiricalSample& x, const EmpiricalSample& y,
                                  const EmpiricalSample& xp, const EmpiricalSample& yp) {
  require(x.space() == y.space() && x.space() == xp.space() && xp.space() == yp.space(),
          "align_same_law: samples live on different spaces");
  return align_same_law(x.values(), y.values(), xp.values(), yp.values());
}

struct BirkhoffTerm {
  double weight = 0.0;
  Permutation permutation;
};

/// Convex combination of permutation matrices equal to N B.
inline std::vector<BirkhoffTerm> birkhoff_decompose(const DoublyStochastic& b, long long max_denominator = 1000000) {
  const Eigen::Index n = b.order();
  const Matrix scaled = b.matrix() * static_cast<double>(n);
  long long q = 1;
  Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic> num(n, n), den(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto [pn, pd] = detail::rationalize(std::max(scaled(i, j), 0.0), max_denominator);
      num(i, j) = pn;
      den(i, j) = pd;
      q = std::lcm(q, pd);
      require(q <= max_denominator, "birkhoff_decompose: common denominator exceeds the cap");
    }
  }
  detail::IntMatrix m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = num(i, j) * (q / den(i, j));
  for (Eigen::Index i = 0; i < n; ++i)
    require(m.row(i).sum() == q && m.col(i).sum() == q,
            "birkhoff_decompose: rationalized matrix is not doubly stochastic");
  std::vector<BirkhoffTerm> terms;
  while (m.maxCoeff() > 0) {
    auto match = detail::perfect_matching(static_cast<std::size_t>(n), [&](std::size_t i, std::size_t j) {
      return m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) > 0;
    });
    if (!match) throw InputError("birkhoff_decompose: no perfect matching in the support");
    long long w = std::numeric_limits<long long>::max();
    for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i)
      w = std::min(w, m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>((*match)[i])));
    for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>((*match)[i])) -= w;
    terms.push_back({static_cast<double>(w) / static_cast<double>(q), Permutation(std::move(*match))});
  }
  // Caratheodory reduction to at most (N-1)^2 + 1 terms.
  const std::size_t cap = static_cast<std::size_t>((n - 1) * (n - 1) + 1);
  while (terms.size() > cap) {
    const auto t = static_cast<Eigen::Index>(terms.size());
    Matrix a(n * n + 1, t);
    for (Eigen::Index k = 0; k < t; ++k) {
      const Matrix p = terms[static_cast<std::size_t>(k)].permutation.matrix();
      a.col(k).head(n * n) = Eigen::Map<const Vector>(p.data(), n * n);
      a(n * n, k) = 1.0;
    }
    const Matrix ker = Eigen::FullPivLU<Matrix>(a).kernel();
    const Vector alpha = ker.col(0);
    double step = std::numeric_limits<double>::infinity();
    Eigen::Index drop = -1;
    for (Eigen::Index k = 0; k < t; ++k) {
      if (alpha[k] > 1e-12) {
        const double s = terms[static_cast<std::size_t>(k)].weight / alpha[k];
        if (s < step) {
          step = s;
          drop = k;
        }
      }
    }
    if (drop < 0) throw InputError("birkhoff_decompose: reduction failed");
    for (Eigen::Index k = 0; k < t; ++k) terms[static_cast<std::size_t>(k)].weight -= step * alpha[k];
    terms.erase(terms.begin() + drop);
    std::erase_if(terms, [](const BirkhoffTerm& term) { return term.weight <= 1e-15; });
  }
  return terms;
}

}  // namespace invmono::mps
