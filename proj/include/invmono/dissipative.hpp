#pragma once

// lambda-dissipative operators on H = R^n, usually n = N d viewed as
// L^2(I_N; R^d) with atom i occupying coordinates [i d, (i+1) d).
//
// Graph variant: a finite lambda-dissipative graph {(x_i, b_i)} is turned into
// the monotone graph A = {(x_i, lambda x_i - b_i)} and extended. Since
// B = lambda I - A on the extension, x - tau B x = y reads
//   x + tau/(1 - lambda tau) A x = y/(1 - lambda tau),
// so J^B_tau(y) = J^A_s(y/(1 - lambda tau)) with s = tau/(1 - lambda tau).
//
// Explicit variant: x = y + tau B(x) is solved by x <- x - theta G(x),
// G(x) = x - tau B(x) - y. With <dB, dx> <= lambda |dx|^2 and |dB| <= Lip |dx|
// the squared contraction factor is at most
//   1 - 2 theta (1 - lambda tau) + theta^2 (1 - 2 lambda tau + tau^2 Lip^2),
// minimized by theta = (1 - lambda tau)/(1 - 2 lambda tau + tau^2 Lip^2).

#include "invmono/core.hpp"
#include "invmono/fitzpatrick.hpp"
#include "invmono/mps.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace invmono::dissipative {

using VectorMap = std::function<Vector(const Vector&)>;

inline constexpr std::uint64_t kProbeSeed = 0x1D5517A7EULL;
inline constexpr std::size_t kProbeCount = 32;

/// Deterministic standard-normal probe vectors.
inline std::vector<Vector> make_probes(Eigen::Index dim, std::size_t count = kProbeCount,
                                       std::uint64_t seed = kProbeSeed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<Vector> out(count, Vector(dim));
  for (auto& v : out)
    for (Eigen::Index i = 0; i < dim; ++i) v[i] = normal(rng);
  return out;
}

struct ExplicitLipschitz {
  VectorMap map;
  double lipschitz = 0.0;
  Eigen::Index dim = 0;
  std::string name;
};

struct LinearMatrix {
  Matrix m;
};

struct GraphExtension {
  /// Source lambda-dissipative pairs (x_i, b_i).
  std::vector<fitzpatrick::Pair> pairs;
  std::shared_ptr<const fitzpatrick::ExtensionProgram> program;
};

class OperatorSpec {
 public:
  using Variant = std::variant<ExplicitLipschitz, LinearMatrix, GraphExtension>;

  static OperatorSpec explicit_map(double lambda, VectorMap map, double lipschitz, Eigen::Index dim,
                                   std::string name = "explicit") {
    require(std::isfinite(lambda), "operator lambda must be finite");
    require(static_cast<bool>(map), "explicit operator needs a map");
    require(std::isfinite(lipschitz) && lipschitz >= 0.0, "Lipschitz bound must be finite and nonnegative");
    require(lipschitz >= -lambda - 1e-12, "Lipschitz bound is below -lambda");
    require(dim > 0, "operator dimension must be positive");
    const auto probes = make_probes(dim);
    std::vector<Vector> images;
    images.reserve(probes.size());
    for (const auto& p : probes) {
      Vector b = map(p);
      require(b.size() == dim, "explicit operator returned a vector of the wrong size");
      images.push_back(std::move(b));
    }
    for (std::size_t i = 0; i < probes.size(); ++i) {
      for (std::size_t j = i + 1; j < probes.size(); ++j) {
        const Vector dx = probes[i] - probes[j];
        const Vector db = images[i] - images[j];
        if (db.dot(dx) > lambda * dx.squaredNorm() + 1e-8 * (1.0 + dx.squaredNorm()))
          throw InvariantViolation("operator '" + name + "' is not " + std::to_string(lambda) +
                                   "-dissipative on probes " + std::to_string(i) + ", " + std::to_string(j));
        if (db.norm() > lipschitz * dx.norm() * (1.0 + 1e-9) + 1e-12)
          throw InvariantViolation("operator '" + name + "' exceeds its Lipschitz bound on probes");
      }
    }
    return OperatorSpec(lambda, ExplicitLipschitz{std::move(map), lipschitz, dim, std::move(name)});
  }

  static OperatorSpec linear(double lambda, Matrix m) {
    require(std::isfinite(lambda), "operator lambda must be finite");
    require(m.rows() > 0 && m.rows() == m.cols(), "linear operator must be square");
    require_finite(m, "linear operator");
    const Matrix sym = 0.5 * (m + m.transpose());
    const double top = Eigen::SelfAdjointEigenSolver<Matrix>(sym, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
    if (top > lambda + 1e-10)
      throw InvariantViolation("symmetric part has eigenvalue " + std::to_string(top) + " above lambda");
    return OperatorSpec(lambda, LinearMatrix{std::move(m)});
  }

  static OperatorSpec graph(double lambda, std::vector<fitzpatrick::Pair> pairs) {
    require(std::isfinite(lambda), "operator lambda must be finite");
    require(!pairs.empty(), "graph operator needs at least one pair");
    std::vector<fitzpatrick::Pair> mono;
    mono.reserve(pairs.size());
    for (const auto& p : pairs) mono.push_back({p.x, lambda * p.x - p.v});
    auto program = std::make_shared<const fitzpatrick::ExtensionProgram>(
        fitzpatrick::MonotoneGraph::create(std::move(mono)));
    return OperatorSpec(lambda, GraphExtension{std::move(pairs), std::move(program)});
  }

  double lambda() const { return lambda_; }
  const Variant& variant() const { return variant_; }
  Eigen::Index dim() const {
    return std::visit(
        [](const auto& v) -> Eigen::Index {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, ExplicitLipschitz>) return v.dim;
          else if constexpr (std::is_same_v<T, LinearMatrix>) return v.m.rows();
          else return v.program->graph().dim();
        },
        variant_);
  }
  /// Largest admissible step: 1/lambda^+ (infinite when lambda <= 0).
  double max_step() const { return lambda_ > 0.0 ? 1.0 / lambda_ : std::numeric_limits<double>::infinity(); }

 private:
  OperatorSpec(double lambda, Variant v) : lambda_(lambda), variant_(std::move(v)) {}
  double lambda_;
  Variant variant_;
};

/// Mean of the d-blocks of x in R^{N d}.
inline Vector block_mean(const Vector& x, Eigen::Index d) {
  const Eigen::Index n = x.size() / d;
  return Eigen::Map<const Matrix>(x.data(), d, n).rowwise().mean();
}

/// Named permutation-invariant operators on R^{N d}.
inline OperatorSpec builtin(const std::string& name, Eigen::Index atoms, Eigen::Index d) {
  require(atoms > 0 && d > 0, "builtin operator: sizes must be positive");
  const Eigen::Index n = atoms * d;
  if (name == "neg_id")
    return OperatorSpec::explicit_map(-1.0, [](const Vector& x) -> Vector { return -x; }, 1.0, n, name);
  if (name == "centering") {
    // B(X) = -(X - mean X): minus an orthogonal projection.
    return OperatorSpec::explicit_map(
        0.0,
        [d](const Vector& x) -> Vector {
          Vector out = -x;
          const Vector m = block_mean(x, d);
          for (Eigen::Index i = 0; i < x.size() / d; ++i) out.segment(i * d, d) += m;
          return out;
        },
        1.0, n, name);
  }
  if (name == "componentwise_relu_neg")
    return OperatorSpec::explicit_map(
        0.0, [](const Vector& x) -> Vector { return -x.cwiseMax(0.0); }, 1.0, n, name);
  if (name == "meanfield") {
    // B(X)_i = -X_i + tanh(mean X).
    return OperatorSpec::explicit_map(
        0.0,
        [d](const Vector& x) -> Vector {
          Vector out = -x;
          const Vector m = block_mean(x, d).array().tanh().matrix();
          for (Eigen::Index i = 0; i < x.size() / d; ++i) out.segment(i * d, d) += m;
          return out;
        },
        2.0, n, name);
  }
  throw InputError("unknown builtin operator '" + name + "'");
}

inline Vector apply(const OperatorSpec& op, const Vector& x) {
  return std::visit(
      [&](const auto& v) -> Vector {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ExplicitLipschitz>) return v.map(x);
        else if constexpr (std::is_same_v<T, LinearMatrix>) return v.m * x;
        else throw InputError("graph operators are multivalued; use the resolvent");
      },
      op.variant());
}

struct IterationControl {
  double tolerance = 1e-10;
  std::size_t max_iterations = 1000000;
};

/// J_tau = (I - tau B)^{-1} with per-step setup done once.
class ResolventMap {
 public:
  ResolventMap(const OperatorSpec& op, double tau, IterationControl control = {})
      : op_(&op), tau_(tau), control_(control) {
    require(std::isfinite(tau) && tau > 0.0, "resolvent: tau must be positive");
    require(op.lambda() <= 0.0 || tau * op.lambda() < 1.0, "resolvent: tau must be below 1/lambda");
    if (const auto* lin = std::get_if<LinearMatrix>(&op.variant())) {
      const Eigen::Index n = lin->m.rows();
      lu_ = Eigen::PartialPivLU<Matrix>(Matrix::Identity(n, n) - tau * lin->m);
    }
  }

  double tau() const { return tau_; }

  Vector operator()(const Vector& y) const {
    require(y.size() == op_->dim(), "resolvent: dimension mismatch");
    require_finite(y, "resolvent input");
    const double lam = op_->lambda();
    return std::visit(
        [&](const auto& v) -> Vector {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, LinearMatrix>) {
            return lu_.solve(y);
          } else if constexpr (std::is_same_v<T, GraphExtension>) {
            const double shrink = 1.0 - lam * tau_;
            return v.program->resolvent(tau_ / shrink, y / shrink);
          } else {
            const double lip = v.lipschitz;
            double theta = (1.0 - tau_ * lam) / (1.0 - 2.0 * tau_ * lam + tau_ * tau_ * lip * lip);
            theta = std::min(theta, 1.0);
            const double scale = std::max(1.0, y.norm());
            Vector x = y;
            for (std::size_t it = 0; it < control_.max_iterations; ++it) {
              const Vector g = x - tau_ * v.map(x) - y;
              if (g.norm() <= control_.tolerance * scale) return x;
              x -= theta * g;
            }
            const double res = (x - tau_ * v.map(x) - y).norm();
            throw SolverError("resolvent fixed-point iteration did not converge", res);
          }
        },
        op_->variant());
  }

 private:
  const OperatorSpec* op_;
  double tau_;
  IterationControl control_;
  Eigen::PartialPivLU<Matrix> lu_;
};

inline Vector resolvent(const OperatorSpec& op, double tau, const Vector& y) {
  return ResolventMap(op, tau)(y);
}

/// B_tau = (J_tau - I)/tau.
inline Vector yosida(const OperatorSpec& op, double tau, const Vector& x) {
  return (resolvent(op, tau, x) - x) / tau;
}

struct MinimalSelection {
  /// B_tau(x) at the smallest step.
  Vector value;
  /// (1 - lambda tau_k) |B_{tau_k} x| along the schedule.
  std::vector<double> log;
  /// Log nondecreasing within the tolerance.
  bool monotone = true;
  /// |B_tau x| exceeded the cap: x is reported outside D(B).
  bool diverged = false;
};

inline MinimalSelection minimal_selection(const OperatorSpec& op, const Vector& x, const std::vector<double>& schedule,
                                          double divergence_cap = 1e6, double tolerance = 1e-8) {
  require(!schedule.empty(), "minimal_selection: empty schedule");
  for (std::size_t k = 0; k < schedule.size(); ++k) {
    require(schedule[k] > 0.0 && schedule[k] < op.max_step(), "minimal_selection: step outside (0, 1/lambda)");
    if (k > 0) require(schedule[k] < schedule[k - 1], "minimal_selection: schedule must decrease");
  }
  MinimalSelection out;
  for (double tau : schedule) {
    Vector b = yosida(op, tau, x);
    const double norm = b.norm();
    out.log.push_back((1.0 - op.lambda() * tau) * norm);
    if (out.log.size() > 1 && out.log.back() < out.log[out.log.size() - 2] - tolerance) out.monotone = false;
    if (norm > divergence_cap * (1.0 + x.norm())) out.diverged = true;
    out.value = std::move(b);
  }
  return out;
}

/// (J_{t/n})^n x0, optionally recording the n + 1 iterates.
inline Vector flow(const OperatorSpec& op, const Vector& x0, double t, std::size_t n,
                   std::vector<Vector>* trajectory = nullptr) {
  require(std::isfinite(t) && t >= 0.0, "flow: t must be nonnegative");
  require(n >= 1, "flow: n must be at least 1");
  if (trajectory) {
    trajectory->clear();
    trajectory->push_back(x0);
  }
  if (t == 0.0) {
    if (trajectory) trajectory->resize(n + 1, x0);
    return x0;
  }
  const double tau = t / static_cast<double>(n);
  require(op.lambda() <= 0.0 || tau * op.lambda() < 1.0, "flow: step t/n must be below 1/lambda");
  const ResolventMap step(op, tau);
  Vector x = x0;
  for (std::size_t k = 0; k < n; ++k) {
    x = step(x);
    if (trajectory) trajectory->push_back(x);
  }
  return x;
}

struct FlowEstimate {
  Vector value;
  /// |flow(2n) - flow(n)|, the truncation monitor.
  double cauchy = 0.0;
};

/// flow at 2n steps with the n -> 2n change as error bar.
inline FlowEstimate flow_with_monitor(const OperatorSpec& op, const Vector& x0, double t, std::size_t n) {
  const Vector coarse = flow(op, x0, t, n);
  FlowEstimate out;
  out.value = flow(op, x0, t, 2 * n);
  out.cauchy = (out.value - coarse).norm();
  return out;
}

/// Linear isometry of R^{N d} permuting d-blocks: (U x)_j = x_{g(j)}.
class BlockAction {
 public:
  BlockAction(mps::Permutation g, Eigen::Index d) : g_(std::move(g)), d_(d) {
    require(d > 0 && g_.size() > 0, "block action: sizes must be positive");
  }
  Eigen::Index atoms() const { return static_cast<Eigen::Index>(g_.size()); }
  Eigen::Index block_dim() const { return d_; }
  Eigen::Index dim() const { return atoms() * d_; }
  const mps::Permutation& permutation() const { return g_; }

  Vector operator()(const Vector& x) const {
    require(x.size() == dim(), "block action: dimension mismatch");
    Vector out(x.size());
    for (std::size_t j = 0; j < g_.size(); ++j)
      out.segment(static_cast<Eigen::Index>(j) * d_, d_) = x.segment(static_cast<Eigen::Index>(g_(j)) * d_, d_);
    return out;
  }

 private:
  mps::Permutation g_;
  Eigen::Index d_;
};

struct InvarianceReport {
  double resolvent = 0.0;
  double yosida = 0.0;
  double flow = 0.0;
  double worst() const { return std::max({resolvent, yosida, flow}); }
};

struct InvarianceSettings {
  double tau = 0.25;
  std::vector<double> times{0.5, 1.0};
  std::size_t steps = 64;
};

/// Largest commutation defect of J_tau, B_tau and S_t with the action.
inline InvarianceReport check_invariance_flow(const OperatorSpec& op, const BlockAction& action,
                                              const std::vector<Vector>& probes,
                                              const InvarianceSettings& settings = {}) {
  require(action.dim() == op.dim(), "check_invariance_flow: action and operator dimensions differ");
  InvarianceReport rep;
  const ResolventMap jt(op, settings.tau);
  for (const auto& x : probes) {
    const Vector ux = action(x);
    const Vector jx = jt(x);
    const Vector jux = jt(ux);
    rep.resolvent = std::max(rep.resolvent, (jux - action(jx)).norm());
    rep.yosida = std::max(rep.yosida, ((jux - ux) / settings.tau - action((jx - x) / settings.tau)).norm());
    for (double t : settings.times)
      rep.flow = std::max(rep.flow, (flow(op, ux, t, settings.steps) - action(flow(op, x, t, settings.steps))).norm());
  }
  return rep;
}

/// Canonical key of the empirical law of the rows of X (sorted rows, FNV-1a).
inline std::uint64_t law_id(const Matrix& rows) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(rows.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index c = 0; c < rows.cols(); ++c) {
      if (rows(a, c) < rows(b, c)) return true;
      if (rows(a, c) > rows(b, c)) return false;
    }
    return false;
  });
  std::uint64_t h = 14695981039346656037ULL;
  auto mix = [&](std::uint64_t word) {
    for (int byte = 0; byte < 8; ++byte) {
      h ^= (word >> (8 * byte)) & 0xFFu;
      h *= 1099511628211ULL;
    }
  };
  mix(static_cast<std::uint64_t>(rows.rows()));
  mix(static_cast<std::uint64_t>(rows.cols()));
  for (Eigen::Index r : order) {
    for (Eigen::Index c = 0; c < rows.cols(); ++c) {
      const double v = rows(r, c) == 0.0 ? 0.0 : rows(r, c);
      mix(std::bit_cast<std::uint64_t>(v));
    }
  }
  return h;
}

struct EulerEntry {
  Vector x;
  Vector value;
  std::uint64_t law = 0;
};

struct EulerTable {
  std::vector<EulerEntry> entries;
  double lipschitz = 0.0;

  void merge(const EulerTable& other) {
    entries.insert(entries.end(), other.entries.begin(), other.entries.end());
    lipschitz = std::max(lipschitz, other.lipschitz);
  }
};

/// Checks L(U x) = U L(x) on probes for adjacent transpositions and a cycle.
inline double permutation_defect(const VectorMap& map, Eigen::Index atoms, Eigen::Index d) {
  std::vector<mps::Permutation> gens;
  for (Eigen::Index i = 0; i + 1 < atoms; ++i) {
    std::vector<std::size_t> m(static_cast<std::size_t>(atoms));
    std::iota(m.begin(), m.end(), std::size_t{0});
    std::swap(m[static_cast<std::size_t>(i)], m[static_cast<std::size_t>(i + 1)]);
    gens.emplace_back(std::move(m));
  }
  std::vector<std::size_t> cyc(static_cast<std::size_t>(atoms));
  for (std::size_t j = 0; j < cyc.size(); ++j) cyc[j] = (j + 1) % cyc.size();
  gens.emplace_back(std::move(cyc));
  double worst = 0.0;
  for (const auto& x : make_probes(atoms * d, 8)) {
    const Vector lx = map(x);
    for (const auto& g : gens) {
      const BlockAction u(g, d);
      worst = std::max(worst, (map(u(x)) - u(lx)).norm());
    }
  }
  return worst;
}

/// Table {(X_i, (L X)_i)} of the pointwise representation of an invariant map.
inline EulerTable euler_map_extract(const VectorMap& map, double lipschitz, const mps::EmpiricalSample& sample,
                                    double tolerance = 1e-7) {
  const auto atoms = static_cast<Eigen::Index>(sample.atoms());
  const Eigen::Index d = sample.dim();
  const double defect = permutation_defect(map, atoms, d);
  if (defect > 1e-6)
    throw InvariantViolation("map is not invariant under block permutations (defect " + std::to_string(defect) + ")");
  Vector flat(atoms * d);
  for (Eigen::Index i = 0; i < atoms; ++i) flat.segment(i * d, d) = sample.values().row(i).transpose();
  const Vector image = map(flat);
  require(image.size() == flat.size(), "euler_map_extract: map changed the dimension");
  EulerTable table;
  table.lipschitz = lipschitz;
  const std::uint64_t id = law_id(sample.values());
  for (Eigen::Index i = 0; i < atoms; ++i)
    table.entries.push_back({flat.segment(i * d, d), image.segment(i * d, d), id});
  for (std::size_t i = 0; i < table.entries.size(); ++i) {
    for (std::size_t j = i + 1; j < table.entries.size(); ++j) {
      const auto& a = table.entries[i];
      const auto& b = table.entries[j];
      const double dx = (a.x - b.x).norm();
      const double dv = (a.value - b.value).norm();
      if (dx <= 1e-9 && dv > tolerance)
        throw InvariantViolation("representation is not well defined: atoms " + std::to_string(i) + " and " +
                                 std::to_string(j) + " share a value but not an image");
      if (dv > lipschitz * dx + tolerance)
        throw InvariantViolation("pointwise Lipschitz bound fails at atoms " + std::to_string(i) + " and " +
                                 std::to_string(j));
    }
  }
  return table;
}

inline EulerTable euler_map_extract(const OperatorSpec& op, const mps::EmpiricalSample& sample,
                                    double tolerance = 1e-7) {
  const auto* ex = std::get_if<ExplicitLipschitz>(&op.variant());
  require(ex != nullptr, "euler_map_extract needs an explicit Lipschitz operator");
  return euler_map_extract(ex->map, ex->lipschitz, sample, tolerance);
}

/// <l(x) - l(x'), x - x'> <= lambda |x - x'|^2 within one law.
inline bool check_dissipative_sections(const EulerTable& table, double lambda, double tolerance = 1e-7) {
  for (std::size_t i = 0; i < table.entries.size(); ++i) {
    for (std::size_t j = i + 1; j < table.entries.size(); ++j) {
      const auto& a = table.entries[i];
      const auto& b = table.entries[j];
      if (a.law != b.law) continue;
      const Vector dx = a.x - b.x;
      if ((a.value - b.value).dot(dx) > lambda * dx.squaredNorm() + tolerance) return false;
    }
  }
  return true;
}

}  // namespace invmono::dissipative
