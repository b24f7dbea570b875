#pragma once

// Experiment suites behind the command-line driver. Each suite reads a JSON
// config, runs its checks, and writes report.json plus CSV files into the
// output directory. Reports contain no timestamps or timings unless timing is
// requested, so equal configs and seeds give byte-identical output.

#include "invmono/dissipative.hpp"
#include "invmono/fitzpatrick.hpp"
#include "invmono/io.hpp"
#include "invmono/kirszbraun.hpp"
#include "invmono/mps.hpp"
#include "invmono/optkit.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace invmono::cli {

namespace fs = std::filesystem;
using io::Json;

enum ExitCode : int { kSuccess = 0, kCheckFailed = 1, kBadConfig = 2 };

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"extend-monotone", "kirszbraun", "coupling-approx", "evolve",
                                              "invariance-audit"};
  return names;
}

inline bool is_suite(const std::string& name) {
  for (const auto& s : suite_names())
    if (s == name) return true;
  return false;
}

struct Options {
  fs::path config;
  fs::path out;
  std::optional<std::uint64_t> seed;
  std::optional<double> tolerance;
  bool timing = false;
};

enum class LogLevel { debug, info, error };
using LogSink = std::function<void(LogLevel, const std::string&)>;

struct Check {
  std::string name;
  bool passed = true;
  double value = 0.0;
  double tolerance = 0.0;
};

/// Text formatting with '.' decimals and round-trip precision.
inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class Csv {
 public:
  explicit Csv(std::vector<std::string> header) : cols_(header.size()) { add(header); }
  void add(const std::vector<std::string>& cells) {
    if (cells.size() != cols_) throw std::logic_error("csv row width mismatch");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) text_ += ',';
      text_ += cells[i];
    }
    text_ += '\n';
  }
  const std::string& text() const { return text_; }

 private:
  std::size_t cols_;
  std::string text_;
};

struct SuiteResult {
  std::vector<Check> checks;
  Json results = Json::object();
  std::vector<std::pair<std::string, std::string>> csv;

  void check(std::string name, double value, double tolerance) {
    checks.push_back({std::move(name), value <= tolerance, value, tolerance});
  }
  void check_flag(std::string name, bool ok) { checks.push_back({std::move(name), ok, ok ? 0.0 : 1.0, 0.0}); }
  bool passed() const {
    for (const auto& c : checks)
      if (!c.passed) return false;
    return true;
  }
};

struct Context {
  Json config;
  fs::path base;
  std::uint64_t seed = 0;
  double tolerance = 1e-6;
  bool timing = false;
  LogSink log;

  /// Inline object, or a path (relative to the config file) to a JSON file.
  Json input(const char* key) const {
    const Json& j = io::field(config, key);
    if (j.is_string()) return io::read_file(base / j.get<std::string>());
    return j;
  }
  bool has(const char* key) const { return config.contains(key); }
  double number(const char* key, double fallback) const {
    return has(key) ? io::to_number(config.at(key), key) : fallback;
  }
  std::size_t count(const char* key, std::size_t fallback) const {
    if (!has(key)) return fallback;
    const double v = io::to_number(config.at(key), key);
    if (v < 0 || v != std::floor(v)) throw InputError(std::string(key) + " must be a nonnegative integer");
    return static_cast<std::size_t>(v);
  }
};

inline Vector normal_vector(std::mt19937_64& rng, Eigen::Index d, double scale = 1.0) {
  std::normal_distribution<double> normal;
  Vector v(d);
  for (Eigen::Index i = 0; i < d; ++i) v[i] = scale * normal(rng);
  return v;
}

inline Vector dirichlet_weights(std::mt19937_64& rng, std::size_t n) {
  std::exponential_distribution<double> expo(1.0);
  Vector w(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = expo(rng);
  return w / w.sum();
}

inline double diameter(const std::vector<Vector>& pts) {
  double d = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) d = std::max(d, (pts[i] - pts[j]).norm());
  return d;
}

inline std::vector<std::string> vector_header(const std::string& prefix, Eigen::Index d) {
  std::vector<std::string> h;
  for (Eigen::Index i = 0; i < d; ++i) h.push_back(prefix + std::to_string(i));
  return h;
}

inline void append(std::vector<std::string>& row, const Vector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) row.push_back(num(v[i]));
}

// ---------------------------------------------------------------------------

inline SuiteResult run_extend_monotone(const Context& ctx) {
  auto graph = io::graph_from_json(ctx.input("graph"));
  std::optional<fitzpatrick::IsometryGroup> group;
  if (ctx.has("group")) {
    group = io::group_from_json(ctx.input("group"));
    if (!fitzpatrick::check_invariance(graph, *group)) graph = fitzpatrick::saturate_orbit(graph, *group);
  }
  const double tau = ctx.number("tau", 1.0);
  require(tau > 0.0, "tau must be positive");
  const fitzpatrick::ExtensionProgram program(graph, fitzpatrick::KernelPsi{2.0}, group);
  const Eigen::Index d = graph.dim();
  const auto domain = graph.domain_points();
  const double diam = std::max(diameter(domain), 1.0);
  std::mt19937_64 rng(ctx.seed);
  SuiteResult out;
  const double tol = ctx.tolerance;

  double contact = 0.0, identity = 0.0;
  for (const auto& p : graph.pairs()) {
    contact = std::max(contact, std::abs(program.rf_eval(p.x, p.v).value() - p.v.dot(p.x)));
    identity = std::max(identity, (program.resolvent(tau, p.x + tau * p.v) - p.x).norm());
  }
  out.check("contact_on_graph", contact, tol);
  out.check("resolvent_graph_identity", identity, tol);

  const std::size_t nrand = ctx.count("random_queries", 100);
  const double far = ctx.number("far_factor", 10.0);
  double confinement = 0.0;
  for (std::size_t q = 0; q < nrand; ++q) {
    const Vector y = normal_vector(rng, d, far * diam / std::sqrt(static_cast<double>(d)));
    confinement = std::max(confinement, optkit::hull_membership(program.resolvent(tau, y), domain, tol).residual);
  }
  double sandwich = 0.0;
  double vscale = 1.0;
  for (const auto& p : graph.pairs()) vscale = std::max(vscale, p.v.norm());
  for (std::size_t q = 0; q < nrand; ++q) {
    const Vector w = dirichlet_weights(rng, graph.size());
    Vector x = Vector::Zero(d);
    for (std::size_t k = 0; k < graph.size(); ++k) x += w[static_cast<Eigen::Index>(k)] * graph[k].x;
    const Vector v = normal_vector(rng, d, vscale);
    const Extended rf = program.rf_eval(x, v);
    if (rf.is_infinite()) {
      sandwich = std::max(sandwich, 1.0);
      continue;
    }
    sandwich = std::max(sandwich, fitzpatrick::fitzpatrick_eval(graph, x, v) - rf.value());
    const Extended pa = fitzpatrick::penot_eval(graph, v, x);
    if (pa.is_finite()) sandwich = std::max(sandwich, rf.value() - pa.value());
  }
  out.check("sandwich", sandwich, tol);

  Csv csv([&] {
    auto h = vector_header("y", d);
    auto hx = vector_header("x", d);
    h.insert(h.end(), hx.begin(), hx.end());
    h.insert(h.begin(), "index");
    h.push_back("contact_gap");
    return h;
  }());
  Json values = Json::array();
  if (ctx.has("queries")) {
    const Matrix queries = io::to_matrix(ctx.config.at("queries"), "queries", d);
    std::optional<Matrix> expected;
    if (ctx.has("expected")) expected = io::to_matrix(ctx.config.at("expected"), "expected", d);
    require(!expected || expected->rows() == queries.rows(), "expected must match queries");
    double deviation = 0.0, conf = 0.0;
    for (Eigen::Index q = 0; q < queries.rows(); ++q) {
      const Vector y = queries.row(q).transpose();
      const auto r = program.resolvent_detailed(tau, y);
      conf = std::max(conf, optkit::hull_membership(r.x, domain, tol).residual);
      if (expected) deviation = std::max(deviation, (r.x - expected->row(q).transpose()).norm());
      std::vector<std::string> row{std::to_string(q)};
      append(row, y);
      append(row, r.x);
      row.push_back(num(r.contact_gap));
      csv.add(row);
      values.push_back(Json{{"y", io::from_vector(y)}, {"x", io::from_vector(r.x)}, {"contact_gap", r.contact_gap}});
    }
    confinement = std::max(confinement, conf);
    if (expected) out.check("expected_resolvent_values", deviation, tol);
  }
  out.check("domain_confinement", confinement, tol);

  if (group) {
    double equiv = 0.0;
    const std::size_t ny = ctx.count("equivariance_queries", 50);
    for (std::size_t q = 0; q < ny; ++q) {
      const Vector y = normal_vector(rng, d, diam);
      const Vector jy = program.resolvent(tau, y);
      for (const auto& u : group->elements()) equiv = std::max(equiv, (program.resolvent(tau, u * y) - u * jy).norm());
    }
    out.check("group_equivariance", equiv, tol);
  }
  out.results["graph_pairs"] = graph.size();
  out.results["tau"] = tau;
  out.results["resolvent"] = std::move(values);
  out.csv.emplace_back("resolvent.csv", csv.text());
  return out;
}

inline SuiteResult run_kirszbraun(const Context& ctx) {
  const auto data = io::lipschitz_from_json(ctx.input("data"));
  const kirszbraun::CayleyExtension cayley(data);
  const Eigen::Index d = data.dim();
  const double L = data.lipschitz();
  std::mt19937_64 rng(ctx.seed);
  SuiteResult out;
  const double tol = ctx.tolerance;

  double interp_alm = 0.0, interp_cay = 0.0, simplex = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto a = kirszbraun::alm_extend_detailed(data, data.sites()[i]);
    interp_alm = std::max(interp_alm, (a.value - data.values()[i]).norm());
    interp_cay = std::max(interp_cay, (cayley(data.sites()[i]) - data.values()[i]).norm());
  }
  out.check("interpolation_alm", interp_alm, tol);
  out.check("interpolation_cayley", interp_cay, tol);

  Vector center = Vector::Zero(d);
  for (const auto& y : data.sites()) center += y / static_cast<double>(data.size());
  const double scale = std::max(diameter(data.sites()), 1.0) * ctx.number("query_scale", 1.0);
  const std::size_t npairs = ctx.count("random_pairs", 200);
  std::vector<Vector> points;
  for (std::size_t q = 0; q < 2 * npairs; ++q) points.push_back(center + normal_vector(rng, d, scale));
  std::vector<Vector> alm_vals, cay_vals;
  for (const auto& x : points) {
    const auto a = kirszbraun::alm_extend_detailed(data, x);
    simplex = std::max({simplex, std::abs(a.report.x.sum() - 1.0), -a.report.x.minCoeff()});
    alm_vals.push_back(a.value);
    cay_vals.push_back(cayley(x));
  }
  // Ratio excess over L (1 + 1e-6); query pairs plus site/query pairs.
  auto excess = [&](const std::vector<Vector>& vals) {
    double worst = -1.0;
    for (std::size_t q = 0; q < npairs; ++q) {
      const double dx = (points[2 * q] - points[2 * q + 1]).norm();
      worst = std::max(worst, (vals[2 * q] - vals[2 * q + 1]).norm() - L * dx * (1.0 + 1e-6));
    }
    for (std::size_t q = 0; q < points.size(); ++q)
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double dx = (points[q] - data.sites()[i]).norm();
        worst = std::max(worst, (vals[q] - data.values()[i]).norm() - L * dx * (1.0 + 1e-6));
      }
    return std::max(worst, 0.0);
  };
  out.check("lipschitz_alm", excess(alm_vals), 1e-12);
  out.check("lipschitz_cayley", excess(cay_vals), 1e-12);
  out.check("alm_weights_on_simplex", simplex, 1e-10);

  Csv csv([&] {
    std::vector<std::string> h{"index"};
    for (const auto& part : {vector_header("x", d), vector_header("alm", d), vector_header("cayley", d)})
      h.insert(h.end(), part.begin(), part.end());
    return h;
  }());
  Json values = Json::array();
  if (ctx.has("queries")) {
    const Matrix queries = io::to_matrix(ctx.config.at("queries"), "queries", d);
    for (Eigen::Index q = 0; q < queries.rows(); ++q) {
      const Vector x = queries.row(q).transpose();
      const Vector a = kirszbraun::alm_extend(data, x);
      const Vector c = cayley(x);
      std::vector<std::string> row{std::to_string(q)};
      append(row, x);
      append(row, a);
      append(row, c);
      csv.add(row);
      values.push_back(Json{{"x", io::from_vector(x)}, {"alm", io::from_vector(a)}, {"cayley", io::from_vector(c)}});
    }
  }
  out.results["L"] = L;
  out.results["lip_constant"] = kirszbraun::lip_constant(data.sites(), data.values());
  out.results["extension"] = std::move(values);
  out.csv.emplace_back("extension.csv", csv.text());
  return out;
}

inline SuiteResult run_coupling_approx(const Context& ctx) {
  const auto b = io::coupling_from_json(ctx.input("coupling"));
  const Eigen::Index n = b.order();
  std::vector<std::size_t> ks{1, 2, 4, 8};
  if (ctx.has("K")) {
    ks.clear();
    const Json& jk = ctx.config.at("K");
    require(jk.is_array() && !jk.empty(), "K must be a nonempty array");
    for (const auto& k : jk) {
      const double v = io::to_number(k, "K");
      require(v >= 1 && v == std::floor(v), "K entries must be positive integers");
      ks.push_back(static_cast<std::size_t>(v));
    }
  }
  Matrix z(n, 1), zp(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) z(i, 0) = zp(i, 0) = static_cast<double>(i);
  if (ctx.has("Z")) z = io::to_matrix(ctx.config.at("Z"), "Z");
  if (ctx.has("Zprime")) zp = io::to_matrix(ctx.config.at("Zprime"), "Zprime");
  require(z.rows() == n && zp.rows() == n, "Z and Zprime need one row per coupling index");

  SuiteResult out;
  Csv csv({"K", "discrepancy", "runtime_ms"});
  double bound = 0.0, exact = 0.0, increase = 0.0;
  std::optional<double> previous;
  Json rows = Json::array();
  for (std::size_t k : ks) {
    const auto start = std::chrono::steady_clock::now();
    const auto sigma = mps::approx_coupling(b, k);
    const double disc = mps::coupling_discrepancy(sigma, b, z, zp);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    const double nk = static_cast<double>(n) * static_cast<double>(k);
    const Matrix target = b.matrix() * nk;
    const Matrix err = mps::count_matrix(sigma, static_cast<std::size_t>(n)) - target;
    bound = std::max(bound, err.cwiseAbs().maxCoeff());
    if ((target - target.array().round().matrix()).cwiseAbs().maxCoeff() <= 1e-9)
      exact = std::max(exact, err.cwiseAbs().maxCoeff());
    if (previous) increase = std::max(increase, disc - *previous);
    previous = disc;
    csv.add({std::to_string(k), num(disc), ctx.timing ? num(ms) : std::string{}});
    rows.push_back(Json{{"K", k}, {"discrepancy", disc}});
  }
  out.check("count_matrix_bound", bound, 1.0 + 1e-9);
  out.check("exact_when_integral", exact, 1e-9);
  out.check("discrepancy_nonincreasing", increase, 1e-9);
  out.results["order"] = n;
  out.results["sweep"] = std::move(rows);
  out.csv.emplace_back("discrepancy.csv", csv.text());
  return out;
}

inline SuiteResult run_evolve(const Context& ctx) {
  const auto op = io::operator_from_json(ctx.input("operator"));
  const Vector x0 = io::to_vector(io::field(ctx.config, "x0"), "x0");
  require(x0.size() == op.dim(), "x0 has the wrong dimension");
  const double t = ctx.number("t", 1.0);
  const std::size_t n = ctx.count("n", 1024);
  require(n >= 1, "n must be positive");
  const auto block = static_cast<Eigen::Index>(ctx.count("block_dim", static_cast<std::size_t>(op.dim())));
  require(block >= 1 && op.dim() % block == 0, "block_dim must divide the operator dimension");
  const std::size_t every = std::max<std::size_t>(1, ctx.count("record_every", std::max<std::size_t>(1, n / 16)));
  std::mt19937_64 rng(ctx.seed);
  SuiteResult out;

  std::vector<Vector> traj;
  const Vector xn = dissipative::flow(op, x0, t, n, &traj);
  const Vector x2n = dissipative::flow(op, x0, t, 2 * n);
  const double cauchy = (x2n - xn).norm();
  out.check("cauchy_monitor", cauchy, ctx.number("cauchy_tolerance", 1e-2) * (1.0 + x0.norm()));

  // Contraction against a perturbed start at 2n steps; the n -> 2n changes of
  // both trajectories bound the surrogate error.
  const Vector y0 = x0 + normal_vector(rng, x0.size(), 0.5);
  const Vector yn = dissipative::flow(op, y0, t, n);
  const Vector y2n = dissipative::flow(op, y0, t, 2 * n);
  const double lam = op.lambda();
  const double growth = (x2n - y2n).norm() - std::exp(lam * t) * (x0 - y0).norm() - cauchy - (y2n - yn).norm();
  out.check("contraction", std::max(growth, 0.0), ctx.tolerance);

  const bool in_domain = ctx.has("in_domain") ? ctx.config.at("in_domain").get<bool>()
                                              : !std::holds_alternative<dissipative::GraphExtension>(op.variant());
  if (in_domain) {
    std::vector<double> schedule;
    for (double tau = 0.5; tau >= std::ldexp(1.0, -10); tau /= 2.0)
      if (tau < op.max_step()) schedule.push_back(tau);
    const auto ms = dissipative::minimal_selection(op, x0, schedule);
    double drop = 0.0;
    for (std::size_t k = 1; k < ms.log.size(); ++k) drop = std::max(drop, ms.log[k - 1] - ms.log[k]);
    out.check("yosida_log_nondecreasing", drop, 1e-8);
    Json log = Json::array();
    for (double v : ms.log) log.push_back(v);
    out.results["yosida_log"] = std::move(log);
  }

  Csv csv([&] {
    std::vector<std::string> h{"t", "index"};
    auto c = vector_header("x", block);
    h.insert(h.end(), c.begin(), c.end());
    return h;
  }());
  const double dt = t / static_cast<double>(n);
  for (std::size_t k = 0; k < traj.size(); k += every) {
    for (Eigen::Index i = 0; i < op.dim() / block; ++i) {
      std::vector<std::string> row{num(dt * static_cast<double>(k)), std::to_string(i)};
      append(row, traj[k].segment(i * block, block));
      csv.add(row);
    }
  }
  if ((traj.size() - 1) % every != 0) {
    for (Eigen::Index i = 0; i < op.dim() / block; ++i) {
      std::vector<std::string> row{num(t), std::to_string(i)};
      append(row, traj.back().segment(i * block, block));
      csv.add(row);
    }
  }
  out.results["lambda"] = lam;
  out.results["final"] = io::from_vector(xn);
  out.results["cauchy"] = cauchy;
  out.csv.emplace_back("trajectory.csv", csv.text());
  return out;
}

inline SuiteResult run_invariance_audit(const Context& ctx) {
  const Json opj = ctx.input("operator");
  const auto op = io::operator_from_json(opj);
  const auto* ex = std::get_if<dissipative::ExplicitLipschitz>(&op.variant());
  require(ex != nullptr, "invariance-audit needs a builtin or explicit operator");
  const Eigen::Index d = io::to_dim(opj);
  const Eigen::Index atoms = op.dim() / d;
  require(atoms > 0 && (atoms & (atoms - 1)) == 0, "invariance-audit needs a power-of-two atom count");
  const int level = std::countr_zero(static_cast<std::uint64_t>(atoms));
  std::mt19937_64 rng(ctx.seed);
  SuiteResult out;
  const double tol = ctx.tolerance;

  // Sample with repeated rows so that well-definedness is exercised.
  Matrix values(atoms, d);
  if (ctx.has("sample")) {
    const auto s = io::sample_from_json(ctx.input("sample"));
    require(s.level() == level && s.dim() == d, "sample does not match the operator shape");
    values = s.values();
  } else {
    const Eigen::Index distinct = std::max<Eigen::Index>(1, atoms / 2);
    Matrix base(distinct, d);
    for (Eigen::Index i = 0; i < distinct; ++i) base.row(i) = normal_vector(rng, d).transpose();
    for (Eigen::Index i = 0; i < atoms; ++i) values.row(i) = base.row(i % distinct);
  }
  const mps::EmpiricalSample sample(mps::DyadicSpace(level), values);

  dissipative::InvarianceSettings settings;
  settings.tau = ctx.number("tau", 0.25);
  settings.steps = ctx.count("steps", 64);
  const auto probes = dissipative::make_probes(op.dim(), ctx.count("probes", dissipative::kProbeCount),
                                               ctx.has("probe_seed") ? ctx.count("probe_seed", 0) : dissipative::kProbeSeed);
  const std::size_t nperm = ctx.count("permutations", 8);
  double invariance = 0.0;
  std::vector<std::size_t> perm(static_cast<std::size_t>(atoms));
  for (std::size_t p = 0; p < nperm; ++p) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    const dissipative::BlockAction act(mps::Permutation(perm), d);
    invariance = std::max(invariance, dissipative::check_invariance_flow(op, act, probes, settings).worst());
  }
  out.check("flow_invariance", invariance, tol);

  bool well_defined = true;
  std::string failure;
  dissipative::EulerTable table;
  try {
    table = dissipative::euler_map_extract(op, sample);
  } catch (const InvariantViolation& e) {
    well_defined = false;
    failure = e.what();
  }
  out.check_flag("euler_well_defined_and_lipschitz", well_defined);
  if (well_defined) out.check_flag("dissipative_sections", dissipative::check_dissipative_sections(table, op.lambda()));

  // Resolvent tables for this law and for a shifted law.
  const dissipative::ResolventMap jt(op, settings.tau);
  const double jlip = 1.0 / (1.0 - std::max(op.lambda(), 0.0) * settings.tau);
  const dissipative::VectorMap jmap = [&](const Vector& x) { return jt(x); };
  bool resolvent_ok = true;
  try {
    table.merge(dissipative::euler_map_extract(jmap, jlip, sample));
    Matrix shifted = values;
    shifted.col(0).array() += 1.0;
    table.merge(dissipative::euler_map_extract(jmap, jlip, mps::EmpiricalSample(sample.space(), shifted)));
  } catch (const InvariantViolation& e) {
    resolvent_ok = false;
    failure = e.what();
  }
  out.check_flag("resolvent_representation", resolvent_ok);

  // Law alignment: X' = X o h, g aligns X' back to X, and J commutes with g.
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto xp = sample.compose(mps::Permutation(perm));
  const auto g = mps::align_same_law(sample, xp);
  const auto aligned = xp.compose(g);
  auto flatten = [&](const mps::EmpiricalSample& s) {
    Vector f(atoms * d);
    for (Eigen::Index i = 0; i < atoms; ++i) f.segment(i * d, d) = s.values().row(i).transpose();
    return f;
  };
  const dissipative::BlockAction ga(g, d);
  const double align_res = std::max((flatten(aligned) - flatten(sample)).cwiseAbs().maxCoeff(),
                                    (jt(flatten(aligned)) - ga(jt(flatten(xp)))).norm());
  out.check("law_alignment_commutes", align_res, tol);

  Csv csv([&] {
    std::vector<std::string> h{"law", "index"};
    for (const auto& part : {vector_header("x", d), vector_header("value", d)}) h.insert(h.end(), part.begin(), part.end());
    return h;
  }());
  for (std::size_t i = 0; i < table.entries.size(); ++i) {
    const auto& e = table.entries[i];
    std::vector<std::string> row{std::to_string(e.law), std::to_string(i)};
    append(row, e.x);
    append(row, e.value);
    csv.add(row);
  }
  if (!failure.empty()) out.results["failure"] = failure;
  out.results["operator"] = ex->name;
  out.results["atoms"] = atoms;
  out.results["law_id"] = std::to_string(dissipative::law_id(sample.values()));
  out.csv.emplace_back("euler_table.csv", csv.text());
  return out;
}

// ---------------------------------------------------------------------------

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

/// Runs one suite end to end; returns the process exit code.
inline int run(const std::string& suite, const Options& opts, const LogSink& log = {}) {
  auto say = [&](LogLevel lvl, const std::string& msg) {
    if (log) log(lvl, msg);
  };
  if (!is_suite(suite)) {
    say(LogLevel::error, "unknown suite '" + suite + "'");
    return kBadConfig;
  }
  Context ctx;
  try {
    ctx.config = io::read_file(opts.config);
    if (!ctx.config.is_object() || ctx.config.empty()) throw InputError(opts.config.string() + ": empty config");
    if (ctx.config.contains("suite") && ctx.config.at("suite") != suite)
      throw InputError("config is for suite '" + ctx.config.at("suite").dump() + "', not '" + suite + "'");
    ctx.base = opts.config.parent_path();
    ctx.seed = opts.seed ? *opts.seed : ctx.count("seed", 0);
    ctx.tolerance = opts.tolerance ? *opts.tolerance : ctx.number("tolerance", 1e-6);
    ctx.timing = opts.timing;
    ctx.log = log;
  } catch (const io::ParseError& e) {
    say(LogLevel::error, std::string(e.what()) + " (line " + std::to_string(e.line()) + ", column " +
                             std::to_string(e.column()) + ")");
    return kBadConfig;
  } catch (const std::exception& e) {
    say(LogLevel::error, e.what());
    return kBadConfig;
  }

  SuiteResult result;
  try {
    say(LogLevel::info, "running " + suite + " with seed " + std::to_string(ctx.seed));
    if (suite == "extend-monotone") result = run_extend_monotone(ctx);
    else if (suite == "kirszbraun") result = run_kirszbraun(ctx);
    else if (suite == "coupling-approx") result = run_coupling_approx(ctx);
    else if (suite == "evolve") result = run_evolve(ctx);
    else result = run_invariance_audit(ctx);
  } catch (const io::ParseError& e) {
    say(LogLevel::error, e.what());
    return kBadConfig;
  } catch (const InputError& e) {
    say(LogLevel::error, e.what());
    return kBadConfig;
  } catch (const InvariantViolation& e) {
    say(LogLevel::error, e.what());
    return kBadConfig;
  } catch (const std::exception& e) {
    result.checks.push_back({"solver", false, 1.0, 0.0});
    result.results["error"] = e.what();
    say(LogLevel::error, e.what());
  }

  Json report;
  report["suite"] = suite;
  report["seed"] = ctx.seed;
  report["tolerance"] = ctx.tolerance;
  Json checks = Json::array();
  for (const auto& c : result.checks) {
    checks.push_back(Json{{"name", c.name}, {"passed", c.passed}, {"value", c.value}, {"tolerance", c.tolerance}});
    say(c.passed ? LogLevel::debug : LogLevel::error,
        std::string(c.passed ? "pass " : "FAIL ") + c.name + " value " + num(c.value) + " tolerance " + num(c.tolerance));
  }
  report["checks"] = std::move(checks);
  report["passed"] = result.passed();
  report["results"] = std::move(result.results);
  Json files = Json::array();
  for (const auto& [name, text] : result.csv) files.push_back(name);
  report["csv"] = std::move(files);

  fs::create_directories(opts.out);
  write_text(opts.out / "report.json", report.dump(2) + "\n");
  for (const auto& [name, text] : result.csv) write_text(opts.out / name, text);
  for (const auto& c : result.checks)
    if (!c.passed) say(LogLevel::error, "invariant violated: " + c.name);
  return result.passed() ? kSuccess : kCheckFailed;
}

/// Manifest {"suites": [{"suite": name, "config": path}, ...]}; each suite
/// writes into out/<index>-<suite>.
inline int run_all(const Options& opts, const LogSink& log = {}) {
  Json manifest;
  try {
    manifest = io::read_file(opts.config);
    const Json& list = io::field(manifest, "suites");
    if (!list.is_array() || list.empty()) throw InputError("suites must be a nonempty array");
    for (const auto& entry : list) {
      const std::string name = io::field(entry, "suite").get<std::string>();
      if (!is_suite(name)) throw InputError("unknown suite '" + name + "'");
      io::field(entry, "config");
    }
  } catch (const std::exception& e) {
    if (log) log(LogLevel::error, e.what());
    return kBadConfig;
  }
  int worst = kSuccess;
  Json summary = Json::array();
  std::size_t index = 0;
  for (const auto& entry : manifest.at("suites")) {
    const std::string name = entry.at("suite").get<std::string>();
    Options sub = opts;
    sub.config = opts.config.parent_path() / entry.at("config").get<std::string>();
    sub.out = opts.out / (std::to_string(index++) + "-" + name);
    const int code = run(name, sub, log);
    worst = std::max(worst, code);
    summary.push_back(Json{{"suite", name}, {"directory", sub.out.filename().string()}, {"exit", code}});
  }
  fs::create_directories(opts.out);
  write_text(opts.out / "summary.json", Json{{"suites", summary}, {"passed", worst == kSuccess}}.dump(2) + "\n");
  return worst;
}

}  // namespace invmono::cli
