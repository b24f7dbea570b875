#include "catch_amalgamated.hpp"

#include "invmono/mps.hpp"
#include "oracles.hpp"

#include <cmath>
#include <random>

using namespace invmono;
using namespace invmono::mps;
using Catch::Approx;

namespace {

Matrix column(std::initializer_list<double> v) { return make_vector(v); }

/// Mixture of random permutations with weights that are multiples of 1/denominator.
DoublyStochastic random_coupling(std::mt19937_64& rng, std::size_t n, int denominator, int terms) {
  std::vector<std::pair<double, Permutation>> mix;
  std::vector<int> cuts;
  std::uniform_int_distribution<int> cut(0, denominator);
  for (int k = 0; k + 1 < terms; ++k) cuts.push_back(cut(rng));
  cuts.push_back(0);
  cuts.push_back(denominator);
  std::sort(cuts.begin(), cuts.end());
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    if (cuts[k + 1] == cuts[k]) continue;
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    std::shuffle(p.begin(), p.end(), rng);
    mix.emplace_back(static_cast<double>(cuts[k + 1] - cuts[k]) / denominator, Permutation(p));
  }
  return DoublyStochastic::mixture(mix);
}

/// Mixture with real weights (generally not rational with small denominators).
DoublyStochastic random_real_coupling(std::mt19937_64& rng, std::size_t n) {
  std::exponential_distribution<double> e;
  std::vector<std::pair<double, Permutation>> mix;
  double total = 0.0;
  for (int k = 0; k < 4; ++k) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    std::shuffle(p.begin(), p.end(), rng);
    const double w = e(rng);
    total += w;
    mix.emplace_back(w, Permutation(p));
  }
  for (auto& t : mix) t.first /= total;
  return DoublyStochastic::mixture(mix);
}

double brute_wasserstein(double p, const Matrix& a, const Matrix& b) {
  const auto n = static_cast<std::size_t>(a.rows());
  double best = std::numeric_limits<double>::infinity();
  for (const auto& perm : oracle::all_permutations(n)) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      acc += std::pow((a.row(static_cast<Eigen::Index>(i)) - b.row(static_cast<Eigen::Index>(perm[i]))).norm(), p);
    best = std::min(best, acc / static_cast<double>(n));
  }
  return std::pow(best, 1.0 / p);
}

Matrix random_points(std::mt19937_64& rng, Eigen::Index n, Eigen::Index d) {
  std::normal_distribution<double> g;
  return Matrix::NullaryExpr(n, d, [&] { return g(rng); });
}

}  // namespace

TEST_CASE("permutations", "[mps]") {
  const Permutation p({2, 0, 1});
  CHECK(p.compose(p.inverse()).is_identity());
  CHECK(p.compose(p) == Permutation({1, 2, 0}));
  CHECK(p.matrix()(0, 2) == 1.0);
  CHECK_THROWS_AS(Permutation({0, 0, 1}), InputError);
  CHECK_THROWS_AS(Permutation({0, 3}), InputError);
}

TEST_CASE("dyadic space and samples", "[mps]") {
  CHECK(DyadicSpace(3).atoms() == 8);
  CHECK_THROWS_AS(DyadicSpace(21), CapacityError);
  CHECK_THROWS_AS(DyadicSpace(-1), InputError);
  CHECK_THROWS_AS(EmpiricalSample(DyadicSpace(1), column({1, 2, 3})), InputError);
  const EmpiricalSample x(DyadicSpace(1), column({0, 2}));
  const auto r = x.refine(2);
  CHECK(r.atoms() == 8);
  CHECK(r.values()(3, 0) == 0.0);
  CHECK(r.values()(4, 0) == 2.0);
  CHECK(x.compose(Permutation({1, 0})).values()(0, 0) == 2.0);
}

TEST_CASE("coarsening", "[mps]") {
  const EmpiricalSample x(DyadicSpace(1), column({0, 2}));
  CHECK(coarsen(x, 0).values() == column({1, 1}));
  CHECK(coarsen(x, 1).values() == x.values());
  CHECK_THROWS_AS(coarsen(x, 2), InputError);
  const EmpiricalSample y(DyadicSpace(3), column({1, 2, 3, 4, 5, 6, 7, 8}));
  CHECK(coarsen(y, 0).values() == Matrix::Constant(8, 1, 4.5));
  CHECK(coarsen(y, 2).values() == column({1.5, 1.5, 3.5, 3.5, 5.5, 5.5, 7.5, 7.5}));
}

TEST_CASE("lifting block permutations", "[mps]") {
  CHECK(lift_permutation(Permutation::identity(2), 3).is_identity());
  CHECK(lift_permutation(Permutation({1, 0}), 2) == Permutation({2, 3, 0, 1}));
  const Permutation s({3, 1, 0, 2});
  CHECK(lift_permutation(s, 2) == s);
  CHECK_THROWS_AS(lift_permutation(Permutation::identity(4), 1), InputError);
}

TEST_CASE("coarsening commutes with lifted permutations", "[mps][property]") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int m = 4, k = 1 + trial % 3;
    const EmpiricalSample x(DyadicSpace(m), random_points(rng, 16, 2));
    std::vector<std::size_t> s(std::size_t{1} << k);
    std::iota(s.begin(), s.end(), std::size_t{0});
    std::shuffle(s.begin(), s.end(), rng);
    const Permutation sigma(s);
    const auto g = lift_permutation(sigma, m);
    const Matrix lhs = coarsen(x.compose(g), k).values();
    const Matrix rhs = coarsen(x, k).compose(g).values();
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-14);
  }
}

TEST_CASE("doubly stochastic validation", "[mps]") {
  CHECK_THROWS_AS(DoublyStochastic::create(Matrix::Identity(2, 2)), InputError);
  CHECK_THROWS_AS(DoublyStochastic::create((Matrix(2, 2) << 0.6, -0.1, -0.1, 0.6).finished()), InputError);
  CHECK_NOTHROW(DoublyStochastic::create(Matrix::Identity(3, 3) / 3.0));
}

TEST_CASE("Hungarian method matches enumeration", "[mps][oracle]") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const Eigen::Index n = 1 + trial % 6;
    const Matrix c = random_points(rng, n, n).cwiseAbs();
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : oracle::all_permutations(static_cast<std::size_t>(n))) {
      double acc = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) acc += c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p[i]));
      best = std::min(best, acc);
    }
    CHECK(hungarian(c).cost == Approx(best).margin(1e-12));
  }
}

TEST_CASE("approx_coupling examples", "[mps]") {
  const auto diag = DoublyStochastic::create(Matrix::Identity(3, 3) / 3.0);
  for (std::size_t k : {1u, 2u, 5u}) {
    const auto s = approx_coupling(diag, k);
    CHECK(count_matrix(s, 3) == static_cast<double>(k) * Matrix::Identity(3, 3));
  }
  const auto uni = DoublyStochastic::create(Matrix::Constant(2, 2, 0.25));
  CHECK(count_matrix(approx_coupling(uni, 2), 2) == Matrix::Ones(2, 2));
  const auto b = DoublyStochastic::create((Matrix(2, 2) << 0.375, 0.125, 0.125, 0.375).finished());
  CHECK(count_matrix(approx_coupling(b, 4), 2) == (Matrix(2, 2) << 3, 1, 1, 3).finished());
  CHECK_THROWS_AS(approx_coupling(b, 0), InputError);
}

TEST_CASE("count-matrix bound and exactness", "[mps][property]") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + trial % 4;
    const auto b = trial % 2 ? random_real_coupling(rng, n) : random_coupling(rng, n, 12, 3);
    for (std::size_t k : {1u, 2u, 4u, 8u}) {
      const auto s = approx_coupling(b, k);
      REQUIRE(s.size() == n * k);
      const Matrix target = b.matrix() * static_cast<double>(n * k);
      const Matrix err = count_matrix(s, n) - target;
      CHECK(err.cwiseAbs().maxCoeff() <= 1.0 + 1e-9);
      if ((target - target.array().round().matrix()).cwiseAbs().maxCoeff() <= 1e-9)
        CHECK(err.cwiseAbs().maxCoeff() <= 1e-9);
    }
  }
}

TEST_CASE("coupling discrepancy", "[mps]") {
  const auto uni = DoublyStochastic::create(Matrix::Constant(2, 2, 0.25));
  const Matrix z = column({0, 1});
  CHECK(coupling_discrepancy(approx_coupling(uni, 1), uni, z, z) == Approx(1.0 / std::sqrt(2.0)).margin(1e-12));
  for (std::size_t k : {2u, 4u, 8u}) CHECK(coupling_discrepancy(approx_coupling(uni, k), uni, z, z) <= 1e-9);
  const auto diag = DoublyStochastic::create(Matrix::Identity(2, 2) / 2.0);
  CHECK(coupling_discrepancy(Permutation::identity(2), diag, z, z) <= 1e-12);
  CHECK_THROWS_AS(coupling_discrepancy(Permutation::identity(3), diag, z, z), InputError);
}

TEST_CASE("discrepancy decays along K doubling", "[mps][property]") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + trial % 3;
    const auto b = trial % 2 ? random_real_coupling(rng, n) : random_coupling(rng, n, 16, 3);
    const Matrix z = random_points(rng, static_cast<Eigen::Index>(n), 2);
    const Matrix zp = random_points(rng, static_cast<Eigen::Index>(n), 2);
    double diam = 0.0;
    for (Eigen::Index i = 0; i < z.rows(); ++i)
      for (Eigen::Index j = 0; j < z.rows(); ++j)
        diam = std::max(diam, std::hypot((z.row(i) - z.row(j)).norm(), (zp.row(i) - zp.row(j)).norm()));
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t k : {1u, 2u, 4u, 8u}) {
      const double d = coupling_discrepancy(approx_coupling(b, k), b, z, zp);
      INFO("trial " << trial << " K " << k << " previous " << prev);
      CHECK((d <= prev + 1e-9 || d <= 2.0 * diam / static_cast<double>(n * k)));
      prev = d;
    }
  }
}

TEST_CASE("Wasserstein examples", "[mps]") {
  const auto a = Measure::uniform(column({0, 1}));
  CHECK(wasserstein(2.0, a, a).value == Approx(0.0).margin(1e-12));
  CHECK(wasserstein(1.0, a, Measure::uniform(column({0.5, 0.5}))).value == Approx(0.5).margin(1e-12));
  const auto zero = Measure::uniform(Matrix::Zero(1, 2));
  const auto pt = Measure::uniform(make_vector({3, 4}).transpose());
  CHECK(wasserstein(2.0, zero, pt).value == Approx(5.0).margin(1e-12));
  CHECK_THROWS_AS(wasserstein(0.5, a, a), InputError);
  CHECK_THROWS_AS(Measure::uniform(Matrix(0, 1)), InputError);
}

TEST_CASE("Wasserstein matches permutation enumeration", "[mps][oracle]") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 30; ++trial) {
    const Eigen::Index n = 1 + trial % 6, d = 1 + trial % 2;
    const double p = trial % 2 ? 1.0 : 2.0;
    const Matrix a = random_points(rng, n, d), b = random_points(rng, n, d);
    CHECK(wasserstein(p, Measure::uniform(a), Measure::uniform(b)).value ==
          Approx(brute_wasserstein(p, a, b)).margin(1e-9));
  }
}

TEST_CASE("Wasserstein is a metric on samples", "[mps][property]") {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 15; ++trial) {
    const auto a = Measure::uniform(random_points(rng, 3, 2));
    const auto b = Measure::uniform(random_points(rng, 4, 2));
    const auto c = Measure::uniform(random_points(rng, 2, 2));
    for (double p : {1.0, 2.0}) {
      const double ab = wasserstein(p, a, b).value, ba = wasserstein(p, b, a).value;
      CHECK(ab == Approx(ba).margin(1e-9));
      CHECK(ab <= wasserstein(p, a, c).value + wasserstein(p, c, b).value + 1e-9);
    }
  }
}

TEST_CASE("Monge matching examples", "[mps]") {
  const EmpiricalSample x(DyadicSpace(1), column({0, 1}));
  const auto same = monge_match(x, law(x), 2.0);
  CHECK(same.cost == Approx(0.0).margin(1e-12));
  const auto shift = monge_match(x, Measure::uniform(column({2, 3})), 1.0);
  CHECK(shift.y.values() == column({2, 3}));
  CHECK(shift.cost == Approx(2.0));
  CHECK(shift.wasserstein == Approx(2.0));
  const EmpiricalSample one(DyadicSpace(0), column({0}));
  const auto split = monge_match(one, Measure::uniform(column({-1, 1})), 2.0);
  CHECK(split.y.level() == 1);
  CHECK(split.y.values() == column({-1, 1}));
  CHECK(split.cost == Approx(1.0));
  CHECK_THROWS_AS(monge_match(one, Measure::create(column({0, 1}), make_vector({1.0 / 3.0, 2.0 / 3.0})), 2.0),
                  CapacityError);
}

TEST_CASE("Monge matching pushes forward exactly", "[mps][property]") {
  std::mt19937_64 rng(47);
  for (int trial = 0; trial < 30; ++trial) {
    const int level = trial % 3;
    const Eigen::Index atoms = Eigen::Index{1} << level;
    const EmpiricalSample x(DyadicSpace(level), random_points(rng, atoms, 2));
    const Matrix target = random_points(rng, atoms, 2);
    const double p = trial % 2 ? 1.0 : 2.0;
    const auto r = monge_match(x, Measure::uniform(target), p);
    // Each target point is hit exactly once per 1/atoms of mass.
    std::vector<int> hits(static_cast<std::size_t>(atoms), 0);
    for (std::size_t j = 0; j < r.y.atoms(); ++j)
      for (Eigen::Index t = 0; t < atoms; ++t)
        if (r.y.values().row(static_cast<Eigen::Index>(j)) == target.row(t)) ++hits[static_cast<std::size_t>(t)];
    for (int h : hits) CHECK(static_cast<std::size_t>(h) * static_cast<std::size_t>(atoms) == r.y.atoms());
    CHECK(r.cost <= r.wasserstein + 1e-9);
    CHECK(r.wasserstein == Approx(brute_wasserstein(p, x.values(), target)).margin(1e-9));
  }
}

TEST_CASE("law alignment", "[mps]") {
  const Matrix x = column({0, 0, 1}), xp = column({0, 1, 0});
  const Matrix y = column({5, 6, 7}), yp = column({6, 7, 5});
  CHECK(align_same_law(x, y, xp, yp) == Permutation({2, 0, 1}));
  CHECK(align_same_law(column({0, 1}), Matrix(2, 0), column({1, 0}), Matrix(2, 0)) == Permutation({1, 0}));
  try {
    align_same_law(column({0, 1, 2}), Matrix(3, 0), column({0, 5, 2}), Matrix(3, 0));
    FAIL("expected a law mismatch");
  } catch (const LawMismatch& e) {
    CHECK(e.row() == 1);
    CHECK(std::string(e.what()).find("row 1") != std::string::npos);
  }
}

TEST_CASE("alignment recovers random relabelings", "[mps][property]") {
  std::mt19937_64 rng(53);
  for (int trial = 0; trial < 30; ++trial) {
    const int level = 1 + trial % 4;
    const auto atoms = std::size_t{1} << level;
    Matrix base = random_points(rng, static_cast<Eigen::Index>(atoms), 2);
    base.row(0) = base.row(static_cast<Eigen::Index>(atoms - 1));  // a repeated value
    const EmpiricalSample x(DyadicSpace(level), base);
    const EmpiricalSample y(DyadicSpace(level), random_points(rng, static_cast<Eigen::Index>(atoms), 1));
    std::vector<std::size_t> h(atoms);
    std::iota(h.begin(), h.end(), std::size_t{0});
    std::shuffle(h.begin(), h.end(), rng);
    const Permutation hp(h);
    const auto g = align_same_law(x, y, x.compose(hp), y.compose(hp));
    CHECK(x.compose(hp).compose(g).values() == x.values());
    CHECK(y.compose(hp).compose(g).values() == y.values());
  }
}

TEST_CASE("Birkhoff decomposition", "[mps]") {
  const Permutation c({1, 2, 0});
  const auto b = DoublyStochastic::create((2.0 / 3.0 * Matrix::Identity(3, 3) + c.matrix() / 3.0) / 3.0);
  const auto terms = birkhoff_decompose(b);
  REQUIRE(terms.size() == 2);
  double wid = 0.0, wcyc = 0.0;
  for (const auto& t : terms) (t.permutation.is_identity() ? wid : wcyc) += t.weight;
  CHECK(wid == Approx(2.0 / 3.0));
  CHECK(wcyc == Approx(1.0 / 3.0));

  const auto single = birkhoff_decompose(DoublyStochastic::create(c.matrix() / 3.0));
  REQUIRE(single.size() == 1);
  CHECK(single[0].permutation == c);
  CHECK(single[0].weight == Approx(1.0));

  std::mt19937_64 rng(59);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + trial % 4;
    const auto r = random_coupling(rng, n, 60, 8);
    const auto ts = birkhoff_decompose(r);
    CHECK(ts.size() <= (n - 1) * (n - 1) + 1);
    Matrix sum = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    double wsum = 0.0;
    for (const auto& t : ts) {
      CHECK(t.weight > 0.0);
      sum += t.weight * t.permutation.matrix();
      wsum += t.weight;
    }
    CHECK(wsum == Approx(1.0).margin(1e-12));
    CHECK((sum - static_cast<double>(n) * r.matrix()).cwiseAbs().maxCoeff() <= 1e-9);
  }
}
