#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "spreadlab/error.hpp"
#include "spreadlab/wiener_poly.hpp"

using namespace spreadlab;

namespace {

WienerPolynomial random_constant_poly(int n, int d, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  WienerPolynomial Z(n, d);
  std::vector<std::vector<int>> layer{{}};
  Z.set_constant({}, g(rng));
  for (int a = 1; a <= n; ++a) {
    std::vector<std::vector<int>> next;
    for (const auto& s : layer) {
      for (int i = s.empty() ? 0 : s.back(); i < d; ++i) {
        auto t = s;
        t.push_back(i);
        Z.set_constant(t, g(rng));
        next.push_back(t);
      }
    }
    layer = next;
  }
  return Z;
}

double direct_eval(const WienerPolynomial& Z, const Eigen::VectorXd& w) {
  // Ordered-tuple sum with symmetric coefficient lookup.
  double total = 0.0;
  std::vector<int> idx;
  std::function<void(int)> rec = [&](int depth) {
    double m = 1.0;
    for (int i : idx) m *= w(i);
    total += Z.coefficient(idx, 0) * m;
    if (depth == Z.n()) return;
    for (int i = 0; i < Z.d(); ++i) {
      idx.push_back(i);
      rec(depth + 1);
      idx.pop_back();
    }
  };
  rec(0);
  return total;
}

}  // namespace

TEST_CASE("evaluate_Z") {
  const auto W = sample_wiener(2, 1.0, 64, 1);
  WienerPolynomial c(0, 2, 65);
  const Eigen::VectorXd a = Eigen::VectorXd::LinSpaced(65, 0, 1);
  c.set_process({}, a);
  CHECK((evaluate_Z(c, W) - a).norm() == 0.0);
  Eigen::MatrixXd inc = W.increments();
  inc.row(0).setZero();
  const WienerPath W0(inc, 1.0, 0);
  WienerPolynomial z12(2, 2);
  z12.set_constant({0, 1}, 1.0);
  CHECK(evaluate_Z(z12, W0).norm() == 0.0);
  std::mt19937_64 rng(2);
  const auto Z = random_constant_poly(3, 2, rng);
  const auto z = evaluate_Z(Z, W);
  for (int node : {3, 17, 30, 51, 64}) {
    const double want = direct_eval(Z, W.values().col(node));
    CHECK(std::abs(z(node) - want) <= 1e-14 * std::max(1.0, std::abs(want)) * 10);
  }
  WienerPolynomial bad(1, 1, 10);
  CHECK_THROWS_AS(bad.set_process({0}, Eigen::VectorXd::Zero(11)), Error);
}

TEST_CASE("discrete quadratic variation") {
  int good = 0;
  for (int s = 0; s < 40; ++s) {
    const auto W = sample_wiener(2, 1.0, 1 << 14, 100 + s);
    const Eigen::VectorXd w1 = W.values().row(0).transpose(), w2 = W.values().row(1).transpose();
    if (std::abs(discrete_qv(w1, w1, 1) - 1.0) <= 0.05) ++good;
    CHECK(std::abs(discrete_qv(w1, w2, 1)) <= 5 * std::pow(2.0, -7));
  }
  CHECK(good >= 38);
  const Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(1025, 0, 1);
  CHECK(discrete_qv(t, t, 4) <= 1.0 / 256);
  CHECK_THROWS_AS(discrete_qv(t, t, 3), Error);
}

TEST_CASE("qv formula special cases") {
  const auto W = sample_wiener(2, 1.0, 256, 3);
  WienerPolynomial w1(1, 2), w2(1, 2);
  w1.set_constant({0}, 1.0);
  w2.set_constant({1}, 1.0);
  CHECK(qv_formula(w1, w1, W) == doctest::Approx(1.0));
  CHECK(qv_formula(w1, w2, W) == 0.0);
  WienerPolynomial z(2, 2);
  z.set_constant({0, 1}, 0.5);  // mult 2 * 0.5 = W1 W2
  const Eigen::VectorXd integrand =
      W.values().row(0).transpose().cwiseAbs2() + W.values().row(1).transpose().cwiseAbs2();
  CHECK(qv_formula(z, z, W) == doctest::Approx(trapezoid(integrand, W.dt())).epsilon(1e-13));
}

TEST_CASE("reduction and energy identity") {
  WienerPolynomial a(1, 2);
  a.set_constant({0}, 2.0);
  const auto a1 = reduce_Zr(a, 0), a2 = reduce_Zr(a, 1);
  CHECK(a1.coefficient({}, 0) == 2.0);
  CHECK(a2.terms().empty());
  WienerPolynomial z(2, 2);
  z.set_constant({0, 1}, 0.5);
  const auto W = sample_wiener(2, 1.0, 128, 4);
  CHECK((evaluate_Z(reduce_Zr(z, 0), W) - W.values().row(1).transpose()).norm() < 1e-14);
  CHECK((evaluate_Z(reduce_Zr(z, 1), W) - W.values().row(0).transpose()).norm() < 1e-14);
  CHECK_THROWS_AS(reduce_Zr(WienerPolynomial(0, 2), 0), Error);
  std::mt19937_64 rng(5);
  const auto W3 = sample_wiener(3, 1.0, 1024, 6);
  for (int n = 1; n <= 4; ++n) {
    const auto Z = random_constant_poly(n, 3, rng);
    double energy = 0.0;
    for (int r = 0; r < 3; ++r) {
      const Eigen::VectorXd zr = evaluate_Z(reduce_Zr(Z, r), W3);
      energy += trapezoid(zr.cwiseAbs2(), W3.dt());
    }
    const double q = qv_formula(Z, Z, W3);
    CHECK(std::abs(q - energy) <= 1e-10 * std::abs(q));
  }
}

TEST_CASE("discrete qv converges to the formula") {
  std::mt19937_64 rng(7);
  const auto Z = random_constant_poly(3, 2, rng);
  std::vector<double> errs;
  for (int s = 0; s < 20; ++s) {
    const auto W = sample_wiener(2, 1.0, 1 << 16, 200 + s);
    const Eigen::VectorXd z = evaluate_Z(Z, W);
    const double q = qv_formula(Z, Z, W);
    errs.push_back(std::abs(discrete_qv(z, z, 1) - q) / q);
  }
  std::sort(errs.begin(), errs.end());
  CHECK(errs[10] < 0.02);
}

TEST_CASE("coefficient recovery") {
  const auto W = sample_wiener(2, 1.0, 256, 8);
  WienerPolynomial zero(2, 2);
  const auto r0 = coefficient_recovery_check(zero, W, 1e-12);
  CHECK(r0.small);
  CHECK(r0.max_node_sup == 0.0);
  WienerPolynomial planted(2, 2);
  planted.set_constant({0, 1}, 1.0);
  const auto r = coefficient_recovery_check(planted, W, 1e-12);
  CHECK_FALSE(r.small);
  CHECK(r.recovered.at({0, 1}) == doctest::Approx(1.0));
  CHECK(r.recovered.at({0, 0}) == 0.0);
  CHECK(r.recovered.at({1, 1}) == 0.0);
}

TEST_CASE("Ito decomposition") {
  const auto W = sample_wiener(2, 1.0, 512, 9);
  WienerPolynomial lin(1, 2);
  lin.set_constant({0}, 2.0);
  lin.set_constant({1}, -1.0);
  const auto d1 = ito_decompose(lin, W, 100);
  CHECK((d1.V.array() - d1.V(0)).abs().maxCoeff() == 0.0);
  for (int j = 0; j < d1.M.size(); ++j) {
    const double want = 2 * (W.values()(0, 100 + j) - W.values()(0, 100)) - (W.values()(1, 100 + j) - W.values()(1, 100));
    CHECK(d1.M(j) == doctest::Approx(want).epsilon(1e-12).scale(1.0));
  }
  WienerPolynomial sq(2, 1);
  sq.set_constant({0, 0}, 1.0);
  const auto d2 = ito_decompose(sq, W, 0);
  for (int j = 0; j < d2.V.size(); ++j) CHECK(d2.V(j) == doctest::Approx(j * W.dt()).epsilon(1e-12));
  WienerPolynomial proc(1, 1);
  proc.set_process({0}, Eigen::VectorXd::Ones(513));
  CHECK_THROWS_AS(ito_decompose(proc, W, 0), Error);
}

TEST_CASE("event calculus basics") {
  const auto W = sample_wiener(2, 1.0, 1024, 10);
  WienerPolynomial zero(2, 2);
  const auto r = event_calculus(zero, W, {0.25});
  CHECK(r.D);
  CHECK_FALSE(r.Ec);
  CHECK_FALSE(r.lhs);
  CHECK(r.holds);
  WienerPolynomial c0(0, 2);
  c0.set_constant({}, 5.0);
  const auto r2 = event_calculus(c0, W, {0.25});
  CHECK_FALSE(r2.lhs);
  CHECK(r2.holds);
}

TEST_CASE("D* infimum by homogeneity") {
  // phi_0 = 1, phi_1 = t on 5 nodes: inf over max|lambda| >= 1 of sup|l0 + l1 t|.
  std::vector<Eigen::VectorXd> basis = {Eigen::VectorXd::Ones(5), Eigen::VectorXd::LinSpaced(5, 0, 1)};
  const double v = dstar_inf(basis, Eigen::Vector2d(1.0, 0.0));
  // Best: lambda_1 = 1, lambda_0 = -1/2 gives sup 1/2.
  CHECK(v == doctest::Approx(0.5).epsilon(1e-3));
}

TEST_CASE("Norris-type lemmas") {
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(33);
  const auto a = norris_lp_check(zero, 1.0, 2.0, 0.5, 0.1, 0.1, 1.0);
  CHECK(a.hypotheses);
  CHECK(a.holds);
  const auto b = norris_lp_check(Eigen::VectorXd::Constant(33, 10.0), 1.0, 2.0, 0.5, 0.1, 0.1, 1.0);
  CHECK_FALSE(b.hypotheses);
  CHECK(b.holds);
  const auto c = integral_derivative_check(0.0, zero, 1.0, 0.5, 0.1, 1.0, 0.1);
  CHECK(c.holds);
  Eigen::VectorXd s(65);
  for (int i = 0; i < 65; ++i) s(i) = 1e-3 * std::sin(6.28 * i / 64.0);
  CHECK(integral_derivative_check(0.0, s, 1.0, 0.5, 0.1, 1.0, 0.1).holds);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 1);
  int viol = 0;
  for (int t = 0; t < 2000; ++t) {
    const double amp = std::pow(10.0, -4 + 4 * u(rng));
    Eigen::VectorXd f(33);
    for (int i = 0; i < 33; ++i) f(i) = amp * (2 * u(rng) - 1);
    if (!norris_lp_check(f, 1.0, 1 + 3 * u(rng), 0.5, 0.2, 0.5 * u(rng) + 1e-3, 1.0).holds) ++viol;
    if (!integral_derivative_check(0.0, f, 1.0, 0.5, 0.2, 1.0, 0.5 * u(rng) + 1e-3).holds) ++viol;
  }
  CHECK(viol == 0);
}
