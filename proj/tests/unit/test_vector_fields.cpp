#include <cmath>
#include <numbers>

#include "doctest.h"
#include "helpers.hpp"
#include "spreadlab/error.hpp"
#include "spreadlab/presets.hpp"
#include "spreadlab/vector_fields.hpp"

using namespace spreadlab;
using testing_util::random_field;
using testing_util::rel_err;

namespace {

// Real torus mode and its gradient at (x, y).
struct ModeEval {
  double f, fx, fy;
};
ModeEval eval_mode(const TorusMode& m, double x, double y) {
  const double A = 1.0 / (std::sqrt(2.0) * std::numbers::pi);
  const double ph = m.kx * x + m.ky * y;
  if (m.is_sin) return {A * std::sin(ph), A * m.kx * std::cos(ph), A * m.ky * std::cos(ph)};
  return {A * std::cos(ph), -A * m.kx * std::sin(ph), -A * m.ky * std::sin(ph)};
}

// Pseudo-spectral oracle: psi = Laplacian^{-1} w, u = (-psi_y, psi_x),
// B(u, w) = -(u . grad) w, symmetrized over the two slots.
Eigen::VectorXd ns_grid_oracle(const BasisPtr& b, const Eigen::VectorXd& w1, const Eigen::VectorXd& w2, int n) {
  GridTransform tr(b, n);
  const auto& modes = b->torus_modes();
  Eigen::VectorXd out_vals(tr.size());
  for (int p = 0; p < tr.size(); ++p) {
    double u1[2] = {0, 0}, u2[2] = {0, 0}, g1[2] = {0, 0}, g2[2] = {0, 0};
    for (int i = 0; i < b->dim(); ++i) {
      const auto e = eval_mode(modes[static_cast<size_t>(i)], tr.x()(p), tr.y()(p));
      const double k2 = b->eigenvalue(i) / b->viscosity();
      // psi_i = -e_i / |k|^2
      u1[0] += w1(i) * (e.fy / k2);
      u1[1] += w1(i) * (-e.fx / k2);
      u2[0] += w2(i) * (e.fy / k2);
      u2[1] += w2(i) * (-e.fx / k2);
      g1[0] += w1(i) * e.fx;
      g1[1] += w1(i) * e.fy;
      g2[0] += w2(i) * e.fx;
      g2[1] += w2(i) * e.fy;
    }
    const double b12 = -(u1[0] * g2[0] + u1[1] * g2[1]);
    const double b21 = -(u2[0] * g1[0] + u2[1] * g1[1]);
    out_vals(p) = 0.5 * (b12 + b21);
  }
  return tr.from_grid(out_vals);
}

}  // namespace

TEST_CASE("NS bilinear form matches the pseudo-spectral oracle") {
  auto b = BasisSpec::torus(3, 1.0);
  const auto N = ns_bilinear_form(b);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 3; ++trial) {
    const Eigen::VectorXd w1 = random_field(b, rng).coeffs();
    const Eigen::VectorXd w2 = random_field(b, rng).coeffs();
    const Eigen::VectorXd got = N.apply({&w1, &w2});
    const Eigen::VectorXd want = ns_grid_oracle(b, w1, w2, 16);
    CHECK(rel_err(got, want) < 1e-12);
  }
}

TEST_CASE("NS nonlinearity conserves energy and enstrophy") {
  auto b = BasisSpec::torus(4, 1.0);
  const auto F = ns_drift(b);
  std::mt19937_64 rng(4);
  const auto w = random_field(b, rng);
  const Eigen::VectorXd nw = F.form(2)->apply_diagonal(w.coeffs());
  CHECK(std::abs(nw.dot(w.coeffs())) < 1e-12 * nw.norm());
  // <B(Kw, w), psi> = 0 with psi = -L^{-1} w (nu = 1).
  const Eigen::VectorXd psi = -w.coeffs().cwiseQuotient(b->eigenvalues());
  CHECK(std::abs(nw.dot(psi)) < 1e-12 * nw.norm() * psi.norm());
}

TEST_CASE("RD cubic matches the pointwise cube on a fine grid") {
  auto b = BasisSpec::dirichlet(8, 1.0);
  const auto F = rd_drift(b, {0.0, 0.0, 0.0, -1.0});
  std::mt19937_64 rng(5);
  const auto u = random_field(b, rng);
  const Eigen::VectorXd g = to_grid(u, 200);
  const auto cube = from_grid(b, g.cwiseProduct(g).cwiseProduct(g), 200);
  const auto got = evaluate(F, u);
  const Eigen::VectorXd want = -apply_L(u).coeffs() - cube.coeffs();
  CHECK(rel_err(got.coeffs(), want) < 1e-12);
  const auto e1 = SpectralField::unit(b, 0);
  const Eigen::VectorXd g1 = to_grid(e1, 200);
  const auto c1 = from_grid(b, -g1.cwiseProduct(g1).cwiseProduct(g1), 200);
  CHECK(rel_err(evaluate(F, e1).coeffs() + apply_L(e1).coeffs(), c1.coeffs()) < 1e-12);
}

TEST_CASE("evaluate of L is the eigenvalue map") {
  auto b = BasisSpec::dirichlet(6, 2.0);
  const auto P = PolyVectorField::linear_L(b, 1.0);
  const auto e = SpectralField::unit(b, 3);
  CHECK(evaluate(P, e)[3] == doctest::Approx(b->eigenvalue(3)));
}

TEST_CASE("frechet derivatives") {
  auto b = BasisSpec::dirichlet(8, 1.0);
  const auto F = rd_drift(b, {0.0, 0.5, -0.2, -1.0});
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    const auto x = random_field(b, rng);
    const auto h = random_field(b, rng);
    const double eps = 1e-5;
    const Eigen::VectorXd fd =
        (evaluate(F, x + h * eps).coeffs() - evaluate(F, x - h * eps).coeffs()) / (2 * eps);
    CHECK(rel_err(frechet(F, x, {h}).coeffs(), fd) < 1e-6);
    CHECK(rel_err(jacobian(F, x.coeffs()) * h.coeffs(), frechet(F, x, {h}).coeffs()) < 1e-12);
  }
  // Bilinear identities.
  auto bt = BasisSpec::torus(2, 1.0);
  PolyVectorField N2(bt);
  N2.add_form(ns_bilinear_form(bt));
  const auto x = random_field(bt, rng), h1 = random_field(bt, rng), h2 = random_field(bt, rng);
  const Eigen::VectorXd n_xh = ns_bilinear_form(bt).apply({&x.coeffs(), &h1.coeffs()});
  CHECK(rel_err(frechet(N2, x, {h1}).coeffs(), 2 * n_xh) < 1e-12);
  const Eigen::VectorXd n_hh = ns_bilinear_form(bt).apply({&h1.coeffs(), &h2.coeffs()});
  CHECK(rel_err(frechet(N2, x, {h1, h2}).coeffs(), 2 * n_hh) < 1e-12);
  CHECK(rel_err(frechet(N2, x, {h2, h1}).coeffs(), 2 * n_hh) < 1e-12);
  CHECK(frechet(N2, x, {h1, h2, h1}).norm() == 0.0);
  CHECK_THROWS_AS(frechet(N2, x, {}), Error);
}

TEST_CASE("lie brackets") {
  auto b = BasisSpec::torus(2, 1.0);
  std::mt19937_64 rng(7);
  const auto g = random_field(b, rng), gk = random_field(b, rng), x = random_field(b, rng);
  const auto G1 = PolyVectorField::constant(g), G2 = PolyVectorField::constant(gk);
  CHECK(lie_bracket(G1, G2, x).norm() == 0.0);
  const auto F = ns_drift(b);
  CHECK(rel_err(lie_bracket(F, G1, x).coeffs(), -lie_bracket(G1, F, x).coeffs()) < 1e-14);
  PolyVectorField N2(b);
  N2.add_form(ns_bilinear_form(b));
  const auto sym = lie_bracket_sym(N2, G1);
  const Eigen::VectorXd want = 2 * ns_bilinear_form(b).apply({&g.coeffs(), &x.coeffs()});
  CHECK(rel_err(evaluate(sym, x).coeffs(), want) < 1e-12);
  CHECK(rel_err(lie_bracket(N2, G1, x).coeffs(), want) < 1e-12);
  CHECK_THROWS_AS(lie_bracket_sym(G1, N2), Error);
  // Composed bracket agrees with the pointwise formula.
  const auto comp = lie_bracket_composed(F, N2);
  CHECK(rel_err(evaluate(comp, x).coeffs(), lie_bracket(F, N2, x).coeffs()) < 1e-12);
}

TEST_CASE("iterated brackets reproduce N_m on generators") {
  auto bt = BasisSpec::torus(3, 1.0);
  std::mt19937_64 rng(8);
  const auto g = random_field(bt, rng), gk = random_field(bt, rng), x = random_field(bt, rng);
  const auto F = ns_drift(bt);
  const auto Q = PolyVectorField::constant(g * 0.5);
  const auto br = iterated_bracket(F, Q, {gk});
  CHECK(br.is_constant());
  const Eigen::VectorXd want = ns_bilinear_form(bt).apply({&g.coeffs(), &gk.coeffs()});
  CHECK(rel_err(evaluate(br, x).coeffs(), want) < 1e-12);
  // Empty gs: DF(.)g.
  const auto single = iterated_bracket(F, PolyVectorField::constant(g), {});
  CHECK(single.degree() == 1);
  CHECK(rel_err(evaluate(single, x).coeffs(), frechet(F, x, {g}).coeffs()) < 1e-12);

  // RD: [F, g/3!, g1, g2] = a3 P(g g1 g2).
  auto b = BasisSpec::dirichlet(8, 1.0);
  const double a3 = -1.3;
  const auto Frd = rd_drift(b, {0.0, 0.0, 0.0, a3});
  const auto h = random_field(b, rng), h1 = random_field(b, rng), h2 = random_field(b, rng);
  const auto br3 = iterated_bracket(Frd, PolyVectorField::constant(h * (1.0 / 6.0)), {h1, h2});
  CHECK(br3.is_constant());
  const Eigen::VectorXd want3 = a3 * project_product({h, h1, h2}).coeffs();
  CHECK(rel_err(evaluate(br3, h).coeffs(), want3) < 1e-12);
}

TEST_CASE("brackets with constant fields are directional derivatives") {
  auto b = BasisSpec::dirichlet(6, 1.0);
  const auto F = rd_drift(b, {0.0, 0.3, 0.4, -1.0});
  std::mt19937_64 rng(9);
  const auto f1 = random_field(b, rng), f2 = random_field(b, rng), x = random_field(b, rng);
  auto Q = lie_bracket_sym(F, PolyVectorField::constant(f1));
  Q = lie_bracket_sym(Q, PolyVectorField::constant(f2));
  CHECK(rel_err(evaluate(Q, x).coeffs(), frechet(F, x, {f1, f2}).coeffs()) < 1e-12);
}

TEST_CASE("shift expansion reassembles") {
  std::mt19937_64 rng(10);
  auto b = BasisSpec::dirichlet(8, 1.0);
  const auto F = rd_drift(b, {0.2, 0.3, 0.4, -1.0});
  const auto X = random_field(b, rng);
  const std::vector<SpectralField> G = {random_field(b, rng), random_field(b, rng)};
  const Eigen::VectorXd w = testing_util::random_vector(2, rng);
  const auto ex = expand_shift(F, X, G, w);
  const auto direct = evaluate(F, X + G[0] * w(0) + G[1] * w(1));
  CHECK(rel_err(ex.reassembled.coeffs(), direct.coeffs()) < 1e-10);
  // Quadratic, d = 1: N(X,X), 2N(g,X), N(g,g).
  auto bt = BasisSpec::torus(2, 1.0);
  PolyVectorField N2(bt);
  const auto Nf = ns_bilinear_form(bt);
  N2.add_form(Nf);
  const auto Xt = random_field(bt, rng), g = random_field(bt, rng);
  const auto e2 = expand_shift(N2, Xt, {g}, Eigen::VectorXd::Constant(1, 0.7));
  CHECK(rel_err(e2.coefficients.at({}).coeffs(), Nf.apply({&Xt.coeffs(), &Xt.coeffs()})) < 1e-12);
  CHECK(rel_err(e2.coefficients.at({0}).coeffs(), 2 * Nf.apply({&g.coeffs(), &Xt.coeffs()})) < 1e-12);
  CHECK(rel_err(e2.coefficients.at({0, 0}).coeffs(), Nf.apply({&g.coeffs(), &g.coeffs()})) < 1e-12);
}

TEST_CASE("multilinear bounds") {
  auto b = BasisSpec::dirichlet(4, 1.0);
  MultilinearForm zero(2, 4, 4);
  zero.finalize();
  CHECK(multilinear_bound(zero, *b, NormSpec{0, 0, 0}, 4, 1) == 0.0);
  MultilinearForm r1(2, 4, 4);
  r1.add({0, 0}, 0, 1.0);
  r1.finalize();
  CHECK(multilinear_bound(r1, *b, NormSpec{0, 0, 0}, 8, 1) == doctest::Approx(1.0).epsilon(1e-8));
  auto bt = BasisSpec::torus(2, 1.0);
  const auto N = ns_bilinear_form(bt);
  const double c4 = multilinear_bound(N, *bt, {}, 4, 3);
  const double c16 = multilinear_bound(N, *bt, {}, 16, 3);
  CHECK(c4 > 0.0);
  CHECK(c16 >= c4);
  // Exhaustive search over basis pairs is a lower bound of the optimum.
  double pair_max = 0.0;
  for (int i = 0; i < bt->dim(); ++i) {
    for (int j = 0; j < bt->dim(); ++j) {
      const Eigen::VectorXd ei = Eigen::VectorXd::Unit(bt->dim(), i), ej = Eigen::VectorXd::Unit(bt->dim(), j);
      const Eigen::VectorXd out = N.apply({&ei, &ej});
      const double v = sobolev_norm(*bt, out, -0.5) / (1.0 * std::pow(bt->eigenvalue(j), 0.5));
      pair_max = std::max(pair_max, v);
    }
  }
  CHECK(c16 >= pair_max * (1 - 1e-9));
}

TEST_CASE("degree overflow is an error") {
  auto b = BasisSpec::dirichlet(4, 1.0);
  CHECK_THROWS_AS(rd_drift(b, {0, 0, 0, 0, 0, 0, 1.0}), Error);
  MultilinearForm f(2, 4, 4);
  f.add({1, 0}, 2, 1.5);
  f.finalize();
  CHECK(f.coefficient({0, 1}, 2) == 1.5);
  const auto j = f.to_json();
  CHECK(MultilinearForm::from_json(j).coefficient({1, 0}, 2) == 1.5);
}
