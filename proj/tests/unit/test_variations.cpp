#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "spreadlab/error.hpp"
#include "spreadlab/presets.hpp"
#include "spreadlab/variations.hpp"

using namespace spreadlab;
using testing_util::random_field;
using testing_util::rel_err;

namespace {

SpdeConfig rd_config(int K, int steps) {
  auto b = BasisSpec::dirichlet(K, 0.1);
  SpdeConfig cfg;
  cfg.basis = b;
  cfg.F = rd_drift(b, {0.0, 1.0, 0.0, -1.0});
  cfg.G = rd_generators(b, {1, 2}, 1.0);
  cfg.steps = steps;
  return cfg;
}

std::shared_ptr<const Trajectory> run(const SpdeConfig& cfg, const SpectralField& u0, const WienerPath& W) {
  return std::make_shared<const Trajectory>(integrate(cfg, u0, W));
}

}  // namespace

TEST_CASE("linear case: J and K are the heat semigroup") {
  auto b = BasisSpec::dirichlet(6, 0.3);
  SpdeConfig cfg;
  cfg.basis = b;
  cfg.F = PolyVectorField::linear_L(b, -1.0);
  cfg.G = rd_generators(b, {1}, 1.0);
  cfg.steps = 40;
  std::mt19937_64 rng(1);
  const auto W = sample_wiener(1, 1.0, 40, 1);
  FlowBundle fb(run(cfg, SpectralField(b), W), cfg);
  const auto phi = random_field(b, rng), psi = random_field(b, rng);
  const auto J = forward_J(fb, 10, 30, phi);
  const auto K = backward_K(fb, 10, 30, phi);
  for (int k = 0; k < 6; ++k) {
    const double want = std::exp(-0.5 * b->eigenvalue(k)) * phi[k];
    CHECK(J[k] == doctest::Approx(want).epsilon(1e-12));
    CHECK(K[k] == doctest::Approx(want).epsilon(1e-12));
  }
  CHECK(rel_err(forward_J(fb, 7, 7, phi).coeffs(), phi.coeffs()) == 0.0);
  CHECK_THROWS_AS(forward_J(fb, 30, 10, phi), Error);
  CHECK(duality_gap(fb, 0, 40, phi, psi) < 1e-12);
  // Orthogonal phi, psi in the linear case: constant zero.
  CHECK(duality_gap(fb, 0, 40, SpectralField::unit(b, 0), SpectralField::unit(b, 1)) == 0.0);
  // Closed-form Malliavin derivative for h = 1: L^{-1}(I - e^{-TL}) g.
  const auto D = malliavin_derivative(fb, Eigen::MatrixXd::Ones(1, 40));
  const double lam = b->eigenvalue(0);
  CHECK(D[0] == doctest::Approx((1 - std::exp(-lam)) / lam).epsilon(0.02));
  CHECK(malliavin_derivative(fb, Eigen::MatrixXd::Zero(1, 40)).norm() == 0.0);
  CHECK_THROWS_AS(malliavin_derivative(fb, Eigen::MatrixXd::Zero(2, 40)), Error);
  CHECK(higher_variation(fb, {3, 5}, {phi, psi}).norm() == 0.0);
}

TEST_CASE("cocycle and adjoint duality on RD") {
  const auto cfg = rd_config(8, 256);
  std::mt19937_64 rng(2);
  const auto u0 = random_field(cfg.basis, rng, 2.0);
  FlowBundle fb(run(cfg, u0, sample_wiener(2, 1.0, 256, 3)), cfg, AdjointScheme::kExactTranspose);
  const auto phi = random_field(cfg.basis, rng), psi = random_field(cfg.basis, rng);
  const auto a = forward_J(fb, 50, 200, forward_J(fb, 10, 50, phi));
  CHECK(rel_err(a.coeffs(), forward_J(fb, 10, 200, phi).coeffs()) < 1e-13);
  CHECK(duality_gap(fb, 0, 256, phi, psi) < 1e-12);
  // Step matrices agree with the matrix-free actions.
  Eigen::VectorXd v = phi.coeffs();
  fb.forward_step(17, v);
  CHECK(rel_err(v, fb.step_matrix(17) * phi.coeffs()) < 1e-13);
  for (auto sch : {AdjointScheme::kStaggered, AdjointScheme::kContinuous, AdjointScheme::kExactTranspose}) {
    FlowBundle fs(run(cfg, u0, sample_wiener(2, 1.0, 256, 3)), cfg, sch);
    Eigen::VectorXd w = psi.coeffs();
    fs.adjoint_step(17, w);
    CHECK(rel_err(w, fs.adjoint_step_matrix(17) * psi.coeffs()) < 1e-13);
  }
}

TEST_CASE("duality gap decays at first order") {
  std::mt19937_64 rng(3);
  const auto cfg0 = rd_config(8, 4096);
  const auto u0 = random_field(cfg0.basis, rng, 2.0);
  const auto phi = random_field(cfg0.basis, rng), psi = random_field(cfg0.basis, rng);
  const auto W = sample_wiener(2, 1.0, 4096, 5);
  double prev = 0;
  for (int f : {4, 2}) {
    auto cfg = cfg0;
    cfg.steps = 4096 / f;
    FlowBundle fb(run(cfg, u0, W.coarsen(f)), cfg);
    const double g = duality_gap(fb, 0, cfg.steps, phi, psi);
    if (f == 2) {
      CHECK(g / prev > 0.4);
      CHECK(g / prev < 0.6);
    }
    prev = g;
  }
}

TEST_CASE("Malliavin derivative matches path bumps") {
  const auto cfg = rd_config(8, 512);
  std::mt19937_64 rng(4);
  const auto u0 = random_field(cfg.basis, rng, 2.0);
  const auto W = sample_wiener(2, 1.0, 512, 6);
  FlowBundle fb(run(cfg, u0, W), cfg);
  const Eigen::MatrixXd h = Eigen::MatrixXd::Random(2, 512);
  const auto D = malliavin_derivative(fb, h);
  const double eps = 1e-4;
  const WienerPath Wp(W.increments() + eps * W.dt() * h, 1.0, 0);
  const auto up = integrate(cfg, u0, Wp);
  const Eigen::VectorXd fd = (up.states.col(512) - fb.trajectory().states.col(512)) / eps;
  CHECK(rel_err(fd, D.coeffs()) < 1e-3);
}

TEST_CASE("second variation matches mixed differences") {
  const auto cfg = rd_config(8, 256);
  std::mt19937_64 rng(5);
  const auto u0 = random_field(cfg.basis, rng, 2.0);
  const auto W = sample_wiener(2, 1.0, 256, 7);
  FlowBundle fb(run(cfg, u0, W), cfg);
  const int s1 = 40, s2 = 90;
  const SpectralField p1(cfg.basis, fb.injected_noise().col(0)), p2(cfg.basis, fb.injected_noise().col(1));
  const auto J2 = higher_variation(fb, {s1, s2}, {p1, p2});
  const auto J2r = higher_variation(fb, {s2, s1}, {p2, p1});
  CHECK(rel_err(J2.coeffs(), J2r.coeffs()) < 1e-12);
  const double e = 1e-3;
  auto bump = [&](double a, double c) {
    Eigen::MatrixXd inc = W.increments();
    inc(0, s1 - 1) += a;
    inc(1, s2 - 1) += c;
    return Eigen::VectorXd(integrate(cfg, u0, WienerPath(inc, 1.0, 0)).states.col(256));
  };
  const Eigen::VectorXd mixed = (bump(e, e) - bump(e, -e) - bump(-e, e) + bump(-e, -e)) / (4 * e * e);
  CHECK(rel_err(mixed, J2.coeffs()) < 1e-2);
  // n = 1 reduces to J.
  CHECK(rel_err(higher_variation(fb, {s1}, {p1}).coeffs(), forward_J(fb, s1, 256, p1).coeffs()) < 1e-12);
  // Before the last injection the variation vanishes.
  CHECK(higher_variation(fb, {s1, s2}, {p1, p2}, 60).norm() == 0.0);
}

TEST_CASE("third variation matches a cubic difference") {
  const auto cfg = rd_config(6, 128);
  std::mt19937_64 rng(6);
  const auto u0 = random_field(cfg.basis, rng, 1.0);
  const auto W = sample_wiener(2, 1.0, 128, 8);
  FlowBundle fb(run(cfg, u0, W), cfg);
  const SpectralField p1(cfg.basis, fb.injected_noise().col(0)), p2(cfg.basis, fb.injected_noise().col(1));
  const auto J3 = higher_variation(fb, {20, 20, 50}, {p1, p2, p1});
  const double e = 2e-2;
  auto bump = [&](double a, double c, double d) {
    Eigen::MatrixXd inc = W.increments();
    inc(0, 19) += a;
    inc(1, 19) += c;
    inc(0, 49) += d;
    return Eigen::VectorXd(integrate(cfg, u0, WienerPath(inc, 1.0, 0)).states.col(128));
  };
  Eigen::VectorXd m = Eigen::VectorXd::Zero(cfg.basis->dim());
  for (int a : {-1, 1}) {
    for (int c : {-1, 1}) {
      for (int d : {-1, 1}) m += (a * c * d) * bump(a * e, c * e, d * e);
    }
  }
  m /= 8 * e * e * e;
  CHECK(rel_err(m, J3.coeffs()) < 1e-2);
}

TEST_CASE("set partitions are Bell numbers") {
  CHECK(set_partitions(1).size() == 1);
  CHECK(set_partitions(3).size() == 5);
  CHECK(set_partitions(4).size() == 15);
}
