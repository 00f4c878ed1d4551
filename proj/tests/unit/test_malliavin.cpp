#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "spreadlab/error.hpp"
#include "spreadlab/malliavin.hpp"
#include "spreadlab/presets.hpp"

using namespace spreadlab;
using testing_util::random_field;

namespace {

Eigen::MatrixXd naive_forward(const FlowBundle& b, const Eigen::MatrixXd& psi) {
  const int N = static_cast<int>(psi.cols());
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(N, N);
  for (int i = 0; i < b.steps(); ++i) {
    for (int k = 0; k < b.injected_noise().cols(); ++k) {
      const SpectralField v(b.basis(), b.injected_noise().col(k));
      const Eigen::VectorXd j = forward_J(b, i + 1, b.steps(), v).coeffs();
      const Eigen::VectorXd z = psi.transpose() * j;
      M += b.dt() * z * z.transpose();
    }
  }
  return M;
}

}  // namespace

TEST_CASE("spectrum examples") {
  const auto s1 = spectrum(Eigen::MatrixXd::Identity(4, 4));
  CHECK((s1.values.array() - 1.0).abs().maxCoeff() < 1e-15);
  Eigen::MatrixXd d = Eigen::Vector3d(3, 1, 2).asDiagonal();
  const auto s2 = spectrum(d);
  CHECK(s2.values(0) == 1.0);
  CHECK(s2.values(2) == 3.0);
  std::mt19937_64 rng(1);
  Eigen::MatrixXd A(8, 8);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) A(i, j) = testing_util::random_vector(1, rng)(0);
  const Eigen::MatrixXd M = A + A.transpose();
  const auto s = spectrum(M);
  CHECK((s.vectors * s.values.asDiagonal() * s.vectors.transpose() - M).norm() <= 1e-10 * M.norm());
  for (int k = 0; k < 8; ++k) {
    CHECK((M * s.vectors.col(k) - s.values(k) * s.vectors.col(k)).norm() <= 1e-10 * M.norm());
    if (k) CHECK(s.values(k) >= s.values(k - 1));
  }
  Eigen::MatrixXd bad = M;
  bad(0, 1) += 1.0;
  CHECK_THROWS_AS(spectrum(bad), Error);
}

TEST_CASE("cone minimization") {
  Eigen::Matrix2d M;
  M << 1, 0, 0, 10;
  Eigen::MatrixXd S(2, 1);
  S << 0, 1;
  const Eigen::VectorXd w = Eigen::VectorXd::Ones(2);
  CHECK(inf_cone(M, S, 1.0, w).value == doctest::Approx(10.0).epsilon(1e-9));
  CHECK_THROWS_AS(inf_cone(M, S, 1.5, w), Error);
  CHECK_THROWS_AS(inf_cone(M, S, 0.0, w), Error);
  // Pi = I: the cone is the annulus delta <= |x| <= 1, so inf = delta^2 lambda_min.
  std::mt19937_64 rng(2);
  Eigen::MatrixXd A = Eigen::MatrixXd::Random(6, 6);
  const Eigen::MatrixXd P = A * A.transpose();
  const double lmin = spectrum(P).values(0);
  CHECK(inf_cone(P, Eigen::MatrixXd::Identity(6, 6), 1.0, Eigen::VectorXd::Ones(6)).value ==
        doctest::Approx(lmin).epsilon(1e-8));
  CHECK(inf_cone(P, Eigen::MatrixXd::Identity(6, 6), 0.1, Eigen::VectorXd::Ones(6)).value ==
        doctest::Approx(0.01 * lmin).epsilon(1e-6));
  // delta = 1 on a subspace: at most lambda_min of the compression to range(Pi).
  Eigen::MatrixXd S2 = Eigen::MatrixXd::Zero(6, 2);
  S2(1, 0) = 1;
  S2(4, 1) = 1;
  Eigen::Matrix2d sub;
  sub << P(1, 1), P(1, 4), P(4, 1), P(4, 4);
  const double csub = spectrum(sub).values(0);
  const auto r = inf_cone(P, S2, 1.0, Eigen::VectorXd::Ones(6));
  CHECK(r.value <= csub * (1 + 1e-9));
  CHECK(r.value == doctest::Approx(csub).epsilon(1e-8));
  // Brute-force check on a small cone with weights.
  const Eigen::VectorXd wt = Eigen::VectorXd::LinSpaced(6, 1.0, 3.0);
  const auto rw = inf_cone(P, S2, 0.5, wt);
  std::uniform_real_distribution<double> u(-1, 1);
  double best = 1e300;
  for (int t = 0; t < 200000; ++t) {
    Eigen::VectorXd x(6);
    for (int k = 0; k < 6; ++k) x(k) = u(rng);
    x /= x.norm();
    const double rad = std::pow(u(rng) * 0.5 + 0.5, 1.0);
    x *= rad;
    Eigen::VectorXd px = x;
    px(0) = px(2) = px(3) = px(5) = 0;  // x already in weighted coordinates
    if (px.norm() < 0.5) continue;
    const Eigen::VectorXd phi = x.cwiseQuotient(wt);
    best = std::min(best, phi.dot(P * phi));
  }
  CHECK(rw.value <= best * (1 + 1e-9));
  const Eigen::VectorXd xa = wt.cwiseProduct(rw.argmin);
  CHECK(xa.norm() <= 1 + 1e-9);
}

TEST_CASE("cone projection is a nearest point") {
  std::mt19937_64 rng(3);
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(5, 2);
  Q(0, 0) = Q(3, 1) = 1;
  for (int t = 0; t < 200; ++t) {
    const Eigen::VectorXd x = testing_util::random_vector(5, rng, 1.5);
    const Eigen::VectorXd p = project_cone(x, Q, 0.4, x);
    CHECK(p.norm() <= 1 + 1e-12);
    CHECK((Q.transpose() * p).norm() >= 0.4 - 1e-12);
    for (int s = 0; s < 50; ++s) {
      Eigen::VectorXd y = testing_util::random_vector(5, rng);
      y /= std::max(1.0, y.norm());
      if ((Q.transpose() * y).norm() < 0.4) continue;
      CHECK((x - p).norm() <= (x - y).norm() + 1e-12);
    }
  }
}

TEST_CASE("Malliavin matrices: linear closed form and representations") {
  auto b = BasisSpec::dirichlet(5, 0.4);
  SpdeConfig cfg;
  cfg.basis = b;
  cfg.F = PolyVectorField::linear_L(b, -1.0);
  cfg.G = {SpectralField(b, Eigen::VectorXd::LinSpaced(5, 1.0, 0.2))};
  cfg.steps = 2000;
  const auto traj = std::make_shared<const Trajectory>(integrate(cfg, SpectralField(b), sample_wiener(1, 1.0, 2000, 1)));
  FlowBundle fb(traj, cfg);
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(5, 5);
  const auto Mf = assemble_forward(fb, I);
  const auto Ma = assemble_adjoint(fb, I);
  CHECK((Mf.entries - Ma.entries).norm() <= 1e-12 * Mf.entries.norm());
  for (int k = 0; k < 5; ++k) {
    const double lam = b->eigenvalue(k), g = cfg.G[0][k];
    CHECK(Mf.entries(k, k) == doctest::Approx(g * g * (1 - std::exp(-2 * lam)) / (2 * lam)).epsilon(0.01));
  }
  SpdeConfig zero = cfg;
  zero.G = {SpectralField(b)};
  FlowBundle fz(std::make_shared<const Trajectory>(integrate(zero, SpectralField(b), sample_wiener(1, 1.0, 2000, 1))),
                zero);
  CHECK(assemble_forward(fz, I).entries.norm() == 0.0);
  CHECK(assemble_adjoint(fz, I).entries.norm() == 0.0);
  CHECK_THROWS_AS(assemble_forward(fb, 2.0 * I), Error);
}

TEST_CASE("forward assembly equals naive propagation, sub-basis is a principal submatrix") {
  auto b = BasisSpec::dirichlet(10, 0.1);
  SpdeConfig cfg;
  cfg.basis = b;
  cfg.F = rd_drift(b, {0.0, 1.0, 0.0, -1.0});
  cfg.G = rd_generators(b, {1, 2}, 1.0);
  cfg.steps = 128;
  std::mt19937_64 rng(4);
  const auto u0 = random_field(b, rng, 2.0);
  FlowBundle fb(std::make_shared<const Trajectory>(integrate(cfg, u0, sample_wiener(2, 1.0, 128, 2))), cfg);
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(10, 10);
  const auto Mf = assemble_forward(fb, I);
  const Eigen::MatrixXd Mn = naive_forward(fb, I);
  CHECK((Mf.entries - Mn).norm() <= 1e-12 * Mn.norm());
  const Eigen::MatrixXd sub = I.leftCols(3);
  const auto Ms = assemble_forward(fb, sub);
  CHECK((Ms.entries - Mf.entries.topLeftCorner(3, 3)).norm() <= 1e-12 * Mf.entries.norm());
  const auto sp = spectrum(Mf.entries);
  CHECK(sp.values(0) >= -1e-10 * Mf.entries.norm());
  // Adjoint representation: close, and exact for the exact-transpose scheme.
  FlowBundle fe(std::make_shared<const Trajectory>(fb.trajectory()), cfg, AdjointScheme::kExactTranspose);
  CHECK((assemble_adjoint(fe, I).entries - Mf.entries).norm() <= 1e-12 * Mf.entries.norm());
  const auto Ma = assemble_adjoint(fb, I);
  CHECK((Ma.entries - Mf.entries).norm() <= 0.1 * Mf.entries.norm());
}

TEST_CASE("small-ball tables") {
  double lo, hi;
  wilson_interval(0, 100, lo, hi);
  CHECK(lo == 0.0);
  CHECK(hi == doctest::Approx(0.037).epsilon(0.02));
  std::vector<double> vals;
  for (int i = 1; i <= 1000; ++i) vals.push_back(i / 1000.0);
  // P(V < eps) = eps: slope 1.
  const auto t = smallball_table(vals, {0.4, 0.2, 0.1, 0.05, 0.02, 0.01});
  CHECK(t.monotone);
  CHECK(t.slope == doctest::Approx(1.0).epsilon(0.05));
  CHECK(t.resolved == 6);
  CHECK_THROWS_AS(smallball_table({}, {0.1}), Error);
  const auto im = truncated_inverse_moment({1e-20, 0.5, 1.0}, 1.0);
  CHECK(im.exceed == 1);
  CHECK(im.mean == doctest::Approx((1e12 + 2 + 1) / 3));
}

TEST_CASE("small-ball with full forcing has no small values") {
  auto b = BasisSpec::dirichlet(3, 1.0);
  SpdeConfig cfg;
  cfg.basis = b;
  cfg.F = PolyVectorField::linear_L(b, -1.0);
  cfg.G = rd_generators(b, {1, 2, 3}, 1.0);
  cfg.steps = 2048;
  std::vector<SpectralField> S = {SpectralField::unit(b, 0), SpectralField::unit(b, 1), SpectralField::unit(b, 2)};
  const auto r = smallball(cfg, SpectralField(b), 1.0, S, 0.5, {1e-4, 1e-5}, 5, 1, 0.0);
  for (const auto& row : r.table.rows) CHECK(row.hits == 0);
  CHECK_THROWS_AS(smallball(cfg, SpectralField(b), 1.0, S, 0.5, {1e-3}, 0, 1, 0.0), Error);
}
