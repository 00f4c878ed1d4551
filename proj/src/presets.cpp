#include "spreadlab/presets.hpp"

#include <cmath>
#include <complex>
#include <map>
#include <numbers>
#include <set>

#include "spreadlab/error.hpp"

namespace spreadlab {

MultilinearForm rd_power_form(const BasisPtr& basis, int j) {
  require(basis->domain() == Domain::kDirichletInterval, ErrorCode::kInvalidArgument, "RD preset needs the interval basis");
  require(j >= 0, ErrorCode::kInvalidArgument, "negative power");
  const int n = basis->dim();
  MultilinearForm f(j, n, n);
  GridTransform grid(basis, product_grid_points(*basis, j));
  const Eigen::MatrixXd& E = grid.basis_values();
  std::vector<int> tuple(static_cast<size_t>(j), 0);
  while (true) {
    Eigen::VectorXd prod = Eigen::VectorXd::Ones(grid.size());
    for (int i : tuple) prod = prod.cwiseProduct(E.col(i));
    const Eigen::VectorXd proj = grid.from_grid(prod);
    for (int o = 0; o < n; ++o) {
      // Selection-rule zeros come back as quadrature noise; keep them exact.
      if (std::abs(proj(o)) > 1e-12) f.add(tuple, o, proj(o));
    }
    int p = j - 1;
    while (p >= 0 && tuple[static_cast<size_t>(p)] == n - 1) --p;
    if (p < 0) break;
    ++tuple[static_cast<size_t>(p)];
    for (int q = p + 1; q < j; ++q) tuple[static_cast<size_t>(q)] = tuple[static_cast<size_t>(p)];
  }
  f.finalize();
  return f;
}

PolyVectorField rd_drift(const BasisPtr& basis, const std::vector<double>& a, int max_degree) {
  const int n = basis->dim();
  PolyVectorField F(basis, max_degree);
  MultilinearForm lin(1, n, n);
  const double a1 = a.size() > 1 ? a[1] : 0.0;
  for (int i = 0; i < n; ++i) lin.add({i}, i, -basis->eigenvalue(i) + a1);
  lin.finalize();
  F.add_form(lin);
  for (size_t k = 0; k < a.size(); ++k) {
    if (k == 1 || a[k] == 0.0) continue;
    F.add_form(rd_power_form(basis, static_cast<int>(k)).scaled(a[k]));
  }
  return F;
}

namespace {

using Complex = std::complex<double>;
using Lattice = std::pair<int, int>;

// Real basis function as a combination of e^{i k.x} (normalization applied by caller).
std::vector<std::pair<Lattice, Complex>> exponentials(const TorusMode& m) {
  const Lattice kp{m.kx, m.ky}, km{-m.kx, -m.ky};
  if (m.is_sin) return {{kp, Complex(0.0, -0.5)}, {km, Complex(0.0, 0.5)}};
  return {{kp, Complex(0.5, 0.0)}, {km, Complex(0.5, 0.0)}};
}

// B(K E_p, E_q) = -(p x q)/|p|^2 E_{p+q}.
void add_transport(const Lattice& p, Complex cp, const Lattice& q, Complex cq, std::map<Lattice, Complex>& out) {
  const double cross = static_cast<double>(p.first * q.second - p.second * q.first);
  if (cross == 0.0) return;
  const double np = static_cast<double>(p.first * p.first + p.second * p.second);
  out[{p.first + q.first, p.second + q.second}] += -cross / np * cp * cq;
}

}  // namespace

MultilinearForm ns_bilinear_form(const BasisPtr& basis) {
  require(basis->domain() == Domain::kTorus2D, ErrorCode::kInvalidArgument, "NS preset needs the torus basis");
  const int n = basis->dim();
  const double A = 1.0 / (std::sqrt(2.0) * std::numbers::pi);
  // <f, c_k> = 2 pi^2 A (f_k + f_-k), <f, s_k> = 2 pi^2 A i (f_k - f_-k); inputs carry A each.
  const double scale = 2.0 * std::numbers::pi * std::numbers::pi * A * A * A;
  const auto& modes = basis->torus_modes();
  MultilinearForm f(2, n, n);
  for (int a = 0; a < n; ++a) {
    const auto ea = exponentials(modes[static_cast<size_t>(a)]);
    for (int b = a; b < n; ++b) {
      const auto eb = exponentials(modes[static_cast<size_t>(b)]);
      std::map<Lattice, Complex> prod;
      for (const auto& [p, cp] : ea) {
        for (const auto& [q, cq] : eb) {
          add_transport(p, 0.5 * cp, q, cq, prod);
          add_transport(q, 0.5 * cq, p, cp, prod);
        }
      }
      for (int o = 0; o < n; ++o) {
        const auto& m = modes[static_cast<size_t>(o)];
        auto get = [&](int kx, int ky) {
          auto it = prod.find({kx, ky});
          return it == prod.end() ? Complex(0.0) : it->second;
        };
        const Complex fp = get(m.kx, m.ky), fm = get(-m.kx, -m.ky);
        const Complex v = m.is_sin ? Complex(0.0, 1.0) * (fp - fm) : fp + fm;
        const double c = scale * v.real();
        if (c != 0.0 && std::abs(c) > 1e-15) f.add({a, b}, o, c);
      }
    }
  }
  f.finalize();
  return f;
}

PolyVectorField ns_drift(const BasisPtr& basis) {
  PolyVectorField F = PolyVectorField::linear_L(basis, -1.0);
  F.add_form(ns_bilinear_form(basis));
  return F;
}

std::vector<SpectralField> ns_generators(const BasisPtr& basis, const std::vector<LatticePoint>& Z0, double amp) {
  std::set<std::pair<int, int>> seen;
  std::vector<SpectralField> gs;
  for (const auto& k : Z0) {
    require(k[0] != 0 || k[1] != 0, ErrorCode::kInvalidArgument, "Z0 contains the origin");
    int kx = k[0], ky = k[1];
    if (ky < 0 || (ky == 0 && kx < 0)) {
      kx = -kx;
      ky = -ky;
    }
    if (!seen.insert({kx, ky}).second) continue;
    for (bool s : {false, true}) {
      const int idx = basis->torus_index(kx, ky, s);
      require(idx >= 0, ErrorCode::kInvalidArgument, "forced mode outside the truncation");
      gs.push_back(SpectralField::unit(basis, idx, amp));
    }
  }
  return gs;
}

std::vector<SpectralField> rd_generators(const BasisPtr& basis, const std::vector<int>& wavenumbers, double amp) {
  std::vector<SpectralField> gs;
  for (int k : wavenumbers) {
    require(k >= 1 && k <= basis->dim(), ErrorCode::kInvalidArgument, "forced mode outside the truncation");
    gs.push_back(SpectralField::unit(basis, k - 1, amp));
  }
  return gs;
}

}  // namespace spreadlab
