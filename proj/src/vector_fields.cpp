#include "spreadlab/vector_fields.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "spreadlab/error.hpp"

namespace spreadlab {

namespace {

double falling_factorial(int j, int i) {
  double r = 1.0;
  for (int k = 0; k < i; ++k) r *= (j - k);
  return r;
}

void check_field_basis(const PolyVectorField& P, const SpectralField& x) {
  require(x.basis_ptr() && P.basis_ptr() && x.basis().same_as(P.basis()), ErrorCode::kBasisMismatch,
          "vector field and argument live on different bases");
}

}  // namespace

PolyVectorField::PolyVectorField(BasisPtr basis, int max_degree)
    : basis_(std::move(basis)), max_degree_(max_degree) {
  require(basis_ != nullptr, ErrorCode::kInvalidArgument, "null basis");
  require(max_degree >= 0, ErrorCode::kInvalidArgument, "negative max degree");
}

PolyVectorField PolyVectorField::constant(const SpectralField& g, int max_degree) {
  PolyVectorField P(g.basis_ptr(), max_degree);
  MultilinearForm c(0, g.dim(), g.dim());
  for (int i = 0; i < g.dim(); ++i) {
    if (g[i] != 0.0) c.add({}, i, g[i]);
  }
  c.finalize();
  P.add_form(c);
  return P;
}

PolyVectorField PolyVectorField::linear_L(BasisPtr basis, double scale, int max_degree) {
  PolyVectorField P(basis, max_degree);
  MultilinearForm l(1, basis->dim(), basis->dim());
  for (int i = 0; i < basis->dim(); ++i) l.add({i}, i, scale * basis->eigenvalue(i));
  l.finalize();
  P.add_form(l);
  return P;
}

void PolyVectorField::add_form(const MultilinearForm& f) {
  require(f.dim_in() == dim() && f.dim_out() == dim(), ErrorCode::kBasisMismatch, "form shape mismatch");
  require(f.degree() <= max_degree_, ErrorCode::kDegreeOverflow,
          "form degree " + std::to_string(f.degree()) + " exceeds max degree " + std::to_string(max_degree_));
  auto it = forms_.find(f.degree());
  if (it == forms_.end()) {
    forms_.emplace(f.degree(), f);
  } else {
    it->second = it->second.plus(f);
  }
}

const MultilinearForm* PolyVectorField::form(int j) const {
  auto it = forms_.find(j);
  return (it == forms_.end() || it->second.size() == 0) ? nullptr : &it->second;
}

std::vector<int> PolyVectorField::degrees() const {
  std::vector<int> d;
  for (const auto& [j, f] : forms_) {
    if (f.size() > 0) d.push_back(j);
  }
  return d;
}

int PolyVectorField::degree() const {
  auto d = degrees();
  return d.empty() ? -1 : d.back();
}

PolyVectorField PolyVectorField::scaled(double a) const {
  PolyVectorField r(basis_, max_degree_);
  for (const auto& [j, f] : forms_) {
    auto s = f.scaled(a);
    if (s.size() > 0) r.add_form(s);
  }
  return r;
}

PolyVectorField PolyVectorField::plus(const PolyVectorField& o) const {
  require(basis_->same_as(o.basis()), ErrorCode::kBasisMismatch, "fields on different bases");
  PolyVectorField r(basis_, std::max(max_degree_, o.max_degree_));
  for (const auto& [j, f] : forms_) r.add_form(f);
  for (const auto& [j, f] : o.forms_) r.add_form(f);
  return r;
}

SpectralField evaluate(const PolyVectorField& P, const SpectralField& x) {
  check_field_basis(P, x);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(P.dim());
  for (int j : P.degrees()) out += P.form(j)->apply_diagonal(x.coeffs());
  return SpectralField(P.basis_ptr(), std::move(out));
}

SpectralField frechet(const PolyVectorField& P, const SpectralField& x, const std::vector<SpectralField>& dirs) {
  require(!dirs.empty(), ErrorCode::kInvalidArgument, "frechet needs at least one direction");
  check_field_basis(P, x);
  for (const auto& d : dirs) check_field_basis(P, d);
  const int i = static_cast<int>(dirs.size());
  Eigen::VectorXd out = Eigen::VectorXd::Zero(P.dim());
  for (int j : P.degrees()) {
    if (j < i) continue;
    std::vector<const Eigen::VectorXd*> args;
    for (int k = 0; k < j - i; ++k) args.push_back(&x.coeffs());
    for (const auto& d : dirs) args.push_back(&d.coeffs());
    out += falling_factorial(j, i) * P.form(j)->apply(args);
  }
  return SpectralField(P.basis_ptr(), std::move(out));
}

Eigen::MatrixXd jacobian(const PolyVectorField& P, const Eigen::VectorXd& x) {
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(P.dim(), P.dim());
  for (int j : P.degrees()) {
    if (j >= 1) P.form(j)->add_derivative_matrix(x, 1.0, A);
  }
  return A;
}

SpectralField lie_bracket(const PolyVectorField& A, const PolyVectorField& B, const SpectralField& x) {
  const SpectralField a = evaluate(A, x);
  const SpectralField b = evaluate(B, x);
  return frechet(A, x, {b}) - frechet(B, x, {a});
}

PolyVectorField lie_bracket_sym(const PolyVectorField& A, const PolyVectorField& B) {
  require(A.basis().same_as(B.basis()), ErrorCode::kBasisMismatch, "fields on different bases");
  require(B.is_constant(), ErrorCode::kUnsupported, "symbolic bracket needs a constant second argument");
  Eigen::VectorXd b = Eigen::VectorXd::Zero(B.dim());
  if (const auto* f0 = B.form(0)) b = f0->apply_diagonal(b);
  PolyVectorField r(A.basis_ptr(), A.max_degree());
  for (int j : A.degrees()) {
    if (j == 0) continue;
    auto c = A.form(j)->contract_last(b).scaled(static_cast<double>(j));
    if (c.size() > 0) r.add_form(c);
  }
  return r;
}

PolyVectorField lie_bracket_composed(const PolyVectorField& A, const PolyVectorField& B) {
  require(A.basis().same_as(B.basis()), ErrorCode::kBasisMismatch, "fields on different bases");
  const int max_deg = std::max(A.max_degree(), B.max_degree());
  PolyVectorField r(A.basis_ptr(), max_deg);
  auto add_terms = [&](const PolyVectorField& X, const PolyVectorField& Y, double sign) {
    for (int j : X.degrees()) {
      if (j == 0) continue;
      for (int k : Y.degrees()) {
        const int deg = j - 1 + k;
        require(deg <= max_deg, ErrorCode::kDegreeOverflow,
                "bracket degree " + std::to_string(deg) + " exceeds max degree " + std::to_string(max_deg));
        auto c = X.form(j)->compose(*Y.form(k)).scaled(sign * j);
        if (c.size() > 0) r.add_form(c);
      }
    }
  };
  add_terms(A, B, 1.0);
  add_terms(B, A, -1.0);
  return r;
}

PolyVectorField iterated_bracket(const PolyVectorField& F, const PolyVectorField& Q,
                                 const std::vector<SpectralField>& gs) {
  PolyVectorField r = Q.is_constant() ? lie_bracket_sym(F, Q) : lie_bracket_composed(F, Q);
  for (const auto& g : gs) r = lie_bracket_sym(r, PolyVectorField::constant(g, r.max_degree()));
  return r;
}

ShiftExpansion expand_shift(const PolyVectorField& Q, const SpectralField& X, const std::vector<SpectralField>& G,
                            const Eigen::VectorXd& w) {
  check_field_basis(Q, X);
  const int d = static_cast<int>(G.size());
  require(w.size() == d, ErrorCode::kInvalidArgument, "w length must equal the number of generators");
  ShiftExpansion out;
  Eigen::VectorXd total = evaluate(Q, X).coeffs();
  out.coefficients.emplace(std::vector<int>{}, evaluate(Q, X));
  const int deg = std::max(Q.degree(), 0);
  for (int i = 1; i <= deg && d > 0; ++i) {
    std::vector<int> ks(static_cast<size_t>(i), 0);
    while (true) {
      std::vector<SpectralField> dirs;
      double denom = 1.0, wprod = 1.0;
      int run = 0;
      for (int p = 0; p < i; ++p) {
        dirs.push_back(G[static_cast<size_t>(ks[static_cast<size_t>(p)])]);
        run = (p > 0 && ks[static_cast<size_t>(p)] == ks[static_cast<size_t>(p - 1)]) ? run + 1 : 1;
        denom *= run;
        wprod *= w(ks[static_cast<size_t>(p)]);
      }
      SpectralField c = frechet(Q, X, dirs) * (1.0 / denom);
      total += wprod * c.coeffs();
      out.coefficients.emplace(ks, std::move(c));
      // Next nondecreasing tuple.
      int p = i - 1;
      while (p >= 0 && ks[static_cast<size_t>(p)] == d - 1) --p;
      if (p < 0) break;
      ++ks[static_cast<size_t>(p)];
      for (int q = p + 1; q < i; ++q) ks[static_cast<size_t>(q)] = ks[static_cast<size_t>(p)];
    }
  }
  out.reassembled = SpectralField(Q.basis_ptr(), std::move(total));
  return out;
}

double multilinear_bound(const MultilinearForm& N, const BasisSpec& basis, const NormSpec& norms, int samples,
                         std::uint64_t seed) {
  const int j = N.degree();
  const int n = N.dim_in();
  if (N.size() == 0 || j == 0) return j == 0 ? sobolev_norm(basis, N.apply_diagonal(Eigen::VectorXd::Zero(n)), norms.s_out) : 0.0;
  const auto& lam = basis.eigenvalues();
  auto weights = [&](double s) {
    Eigen::VectorXd w(n);
    for (int k = 0; k < n; ++k) w(k) = std::pow(lam(k), s);
    return w;
  };
  const Eigen::VectorXd w_first = weights(norms.s_first), w_rest = weights(norms.s_rest), w_out = weights(norms.s_out);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  double best = 0.0;
  for (int sample = 0; sample < samples; ++sample) {
    // x_p unit Euclidean; argument u_p = x_p ./ weight_p.
    std::vector<Eigen::VectorXd> x(static_cast<size_t>(j), Eigen::VectorXd(n));
    for (auto& v : x) {
      for (int k = 0; k < n; ++k) v(k) = normal(rng);
      v.normalize();
    }
    double value = 0.0;
    for (int sweep = 0; sweep < 50; ++sweep) {
      double prev = value;
      for (int p = 0; p < j; ++p) {
        const Eigen::VectorXd& wp = p == 0 ? w_first : w_rest;
        std::vector<Eigen::VectorXd> u(static_cast<size_t>(j));
        for (int q = 0; q < j; ++q) u[static_cast<size_t>(q)] = x[static_cast<size_t>(q)].cwiseQuotient(q == 0 ? w_first : w_rest);
        Eigen::MatrixXd M(N.dim_out(), n);
        Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
        std::vector<const Eigen::VectorXd*> args(static_cast<size_t>(j));
        for (int q = 0; q < j; ++q) args[static_cast<size_t>(q)] = &u[static_cast<size_t>(q)];
        args[static_cast<size_t>(p)] = &e;
        for (int c = 0; c < n; ++c) {
          e.setZero();
          e(c) = 1.0 / wp(c);
          M.col(c) = N.apply(args).cwiseProduct(w_out);
        }
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeThinV);
        value = svd.singularValues()(0);
        x[static_cast<size_t>(p)] = svd.matrixV().col(0);
      }
      if (std::abs(value - prev) <= 1e-12 * value) break;
    }
    best = std::max(best, value);
  }
  return best;
}

}  // namespace spreadlab
