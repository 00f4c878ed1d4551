#include "spreadlab/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "spreadlab/error.hpp"

namespace spreadlab {

namespace {
constexpr double kPi = std::numbers::pi;
const double kTorusNorm = 1.0 / (std::sqrt(2.0) * kPi);
}  // namespace

std::shared_ptr<const BasisSpec> BasisSpec::dirichlet(int K, double nu) {
  require(K >= 1, ErrorCode::kInvalidArgument, "truncation K must be positive");
  require(nu > 0 && std::isfinite(nu), ErrorCode::kInvalidArgument, "viscosity must be positive");
  auto b = std::shared_ptr<BasisSpec>(new BasisSpec());
  b->domain_ = Domain::kDirichletInterval;
  b->K_ = K;
  b->nu_ = nu;
  b->eigenvalues_.resize(K);
  for (int k = 1; k <= K; ++k) b->eigenvalues_(k - 1) = nu * kPi * kPi * k * k;
  return b;
}

std::shared_ptr<const BasisSpec> BasisSpec::torus(int K, double nu) {
  require(K >= 1, ErrorCode::kInvalidArgument, "truncation K must be positive");
  require(nu > 0 && std::isfinite(nu), ErrorCode::kInvalidArgument, "viscosity must be positive");
  auto b = std::shared_ptr<BasisSpec>(new BasisSpec());
  b->domain_ = Domain::kTorus2D;
  b->K_ = K;
  b->nu_ = nu;
  for (int ky = 0; ky <= K; ++ky) {
    for (int kx = -K; kx <= K; ++kx) {
      if (ky == 0 && kx <= 0) continue;
      b->modes_.push_back({kx, ky, false});
      b->modes_.push_back({kx, ky, true});
    }
  }
  std::stable_sort(b->modes_.begin(), b->modes_.end(), [](const TorusMode& a, const TorusMode& c) {
    const int na = a.kx * a.kx + a.ky * a.ky, nc = c.kx * c.kx + c.ky * c.ky;
    if (na != nc) return na < nc;
    if (a.kx != c.kx) return a.kx < c.kx;
    if (a.ky != c.ky) return a.ky < c.ky;
    return !a.is_sin && c.is_sin;
  });
  b->eigenvalues_.resize(static_cast<Eigen::Index>(b->modes_.size()));
  for (size_t i = 0; i < b->modes_.size(); ++i) {
    const auto& m = b->modes_[i];
    b->eigenvalues_(static_cast<Eigen::Index>(i)) = nu * (m.kx * m.kx + m.ky * m.ky);
  }
  return b;
}

int BasisSpec::torus_index(int kx, int ky, bool is_sin) const {
  if (domain_ != Domain::kTorus2D) return -1;
  if (ky < 0 || (ky == 0 && kx < 0)) {
    kx = -kx;
    ky = -ky;
  }
  for (size_t i = 0; i < modes_.size(); ++i) {
    if (modes_[i].kx == kx && modes_[i].ky == ky && modes_[i].is_sin == is_sin) return static_cast<int>(i);
  }
  return -1;
}

double BasisSpec::eval(int i, double x, double y) const {
  if (domain_ == Domain::kDirichletInterval) return std::sqrt(2.0) * std::sin((i + 1) * kPi * x);
  const auto& m = modes_[static_cast<size_t>(i)];
  const double phase = m.kx * x + m.ky * y;
  return kTorusNorm * (m.is_sin ? std::sin(phase) : std::cos(phase));
}

bool BasisSpec::same_as(const BasisSpec& o) const {
  return this == &o || (domain_ == o.domain_ && K_ == o.K_ && nu_ == o.nu_);
}

std::string BasisSpec::describe() const {
  std::ostringstream os;
  os << (domain_ == Domain::kDirichletInterval ? "DirichletInterval" : "Torus2D") << "(K=" << K_
     << ", nu=" << nu_ << ", dim=" << dim() << ")";
  return os.str();
}

SpectralField::SpectralField(BasisPtr basis) : basis_(std::move(basis)) {
  require(basis_ != nullptr, ErrorCode::kInvalidArgument, "null basis");
  coeffs_ = Eigen::VectorXd::Zero(basis_->dim());
}

SpectralField::SpectralField(BasisPtr basis, Eigen::VectorXd coeffs)
    : basis_(std::move(basis)), coeffs_(std::move(coeffs)) {
  require(basis_ != nullptr, ErrorCode::kInvalidArgument, "null basis");
  require(coeffs_.size() == basis_->dim(), ErrorCode::kBasisMismatch,
          "coefficient length does not match basis dimension");
  require(coeffs_.allFinite(), ErrorCode::kNonFinite, "non-finite spectral coefficients");
}

SpectralField SpectralField::unit(BasisPtr basis, int i, double scale) {
  require(basis && i >= 0 && i < basis->dim(), ErrorCode::kInvalidArgument, "basis index out of range");
  Eigen::VectorXd c = Eigen::VectorXd::Zero(basis->dim());
  c(i) = scale;
  return SpectralField(std::move(basis), std::move(c));
}

void check_same_basis(const SpectralField& a, const SpectralField& b) {
  require(a.basis_ptr() && b.basis_ptr() && a.basis().same_as(b.basis()), ErrorCode::kBasisMismatch,
          "fields live on different bases");
}

SpectralField SpectralField::operator+(const SpectralField& o) const {
  check_same_basis(*this, o);
  return SpectralField(basis_, coeffs_ + o.coeffs_);
}

SpectralField SpectralField::operator-(const SpectralField& o) const {
  check_same_basis(*this, o);
  return SpectralField(basis_, coeffs_ - o.coeffs_);
}

SpectralField SpectralField::operator*(double a) const { return SpectralField(basis_, coeffs_ * a); }

double sobolev_inner(const SpectralField& u, const SpectralField& v, double s) {
  check_same_basis(u, v);
  const auto& lam = u.basis().eigenvalues();
  double acc = 0.0;
  for (int k = 0; k < u.dim(); ++k) acc += std::pow(lam(k), 2.0 * s) * u[k] * v[k];
  require(std::isfinite(acc), ErrorCode::kNonFinite, "sobolev_inner overflow");
  return acc;
}

double sobolev_norm(const BasisSpec& basis, const Eigen::VectorXd& c, double s) {
  const auto& lam = basis.eigenvalues();
  double acc = 0.0;
  for (int k = 0; k < c.size(); ++k) acc += std::pow(lam(k), 2.0 * s) * c(k) * c(k);
  return std::sqrt(acc);
}

double sobolev_norm(const SpectralField& u, double s) { return std::sqrt(sobolev_inner(u, u, s)); }

SpectralField apply_L(const SpectralField& u) {
  return SpectralField(u.basis_ptr(), u.coeffs().cwiseProduct(u.basis().eigenvalues()));
}

Quadrature gauss_legendre_unit(int n) {
  require(n >= 1, ErrorCode::kInvalidArgument, "Gauss-Legendre needs n >= 1");
  Quadrature q;
  q.nodes.resize(n);
  q.weights.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(kPi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      if (n == 1) p0 = 1.0;
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    // Recompute derivative at the converged root for the weight.
    double p0 = 1.0, p1 = x;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    if (n == 1) p0 = 1.0;
    dp = n * (x * p1 - p0) / (x * x - 1.0);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    // Map [-1,1] -> [0,1], ascending nodes.
    q.nodes(i) = 0.5 * (1.0 - x);
    q.nodes(n - 1 - i) = 0.5 * (1.0 + x);
    q.weights(i) = 0.5 * w;
    q.weights(n - 1 - i) = 0.5 * w;
  }
  return q;
}

GridTransform::GridTransform(BasisPtr basis, int n_points) : basis_(std::move(basis)), n_(n_points) {
  require(basis_ != nullptr, ErrorCode::kInvalidArgument, "null basis");
  const int dim = basis_->dim();
  if (basis_->domain() == Domain::kDirichletInterval) {
    require(n_points >= 2 * dim, ErrorCode::kUndersampled, "grid needs at least 2*dim points");
    auto q = gauss_legendre_unit(n_points);
    x_ = q.nodes;
    y_ = Eigen::VectorXd::Zero(n_points);
    weights_ = q.weights;
  } else {
    require(n_points >= 2 * basis_->truncation() + 1 && n_points * n_points >= 2 * dim,
            ErrorCode::kUndersampled, "torus grid needs n >= 2K+1 and n^2 >= 2*dim");
    const int total = n_points * n_points;
    x_.resize(total);
    y_.resize(total);
    const double h = 2.0 * kPi / n_points;
    for (int a = 0; a < n_points; ++a) {
      for (int b = 0; b < n_points; ++b) {
        x_(a * n_points + b) = a * h;
        y_(a * n_points + b) = b * h;
      }
    }
    weights_ = Eigen::VectorXd::Constant(total, h * h);
  }
  values_.resize(weights_.size(), dim);
  for (Eigen::Index p = 0; p < weights_.size(); ++p) {
    for (int i = 0; i < dim; ++i) values_(p, i) = basis_->eval(i, x_(p), y_(p));
  }
}

Eigen::VectorXd GridTransform::to_grid(const Eigen::VectorXd& coeffs) const {
  require(coeffs.size() == values_.cols(), ErrorCode::kBasisMismatch, "coefficient length mismatch");
  return values_ * coeffs;
}

Eigen::VectorXd GridTransform::from_grid(const Eigen::VectorXd& values) const {
  require(values.size() == values_.rows(), ErrorCode::kBasisMismatch, "grid value count mismatch");
  require(values.allFinite(), ErrorCode::kNonFinite, "non-finite grid values");
  return values_.transpose() * values.cwiseProduct(weights_);
}

Eigen::VectorXd to_grid(const SpectralField& u, int n_points) {
  return GridTransform(u.basis_ptr(), n_points).to_grid(u.coeffs());
}

SpectralField from_grid(const BasisPtr& basis, const Eigen::VectorXd& values, int n_points) {
  return SpectralField(basis, GridTransform(basis, n_points).from_grid(values));
}

int product_grid_points(const BasisSpec& basis, int factors) {
  const int K = basis.truncation();
  if (basis.domain() == Domain::kDirichletInterval) {
    return std::max(2 * basis.dim(), 2 * (factors + 1) * K + 16);
  }
  int n = (factors + 1) * K + 1;
  while (n * n < 2 * basis.dim() || n < 2 * K + 1) ++n;
  return n;
}

SpectralField project_product(const std::vector<SpectralField>& fields) {
  require(!fields.empty(), ErrorCode::kInvalidArgument, "empty product");
  for (const auto& f : fields) check_same_basis(fields.front(), f);
  const auto& basis = fields.front().basis_ptr();
  GridTransform grid(basis, product_grid_points(*basis, static_cast<int>(fields.size())));
  Eigen::VectorXd prod = Eigen::VectorXd::Ones(grid.size());
  for (const auto& f : fields) prod = prod.cwiseProduct(grid.to_grid(f.coeffs()));
  return SpectralField(basis, grid.from_grid(prod));
}

}  // namespace spreadlab
