#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

namespace spreadlab {

enum class Domain { kDirichletInterval, kTorus2D };

// Real Fourier mode on the torus; kx,ky lie in the half lattice
// (ky > 0, or ky == 0 and kx > 0).
struct TorusMode {
  int kx = 0;
  int ky = 0;
  bool is_sin = false;
};

// Truncated L2-orthonormal eigenbasis of L = -nu * Laplacian.
//   interval: e_k = sqrt(2) sin(k pi x), k = 1..K, lambda_k = nu pi^2 k^2
//   torus:    cos(k.x)/(sqrt(2) pi), sin(k.x)/(sqrt(2) pi) for k in the half
//             lattice with |kx|,|ky| <= K, lambda = nu |k|^2, sorted ascending.
class BasisSpec {
 public:
  static std::shared_ptr<const BasisSpec> dirichlet(int K, double nu);
  static std::shared_ptr<const BasisSpec> torus(int K, double nu);

  Domain domain() const { return domain_; }
  int truncation() const { return K_; }
  double viscosity() const { return nu_; }
  int dim() const { return static_cast<int>(eigenvalues_.size()); }
  const Eigen::VectorXd& eigenvalues() const { return eigenvalues_; }
  double eigenvalue(int i) const { return eigenvalues_(i); }

  const std::vector<TorusMode>& torus_modes() const { return modes_; }
  // Index of the real mode with wavevector +-k; -1 when outside the truncation.
  int torus_index(int kx, int ky, bool is_sin) const;
  // Interval wavenumber of basis index i (i + 1).
  int wavenumber(int i) const { return i + 1; }

  double eval(int i, double x, double y = 0.0) const;
  bool same_as(const BasisSpec& other) const;
  std::string describe() const;

 private:
  BasisSpec() = default;
  Domain domain_ = Domain::kDirichletInterval;
  int K_ = 0;
  double nu_ = 1.0;
  Eigen::VectorXd eigenvalues_;
  std::vector<TorusMode> modes_;
};

using BasisPtr = std::shared_ptr<const BasisSpec>;

class SpectralField {
 public:
  SpectralField() = default;
  explicit SpectralField(BasisPtr basis);
  SpectralField(BasisPtr basis, Eigen::VectorXd coeffs);
  static SpectralField unit(BasisPtr basis, int i, double scale = 1.0);

  const BasisPtr& basis_ptr() const { return basis_; }
  const BasisSpec& basis() const { return *basis_; }
  int dim() const { return static_cast<int>(coeffs_.size()); }
  const Eigen::VectorXd& coeffs() const { return coeffs_; }
  double operator[](int i) const { return coeffs_(i); }

  SpectralField operator+(const SpectralField& o) const;
  SpectralField operator-(const SpectralField& o) const;
  SpectralField operator*(double a) const;
  double norm() const { return coeffs_.norm(); }

 private:
  BasisPtr basis_;
  Eigen::VectorXd coeffs_;
};

void check_same_basis(const SpectralField& a, const SpectralField& b);

double sobolev_inner(const SpectralField& u, const SpectralField& v, double s);
double sobolev_norm(const SpectralField& u, double s);
// Weighted norm on raw coefficients: sqrt(sum lambda_k^{2s} c_k^2).
double sobolev_norm(const BasisSpec& basis, const Eigen::VectorXd& c, double s);
SpectralField apply_L(const SpectralField& u);

// Quadrature grid with basis values, used for pointwise nonlinearities.
// Interval: Gauss-Legendre nodes on [0,1]. Torus: n x n uniform grid
// (row-major in x, then y) with trapezoid weights.
class GridTransform {
 public:
  GridTransform(BasisPtr basis, int n_points);
  int n_points() const { return n_; }
  int size() const { return static_cast<int>(weights_.size()); }
  const Eigen::VectorXd& weights() const { return weights_; }
  const Eigen::VectorXd& x() const { return x_; }
  const Eigen::VectorXd& y() const { return y_; }
  Eigen::VectorXd to_grid(const Eigen::VectorXd& coeffs) const;
  Eigen::VectorXd from_grid(const Eigen::VectorXd& values) const;
  const Eigen::MatrixXd& basis_values() const { return values_; }

 private:
  BasisPtr basis_;
  int n_;
  Eigen::VectorXd x_, y_, weights_;
  Eigen::MatrixXd values_;  // size() x dim
};

Eigen::VectorXd to_grid(const SpectralField& u, int n_points);
SpectralField from_grid(const BasisPtr& basis, const Eigen::VectorXd& values, int n_points);

// Grid size that integrates products of `factors` fields times a test function.
int product_grid_points(const BasisSpec& basis, int factors);
// Galerkin projection of the pointwise product of the given fields.
SpectralField project_product(const std::vector<SpectralField>& fields);

struct Quadrature {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};
Quadrature gauss_legendre_unit(int n);

}  // namespace spreadlab
