#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "spreadlab/multilinear.hpp"
#include "spreadlab/spectral.hpp"

namespace spreadlab {

inline constexpr int kDefaultMaxDegree = 5;

// Polynomial vector field P(x) = sum_j P_j(x, ..., x) on a truncated basis,
// with P_0 the constant part and P_1 the linear part.
class PolyVectorField {
 public:
  PolyVectorField() = default;
  explicit PolyVectorField(BasisPtr basis, int max_degree = kDefaultMaxDegree);

  static PolyVectorField constant(const SpectralField& g, int max_degree = kDefaultMaxDegree);
  // scale * L (diagonal in the eigenbasis).
  static PolyVectorField linear_L(BasisPtr basis, double scale, int max_degree = kDefaultMaxDegree);

  const BasisPtr& basis_ptr() const { return basis_; }
  const BasisSpec& basis() const { return *basis_; }
  int dim() const { return basis_->dim(); }
  int max_degree() const { return max_degree_; }

  // Adds f to the component of its degree.
  void add_form(const MultilinearForm& f);
  const MultilinearForm* form(int j) const;
  std::vector<int> degrees() const;
  int degree() const;  // -1 for the zero field
  bool is_constant() const { return degree() <= 0; }

  PolyVectorField scaled(double a) const;
  PolyVectorField plus(const PolyVectorField& o) const;

 private:
  BasisPtr basis_;
  int max_degree_ = kDefaultMaxDegree;
  std::map<int, MultilinearForm> forms_;
};

SpectralField evaluate(const PolyVectorField& P, const SpectralField& x);
// sum_j j!/(j-i)! P_j(x^{j-i}, dirs...), i = dirs.size() >= 1.
SpectralField frechet(const PolyVectorField& P, const SpectralField& x, const std::vector<SpectralField>& dirs);
// Dense Jacobian DP(x).
Eigen::MatrixXd jacobian(const PolyVectorField& P, const Eigen::VectorXd& x);

// [A,B](x) = DA(x)B(x) - DB(x)A(x).
SpectralField lie_bracket(const PolyVectorField& A, const PolyVectorField& B, const SpectralField& x);
// DA(.)b for constant B = b; throws kUnsupported when B is not constant.
PolyVectorField lie_bracket_sym(const PolyVectorField& A, const PolyVectorField& B);
// Symbolic [A,B] for polynomial B by composition; throws kDegreeOverflow past max degree.
PolyVectorField lie_bracket_composed(const PolyVectorField& A, const PolyVectorField& B);
// [...[[F,Q],g_1],...,g_n].
PolyVectorField iterated_bracket(const PolyVectorField& F, const PolyVectorField& Q,
                                 const std::vector<SpectralField>& gs);

struct ShiftExpansion {
  // Key: sorted driver multiset (k_1 <= ... <= k_i); value: the Taylor
  // coefficient of w_{k_1}...w_{k_i}, i.e. D^iQ(X)(g_k...) / prod(count!).
  std::map<std::vector<int>, SpectralField> coefficients;
  SpectralField reassembled;  // sum coeff * prod w
};
ShiftExpansion expand_shift(const PolyVectorField& Q, const SpectralField& X, const std::vector<SpectralField>& G,
                            const Eigen::VectorXd& w);

// Sobolev exponents used by multilinear_bound: |N(u_1..u_j)|_{s_out} <=
// C |u_1|_{s_first} |u_2|_{s_rest} ... |u_j|_{s_rest}.
struct NormSpec {
  double s_first = 0.0;
  double s_rest = 0.5;
  double s_out = -0.5;
};
// Sampled lower bound of the smallest constant C; running max over
// `samples` alternating-maximization starts (nondecreasing in samples).
double multilinear_bound(const MultilinearForm& N, const BasisSpec& basis, const NormSpec& norms, int samples,
                         std::uint64_t seed);

}  // namespace spreadlab
