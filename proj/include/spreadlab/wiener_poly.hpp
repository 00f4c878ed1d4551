#pragma once

#include <map>
#include <vector>

#include "spreadlab/sde.hpp"

namespace spreadlab {

// Z = sum over sorted index tuples s (|s| <= n) of mult(s) A_s(t) prod_{i in s} W_i(t),
// i.e. the fully symmetric sum over ordered tuples. Coefficients are either
// constants or processes sampled on the nodes of one time grid.
class WienerPolynomial {
 public:
  struct Coefficient {
    bool constant = true;
    double value = 0.0;
    Eigen::VectorXd samples;
    double at(int node) const { return constant ? value : samples(node); }
  };

  // samples = 0 means "no process grid yet"; the first process fixes it.
  WienerPolynomial(int n, int d, int samples = 0);

  int n() const { return n_; }
  int d() const { return d_; }
  int samples() const { return samples_; }
  bool is_constant() const;

  void set_constant(std::vector<int> idx, double value);
  void set_process(std::vector<int> idx, Eigen::VectorXd samples);
  // Symmetric access: any permutation of idx gives the same coefficient.
  double coefficient(std::vector<int> idx, int node) const;
  const std::map<std::vector<int>, Coefficient>& terms() const { return terms_; }

 private:
  int n_, d_, samples_;
  std::map<std::vector<int>, Coefficient> terms_;
};

// prod_{i in s} W_i at every node.
Eigen::VectorXd wiener_monomial(const std::vector<int>& s, const WienerPath& W);
Eigen::VectorXd evaluate_Z(const WienerPolynomial& Z, const WienerPath& W);
// Sum of products of increments over the partition with `stride` grid steps.
double discrete_qv(const Eigen::VectorXd& z1, const Eigen::VectorXd& z2, int stride);
// Trapezoid quadrature over nodes [begin, end] of the closed-form integrand
// sum_r Z1_r Z2_r, expanded directly over pairs of terms.
double qv_formula(const WienerPolynomial& Z1, const WienerPolynomial& Z2, const WienerPath& W, int begin = 0,
                  int end = -1);
// Z_r: differentiate in the r-th slot, so <Z>_T = sum_r int Z_r^2.
WienerPolynomial reduce_Zr(const WienerPolynomial& Z, int r);
double trapezoid(const Eigen::VectorXd& f, double dt, int begin = 0, int end = -1);

struct RecoveryReport {
  double sup_Z = 0.0;
  // sup |Z_{r_1..r_k}| for every reduction path (sorted), including {} = Z.
  std::map<std::vector<int>, double> node_sup;
  // Top-degree recovered coefficients: leaf / n! for every sorted path of length n.
  std::map<std::vector<int>, double> recovered;
  double max_node_sup = 0.0;  // over paths of length >= 1
  bool small = false;         // sup_Z <= tol and every node sup <= tol_prime
};
// tol_prime defaults to tol when negative.
RecoveryReport coefficient_recovery_check(const WienerPolynomial& Z, const WienerPath& W, double tol,
                                          double tol_prime = -1.0);

struct ItoDecomposition {
  Eigen::VectorXd Z, V, M;  // on nodes [begin, steps]; M = Z - V
};
// Constant coefficients only. V uses left-endpoint sums of the pairing terms.
ItoDecomposition ito_decompose(const WienerPolynomial& Z, const WienerPath& W, int begin = 0);

enum class EventVariant { kUniform, kIntegral };

struct EventParams {
  double eps = 0.25;
  EventVariant variant = EventVariant::kUniform;
  double g0 = 0.0;  // integral variant: g(t) = g0 + int_0^t Z
};

struct EventRecord {
  int n = 0;
  bool D = false;   // sup|Z| small (or sup|g| for the integral variant)
  bool Ec = false;  // some coefficient of degree >= 1 not small
  bool C = false;   // Lipschitz bounds (integral variant: also E(R))
  bool B = false;   // Hoelder-1/4 bounds on Wiener monomials
  bool lhs = false;
  bool f_evaluated = false;
  bool F = false;
  int intervals = 0;      // partition size when F was evaluated
  int witness = -1;       // first interval where D* held
  bool holds = true;      // lhs implies (not B or F)
  double log_sup = 0.0;   // log of the D statistic
};

// Evaluates the indicators of the pathwise inclusion (thresholds in log
// space, F only when needed). Throws kGridTooCoarse if F is needed but the
// partition length is below the grid step.
EventRecord event_calculus(const WienerPolynomial& Z, const WienerPath& W, const EventParams& p);

// inf over symmetric lambda with max|lambda| >= 1 of sup over nodes [a, b]
// of |Z_lambda|, for the monomial basis of (n, d). Upper estimate via the
// supplied snapshot and Lawson minimax.
double dstar_inf(const std::vector<Eigen::VectorXd>& basis_on_interval, const Eigen::VectorXd& snapshot);

struct LemmaCheck {
  bool hypotheses = false;
  bool conclusion = false;
  bool holds = true;  // hypotheses imply conclusion
  double bound = 0.0;
  double value = 0.0;  // the quantity compared against bound
};
// f sampled at nodes 0..m on [0, t], interpreted as piecewise linear.
// Hypotheses: int |f|^l < eps and Hol_rho(f) < c eps^{-gamma};
// conclusion: sup|f| < (1 + c) eps^{(rho - gamma) / (1 + l rho)}.
LemmaCheck norris_lp_check(const Eigen::VectorXd& f, double t, double l, double rho, double gamma, double eps,
                           double c);
// G = G0 + int_0 H with H piecewise linear. Hypotheses: Hol_alpha(H) <= c eps^{-gamma},
// t >= eps^{(1+gamma)/(1+alpha)}, sup|G| <= eps; conclusion sup|H| <= (2+c) eps^{(alpha-gamma)/(1+alpha)}.
LemmaCheck integral_derivative_check(double G0, const Eigen::VectorXd& H, double t, double alpha, double gamma,
                                     double c, double eps);

// Exact sup over [0, t] of all-pairs Hoelder quotients between nodes.
double holder_nodes(const Eigen::VectorXd& f, double dt, double rho);

}  // namespace spreadlab
