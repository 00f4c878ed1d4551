#pragma once

#include <cstdint>
#include <memory>
#include <string_view>

#include "spreadlab/vector_fields.hpp"

namespace spreadlab {

std::uint64_t splitmix64(std::uint64_t x);
// seed_master xor replica index, mixed before seeding an engine.
std::uint64_t replica_seed(std::uint64_t master, std::uint64_t replica);
// master seed combined with a stable hash of (experiment name, replica index).
std::uint64_t experiment_seed(std::uint64_t master, std::string_view experiment, std::uint64_t replica);

// d independent Brownian motions on a uniform grid. Increments are the
// primitive; values are their cumulative sums with W(0) = 0.
class WienerPath {
 public:
  WienerPath(Eigen::MatrixXd increments, double T, std::uint64_t seed);
  int d() const { return static_cast<int>(increments_.rows()); }
  int steps() const { return static_cast<int>(increments_.cols()); }
  double T() const { return T_; }
  double dt() const { return T_ / steps(); }
  std::uint64_t seed() const { return seed_; }
  const Eigen::MatrixXd& increments() const { return increments_; }
  const Eigen::MatrixXd& values() const { return values_; }
  // Same path on a grid `factor` times coarser (sums of consecutive increments).
  WienerPath coarsen(int factor) const;

 private:
  Eigen::MatrixXd increments_;
  Eigen::MatrixXd values_;
  double T_;
  std::uint64_t seed_;
};

WienerPath sample_wiener(int d, double T, int steps, std::uint64_t seed);

enum class Scheme { kExponentialEuler, kSemiImplicitEuler };

struct SpdeConfig {
  BasisPtr basis;
  PolyVectorField F;               // full drift, including the -L part
  std::vector<SpectralField> G;    // g_1..g_d
  Scheme scheme = Scheme::kExponentialEuler;
  int steps = 4096;
  Eigen::MatrixXd forcing;         // dim x steps samples f(t_i); empty means f = 0
  double blowup_threshold = 1e8;
  double v_exponent = 0.5;         // Sobolev exponent of the V-norm
};

// Splits F into a diagonal linear part D (treated by e^{dt D} or
// (I - dt D)^{-1}) and an explicit remainder R.
// Step map: u_{i+1} = S (u_i + dt R(u_i) + dt f_i + G dW_i).
class StepOperator {
 public:
  StepOperator(const SpdeConfig& cfg, double dt);
  const Eigen::VectorXd& S() const { return S_; }
  const Eigen::VectorXd& diagonal() const { return diag_; }
  const PolyVectorField& remainder() const { return R_; }
  double dt() const { return dt_; }
  Eigen::VectorXd remainder_value(const Eigen::VectorXd& u) const;
  // out += DR(u) v
  void add_remainder_derivative(const Eigen::VectorXd& u, const Eigen::VectorXd& v, Eigen::VectorXd& out) const;
  // out += DR(u)^T w
  void add_remainder_derivative_transpose(const Eigen::VectorXd& u, const Eigen::VectorXd& w,
                                          Eigen::VectorXd& out) const;
  Eigen::MatrixXd remainder_jacobian(const Eigen::VectorXd& u) const;

 private:
  double dt_;
  Eigen::VectorXd diag_, S_;
  PolyVectorField R_;
};

enum class RunStatus { kOk, kDiverged };

struct Trajectory {
  BasisPtr basis;
  Eigen::MatrixXd states;  // dim x (steps + 1); NaN after divergence
  double T = 1.0;
  int steps = 0;
  std::shared_ptr<const WienerPath> path;
  RunStatus status = RunStatus::kOk;
  int diverged_step = -1;

  double dt() const { return T / steps; }
  double time(int i) const { return i * dt(); }
  SpectralField state(int i) const;
  bool diverged() const { return status == RunStatus::kDiverged; }
};

Trajectory integrate(const SpdeConfig& cfg, const SpectralField& u0, std::shared_ptr<const WienerPath> W);
Trajectory integrate(const SpdeConfig& cfg, const SpectralField& u0, const WienerPath& W);

// X(t) = u(t) - sum_k g_k W_k(t).
Trajectory shifted_X(const Trajectory& traj, const std::vector<SpectralField>& G);

struct PathNorms {
  double sup = 0.0;
  double lip = 0.0;
  double hol = 0.0;
  double norm = 0.0;      // max(lip, sup)
  double norm_rho = 0.0;  // max(hol, sup)
};

// Discrete sup/Lipschitz/Hoelder quotients over samples [begin, end] of a
// uniformly sampled scalar function. Hoelder uses all pairs for <= 1025
// samples, otherwise dyadic gaps with start stride gap/16 (a lower bound).
PathNorms path_norms(const Eigen::VectorXd& f, double dt, double rho, int begin, int end);
// Field version: sup of |u|_{s_sup}, quotients of |u(t)-u(s)|_{s_diff}.
PathNorms path_norms(const Eigen::MatrixXd& states, const BasisSpec& basis, double dt, double rho, int begin, int end,
                     double s_sup, double s_diff);

}  // namespace spreadlab
