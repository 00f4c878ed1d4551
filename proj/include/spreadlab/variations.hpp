#pragma once

#include <memory>

#include "spreadlab/sde.hpp"

namespace spreadlab {

// How K steps backward over [t_i, t_{i+1}]:
//   kStaggered:      w_i = (I + dt A_{i+1})^T S w_{i+1}  (default; exact in the linear part)
//   kExactTranspose: w_i = P_i^T w_{i+1}                  (round-off duality for any N)
//   kContinuous:     w_i = S (I + dt A_{i+1}^T) w_{i+1}   (exponential Euler on the adjoint ODE)
// with A_i = DR(u_i) the linearized explicit remainder and P_i = S (I + dt A_i).
enum class AdjointScheme { kStaggered, kExactTranspose, kContinuous };

class FlowBundle {
 public:
  FlowBundle(std::shared_ptr<const Trajectory> traj, const SpdeConfig& cfg,
             AdjointScheme adjoint = AdjointScheme::kStaggered);

  const Trajectory& trajectory() const { return *traj_; }
  const StepOperator& op() const { return op_; }
  const std::vector<SpectralField>& G() const { return G_; }
  const BasisPtr& basis() const { return traj_->basis; }
  int steps() const { return traj_->steps; }
  int dim() const { return traj_->basis->dim(); }
  double dt() const { return traj_->dt(); }
  AdjointScheme adjoint_scheme() const { return adjoint_; }

  // v <- P_i v.
  void forward_step(int i, Eigen::VectorXd& v) const;
  // w <- (K step from node i+1 to node i) w.
  void adjoint_step(int i, Eigen::VectorXd& w) const;
  Eigen::MatrixXd linearization(int i) const;  // A_i
  Eigen::MatrixXd step_matrix(int i) const;    // P_i
  Eigen::MatrixXd adjoint_step_matrix(int i) const;
  // Columns S g_k: the state response to a unit increment dW_i^k.
  const Eigen::MatrixXd& injected_noise() const { return SG_; }

 private:
  std::shared_ptr<const Trajectory> traj_;
  StepOperator op_;
  std::vector<SpectralField> G_;
  Eigen::MatrixXd SG_;
  AdjointScheme adjoint_;
};

// Time arguments are grid node indices 0 <= s <= t <= steps.
SpectralField forward_J(const FlowBundle& b, int s, int t, const SpectralField& phi);
SpectralField backward_K(const FlowBundle& b, int s, int t, const SpectralField& phi);
// max_r |<J_{s,r} phi, K_{r,t} psi> - <phi, K_{s,t} psi>| over nodes r in [s,t].
double duality_gap(const FlowBundle& b, int s, int t, const SpectralField& phi, const SpectralField& psi);
// D u(T)(h) = sum_i dt J_{i+1,n} S G h_i for h sampled as d x steps.
SpectralField malliavin_derivative(const FlowBundle& b, const Eigen::MatrixXd& h);
// J^{(n)}_{s_1..s_n; t}(phi_1..phi_n), n = s.size() in [1, 4]; t defaults to the last node.
SpectralField higher_variation(const FlowBundle& b, const std::vector<int>& s, const std::vector<SpectralField>& phi,
                               int t = -1);

// Set partitions of {0..n-1} as block lists (restricted-growth enumeration).
std::vector<std::vector<std::vector<int>>> set_partitions(int n);

}  // namespace spreadlab
