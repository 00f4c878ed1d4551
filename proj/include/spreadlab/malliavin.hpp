#pragma once

#include <cstdint>
#include <vector>

#include "spreadlab/variations.hpp"

namespace spreadlab {

enum class Representation { kForward, kAdjoint };

struct MalliavinMatrix {
  Eigen::MatrixXd entries;  // N x N, symmetric
  Eigen::MatrixXd psi;      // dim x N, H-orthonormal columns
  Representation representation = Representation::kForward;
  std::uint64_t seed = 0;
  int N() const { return static_cast<int>(entries.rows()); }
};

// M_ab = dt sum_i sum_k <J_{i+1,n} S g_k, psi_a><J_{i+1,n} S g_k, psi_b>.
// Evaluated by a transposed sweep of the forward step maps P_i.
MalliavinMatrix assemble_forward(const FlowBundle& b, const Eigen::MatrixXd& psi);
MalliavinMatrix assemble_forward(const FlowBundle& b, const std::vector<SpectralField>& psi);
// Same sum with <S g_k, K_{i+1,n} psi_a> from the bundle's adjoint scheme.
MalliavinMatrix assemble_adjoint(const FlowBundle& b, const Eigen::MatrixXd& psi);
MalliavinMatrix assemble_adjoint(const FlowBundle& b, const std::vector<SpectralField>& psi);

struct Spectrum {
  Eigen::VectorXd values;   // ascending
  Eigen::MatrixXd vectors;  // orthonormal columns
  int sweeps = 0;
};
// Cyclic Jacobi eigendecomposition of a symmetric matrix.
Spectrum spectrum(const Eigen::MatrixXd& M);

struct ConeResult {
  double value = 0.0;
  Eigen::VectorXd argmin;  // phi in original coordinates
  int restarts = 0;
};
// Upper-bound estimate of inf <M phi, phi> over U_delta = {|phi|_w <= 1,
// |Pi phi|_w >= delta}, where |phi|_w = |diag(weights) phi| and Pi is the
// w-orthogonal projection onto span(S columns). Requires 0 < delta <= 1.
ConeResult inf_cone(const Eigen::MatrixXd& M, const Eigen::MatrixXd& S, double delta, const Eigen::VectorXd& weights,
                    int restarts = 16, std::uint64_t seed = 0);

// Euclidean projection onto {|x| <= 1, |Q^T x| >= delta} (Q orthonormal columns).
Eigen::VectorXd project_cone(const Eigen::VectorXd& x, const Eigen::MatrixXd& Q, double delta,
                             const Eigen::VectorXd& fallback_direction);

struct SmallBallRow {
  double eps = 0.0;
  int hits = 0;
  int n = 0;
  double p = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

struct SmallBallTable {
  std::vector<SmallBallRow> rows;
  double slope = 0.0;  // least-squares slope of log P vs log eps over resolved rows
  int resolved = 0;    // rows with >= 5 hits and P <= 0.5
  bool monotone = true;
};

void wilson_interval(int hits, int n, double& lo, double& hi);
SmallBallTable smallball_table(const std::vector<double>& values, const std::vector<double>& eps_grid);

struct SmallBallResult {
  SmallBallTable table;
  std::vector<double> values;
  int diverged = 0;
};
// Monte Carlo over replicas: integrate, assemble the full M (identity psi),
// evaluate inf_cone for the subspace S with V-weights lambda^{v_exponent}.
SmallBallResult smallball(const SpdeConfig& cfg, const SpectralField& u0, double T, const std::vector<SpectralField>& S,
                          double delta, const std::vector<double>& eps_grid, int replicas, std::uint64_t seed,
                          double v_exponent);

struct InverseMoment {
  double mean = 0.0;
  int exceed = 0;
};
// E[min(det^{-p}, cap)] with the count of samples hitting the cap.
InverseMoment truncated_inverse_moment(const std::vector<double>& dets, double p, double cap = 1e12);

}  // namespace spreadlab
