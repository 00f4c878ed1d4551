#include "spreadlab/sde.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "spreadlab/error.hpp"

namespace spreadlab {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t replica_seed(std::uint64_t master, std::uint64_t replica) { return master ^ replica; }

std::uint64_t experiment_seed(std::uint64_t master, std::string_view experiment, std::uint64_t replica) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : experiment) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return master + splitmix64(h ^ splitmix64(replica));
}

WienerPath::WienerPath(Eigen::MatrixXd increments, double T, std::uint64_t seed)
    : increments_(std::move(increments)), T_(T), seed_(seed) {
  require(increments_.cols() >= 1, ErrorCode::kInvalidArgument, "Wiener path needs at least one step");
  require(T > 0.0, ErrorCode::kInvalidArgument, "horizon T must be positive");
  values_ = Eigen::MatrixXd::Zero(increments_.rows(), increments_.cols() + 1);
  for (Eigen::Index i = 0; i < increments_.cols(); ++i) values_.col(i + 1) = values_.col(i) + increments_.col(i);
}

WienerPath WienerPath::coarsen(int factor) const {
  require(factor >= 1 && steps() % factor == 0, ErrorCode::kInvalidArgument, "coarsening factor must divide steps");
  Eigen::MatrixXd inc = Eigen::MatrixXd::Zero(d(), steps() / factor);
  for (int i = 0; i < steps(); ++i) inc.col(i / factor) += increments_.col(i);
  return WienerPath(std::move(inc), T_, seed_);
}

WienerPath sample_wiener(int d, double T, int steps, std::uint64_t seed) {
  require(steps >= 1, ErrorCode::kInvalidArgument, "steps must be >= 1");
  require(d >= 1, ErrorCode::kInvalidArgument, "d must be >= 1");
  std::mt19937_64 rng(splitmix64(seed));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sdt = std::sqrt(T / steps);
  Eigen::MatrixXd inc(d, steps);
  for (int i = 0; i < steps; ++i) {
    for (int k = 0; k < d; ++k) inc(k, i) = sdt * normal(rng);
  }
  return WienerPath(std::move(inc), T, seed);
}

StepOperator::StepOperator(const SpdeConfig& cfg, double dt) : dt_(dt), R_(cfg.basis, cfg.F.max_degree()) {
  const int n = cfg.basis->dim();
  diag_ = Eigen::VectorXd::Zero(n);
  for (int j : cfg.F.degrees()) {
    const MultilinearForm& f = *cfg.F.form(j);
    if (j != 1) {
      R_.add_form(f);
      continue;
    }
    MultilinearForm off(1, n, n);
    bool any = false;
    for (size_t e = 0; e < f.size(); ++e) {
      const int in = f.inputs(e)[0];
      if (in == f.output(e)) {
        diag_(in) += f.coeff(e);
      } else {
        off.add({in}, f.output(e), f.coeff(e));
        any = true;
      }
    }
    off.finalize();
    if (any) R_.add_form(off);
  }
  S_.resize(n);
  for (int k = 0; k < n; ++k) {
    S_(k) = cfg.scheme == Scheme::kExponentialEuler ? std::exp(dt * diag_(k)) : 1.0 / (1.0 - dt * diag_(k));
  }
}

Eigen::VectorXd StepOperator::remainder_value(const Eigen::VectorXd& u) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(u.size());
  for (int j : R_.degrees()) out += R_.form(j)->apply_diagonal(u);
  return out;
}

void StepOperator::add_remainder_derivative(const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                                            Eigen::VectorXd& out) const {
  for (int j : R_.degrees()) {
    if (j >= 1) R_.form(j)->add_derivative(u, v, 1.0, out);
  }
}

void StepOperator::add_remainder_derivative_transpose(const Eigen::VectorXd& u, const Eigen::VectorXd& w,
                                                      Eigen::VectorXd& out) const {
  for (int j : R_.degrees()) {
    if (j >= 1) R_.form(j)->add_derivative_transpose(u, w, 1.0, out);
  }
}

Eigen::MatrixXd StepOperator::remainder_jacobian(const Eigen::VectorXd& u) const { return jacobian(R_, u); }

SpectralField Trajectory::state(int i) const {
  require(i >= 0 && i <= steps, ErrorCode::kInvalidArgument, "node index out of range");
  return SpectralField(basis, states.col(i));
}

Trajectory integrate(const SpdeConfig& cfg, const SpectralField& u0, std::shared_ptr<const WienerPath> W) {
  require(cfg.basis && u0.basis().same_as(*cfg.basis), ErrorCode::kBasisMismatch, "u0 basis mismatch");
  require(W != nullptr, ErrorCode::kInvalidArgument, "null Wiener path");
  require(W->steps() == cfg.steps, ErrorCode::kInvalidArgument, "Wiener grid does not match config steps");
  require(W->d() == static_cast<int>(cfg.G.size()), ErrorCode::kInvalidArgument, "Wiener dimension != len(G)");
  const int n = cfg.basis->dim();
  require(cfg.forcing.size() == 0 || (cfg.forcing.rows() == n && cfg.forcing.cols() == cfg.steps),
          ErrorCode::kInvalidArgument, "forcing must be dim x steps");
  const double dt = W->dt();
  StepOperator op(cfg, dt);
  Eigen::MatrixXd Gm(n, static_cast<Eigen::Index>(cfg.G.size()));
  for (size_t k = 0; k < cfg.G.size(); ++k) Gm.col(static_cast<Eigen::Index>(k)) = cfg.G[k].coeffs();

  Trajectory tr;
  tr.basis = cfg.basis;
  tr.T = W->T();
  tr.steps = cfg.steps;
  tr.path = W;
  tr.states.resize(n, cfg.steps + 1);
  tr.states.col(0) = u0.coeffs();
  Eigen::VectorXd u = u0.coeffs();
  for (int i = 0; i < cfg.steps; ++i) {
    Eigen::VectorXd rhs = u + dt * op.remainder_value(u) + Gm * W->increments().col(i);
    if (cfg.forcing.size() != 0) rhs += dt * cfg.forcing.col(i);
    u = op.S().cwiseProduct(rhs);
    const double vn = sobolev_norm(*cfg.basis, u, cfg.v_exponent);
    if (!std::isfinite(vn) || vn > cfg.blowup_threshold) {
      tr.status = RunStatus::kDiverged;
      tr.diverged_step = i + 1;
      tr.states.rightCols(cfg.steps - i).setConstant(std::numeric_limits<double>::quiet_NaN());
      return tr;
    }
    tr.states.col(i + 1) = u;
  }
  return tr;
}

Trajectory integrate(const SpdeConfig& cfg, const SpectralField& u0, const WienerPath& W) {
  return integrate(cfg, u0, std::make_shared<const WienerPath>(W));
}

Trajectory shifted_X(const Trajectory& traj, const std::vector<SpectralField>& G) {
  require(traj.path != nullptr, ErrorCode::kInvalidArgument, "trajectory without Wiener path");
  require(static_cast<int>(G.size()) == traj.path->d(), ErrorCode::kInvalidArgument, "len(G) != Wiener dimension");
  Trajectory X = traj;
  for (size_t k = 0; k < G.size(); ++k) {
    X.states -= G[k].coeffs() * traj.path->values().row(static_cast<Eigen::Index>(k));
  }
  return X;
}

namespace {

PathNorms quotients(int begin, int end, double dt, double rho, const std::function<double(int)>& value_norm,
                    const std::function<double(int, int)>& dist) {
  require(begin >= 0 && end > begin, ErrorCode::kInvalidArgument, "path_norms needs at least 2 samples in the window");
  PathNorms r;
  for (int i = begin; i <= end; ++i) r.sup = std::max(r.sup, value_norm(i));
  for (int i = begin; i < end; ++i) r.lip = std::max(r.lip, dist(i, i + 1) / dt);
  const int n = end - begin + 1;
  auto consider = [&](int i, int j) {
    r.hol = std::max(r.hol, dist(i, j) / std::pow((j - i) * dt, rho));
  };
  if (n <= 1025) {
    for (int i = begin; i <= end; ++i) {
      for (int j = i + 1; j <= end; ++j) consider(i, j);
    }
  } else {
    for (int gap = 1; gap < n; gap *= 2) {
      const int stride = std::max(1, gap / 16);
      for (int i = begin; i + gap <= end; i += stride) consider(i, i + gap);
    }
    consider(begin, end);
  }
  r.norm = std::max(r.lip, r.sup);
  r.norm_rho = std::max(r.hol, r.sup);
  return r;
}

}  // namespace

PathNorms path_norms(const Eigen::VectorXd& f, double dt, double rho, int begin, int end) {
  require(end < f.size(), ErrorCode::kInvalidArgument, "window exceeds samples");
  return quotients(begin, end, dt, rho, [&](int i) { return std::abs(f(i)); },
                   [&](int i, int j) { return std::abs(f(j) - f(i)); });
}

PathNorms path_norms(const Eigen::MatrixXd& states, const BasisSpec& basis, double dt, double rho, int begin, int end,
                     double s_sup, double s_diff) {
  require(end < states.cols(), ErrorCode::kInvalidArgument, "window exceeds samples");
  return quotients(
      begin, end, dt, rho, [&](int i) { return sobolev_norm(basis, states.col(i), s_sup); },
      [&](int i, int j) { return sobolev_norm(basis, states.col(j) - states.col(i), s_diff); });
}

}  // namespace spreadlab
