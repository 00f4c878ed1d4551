#include "spreadlab/variations.hpp"

#include <algorithm>
#include <cmath>

#include "spreadlab/error.hpp"

namespace spreadlab {

FlowBundle::FlowBundle(std::shared_ptr<const Trajectory> traj, const SpdeConfig& cfg, AdjointScheme adjoint)
    : traj_(std::move(traj)), op_(cfg, traj_ ? traj_->dt() : 1.0), G_(cfg.G), adjoint_(adjoint) {
  require(traj_ != nullptr, ErrorCode::kInvalidArgument, "null trajectory");
  require(!traj_->diverged(), ErrorCode::kDiverged, "flow bundle over a diverged trajectory");
  require(traj_->basis->same_as(*cfg.basis), ErrorCode::kBasisMismatch, "trajectory/config basis mismatch");
  SG_.resize(dim(), static_cast<Eigen::Index>(G_.size()));
  for (size_t k = 0; k < G_.size(); ++k) SG_.col(static_cast<Eigen::Index>(k)) = op_.S().cwiseProduct(G_[k].coeffs());
}

void FlowBundle::forward_step(int i, Eigen::VectorXd& v) const {
  Eigen::VectorXd rhs = v;
  Eigen::VectorXd av = Eigen::VectorXd::Zero(v.size());
  op_.add_remainder_derivative(traj_->states.col(i), v, av);
  rhs += dt() * av;
  v = op_.S().cwiseProduct(rhs);
}

void FlowBundle::adjoint_step(int i, Eigen::VectorXd& w) const {
  Eigen::VectorXd atw = Eigen::VectorXd::Zero(w.size());
  switch (adjoint_) {
    case AdjointScheme::kStaggered: {
      const Eigen::VectorXd sw = op_.S().cwiseProduct(w);
      op_.add_remainder_derivative_transpose(traj_->states.col(i + 1), sw, atw);
      w = sw + dt() * atw;
      break;
    }
    case AdjointScheme::kExactTranspose: {
      const Eigen::VectorXd sw = op_.S().cwiseProduct(w);
      op_.add_remainder_derivative_transpose(traj_->states.col(i), sw, atw);
      w = sw + dt() * atw;
      break;
    }
    case AdjointScheme::kContinuous: {
      op_.add_remainder_derivative_transpose(traj_->states.col(i + 1), w, atw);
      w = op_.S().cwiseProduct(w + dt() * atw);
      break;
    }
  }
}

Eigen::MatrixXd FlowBundle::linearization(int i) const { return op_.remainder_jacobian(traj_->states.col(i)); }

Eigen::MatrixXd FlowBundle::step_matrix(int i) const {
  Eigen::MatrixXd P = dt() * linearization(i);
  P.diagonal().array() += 1.0;
  return op_.S().asDiagonal() * P;
}

Eigen::MatrixXd FlowBundle::adjoint_step_matrix(int i) const {
  switch (adjoint_) {
    case AdjointScheme::kStaggered: {
      Eigen::MatrixXd B = dt() * linearization(i + 1).transpose();
      B.diagonal().array() += 1.0;
      return B * op_.S().asDiagonal();
    }
    case AdjointScheme::kExactTranspose:
      return step_matrix(i).transpose();
    case AdjointScheme::kContinuous: {
      Eigen::MatrixXd B = dt() * linearization(i + 1).transpose();
      B.diagonal().array() += 1.0;
      return op_.S().asDiagonal() * B;
    }
  }
  return {};
}

namespace {
void check_nodes(const FlowBundle& b, int s, int t) {
  require(s >= 0 && t <= b.steps(), ErrorCode::kInvalidArgument, "time node out of range");
  require(s <= t, ErrorCode::kInvalidArgument, "need s <= t");
}
}  // namespace

SpectralField forward_J(const FlowBundle& b, int s, int t, const SpectralField& phi) {
  check_nodes(b, s, t);
  check_same_basis(phi, SpectralField(b.basis()));
  Eigen::VectorXd v = phi.coeffs();
  for (int i = s; i < t; ++i) b.forward_step(i, v);
  return SpectralField(b.basis(), std::move(v));
}

SpectralField backward_K(const FlowBundle& b, int s, int t, const SpectralField& phi) {
  check_nodes(b, s, t);
  check_same_basis(phi, SpectralField(b.basis()));
  Eigen::VectorXd w = phi.coeffs();
  for (int i = t - 1; i >= s; --i) b.adjoint_step(i, w);
  return SpectralField(b.basis(), std::move(w));
}

double duality_gap(const FlowBundle& b, int s, int t, const SpectralField& phi, const SpectralField& psi) {
  check_nodes(b, s, t);
  std::vector<Eigen::VectorXd> w(static_cast<size_t>(t - s + 1));
  w.back() = psi.coeffs();
  for (int i = t - 1; i >= s; --i) {
    w[static_cast<size_t>(i - s)] = w[static_cast<size_t>(i - s + 1)];
    b.adjoint_step(i, w[static_cast<size_t>(i - s)]);
  }
  Eigen::VectorXd v = phi.coeffs();
  const double ref = v.dot(w.front());
  double gap = 0.0;
  for (int r = s; r <= t; ++r) {
    if (r > s) b.forward_step(r - 1, v);
    gap = std::max(gap, std::abs(v.dot(w[static_cast<size_t>(r - s)]) - ref));
  }
  return gap;
}

SpectralField malliavin_derivative(const FlowBundle& b, const Eigen::MatrixXd& h) {
  require(h.rows() == static_cast<Eigen::Index>(b.G().size()) && h.cols() == b.steps(), ErrorCode::kInvalidArgument,
          "h must be sampled as d x steps");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(b.dim());
  for (int i = 0; i < b.steps(); ++i) {
    b.forward_step(i, v);
    v += b.dt() * b.injected_noise() * h.col(i);
  }
  return SpectralField(b.basis(), std::move(v));
}

std::vector<std::vector<std::vector<int>>> set_partitions(int n) {
  std::vector<std::vector<std::vector<int>>> out;
  if (n <= 0) return out;
  std::vector<int> a(static_cast<size_t>(n), 0), mx(static_cast<size_t>(n), 0);
  while (true) {
    const int blocks = *std::max_element(a.begin(), a.end()) + 1;
    std::vector<std::vector<int>> p(static_cast<size_t>(blocks));
    for (int i = 0; i < n; ++i) p[static_cast<size_t>(a[static_cast<size_t>(i)])].push_back(i);
    out.push_back(std::move(p));
    // Next restricted-growth string: a[0] = 0, a[i] <= 1 + max(a[0..i-1]).
    int i = n - 1;
    while (i > 0 && a[static_cast<size_t>(i)] == mx[static_cast<size_t>(i - 1)] + 1) --i;
    if (i == 0) break;
    ++a[static_cast<size_t>(i)];
    mx[static_cast<size_t>(i)] = std::max(mx[static_cast<size_t>(i - 1)], a[static_cast<size_t>(i)]);
    for (int j = i + 1; j < n; ++j) {
      a[static_cast<size_t>(j)] = 0;
      mx[static_cast<size_t>(j)] = mx[static_cast<size_t>(i)];
    }
  }
  return out;
}

SpectralField higher_variation(const FlowBundle& b, const std::vector<int>& s, const std::vector<SpectralField>& phi,
                               int t) {
  const int n = static_cast<int>(s.size());
  require(n >= 1 && n <= 4, ErrorCode::kInvalidArgument, "higher_variation supports 1 <= n <= 4");
  require(phi.size() == s.size(), ErrorCode::kInvalidArgument, "need one direction per time");
  if (t < 0) t = b.steps();
  for (int si : s) check_nodes(b, si, b.steps());
  require(t <= b.steps(), ErrorCode::kInvalidArgument, "t out of range");
  const int dim = b.dim();
  const int full = (1 << n) - 1;
  const int smax = *std::max_element(s.begin(), s.end());
  if (t < smax) return SpectralField(b.basis());
  const int smin = *std::min_element(s.begin(), s.end());

  // Partitions of each subset into >= 2 blocks, as lists of block masks.
  std::vector<std::vector<std::vector<int>>> parts(static_cast<size_t>(full + 1));
  std::vector<int> start(static_cast<size_t>(full + 1), 0);
  for (int mask = 1; mask <= full; ++mask) {
    std::vector<int> elems;
    for (int i = 0; i < n; ++i) {
      if (mask & (1 << i)) {
        elems.push_back(i);
        start[static_cast<size_t>(mask)] = std::max(start[static_cast<size_t>(mask)], s[static_cast<size_t>(i)]);
      }
    }
    for (const auto& p : set_partitions(static_cast<int>(elems.size()))) {
      if (p.size() < 2) continue;
      std::vector<int> blocks;
      for (const auto& blk : p) {
        int bm = 0;
        for (int e : blk) bm |= 1 << elems[static_cast<size_t>(e)];
        blocks.push_back(bm);
      }
      parts[static_cast<size_t>(mask)].push_back(std::move(blocks));
    }
  }
  std::vector<int> order(static_cast<size_t>(full));
  for (int m = 1; m <= full; ++m) order[static_cast<size_t>(m - 1)] = m;
  std::stable_sort(order.begin(), order.end(),
                   [](int a, int c) { return __builtin_popcount(a) < __builtin_popcount(c); });

  const PolyVectorField& R = b.op().remainder();
  auto falling = [](int j, int i) {
    double r = 1.0;
    for (int k = 0; k < i; ++k) r *= (j - k);
    return r;
  };
  std::vector<Eigen::VectorXd> v(static_cast<size_t>(full + 1), Eigen::VectorXd::Zero(dim));
  for (int r = smin; r < t; ++r) {
    for (int i = 0; i < n; ++i) {
      if (s[static_cast<size_t>(i)] == r) v[static_cast<size_t>(1 << i)] = phi[static_cast<size_t>(i)].coeffs();
    }
    const Eigen::VectorXd u = b.trajectory().states.col(r);
    std::vector<Eigen::VectorXd> next(static_cast<size_t>(full + 1));
    for (int mask : order) {
      if (r < start[static_cast<size_t>(mask)]) continue;
      Eigen::VectorXd g = Eigen::VectorXd::Zero(dim);
      b.op().add_remainder_derivative(u, v[static_cast<size_t>(mask)], g);
      for (const auto& blocks : parts[static_cast<size_t>(mask)]) {
        const int nu = static_cast<int>(blocks.size());
        for (int j : R.degrees()) {
          if (j < nu) continue;
          std::vector<const Eigen::VectorXd*> args;
          for (int k = 0; k < j - nu; ++k) args.push_back(&u);
          for (int bm : blocks) args.push_back(&v[static_cast<size_t>(bm)]);
          g += falling(j, nu) * R.form(j)->apply(args);
        }
      }
      next[static_cast<size_t>(mask)] = b.op().S().cwiseProduct(v[static_cast<size_t>(mask)] + b.dt() * g);
    }
    for (int mask : order) {
      if (r >= start[static_cast<size_t>(mask)]) v[static_cast<size_t>(mask)] = std::move(next[static_cast<size_t>(mask)]);
    }
  }
  if (t == smax) {
    // No step taken after the last injection: only J_{t,t} = I contributes for n = 1.
    if (n == 1) return phi[0];
    return SpectralField(b.basis());
  }
  return SpectralField(b.basis(), v[static_cast<size_t>(full)]);
}

}  // namespace spreadlab
