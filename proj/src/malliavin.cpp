#include "spreadlab/malliavin.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "spreadlab/error.hpp"

namespace spreadlab {

namespace {

Eigen::MatrixXd to_matrix(const FlowBundle& b, const std::vector<SpectralField>& psi) {
  Eigen::MatrixXd P(b.dim(), static_cast<Eigen::Index>(psi.size()));
  for (size_t a = 0; a < psi.size(); ++a) {
    check_same_basis(psi[a], SpectralField(b.basis()));
    P.col(static_cast<Eigen::Index>(a)) = psi[a].coeffs();
  }
  return P;
}

void check_orthonormal(const Eigen::MatrixXd& psi, int dim) {
  require(psi.rows() == dim && psi.cols() >= 1, ErrorCode::kInvalidArgument, "psi must be dim x N with N >= 1");
  const Eigen::MatrixXd g = psi.transpose() * psi;
  const double err = (g - Eigen::MatrixXd::Identity(g.rows(), g.cols())).cwiseAbs().maxCoeff();
  require(err <= 1e-10, ErrorCode::kInvalidArgument, "psi basis is not orthonormal");
}

constexpr int kDenseThreshold = 8;

template <typename Step>
Eigen::MatrixXd sweep(const FlowBundle& b, const Eigen::MatrixXd& psi, Step&& step) {
  const int N = static_cast<int>(psi.cols());
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(N, N);
  Eigen::MatrixXd Y = psi;
  const Eigen::MatrixXd& SG = b.injected_noise();
  for (int i = b.steps() - 1; i >= 0; --i) {
    // Y holds (propagator from node i+1 to n)^T psi.
    const Eigen::MatrixXd Z = Y.transpose() * SG;
    M.noalias() += b.dt() * (Z * Z.transpose());
    step(i, Y);
  }
  return 0.5 * (M + M.transpose());
}

}  // namespace

MalliavinMatrix assemble_forward(const FlowBundle& b, const Eigen::MatrixXd& psi) {
  check_orthonormal(psi, b.dim());
  const auto& S = b.op().S();
  auto step = [&](int i, Eigen::MatrixXd& Y) {
    if (Y.cols() <= kDenseThreshold) {
      for (Eigen::Index c = 0; c < Y.cols(); ++c) {
        const Eigen::VectorXd sy = S.cwiseProduct(Y.col(c));
        Eigen::VectorXd atw = Eigen::VectorXd::Zero(sy.size());
        b.op().add_remainder_derivative_transpose(b.trajectory().states.col(i), sy, atw);
        Y.col(c) = sy + b.dt() * atw;
      }
    } else {
      Y = S.asDiagonal() * Y;
      const Eigen::MatrixXd A = b.linearization(i);
      Y.noalias() += b.dt() * (A.transpose() * Y);
    }
  };
  MalliavinMatrix m;
  m.entries = sweep(b, psi, step);
  m.psi = psi;
  m.representation = Representation::kForward;
  m.seed = b.trajectory().path->seed();
  return m;
}

MalliavinMatrix assemble_forward(const FlowBundle& b, const std::vector<SpectralField>& psi) {
  return assemble_forward(b, to_matrix(b, psi));
}

MalliavinMatrix assemble_adjoint(const FlowBundle& b, const Eigen::MatrixXd& psi) {
  check_orthonormal(psi, b.dim());
  auto step = [&](int i, Eigen::MatrixXd& Y) {
    if (Y.cols() <= kDenseThreshold) {
      for (Eigen::Index c = 0; c < Y.cols(); ++c) {
        Eigen::VectorXd w = Y.col(c);
        b.adjoint_step(i, w);
        Y.col(c) = w;
      }
    } else {
      Y = b.adjoint_step_matrix(i) * Y;
    }
  };
  MalliavinMatrix m;
  m.entries = sweep(b, psi, step);
  m.psi = psi;
  m.representation = Representation::kAdjoint;
  m.seed = b.trajectory().path->seed();
  return m;
}

MalliavinMatrix assemble_adjoint(const FlowBundle& b, const std::vector<SpectralField>& psi) {
  return assemble_adjoint(b, to_matrix(b, psi));
}

Spectrum spectrum(const Eigen::MatrixXd& M) {
  require(M.rows() == M.cols(), ErrorCode::kInvalidArgument, "spectrum needs a square matrix");
  const int n = static_cast<int>(M.rows());
  const double scale = std::max(1e-300, M.cwiseAbs().maxCoeff());
  require((M - M.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale, ErrorCode::kInvalidArgument,
          "spectrum needs a symmetric matrix");
  Eigen::MatrixXd A = 0.5 * (M + M.transpose());
  Eigen::MatrixXd V = Eigen::MatrixXd::Identity(n, n);
  Spectrum out;
  const double fro = A.norm();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) off += A(p, q) * A(p, q);
    }
    if (std::sqrt(2.0 * off) <= 1e-15 * fro || fro == 0.0) break;
    ++out.sweeps;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = A(p, q);
        if (apq == 0.0) continue;
        const double theta = (A(q, q) - A(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = A(k, p), akq = A(k, q);
          A(k, p) = c * akp - s * akq;
          A(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = A(p, k), aqk = A(q, k);
          A(p, k) = c * apk - s * aqk;
          A(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = V(k, p), vkq = V(k, q);
          V(k, p) = c * vkp - s * vkq;
          V(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int c) { return A(a, a) < A(c, c); });
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (int k = 0; k < n; ++k) {
    out.values(k) = A(idx[static_cast<size_t>(k)], idx[static_cast<size_t>(k)]);
    out.vectors.col(k) = V.col(idx[static_cast<size_t>(k)]);
  }
  return out;
}

Eigen::VectorXd project_cone(const Eigen::VectorXd& x, const Eigen::MatrixXd& Q, double delta,
                             const Eigen::VectorXd& fallback_direction) {
  const Eigen::VectorXd a = Q * (Q.transpose() * x);
  const Eigen::VectorXd b = x - a;
  const double alpha = a.norm(), beta = b.norm();
  if (alpha >= delta && alpha * alpha + beta * beta <= 1.0) return x;
  Eigen::VectorXd ua;
  if (alpha > 1e-300) {
    ua = a / alpha;
  } else {
    ua = Q * (Q.transpose() * fallback_direction);
    if (ua.norm() <= 1e-300) ua = Q.col(0);
    ua.normalize();
  }
  const Eigen::VectorXd ub = beta > 0.0 ? Eigen::VectorXd(b / beta) : Eigen::VectorXd::Zero(x.size());
  // Nearest point of the convex planar region {a' >= delta, a'^2 + b'^2 <= 1}.
  const double bmax = std::sqrt(std::max(0.0, 1.0 - delta * delta));
  double best_a = delta, best_b = std::clamp(beta, 0.0, bmax);
  double best_d = (alpha - best_a) * (alpha - best_a) + (beta - best_b) * (beta - best_b);
  const double r = std::hypot(alpha, beta);
  if (r > 0.0 && alpha / r >= delta) {
    const double ca = alpha / r, cb = beta / r;
    const double dd = (alpha - ca) * (alpha - ca) + (beta - cb) * (beta - cb);
    if (dd < best_d) {
      best_a = ca;
      best_b = cb;
    }
  }
  return best_a * ua + best_b * ub;
}

ConeResult inf_cone(const Eigen::MatrixXd& M, const Eigen::MatrixXd& S, double delta, const Eigen::VectorXd& weights,
                    int restarts, std::uint64_t seed) {
  require(delta > 0.0 && delta <= 1.0, ErrorCode::kEmptyCone, "cone needs 0 < delta <= 1");
  const int n = static_cast<int>(M.rows());
  require(M.cols() == n && S.rows() == n && weights.size() == n && S.cols() >= 1, ErrorCode::kInvalidArgument,
          "inf_cone shape mismatch");
  require((weights.array() > 0).all(), ErrorCode::kInvalidArgument, "weights must be positive");
  const Eigen::VectorXd winv = weights.cwiseInverse();
  const Eigen::MatrixXd Mt = winv.asDiagonal() * (0.5 * (M + M.transpose())) * winv.asDiagonal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(weights.asDiagonal() * S);
  const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(n, S.cols());
  const Spectrum sp = spectrum(Mt);
  const double lmax = std::max(sp.values.cwiseAbs().maxCoeff(), 1e-300);
  auto f = [&](const Eigen::VectorXd& x) { return x.dot(Mt * x); };

  std::mt19937_64 rng(splitmix64(seed));
  std::normal_distribution<double> normal;
  ConeResult best;
  best.value = std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    Eigen::VectorXd v(n);
    if (r < std::min(n, restarts / 2)) {
      v = sp.vectors.col(r);
    } else {
      for (int k = 0; k < n; ++k) v(k) = normal(rng);
      v.normalize();
    }
    Eigen::VectorXd c = Q.transpose() * v;
    if (c.norm() < 1e-12) {
      for (Eigen::Index k = 0; k < c.size(); ++k) c(k) = normal(rng);
    }
    c.normalize();
    Eigen::VectorXd x = project_cone(std::sqrt(1.0 - delta * delta) * (v - Q * (Q.transpose() * v)) + delta * Q * c, Q,
                                     delta, v);
    double fx = f(x);
    double eta = 1.0 / lmax;
    for (int it = 0; it < 5000; ++it) {
      const Eigen::VectorXd g = 2.0 * (Mt * x);
      eta *= 2.0;
      bool moved = false;
      while (eta > 1e-18 / lmax) {
        Eigen::VectorXd y = project_cone(x - eta * g, Q, delta, x);
        const double fy = f(y);
        if (fy < fx) {
          const double drop = fx - fy;
          x = std::move(y);
          const double prev = fx;
          fx = fy;
          moved = drop > 1e-10 * std::max(std::abs(prev), 1e-300);
          break;
        }
        eta *= 0.5;
      }
      if (!moved) break;
    }
    if (fx < best.value) {
      best.value = fx;
      best.argmin = winv.cwiseProduct(x);
    }
    ++best.restarts;
  }
  return best;
}

void wilson_interval(int hits, int n, double& lo, double& hi) {
  if (n <= 0) {
    lo = 0.0;
    hi = 1.0;
    return;
  }
  const double z = 1.959963984540054;
  const double p = static_cast<double>(hits) / n;
  const double denom = 1.0 + z * z / n;
  const double center = (p + z * z / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom;
  lo = hits == 0 ? 0.0 : std::max(0.0, center - half);
  hi = hits == n ? 1.0 : std::min(1.0, center + half);
}

SmallBallTable smallball_table(const std::vector<double>& values, const std::vector<double>& eps_grid) {
  require(!values.empty(), ErrorCode::kInvalidArgument, "small-ball table needs replicas");
  SmallBallTable t;
  std::vector<double> xs, ys;
  for (double eps : eps_grid) {
    require(eps > 0.0, ErrorCode::kInvalidArgument, "epsilon grid must be positive");
    SmallBallRow row;
    row.eps = eps;
    row.n = static_cast<int>(values.size());
    row.hits = static_cast<int>(std::count_if(values.begin(), values.end(), [&](double v) { return v < eps; }));
    row.p = static_cast<double>(row.hits) / row.n;
    wilson_interval(row.hits, row.n, row.lo, row.hi);
    if (row.hits >= 5 && row.p <= 0.5) {
      xs.push_back(std::log(eps));
      ys.push_back(std::log(row.p));
    }
    t.rows.push_back(row);
  }
  for (size_t i = 1; i < t.rows.size(); ++i) {
    const bool decreasing_eps = t.rows[i].eps < t.rows[i - 1].eps;
    if (decreasing_eps ? t.rows[i].p > t.rows[i - 1].p : t.rows[i].p < t.rows[i - 1].p) t.monotone = false;
  }
  t.resolved = static_cast<int>(xs.size());
  if (xs.size() >= 2) {
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / ys.size();
    double sxy = 0.0, sxx = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
      sxy += (xs[i] - mx) * (ys[i] - my);
      sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    t.slope = sxx > 0 ? sxy / sxx : std::numeric_limits<double>::quiet_NaN();
  } else {
    t.slope = std::numeric_limits<double>::quiet_NaN();
  }
  return t;
}

SmallBallResult smallball(const SpdeConfig& cfg, const SpectralField& u0, double T, const std::vector<SpectralField>& S,
                          double delta, const std::vector<double>& eps_grid, int replicas, std::uint64_t seed,
                          double v_exponent) {
  require(replicas >= 1, ErrorCode::kInvalidArgument, "small-ball needs replicas >= 1");
  const int n = cfg.basis->dim();
  Eigen::MatrixXd Sm(n, static_cast<Eigen::Index>(S.size()));
  for (size_t k = 0; k < S.size(); ++k) Sm.col(static_cast<Eigen::Index>(k)) = S[k].coeffs();
  Eigen::VectorXd w(n);
  for (int k = 0; k < n; ++k) w(k) = std::pow(cfg.basis->eigenvalue(k), v_exponent);
  SmallBallResult res;
  for (int r = 0; r < replicas; ++r) {
    const std::uint64_t s = experiment_seed(seed, "smallball", static_cast<std::uint64_t>(r));
    auto W = std::make_shared<const WienerPath>(sample_wiener(static_cast<int>(cfg.G.size()), T, cfg.steps, s));
    auto traj = std::make_shared<const Trajectory>(integrate(cfg, u0, W));
    if (traj->diverged()) {
      ++res.diverged;
      continue;
    }
    FlowBundle b(traj, cfg);
    const auto M = assemble_forward(b, Eigen::MatrixXd::Identity(n, n));
    res.values.push_back(inf_cone(M.entries, Sm, delta, w, 16, s).value);
  }
  res.table = smallball_table(res.values, eps_grid);
  return res;
}

InverseMoment truncated_inverse_moment(const std::vector<double>& dets, double p, double cap) {
  InverseMoment m;
  if (dets.empty()) return m;
  for (double d : dets) {
    const double v = d > 0.0 ? std::pow(d, -p) : std::numeric_limits<double>::infinity();
    if (!(v < cap)) {
      ++m.exceed;
      m.mean += cap;
    } else {
      m.mean += v;
    }
  }
  m.mean /= static_cast<double>(dets.size());
  return m;
}

}  // namespace spreadlab
