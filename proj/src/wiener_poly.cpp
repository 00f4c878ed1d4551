#include "spreadlab/wiener_poly.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "spreadlab/error.hpp"
#include "spreadlab/multilinear.hpp"

namespace spreadlab {

namespace {

double mult_of(const std::vector<int>& s) { return tuple_multiplicity(std::span<const int>(s.data(), s.size())); }

int count_of(const std::vector<int>& s, int r) { return static_cast<int>(std::count(s.begin(), s.end(), r)); }

std::vector<int> remove_one(std::vector<int> s, int r) {
  s.erase(std::find(s.begin(), s.end(), r));
  return s;
}

void check_grid(const WienerPolynomial& Z, const WienerPath& W) {
  require(Z.d() <= W.d(), ErrorCode::kInvalidArgument, "polynomial uses more drivers than the path has");
  require(Z.samples() == 0 || Z.samples() == W.steps() + 1, ErrorCode::kInvalidArgument,
          "coefficient grid does not match the Wiener grid");
}

// All sorted tuples over {0..d-1} of length <= n, in (length, lexicographic) order.
std::vector<std::vector<int>> all_tuples(int n, int d) {
  std::vector<std::vector<int>> out{{}};
  std::vector<std::vector<int>> layer{{}};
  for (int a = 1; a <= n; ++a) {
    std::vector<std::vector<int>> next;
    for (const auto& s : layer) {
      for (int i = s.empty() ? 0 : s.back(); i < d; ++i) {
        auto t = s;
        t.push_back(i);
        next.push_back(t);
      }
    }
    out.insert(out.end(), next.begin(), next.end());
    layer = std::move(next);
  }
  return out;
}

class MonomialCache {
 public:
  explicit MonomialCache(const WienerPath& W) : W_(W) {}
  const Eigen::VectorXd& get(const std::vector<int>& s) {
    auto it = cache_.find(s);
    if (it == cache_.end()) it = cache_.emplace(s, wiener_monomial(s, W_)).first;
    return it->second;
  }

 private:
  const WienerPath& W_;
  std::map<std::vector<int>, Eigen::VectorXd> cache_;
};

Eigen::VectorXd coefficient_samples(const WienerPolynomial::Coefficient& c, int size) {
  return c.constant ? Eigen::VectorXd::Constant(size, c.value) : c.samples;
}

double sup_abs(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

double lip_nodes(const Eigen::VectorXd& v, double dt) {
  double lip = 0.0;
  for (Eigen::Index i = 0; i + 1 < v.size(); ++i) lip = std::max(lip, std::abs(v(i + 1) - v(i)) / dt);
  return lip;
}

double safe_log(double x) { return x > 0.0 ? std::log(x) : -std::numeric_limits<double>::infinity(); }

}  // namespace

WienerPolynomial::WienerPolynomial(int n, int d, int samples) : n_(n), d_(d), samples_(samples) {
  require(n >= 0 && d >= 1 && samples >= 0, ErrorCode::kInvalidArgument, "bad Wiener polynomial shape");
}

bool WienerPolynomial::is_constant() const {
  return std::all_of(terms_.begin(), terms_.end(), [](const auto& kv) { return kv.second.constant; });
}

void WienerPolynomial::set_constant(std::vector<int> idx, double value) {
  require(static_cast<int>(idx.size()) <= n_, ErrorCode::kDegreeOverflow, "term degree exceeds n");
  for (int i : idx) require(i >= 0 && i < d_, ErrorCode::kInvalidArgument, "driver index out of range");
  require(std::isfinite(value), ErrorCode::kNonFinite, "non-finite coefficient");
  std::sort(idx.begin(), idx.end());
  Coefficient c;
  c.value = value;
  terms_[idx] = c;
}

void WienerPolynomial::set_process(std::vector<int> idx, Eigen::VectorXd samples) {
  require(static_cast<int>(idx.size()) <= n_, ErrorCode::kDegreeOverflow, "term degree exceeds n");
  for (int i : idx) require(i >= 0 && i < d_, ErrorCode::kInvalidArgument, "driver index out of range");
  require(samples.allFinite(), ErrorCode::kNonFinite, "non-finite coefficient process");
  if (samples_ == 0) samples_ = static_cast<int>(samples.size());
  require(samples.size() == samples_, ErrorCode::kInvalidArgument, "coefficient processes must share one grid");
  std::sort(idx.begin(), idx.end());
  Coefficient c;
  c.constant = false;
  c.samples = std::move(samples);
  terms_[idx] = std::move(c);
}

double WienerPolynomial::coefficient(std::vector<int> idx, int node) const {
  std::sort(idx.begin(), idx.end());
  auto it = terms_.find(idx);
  return it == terms_.end() ? 0.0 : it->second.at(node);
}

Eigen::VectorXd wiener_monomial(const std::vector<int>& s, const WienerPath& W) {
  Eigen::VectorXd m = Eigen::VectorXd::Ones(W.steps() + 1);
  for (int i : s) {
    require(i >= 0 && i < W.d(), ErrorCode::kInvalidArgument, "driver index out of range");
    m.array() *= W.values().row(i).transpose().array();
  }
  return m;
}

Eigen::VectorXd evaluate_Z(const WienerPolynomial& Z, const WienerPath& W) {
  check_grid(Z, W);
  const int size = W.steps() + 1;
  Eigen::VectorXd z = Eigen::VectorXd::Zero(size);
  for (const auto& [s, c] : Z.terms()) {
    const Eigen::VectorXd m = wiener_monomial(s, W);
    if (c.constant) {
      z += (mult_of(s) * c.value) * m;
    } else {
      z.array() += mult_of(s) * c.samples.array() * m.array();
    }
  }
  return z;
}

double discrete_qv(const Eigen::VectorXd& z1, const Eigen::VectorXd& z2, int stride) {
  require(z1.size() == z2.size() && z1.size() >= 2, ErrorCode::kInvalidArgument, "qv inputs must share a grid");
  require(stride >= 1 && (z1.size() - 1) % stride == 0, ErrorCode::kInvalidArgument,
          "partition is not nested in the grid");
  double q = 0.0;
  for (Eigen::Index j = 0; j + stride < z1.size(); j += stride) {
    q += (z1(j + stride) - z1(j)) * (z2(j + stride) - z2(j));
  }
  return q;
}

double trapezoid(const Eigen::VectorXd& f, double dt, int begin, int end) {
  if (end < 0) end = static_cast<int>(f.size()) - 1;
  require(begin >= 0 && begin <= end && end < f.size(), ErrorCode::kInvalidArgument, "bad quadrature window");
  double s = 0.0;
  for (int i = begin; i < end; ++i) s += 0.5 * (f(i) + f(i + 1));
  return s * dt;
}

double qv_formula(const WienerPolynomial& Z1, const WienerPolynomial& Z2, const WienerPath& W, int begin, int end) {
  check_grid(Z1, W);
  check_grid(Z2, W);
  const int size = W.steps() + 1;
  MonomialCache mono(W);
  Eigen::VectorXd integrand = Eigen::VectorXd::Zero(size);
  for (const auto& [s, a] : Z1.terms()) {
    if (s.empty()) continue;
    const Eigen::VectorXd as = coefficient_samples(a, size) * mult_of(s);
    for (const auto& [t, b] : Z2.terms()) {
      if (t.empty()) continue;
      const Eigen::VectorXd bt = coefficient_samples(b, size) * mult_of(t);
      // Ordered tuples contribute delta_{i_p k_q}: count matching slots per driver.
      for (int r = 0; r < std::min(Z1.d(), Z2.d()); ++r) {
        const int cs = count_of(s, r), ct = count_of(t, r);
        if (cs == 0 || ct == 0) continue;
        integrand.array() += static_cast<double>(cs * ct) * as.array() * bt.array() *
                             mono.get(remove_one(s, r)).array() * mono.get(remove_one(t, r)).array();
      }
    }
  }
  return trapezoid(integrand, W.dt(), begin, end);
}

WienerPolynomial reduce_Zr(const WienerPolynomial& Z, int r) {
  require(Z.n() >= 1, ErrorCode::kInvalidArgument, "cannot reduce a degree-0 polynomial");
  require(r >= 0 && r < Z.d(), ErrorCode::kInvalidArgument, "driver index out of range");
  WienerPolynomial out(Z.n() - 1, Z.d(), Z.samples());
  for (const auto& [s, c] : Z.terms()) {
    if (count_of(s, r) == 0) continue;
    // mult(s) * count_r(s) / mult(s \ r) = |s|.
    const double alpha = static_cast<double>(s.size());
    if (c.constant) {
      out.set_constant(remove_one(s, r), alpha * c.value);
    } else {
      out.set_process(remove_one(s, r), alpha * c.samples);
    }
  }
  return out;
}

RecoveryReport coefficient_recovery_check(const WienerPolynomial& Z, const WienerPath& W, double tol,
                                          double tol_prime) {
  if (tol_prime < 0.0) tol_prime = tol;
  RecoveryReport rep;
  double nfact = 1.0;
  for (int k = 2; k <= Z.n(); ++k) nfact *= k;
  std::map<std::vector<int>, WienerPolynomial> frontier;
  frontier.emplace(std::vector<int>{}, Z);
  while (!frontier.empty()) {
    std::map<std::vector<int>, WienerPolynomial> next;
    for (const auto& [path, P] : frontier) {
      const double sup = sup_abs(evaluate_Z(P, W));
      rep.node_sup[path] = sup;
      if (path.empty()) {
        rep.sup_Z = sup;
      } else {
        rep.max_node_sup = std::max(rep.max_node_sup, sup);
      }
      if (static_cast<int>(path.size()) == Z.n()) rep.recovered[path] = sup / nfact;
      if (P.n() == 0) continue;
      for (int r = 0; r < P.d(); ++r) {
        auto child = path;
        child.insert(std::upper_bound(child.begin(), child.end(), r), r);
        if (!next.count(child)) next.emplace(child, reduce_Zr(P, r));
      }
    }
    frontier = std::move(next);
  }
  rep.small = rep.sup_Z <= tol && rep.max_node_sup <= tol_prime;
  return rep;
}

ItoDecomposition ito_decompose(const WienerPolynomial& Z, const WienerPath& W, int begin) {
  require(Z.is_constant(), ErrorCode::kInvalidArgument, "Ito decomposition needs constant coefficients");
  check_grid(Z, W);
  require(begin >= 0 && begin <= W.steps(), ErrorCode::kInvalidArgument, "start node out of range");
  MonomialCache mono(W);
  const int size = W.steps() + 1;
  Eigen::VectorXd drift = Eigen::VectorXd::Zero(size);
  for (const auto& [s, c] : Z.terms()) {
    for (int r = 0; r < Z.d(); ++r) {
      const int cr = count_of(s, r);
      if (cr < 2) continue;
      // Ordered slot pairs k1 != k2 with equal drivers: mult(s) * c_r (c_r - 1).
      drift += (0.5 * mult_of(s) * cr * (cr - 1) * c.value) * mono.get(remove_one(remove_one(s, r), r));
    }
  }
  ItoDecomposition out;
  const Eigen::VectorXd z = evaluate_Z(Z, W);
  const int len = size - begin;
  out.Z = z.segment(begin, len);
  out.V.resize(len);
  out.V(0) = z(begin);
  for (int j = 1; j < len; ++j) out.V(j) = out.V(j - 1) + W.dt() * drift(begin + j - 1);
  out.M = out.Z - out.V;
  return out;
}

double dstar_inf(const std::vector<Eigen::VectorXd>& basis, const Eigen::VectorXd& snapshot) {
  const int nb = static_cast<int>(basis.size());
  require(nb >= 1 && snapshot.size() == nb, ErrorCode::kInvalidArgument, "basis/snapshot mismatch");
  const Eigen::Index m = basis[0].size();
  Eigen::MatrixXd Phi(m, nb);
  for (int j = 0; j < nb; ++j) Phi.col(j) = basis[static_cast<size_t>(j)];
  double best = std::numeric_limits<double>::infinity();
  const double smax = snapshot.cwiseAbs().maxCoeff();
  if (smax > 0.0) best = (Phi * snapshot).cwiseAbs().maxCoeff() / smax;
  // By homogeneity the infimum over max|lambda| >= 1 is the minimum over j of
  // the Chebyshev distance from phi_j to the span of the other columns.
  for (int j = 0; j < nb && best > 0.0; ++j) {
    const Eigen::VectorXd f = Phi.col(j);
    if (nb == 1) {
      best = std::min(best, f.cwiseAbs().maxCoeff());
      continue;
    }
    Eigen::MatrixXd A(m, nb - 1);
    for (int k = 0, c = 0; k < nb; ++k) {
      if (k != j) A.col(c++) = Phi.col(k);
    }
    Eigen::VectorXd w = Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m));
    for (int it = 0; it < 200; ++it) {
      const Eigen::VectorXd sw = w.cwiseSqrt();
      const Eigen::VectorXd c = (sw.asDiagonal() * A).colPivHouseholderQr().solve(-(sw.cwiseProduct(f)));
      const Eigen::VectorXd r = f + A * c;
      const double sup = r.cwiseAbs().maxCoeff();
      best = std::min(best, sup);
      const Eigen::VectorXd nw = w.cwiseProduct(r.cwiseAbs());
      const double total = nw.sum();
      if (!(total > 0.0)) break;
      w = nw / total;
    }
  }
  return best;
}

EventRecord event_calculus(const WienerPolynomial& Z, const WienerPath& W, const EventParams& p) {
  require(p.eps > 0.0 && p.eps < 1.0, ErrorCode::kInvalidArgument, "event calculus needs 0 < eps < 1");
  check_grid(Z, W);
  const int n = Z.n();
  const int d = Z.d();
  const int size = W.steps() + 1;
  const double dt = W.dt();
  const double le = std::log(p.eps);
  const double e8 = std::pow(8.0, n + 1);

  double maxA = 0.0, maxLip = 0.0;
  for (const auto& [s, c] : Z.terms()) {
    if (!c.constant) maxLip = std::max(maxLip, lip_nodes(c.samples, dt));
    if (!s.empty()) maxA = std::max(maxA, c.constant ? std::abs(c.value) : sup_abs(c.samples));
  }
  const auto tuples = all_tuples(n, d);
  double maxB = 0.0;
  for (const auto& s : tuples) {
    if (s.empty()) continue;
    const Eigen::VectorXd m = wiener_monomial(s, W);
    maxB = std::max(maxB, path_norms(m, dt, 0.25, 0, size - 1).norm_rho);
  }

  EventRecord rec;
  rec.n = n;
  const Eigen::VectorXd z = evaluate_Z(Z, W);
  // Base epsilon of the partition / F thresholds, in log space.
  double lbase;
  if (p.variant == EventVariant::kUniform) {
    rec.log_sup = safe_log(sup_abs(z));
    rec.D = rec.log_sup < std::pow(8.0, n + 2) * le;
    lbase = le;
    rec.Ec = safe_log(maxA) >= lbase;
    rec.C = safe_log(maxLip) < -lbase;
  } else {
    Eigen::VectorXd g(size);
    g(0) = p.g0;
    for (int i = 1; i < size; ++i) g(i) = g(i - 1) + 0.5 * dt * (z(i - 1) + z(i));
    rec.log_sup = safe_log(sup_abs(g));
    rec.D = rec.log_sup < le;
    lbase = le / std::pow(8.0, n + 3);  // delta = eps^{8^{-(n+3)}}
    rec.Ec = safe_log(maxA) >= lbase;
    rec.C = safe_log(maxLip) < -lbase && safe_log(maxA) < -lbase;
  }
  rec.B = safe_log(maxB) < -lbase / 5.0;
  rec.lhs = rec.D && rec.Ec && rec.C;
  if (!rec.lhs || !rec.B) {
    rec.holds = true;
    return rec;
  }

  // F(hat eps, eps') with hat eps = base^{8^{n+1} 5/4}, eps' = base^{2 + 1/(n+1)},
  // over intervals of length in (h/2, h], h = base^{(3/2) 8^{n+1}}.
  rec.f_evaluated = true;
  const double lhat = e8 * 1.25 * lbase;
  const double lprime = (2.0 + 1.0 / (n + 1)) * lbase;
  const double lh = 1.5 * e8 * lbase;
  const int steps = W.steps();
  int per = 0;
  if (lh >= std::log(W.T())) {
    per = steps;
  } else {
    require(lh >= std::log(dt), ErrorCode::kGridTooCoarse,
            "event partition is finer than the time grid; increase steps");
    per = static_cast<int>(std::floor(std::exp(lh) / dt));
  }
  const int m = (steps + per - 1) / per;
  rec.intervals = m;
  std::vector<Eigen::VectorXd> full;
  for (const auto& s : tuples) full.push_back(mult_of(s) * wiener_monomial(s, W));
  int start = 0;
  for (int k = 0; k < m; ++k) {
    const int len = steps / m + (k < steps % m ? 1 : 0);
    const int a = start, b = start + len;
    start = b;
    std::vector<Eigen::VectorXd> local;
    Eigen::VectorXd snap(static_cast<Eigen::Index>(tuples.size()));
    for (size_t j = 0; j < tuples.size(); ++j) {
      local.push_back(full[j].segment(a, b - a + 1));
      auto it = Z.terms().find(tuples[j]);
      snap(static_cast<Eigen::Index>(j)) = it == Z.terms().end() ? 0.0 : it->second.at(a);
    }
    const double v = dstar_inf(local, snap);
    if (lprime + safe_log(v) < lhat) {
      rec.F = true;
      rec.witness = k;
      break;
    }
  }
  rec.holds = rec.F;
  return rec;
}

double holder_nodes(const Eigen::VectorXd& f, double dt, double rho) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    for (Eigen::Index j = i + 1; j < f.size(); ++j) {
      h = std::max(h, std::abs(f(j) - f(i)) / std::pow((j - i) * dt, rho));
    }
  }
  return h;
}

LemmaCheck norris_lp_check(const Eigen::VectorXd& f, double t, double l, double rho, double gamma, double eps,
                           double c) {
  require(f.size() >= 2 && t > 0.0 && l > 0.0 && rho > 0.0 && rho <= 1.0 && eps > 0.0 && c > 0.0,
          ErrorCode::kInvalidArgument, "bad Norris lemma parameters");
  const double h = t / static_cast<double>(f.size() - 1);
  // Exact integral of |f|^l for the piecewise-linear interpolant.
  double integral = 0.0;
  for (Eigen::Index i = 0; i + 1 < f.size(); ++i) {
    const double a = f(i), b = f(i + 1);
    const double aa = std::abs(a), bb = std::abs(b);
    if (a * b < 0.0) {
      const double theta = aa / (aa + bb);
      integral += h * (theta * std::pow(aa, l) + (1.0 - theta) * std::pow(bb, l)) / (l + 1.0);
    } else if (std::abs(bb - aa) <= 1e-14 * std::max(aa, bb)) {
      integral += h * std::pow(aa, l);
    } else {
      integral += h * (std::pow(bb, l + 1.0) - std::pow(aa, l + 1.0)) / ((l + 1.0) * (bb - aa));
    }
  }
  LemmaCheck out;
  out.hypotheses = integral < eps && holder_nodes(f, h, rho) < c * std::pow(eps, -gamma);
  out.bound = (1.0 + c) * std::pow(eps, (rho - gamma) / (1.0 + l * rho));
  out.value = f.cwiseAbs().maxCoeff();
  out.conclusion = out.value < out.bound;
  out.holds = !out.hypotheses || out.conclusion;
  return out;
}

LemmaCheck integral_derivative_check(double G0, const Eigen::VectorXd& H, double t, double alpha, double gamma,
                                     double c, double eps) {
  require(H.size() >= 2 && t > 0.0 && alpha > gamma && gamma > 0.0 && eps > 0.0 && c > 0.0,
          ErrorCode::kInvalidArgument, "bad integral lemma parameters");
  const double h = t / static_cast<double>(H.size() - 1);
  // Exact sup of the piecewise-quadratic G.
  double G = G0, supG = std::abs(G0);
  for (Eigen::Index i = 0; i + 1 < H.size(); ++i) {
    const double a = H(i), b = H(i + 1);
    if (a * b < 0.0) {
      const double theta = a / (a - b);
      supG = std::max(supG, std::abs(G + h * (a * theta + 0.5 * (b - a) * theta * theta)));
    }
    G += 0.5 * h * (a + b);
    supG = std::max(supG, std::abs(G));
  }
  LemmaCheck out;
  out.hypotheses = holder_nodes(H, h, alpha) <= c * std::pow(eps, -gamma) &&
                   t >= std::pow(eps, (1.0 + gamma) / (1.0 + alpha)) && supG <= eps;
  out.bound = (2.0 + c) * std::pow(eps, (alpha - gamma) / (1.0 + alpha));
  out.value = H.cwiseAbs().maxCoeff();
  out.conclusion = out.value <= out.bound;
  out.holds = !out.hypotheses || out.conclusion;
  return out;
}

}  // namespace spreadlab
