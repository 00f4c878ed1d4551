#include "spreadlab/brackets.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>

#include "spreadlab/error.hpp"

namespace spreadlab {

namespace {

// Modified Gram-Schmidt with one reorthogonalization pass.
bool try_add(std::vector<Eigen::VectorXd>& q, const Eigen::VectorXd& v, double tol) {
  const double nv = v.norm();
  if (nv == 0.0) return false;
  Eigen::VectorXd r = v;
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& b : q) r -= r.dot(b) * b;
  }
  const double nr = r.norm();
  if (nr <= tol * nv) return false;
  q.push_back(r / nr);
  return true;
}

// All nondecreasing tuples of length len over {0..d-1}.
std::vector<std::vector<int>> multisets(int d, int len) {
  std::vector<std::vector<int>> out;
  if (len == 0) return {{}};
  std::vector<int> t(static_cast<size_t>(len), 0);
  while (true) {
    out.push_back(t);
    int p = len - 1;
    while (p >= 0 && t[static_cast<size_t>(p)] == d - 1) --p;
    if (p < 0) break;
    ++t[static_cast<size_t>(p)];
    for (int r = p + 1; r < len; ++r) t[static_cast<size_t>(r)] = t[static_cast<size_t>(p)];
  }
  return out;
}

Eigen::VectorXd bracket_value(const MultilinearForm& N, const Eigen::VectorXd& g, const std::vector<SpectralField>& gs,
                              const std::vector<int>& ks) {
  std::vector<const Eigen::VectorXd*> args{&g};
  for (int k : ks) args.push_back(&gs[static_cast<size_t>(k)].coeffs());
  return N.apply(args);
}

}  // namespace

std::vector<SpanBasis> grow_span(const std::vector<SpectralField>& gs, const PolyVectorField& F, int max_steps,
                                 const GrowOptions& opts) {
  require(!gs.empty(), ErrorCode::kInvalidArgument, "grow_span needs generators");
  require(max_steps >= 1, ErrorCode::kInvalidArgument, "max_steps must be >= 1");
  for (const auto& g : gs) {
    require(g.basis().same_as(F.basis()), ErrorCode::kBasisMismatch, "generator basis mismatch");
    require(g.norm() > 0.0, ErrorCode::kInvalidArgument, "zero generator");
  }
  const auto basis = F.basis_ptr();
  const int d = static_cast<int>(gs.size());
  std::vector<Eigen::VectorXd> q;
  SpanBasis current;
  current.rank_tol = opts.rank_tol;
  for (int k = 0; k < d; ++k) {
    if (try_add(q, gs[static_cast<size_t>(k)].coeffs(), opts.rank_tol)) {
      current.vectors.emplace_back(basis, q.back());
      current.provenance.push_back({1, -1, {k}, 0});
    }
  }
  std::vector<SpanBasis> steps{current};
  const int m = F.degree();
  std::vector<int> degrees;
  if (m >= 2) {
    if (opts.all_degrees) {
      for (int j = 2; j <= m; ++j) {
        if (F.form(j)) degrees.push_back(j);
      }
    } else {
      degrees.push_back(m);
    }
  }
  std::vector<int> frontier(static_cast<size_t>(current.rank()));
  std::iota(frontier.begin(), frontier.end(), 0);
  for (int n = 2; n <= max_steps; ++n) {
    std::vector<int> next;
    for (int parent : frontier) {
      const Eigen::VectorXd g = q[static_cast<size_t>(parent)];
      for (int j : degrees) {
        for (const auto& ks : multisets(d, j - 1)) {
          if (try_add(q, bracket_value(*F.form(j), g, gs, ks), opts.rank_tol)) {
            next.push_back(static_cast<int>(q.size()) - 1);
            current.vectors.emplace_back(basis, q.back());
            current.provenance.push_back({n, parent, ks, j});
          }
        }
      }
    }
    steps.push_back(current);
    if (next.empty()) break;
    frontier = std::move(next);
  }
  return steps;
}

SubspaceCheck check_subspace(const std::vector<SpectralField>& S, const SpanBasis& H) {
  require(!S.empty(), ErrorCode::kInvalidArgument, "empty subspace");
  const int n = S.front().dim();
  Eigen::MatrixXd Sm(n, static_cast<Eigen::Index>(S.size()));
  for (size_t i = 0; i < S.size(); ++i) {
    require(S[i].norm() > 0.0, ErrorCode::kDependentInput, "zero vector in S");
    Sm.col(static_cast<Eigen::Index>(i)) = S[i].coeffs() / S[i].norm();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Sm);
  const auto& sv = svd.singularValues();
  require(sv(sv.size() - 1) > 1e-8 * sv(0), ErrorCode::kDependentInput, "S is linearly dependent");
  Eigen::MatrixXd Q(n, H.rank());
  for (int i = 0; i < H.rank(); ++i) Q.col(i) = H.vectors[static_cast<size_t>(i)].coeffs();
  const Eigen::MatrixXd P = Q * (Q.transpose() * Sm);
  SubspaceCheck out;
  for (Eigen::Index i = 0; i < Sm.cols(); ++i) out.max_residual = std::max(out.max_residual, (Sm.col(i) - P.col(i)).norm());
  out.contained = out.max_residual < H.rank_tol;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(P.transpose() * P);
  out.margin = std::max(0.0, es.eigenvalues()(0));
  return out;
}

NsCondition ns_condition(const std::vector<LatticePoint>& Z0) {
  for (const auto& k : Z0) require(k[0] != 0 || k[1] != 0, ErrorCode::kInvalidArgument, "Z0 contains the origin");
  std::vector<LatticePoint> sym;
  for (const auto& k : Z0) {
    const bool has_neg = std::any_of(Z0.begin(), Z0.end(), [&](const LatticePoint& l) { return l[0] == -k[0] && l[1] == -k[1]; });
    if (has_neg) sym.push_back(k);
  }
  NsCondition out;
  // A set of integer vectors generates Z^2 iff the gcd of its 2x2 minors is 1.
  long g = 0;
  for (size_t a = 0; a < sym.size(); ++a) {
    for (size_t b = a + 1; b < sym.size(); ++b) {
      const long det = static_cast<long>(sym[a][0]) * sym[b][1] - static_cast<long>(sym[a][1]) * sym[b][0];
      g = std::gcd(g, std::abs(det));
    }
  }
  out.generates_Z2 = (g == 1);
  for (size_t a = 0; a < Z0.size() && !out.unequal_norms; ++a) {
    for (size_t b = a + 1; b < Z0.size(); ++b) {
      if (Z0[a][0] * Z0[a][0] + Z0[a][1] * Z0[a][1] != Z0[b][0] * Z0[b][0] + Z0[b][1] * Z0[b][1]) {
        out.unequal_norms = true;
        break;
      }
    }
  }
  return out;
}

bool rd_condition(const std::vector<SpectralField>& I0, const std::vector<SpectralField>& gs, int q, double rank_tol) {
  require(!I0.empty() && q >= 0, ErrorCode::kInvalidArgument, "rd_condition needs I0 and q >= 0");
  std::vector<Eigen::VectorXd> basis;
  for (const auto& g : gs) try_add(basis, g.coeffs(), rank_tol);
  const int d = static_cast<int>(I0.size());
  for (int k = 1; k <= 2 * q; ++k) {
    for (const auto& t : multisets(d, k)) {
      std::vector<SpectralField> fs;
      for (int i : t) fs.push_back(I0[static_cast<size_t>(i)]);
      Eigen::VectorXd p = project_product(fs).coeffs();
      const double np = p.norm();
      if (np == 0.0) continue;
      for (int pass = 0; pass < 2; ++pass) {
        for (const auto& b : basis) p -= p.dot(b) * b;
      }
      if (p.norm() > rank_tol * np) return false;
    }
  }
  return true;
}

double first_generation_max(const std::vector<SpectralField>& gs, const PolyVectorField& F) {
  const int m = F.degree();
  if (m < 2) return 0.0;
  double best = 0.0;
  for (const auto& g : gs) {
    for (const auto& ks : multisets(static_cast<int>(gs.size()), m - 1)) {
      best = std::max(best, bracket_value(*F.form(m), g.coeffs(), gs, ks).cwiseAbs().maxCoeff());
    }
  }
  return best;
}

std::string provenance_json(const std::vector<SpanBasis>& steps) {
  nlohmann::json j;
  j["rank_tol"] = steps.empty() ? 1e-10 : steps.back().rank_tol;
  auto ranks = nlohmann::json::array();
  for (const auto& s : steps) ranks.push_back(s.rank());
  j["ranks"] = ranks;
  auto vecs = nlohmann::json::array();
  if (!steps.empty()) {
    const auto& last = steps.back();
    for (int i = 0; i < last.rank(); ++i) {
      const auto& p = last.provenance[static_cast<size_t>(i)];
      nlohmann::json e;
      e["index"] = i;
      e["step"] = p.step;
      e["parent"] = p.parent;
      e["ktuple"] = p.ktuple;
      e["form_degree"] = p.form_degree;
      const auto& c = last.vectors[static_cast<size_t>(i)].coeffs();
      Eigen::Index arg = 0;
      c.cwiseAbs().maxCoeff(&arg);
      e["dominant_mode"] = static_cast<int>(arg);
      vecs.push_back(e);
    }
  }
  j["vectors"] = vecs;
  return j.dump(2);
}

}  // namespace spreadlab
