#include "spreadlab/multilinear.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "spreadlab/error.hpp"

namespace spreadlab {

double tuple_multiplicity(std::span<const int> s) {
  double m = 1.0;
  int run = 0;
  for (size_t i = 0; i < s.size(); ++i) {
    run = (i > 0 && s[i] == s[i - 1]) ? run + 1 : 1;
    m *= static_cast<double>(i + 1) / run;
  }
  return m;
}

MultilinearForm::MultilinearForm(int degree, int dim_in, int dim_out)
    : degree_(degree), dim_in_(dim_in), dim_out_(dim_out) {
  require(degree >= 0 && dim_in >= 0 && dim_out >= 0, ErrorCode::kInvalidArgument, "bad form shape");
}

void MultilinearForm::add(std::vector<int> tuple, int output, double coeff) {
  require(static_cast<int>(tuple.size()) == degree_, ErrorCode::kInvalidArgument, "tuple length != degree");
  require(output >= 0 && output < dim_out_, ErrorCode::kInvalidArgument, "output index out of range");
  for (int i : tuple) require(i >= 0 && i < dim_in_, ErrorCode::kInvalidArgument, "input index out of range");
  require(std::isfinite(coeff), ErrorCode::kNonFinite, "non-finite form coefficient");
  std::sort(tuple.begin(), tuple.end());
  if (finalized_ && !out_.empty()) {
    // Reopen: move existing entries back into the builder.
    for (size_t e = 0; e < out_.size(); ++e) {
      auto in = this->inputs(e);
      pending_[{std::vector<int>(in.begin(), in.end()), out_[e]}] += coeff_[e];
    }
    inputs_.clear();
    out_.clear();
    coeff_.clear();
    mult_.clear();
    plan_.clear();
    plan_rest_.clear();
  }
  finalized_ = false;
  pending_[{std::move(tuple), output}] += coeff;
}

void MultilinearForm::finalize(double drop_tol) {
  if (finalized_) return;
  inputs_.clear();
  out_.clear();
  coeff_.clear();
  mult_.clear();
  for (const auto& [key, c] : pending_) {
    if (std::abs(c) <= drop_tol || c == 0.0) continue;
    inputs_.insert(inputs_.end(), key.first.begin(), key.first.end());
    out_.push_back(key.second);
    coeff_.push_back(c);
    mult_.push_back(tuple_multiplicity(key.first));
  }
  pending_.clear();
  plan_.clear();
  plan_rest_.clear();
  if (degree_ >= 1) {
    std::vector<int> rest;
    for (size_t e = 0; e < out_.size(); ++e) {
      auto s = inputs(e);
      for (int p = 0; p < degree_; ++p) {
        if (p > 0 && s[p] == s[p - 1]) continue;
        rest.assign(s.begin(), s.end());
        rest.erase(rest.begin() + p);
        PlanItem item{static_cast<int>(plan_rest_.size()), s[p], out_[e],
                      degree_ * tuple_multiplicity(rest) * coeff_[e]};
        plan_rest_.insert(plan_rest_.end(), rest.begin(), rest.end());
        plan_.push_back(item);
      }
    }
  }
  finalized_ = true;
}

void MultilinearForm::check_finalized() const {
  require(finalized_, ErrorCode::kInvalidArgument, "form used before finalize()");
}

double MultilinearForm::coefficient(std::vector<int> in, int output) const {
  check_finalized();
  std::sort(in.begin(), in.end());
  for (size_t e = 0; e < out_.size(); ++e) {
    if (out_[e] != output) continue;
    auto s = inputs(e);
    if (std::equal(s.begin(), s.end(), in.begin(), in.end())) return coeff_[e];
  }
  return 0.0;
}

double MultilinearForm::max_abs_coeff() const {
  double m = 0.0;
  for (double c : coeff_) m = std::max(m, std::abs(c));
  return m;
}

Eigen::VectorXd MultilinearForm::apply(const std::vector<const Eigen::VectorXd*>& args) const {
  check_finalized();
  require(static_cast<int>(args.size()) == degree_, ErrorCode::kInvalidArgument, "argument count != degree");
  for (auto* a : args) require(a && a->size() == dim_in_, ErrorCode::kBasisMismatch, "argument length mismatch");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(dim_out_);
  std::vector<int> perm(static_cast<size_t>(degree_));
  for (size_t e = 0; e < out_.size(); ++e) {
    auto s = inputs(e);
    std::copy(s.begin(), s.end(), perm.begin());
    double acc = 0.0;
    do {
      double prod = 1.0;
      for (int p = 0; p < degree_; ++p) prod *= (*args[static_cast<size_t>(p)])(perm[static_cast<size_t>(p)]);
      acc += prod;
    } while (std::next_permutation(perm.begin(), perm.end()));
    out(out_[e]) += coeff_[e] * acc;
  }
  return out;
}

Eigen::VectorXd MultilinearForm::apply_diagonal(const Eigen::VectorXd& x) const {
  check_finalized();
  require(x.size() == dim_in_, ErrorCode::kBasisMismatch, "argument length mismatch");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(dim_out_);
  const int* idx = inputs_.data();
  for (size_t e = 0; e < out_.size(); ++e, idx += degree_) {
    double prod = coeff_[e] * mult_[e];
    for (int p = 0; p < degree_; ++p) prod *= x(idx[p]);
    out(out_[e]) += prod;
  }
  return out;
}

double MultilinearForm::rest_product(const PlanItem& p, const Eigen::VectorXd& x) const {
  double prod = p.c;
  const int* r = plan_rest_.data() + p.rest;
  for (int k = 0; k + 1 < degree_; ++k) prod *= x(r[k]);
  return prod;
}

void MultilinearForm::add_derivative(const Eigen::VectorXd& x, const Eigen::VectorXd& v, double scale,
                                     Eigen::VectorXd& out) const {
  check_finalized();
  for (const auto& p : plan_) out(p.row) += scale * rest_product(p, x) * v(p.col);
}

void MultilinearForm::add_derivative_transpose(const Eigen::VectorXd& x, const Eigen::VectorXd& w,
                                               double scale, Eigen::VectorXd& out) const {
  check_finalized();
  for (const auto& p : plan_) out(p.col) += scale * rest_product(p, x) * w(p.row);
}

void MultilinearForm::add_derivative_matrix(const Eigen::VectorXd& x, double scale, Eigen::MatrixXd& A) const {
  check_finalized();
  for (const auto& p : plan_) A(p.row, p.col) += scale * rest_product(p, x);
}

MultilinearForm MultilinearForm::contract_last(const Eigen::VectorXd& b) const {
  check_finalized();
  require(degree_ >= 1, ErrorCode::kInvalidArgument, "cannot contract a constant");
  require(b.size() == dim_in_, ErrorCode::kBasisMismatch, "contraction vector length mismatch");
  MultilinearForm r(degree_ - 1, dim_in_, dim_out_);
  std::vector<int> rest;
  for (size_t e = 0; e < out_.size(); ++e) {
    auto s = inputs(e);
    for (int p = 0; p < degree_; ++p) {
      if (p > 0 && s[p] == s[p - 1]) continue;
      if (b(s[p]) == 0.0) continue;
      rest.assign(s.begin(), s.end());
      rest.erase(rest.begin() + p);
      r.add(rest, out_[e], coeff_[e] * b(s[p]));
    }
  }
  r.finalize();
  return r;
}

MultilinearForm MultilinearForm::compose(const MultilinearForm& B) const {
  check_finalized();
  B.check_finalized();
  require(degree_ >= 1, ErrorCode::kInvalidArgument, "cannot compose into a constant");
  require(B.dim_out_ == dim_in_ && B.dim_in_ == dim_in_, ErrorCode::kBasisMismatch, "composition shape mismatch");
  std::vector<std::vector<size_t>> by_out(static_cast<size_t>(dim_in_));
  for (size_t e = 0; e < B.out_.size(); ++e) by_out[static_cast<size_t>(B.out_[e])].push_back(e);
  // Accumulate mult(t) * G[t] then divide by mult(t).
  std::map<std::pair<std::vector<int>, int>, double> acc;
  std::vector<int> rest, key;
  for (size_t e = 0; e < out_.size(); ++e) {
    auto s = inputs(e);
    for (int p = 0; p < degree_; ++p) {
      if (p > 0 && s[p] == s[p - 1]) continue;
      rest.assign(s.begin(), s.end());
      rest.erase(rest.begin() + p);
      const double ta = coeff_[e] * tuple_multiplicity(rest);
      for (size_t eb : by_out[static_cast<size_t>(s[p])]) {
        auto tc = B.inputs(eb);
        key = rest;
        key.insert(key.end(), tc.begin(), tc.end());
        std::sort(key.begin(), key.end());
        acc[{key, out_[e]}] += ta * B.mult_[eb] * B.coeff_[eb];
      }
    }
  }
  MultilinearForm r(degree_ - 1 + B.degree_, dim_in_, dim_out_);
  for (const auto& [k, v] : acc) r.add(k.first, k.second, v / tuple_multiplicity(k.first));
  r.finalize();
  return r;
}

MultilinearForm MultilinearForm::scaled(double a) const {
  check_finalized();
  MultilinearForm r = *this;
  for (double& c : r.coeff_) c *= a;
  for (auto& p : r.plan_) p.c *= a;
  if (a == 0.0) {
    r = MultilinearForm(degree_, dim_in_, dim_out_);
  }
  return r;
}

MultilinearForm MultilinearForm::plus(const MultilinearForm& o) const {
  check_finalized();
  o.check_finalized();
  require(o.degree_ == degree_ && o.dim_in_ == dim_in_ && o.dim_out_ == dim_out_, ErrorCode::kBasisMismatch,
          "cannot add forms of different shape");
  MultilinearForm r(degree_, dim_in_, dim_out_);
  for (const MultilinearForm* f : {this, &o}) {
    for (size_t e = 0; e < f->size(); ++e) {
      auto s = f->inputs(e);
      r.add(std::vector<int>(s.begin(), s.end()), f->out_[e], f->coeff_[e]);
    }
  }
  r.finalize();
  return r;
}

std::string MultilinearForm::to_json() const {
  check_finalized();
  nlohmann::json j;
  j["degree"] = degree_;
  j["dim_in"] = dim_in_;
  j["dim_out"] = dim_out_;
  auto triples = nlohmann::json::array();
  for (size_t e = 0; e < out_.size(); ++e) {
    auto s = inputs(e);
    triples.push_back({std::vector<int>(s.begin(), s.end()), out_[e], coeff_[e]});
  }
  j["triples"] = std::move(triples);
  return j.dump();
}

MultilinearForm MultilinearForm::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    fail(ErrorCode::kIo, std::string("bad form JSON: ") + e.what());
  }
  MultilinearForm f(j.at("degree").get<int>(), j.at("dim_in").get<int>(), j.at("dim_out").get<int>());
  for (const auto& t : j.at("triples")) {
    f.add(t.at(0).get<std::vector<int>>(), t.at(1).get<int>(), t.at(2).get<double>());
  }
  f.finalize();
  return f;
}

}  // namespace spreadlab
