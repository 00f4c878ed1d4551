#pragma once

#include <Eigen/Dense>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace spreadlab {

// Symmetric j-linear map R^dim_in x ... x R^dim_in -> R^dim_out stored as
// sparse (sorted input tuple, output index, coefficient) triples. The full
// tensor T(i_1..i_j) equals the stored coefficient of sort(i_1..i_j), so
// N(x_1..x_j)_o = sum over ordered tuples of T(i) x_1[i_1]...x_j[i_j].
// Degree 0 is a constant vector and degree 1 a sparse matrix.
class MultilinearForm {
 public:
  MultilinearForm() = default;
  MultilinearForm(int degree, int dim_in, int dim_out);

  int degree() const { return degree_; }
  int dim_in() const { return dim_in_; }
  int dim_out() const { return dim_out_; }
  size_t size() const { return out_.size(); }
  bool empty() const { return out_.empty() && pending_.empty(); }

  // Accumulates into the builder; inputs may be in any order.
  void add(std::vector<int> inputs, int output, double coeff);
  // Merges pending entries, drops |coeff| <= drop_tol, builds evaluation plans.
  void finalize(double drop_tol = 0.0);

  std::span<const int> inputs(size_t e) const {
    return {inputs_.data() + e * static_cast<size_t>(degree_), static_cast<size_t>(degree_)};
  }
  int output(size_t e) const { return out_[e]; }
  double coeff(size_t e) const { return coeff_[e]; }
  // Number of distinct orderings of the entry's input tuple.
  double multiplicity(size_t e) const { return mult_[e]; }
  double coefficient(std::vector<int> inputs, int output) const;
  double max_abs_coeff() const;

  // N(args[0], ..., args[j-1]).
  Eigen::VectorXd apply(const std::vector<const Eigen::VectorXd*>& args) const;
  // N(x, ..., x).
  Eigen::VectorXd apply_diagonal(const Eigen::VectorXd& x) const;
  // out += scale * j * N(x^{j-1}, v)  (action of the Frechet derivative).
  void add_derivative(const Eigen::VectorXd& x, const Eigen::VectorXd& v, double scale,
                      Eigen::VectorXd& out) const;
  // out += scale * (j * N(x^{j-1}, .))^T w.
  void add_derivative_transpose(const Eigen::VectorXd& x, const Eigen::VectorXd& w, double scale,
                                Eigen::VectorXd& out) const;
  // A += scale * j * N(x^{j-1}, .) as a dense dim_out x dim_in matrix.
  void add_derivative_matrix(const Eigen::VectorXd& x, double scale, Eigen::MatrixXd& A) const;

  // y -> N(y^{j-1}, b): degree j-1 form.
  MultilinearForm contract_last(const Eigen::VectorXd& b) const;
  // y -> N(y^{j-1}, B(y^r)): degree j-1+r form. Requires B.dim_out == dim_in.
  MultilinearForm compose(const MultilinearForm& B) const;
  MultilinearForm scaled(double a) const;
  // Sum of two forms of equal degree and shape.
  MultilinearForm plus(const MultilinearForm& other) const;

  std::string to_json() const;
  static MultilinearForm from_json(const std::string& text);

 private:
  struct PlanItem {
    int rest;  // offset into plan_rest_
    int col;
    int row;
    double c;  // j * mult(rest) * T
  };
  void check_finalized() const;
  double rest_product(const PlanItem& p, const Eigen::VectorXd& x) const;

  int degree_ = 0;
  int dim_in_ = 0;
  int dim_out_ = 0;
  bool finalized_ = true;
  std::map<std::pair<std::vector<int>, int>, double> pending_;
  std::vector<int> inputs_;
  std::vector<int> out_;
  std::vector<double> coeff_;
  std::vector<double> mult_;
  std::vector<PlanItem> plan_;
  std::vector<int> plan_rest_;
};

// Number of distinct orderings of a sorted tuple.
double tuple_multiplicity(std::span<const int> sorted);

}  // namespace spreadlab
