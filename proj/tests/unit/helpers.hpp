#pragma once

#include <random>

#include "spreadlab/spectral.hpp"

namespace testing_util {

inline Eigen::VectorXd random_vector(int n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g;
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = scale * g(rng);
  return v;
}

inline spreadlab::SpectralField random_field(const spreadlab::BasisPtr& b, std::mt19937_64& rng, double scale = 1.0) {
  Eigen::VectorXd v = random_vector(b->dim(), rng);
  v *= scale / v.norm();
  return spreadlab::SpectralField(b, v);
}

inline double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double den = std::max(b.norm(), 1e-300);
  return (a - b).norm() / den;
}

}  // namespace testing_util
