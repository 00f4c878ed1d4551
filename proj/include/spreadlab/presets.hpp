#pragma once

#include <array>
#include <vector>

#include "spreadlab/vector_fields.hpp"

namespace spreadlab {

using LatticePoint = std::array<int, 2>;

// Symmetric j-form (u_1..u_j) -> P(u_1 ... u_j), the Galerkin projection of
// the pointwise product on the Dirichlet interval.
MultilinearForm rd_power_form(const BasisPtr& basis, int j);

// Reaction-diffusion drift F(u) = -L u + sum_k a[k] P(u^k).
PolyVectorField rd_drift(const BasisPtr& basis, const std::vector<double>& a,
                         int max_degree = kDefaultMaxDegree);

// Symmetrized vorticity nonlinearity N(w1,w2) = (B(Kw1,w2) + B(Kw2,w1))/2
// with B(u,w) = -(u.grad)w, u = grad^perp psi, Laplacian psi = w.
MultilinearForm ns_bilinear_form(const BasisPtr& basis);
// Vorticity drift F(w) = -L w + N(w, w).
PolyVectorField ns_drift(const BasisPtr& basis);

// cos and sin generators (times amp) for each lattice point of Z0 modulo sign.
std::vector<SpectralField> ns_generators(const BasisPtr& basis, const std::vector<LatticePoint>& Z0, double amp);
// amp * e_k for each listed wavenumber (1-based).
std::vector<SpectralField> rd_generators(const BasisPtr& basis, const std::vector<int>& wavenumbers, double amp);

}  // namespace spreadlab
