#pragma once

#include <string>
#include <vector>

#include "spreadlab/presets.hpp"
#include "spreadlab/vector_fields.hpp"

namespace spreadlab {

struct Provenance {
  int step = 1;            // n of the Hbb_n where the vector first appeared
  int parent = -1;         // index of g in the span basis (-1: a generator)
  std::vector<int> ktuple; // generator indices k_1..k_{j-1} (or {k} for generators)
  int form_degree = 0;     // j of the form N_j used
};

struct SpanBasis {
  std::vector<SpectralField> vectors;  // H-orthonormal
  std::vector<Provenance> provenance;
  double rank_tol = 1e-10;
  int rank() const { return static_cast<int>(vectors.size()); }
};

struct GrowOptions {
  double rank_tol = 1e-10;
  bool all_degrees = false;  // also bracket with lower-degree forms N_j, 2 <= j < m
};

// Hbb_1 = span(gs); Hbb_n adds N_m(g, g_k1, ..., g_k{m-1}) for g in Hbb_{n-1}.
// Returns one SpanBasis per step; stops at max_steps or at the first step
// that adds nothing (that saturated step is included).
std::vector<SpanBasis> grow_span(const std::vector<SpectralField>& gs, const PolyVectorField& F, int max_steps,
                                 const GrowOptions& opts = {});

struct SubspaceCheck {
  bool contained = false;
  double margin = 0.0;        // smallest eigenvalue of the Gram matrix of projected unit s
  double max_residual = 0.0;  // largest relative projection residual
};
SubspaceCheck check_subspace(const std::vector<SpectralField>& S, const SpanBasis& H);

struct NsCondition {
  bool generates_Z2 = false;
  bool unequal_norms = false;
};
NsCondition ns_condition(const std::vector<LatticePoint>& Z0);

// Every product of at most 2q elements of I0, projected, lies in span(gs).
bool rd_condition(const std::vector<SpectralField>& I0, const std::vector<SpectralField>& gs, int q,
                  double rank_tol = 1e-10);

// Largest |coefficient| of N_m(g_a, g_k...) over generator tuples (first generation).
double first_generation_max(const std::vector<SpectralField>& gs, const PolyVectorField& F);

std::string provenance_json(const std::vector<SpanBasis>& steps);

}  // namespace spreadlab
