#pragma once

#include <cstdint>
#include <vector>

#include "gfra/types.hpp"

namespace gfra {

struct UniquenessTrialConfig {
  int m_dim = 6;   // M~, measurements
  int n_dim = 12;  // N~, atoms
  int l_dim = 2;   // L~ = rank(Y)
  int r_known = 0; // r_s
  int trials = 100;
  std::uint64_t seed = 1;
  std::uint64_t max_supports = 1000000;

  // ceil((M~ + L~ + r_s) / 2) - 1
  int sparsity_bound() const;
  void validate() const;
};

int uniqueness_bound(int m_dim, int l_dim, int r_known);

// Number of supports of size <= max_sparsity containing `known`.
std::uint64_t count_supports(int n_atoms, int max_sparsity, int n_known);

// All supports of size <= max_sparsity containing `known` whose least-squares
// fit reproduces y to 1e-9 relative residual, canonicalized by dropping rows
// with coefficient norm below 1e-10 and deduplicated.
std::vector<IndexSet> brute_force_mmv(const CMatrix& y, const CMatrix& dict, int max_sparsity, const IndexSet& known,
                                      std::uint64_t max_supports = 1000000);

struct UniquenessReport {
  UniquenessTrialConfig config;
  int bound = 0;
  int trials = 0;
  int unique = 0;
  int planted_found = 0;
  int redraws = 0;
  double unique_fraction = 0.0;
  double wall_seconds = 0.0;
};

UniquenessReport verify_uniqueness_bound(const UniquenessTrialConfig& cfg);

// Two disjoint supports of size bound+1 explaining the same y, built from the
// null space of their joint dictionary (L~ = 1).
struct NonUniquenessWitness {
  CMatrix dict;
  CMatrix y;
  IndexSet first;
  IndexSet second;
  std::vector<IndexSet> consistent;  // brute_force_mmv output at sparsity bound+1
};

NonUniquenessWitness construct_nonuniqueness_witness(int m_dim, int n_dim, std::uint64_t seed);

// Random planted supports at bound+1; counts trials with more than one
// consistent support.
struct RandomSearchReport {
  int trials = 0;
  int nonunique = 0;
};
RandomSearchReport search_nonuniqueness(int m_dim, int n_dim, int trials, std::uint64_t seed);

}  // namespace gfra
