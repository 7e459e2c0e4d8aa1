#pragma once

// Test-only reference implementations. Nothing here shares code paths with the
// library beyond the MolGraph value type and (where noted) write_smiles.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "damq/molgraph.hpp"

namespace damq::oracle {

// Backtracking element- and bond-order-preserving isomorphism test.
bool isomorphic(const MolGraph& a, const MolGraph& b);

// Copy of `mol` with atom i moved to position perm[i].
MolGraph relabel(const MolGraph& mol, const std::vector<int>& perm);

MolGraph random_relabel(const MolGraph& mol, std::mt19937_64& rng);

struct RandomMolOptions {
  int min_atoms = 1;
  int max_atoms = 12;
  double extra_bond_prob = 0.15;  // chance per attempt of closing a ring
  double multiple_bond_prob = 0.2;
  bool require_oh = false;
};

// Random connected, valence-valid molecule (not necessarily chemically sane).
MolGraph random_molecule(std::mt19937_64& rng, const RandomMolOptions& opts = {});

// Every simple cycle as a sorted list of bond indices (exponential; small graphs only).
std::vector<std::vector<int>> all_simple_cycles(const MolGraph& mol);

// Minimum cycle basis by greedy selection over all simple cycles. Returns the
// chosen cycles as sorted bond-index lists, ordered by (size, bond list).
std::vector<std::vector<int>> exhaustive_min_cycle_basis(const MolGraph& mol);

// Ring-size histogram from the exhaustive basis (unique across all minimum bases).
std::vector<int> exhaustive_ring_size_histogram(const MolGraph& mol);

struct Enumeration {
  std::vector<MolGraph> molecules;  // one representative per isomorphism class
  long long duplicates = 0;         // generated graphs whose canonical text was already seen
  long long collisions = 0;         // of those, graphs NOT isomorphic to the stored representative
};

// Every connected valence-valid C/N/O graph with up to `max_atoms` heavy atoms,
// built by closure under "add a bonded atom" and "raise a bond order by one"
// (which also covers forming a new bond). Classes are keyed by write_smiles;
// every key hit is re-verified with `isomorphic`, so a canonicalization
// collision shows up in `collisions` instead of silently merging two classes.
Enumeration enumerate_molecules(int max_atoms);

// Brute-force successor generator: tries every single edit (add an atom of
// any element with any order at any atom, set any atom pair to any other
// bond order), keeps what survives MolGraph validation, the ring rules and
// O-H protection, and dedups by isomorphism. NoOp is not included.
std::vector<MolGraph> brute_force_successors(const MolGraph& mol, bool protect_oh,
                                             const std::vector<int>& allowed_ring_sizes = {3, 5, 6});

}  // namespace damq::oracle
