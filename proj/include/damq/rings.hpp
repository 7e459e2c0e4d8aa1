#pragma once

#include <vector>

#include "damq/molgraph.hpp"

namespace damq {

struct Ring {
  std::vector<int> atoms;  // sorted ascending
  std::vector<int> bonds;  // indices into MolGraph::bonds(), sorted ascending

  int size() const { return static_cast<int>(atoms.size()); }
};

// Smallest-set-of-smallest-rings decomposition: a minimum cycle basis chosen
// greedily over Horton candidates ordered by (size, bond-index list). The ring
// count always equals bonds - atoms + 1; the multiset of ring sizes is the
// same for every minimum cycle basis, the per-atom membership is deterministic.
struct RingInfo {
  std::vector<Ring> rings;                  // ordered by (size, bonds)
  std::vector<int> atom_ring_count;         // per atom
  std::vector<std::vector<int>> atom_ring_sizes;  // per atom, ascending

  int ring_count() const { return static_cast<int>(rings.size()); }
  bool in_ring(int atom) const { return atom_ring_count[atom] > 0; }
};

RingInfo ring_membership(const MolGraph& mol);

// Histogram of ring sizes: result[s] = number of rings of size s.
std::vector<int> ring_size_histogram(const MolGraph& mol);

// Per-atom cycle membership (atom is incident to a non-bridge bond). O(atoms +
// bonds); cheaper than ring_membership when sizes are not needed.
std::vector<bool> ring_atom_flags(const MolGraph& mol);

// Biconnected blocks of the bond graph. block[e] is the block of bond e, or
// -1 for a bridge. A block whose bond count equals its atom count is a single
// ring sharing no bond with any other ring.
struct BlockInfo {
  std::vector<int> block;
  std::vector<int> block_bonds;
  std::vector<int> block_atoms;

  bool bridge(int bond) const { return block[bond] < 0; }
  bool simple_ring(int bond) const {
    const int b = block[bond];
    return b >= 0 && block_bonds[b] == block_atoms[b];
  }
};

BlockInfo bond_blocks(const MolGraph& mol);

inline int cyclomatic_number(const MolGraph& mol) { return mol.bond_count() - mol.atom_count() + 1; }

}  // namespace damq
