#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace damq {

enum class Element : std::uint8_t { C = 0, N = 1, O = 2 };

inline constexpr int kElementCount = 3;

constexpr int max_valence(Element e) {
  switch (e) {
    case Element::C: return 4;
    case Element::N: return 3;
    case Element::O: return 2;
  }
  return 0;
}

constexpr char element_symbol(Element e) {
  switch (e) {
    case Element::C: return 'C';
    case Element::N: return 'N';
    case Element::O: return 'O';
  }
  return '?';
}

struct Bond {
  int a = 0;  // always a < b once stored in a MolGraph
  int b = 0;
  int order = 1;

  friend bool operator==(const Bond&, const Bond&) = default;
};

struct Neighbor {
  int atom = 0;
  int order = 1;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

enum class MolErrorKind {
  Empty,
  BadAtomIndex,
  SelfBond,
  DuplicateBond,
  BadBondOrder,
  ValenceViolation,
  Disconnected,
};

class MolError : public std::runtime_error {
 public:
  MolError(MolErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  MolErrorKind kind() const noexcept { return kind_; }

 private:
  MolErrorKind kind_;
};

// Raised when an operation needs an O-H bond (implicit H on an oxygen) and the
// molecule has none.
class NoOhBond : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Heavy-atom molecular graph. Hydrogens are implicit: every atom carries
// max_valence - (sum of incident bond orders) hydrogens. Instances are
// immutable and always satisfy the simple-graph, valence and connectivity
// invariants; the constructor throws MolError otherwise.
class MolGraph {
 public:
  MolGraph(std::vector<Element> atoms, std::vector<Bond> bonds);

  int atom_count() const { return static_cast<int>(atoms_.size()); }
  int bond_count() const { return static_cast<int>(bonds_.size()); }

  Element element(int atom) const { return atoms_[atom]; }
  const std::vector<Element>& elements() const { return atoms_; }
  // Sorted by (a, b).
  const std::vector<Bond>& bonds() const { return bonds_; }

  std::span<const Neighbor> neighbors(int atom) const {
    return {adjacency_.data() + offsets_[atom], adjacency_.data() + offsets_[atom + 1]};
  }
  int degree(int atom) const { return offsets_[atom + 1] - offsets_[atom]; }
  int bond_order_sum(int atom) const { return order_sum_[atom]; }
  // 0 when the atoms are not bonded.
  int bond_order(int a, int b) const;

  friend bool operator==(const MolGraph&, const MolGraph&) = default;

 private:
  std::vector<Element> atoms_;
  std::vector<Bond> bonds_;
  std::vector<int> offsets_;
  std::vector<Neighbor> adjacency_;
  std::vector<int> order_sum_;
};

int free_valence(const MolGraph& mol, int atom);

inline int hydrogen_count(const MolGraph& mol, int atom) { return free_valence(mol, atom); }

// True iff some oxygen carries at least one implicit hydrogen.
bool has_oh_bond(const MolGraph& mol);

// Component label per atom for an arbitrary (possibly disconnected) bond list.
// Labels are numbered by lowest member atom. Returns the component count.
int label_components(int atom_count, std::span<const Bond> bonds, std::vector<int>& labels);

// Order-sensitive 64-bit hash of the atom and bond lists (not an isomorphism
// invariant). Used to detect stale per-molecule caches.
std::uint64_t structure_hash(const MolGraph& mol);

// Breadth-first distances from `source`; -1 for unreachable atoms. Stops
// expanding at `max_depth` when it is non-negative.
std::vector<int> bfs_distances(const MolGraph& mol, int source, int max_depth = -1);

}  // namespace damq
