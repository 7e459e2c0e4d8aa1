#pragma once

#include <string_view>
#include <vector>

#include "damq/molgraph.hpp"
#include "damq/smiles.hpp"

namespace damq {

enum class ActionKind { AtomAdd, BondChange, BondRemove, NoOp };

const char* to_string(ActionKind kind);

struct Action {
  ActionKind kind = ActionKind::NoOp;
  // AtomAdd: `element` bonded to source atom `a` with bond order `order`.
  // BondChange / BondRemove: bond a-b (source indices, a < b) set to `order`;
  // order 0 deletes the bond.
  Element element = Element::C;
  int a = -1;
  int b = -1;
  int order = 0;

  MolGraph result;
  CanonicalSmiles smiles;
  // origin[i] is the source index of result atom i, or -1 for an added atom.
  std::vector<int> origin;
};

struct ActionConfig {
  std::vector<Element> allowed_elements{Element::C, Element::N, Element::O};
  std::vector<int> allowed_ring_sizes{3, 5, 6};
  bool protect_oh = true;
  bool allow_no_op = true;
};

// Distinct one-edit successors of a state, sorted by canonical SMILES.
struct ActionSet {
  std::vector<Action> actions;

  std::size_t size() const { return actions.size(); }
  bool empty() const { return actions.empty(); }
  const Action& operator[](std::size_t i) const { return actions[i]; }
  auto begin() const { return actions.begin(); }
  auto end() const { return actions.end(); }
};

// Every valid single edit of `mol`:
//  - AtomAdd: a new allowed atom bonded to any atom with free valence, order
//    1..min(free valences, 3).
//  - BondChange: raise a bond order (or form a bond) between two atoms that
//    both have free valence. A new bond must close a ring whose size
//    (shortest path + 1) is allowed.
//  - BondRemove: lower a bond order by 1..order. A removal that disconnects
//    the graph keeps one fragment: the one carrying an O-H bond when
//    protect_oh is set, otherwise the larger one; ties go to the smaller
//    canonical SMILES.
//  - NoOp (when allow_no_op).
// No successor may hold more rings of a disallowed size than the source, and
// with protect_oh every successor keeps an O-H bond. Results isomorphic to one
// another are listed once. Throws NoOhBond when protect_oh is set and `mol`
// has no O-H bond.
ActionSet enumerate_actions(const MolGraph& mol, const ActionConfig& cfg = {});

}  // namespace damq
