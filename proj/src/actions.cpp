#include "damq/actions.hpp"

#include <algorithm>
#include <numeric>
#include <optional>

#include "damq/rings.hpp"

namespace damq {

const char* to_string(ActionKind kind) {
  switch (kind) {
    case ActionKind::AtomAdd: return "atom_add";
    case ActionKind::BondChange: return "bond_change";
    case ActionKind::BondRemove: return "bond_remove";
    case ActionKind::NoOp: return "no_op";
  }
  return "?";
}

namespace {

class Enumerator {
 public:
  Enumerator(const MolGraph& mol, const ActionConfig& cfg) : mol_(mol), cfg_(cfg) {
    const int n = mol.atom_count();
    free_.resize(n);
    for (int i = 0; i < n; ++i) free_[i] = free_valence(mol, i);
    identity_.resize(n);
    std::iota(identity_.begin(), identity_.end(), 0);
    blocks_ = bond_blocks(mol);
  }

  std::vector<Action> run() {
    add_atoms();
    change_bonds();
    remove_bonds();
    if (cfg_.allow_no_op) {
      push({ActionKind::NoOp, Element::C, -1, -1, 0, mol_, write_smiles(mol_), identity_});
    }
    // Sort by SMILES; the stable sort keeps the first generated edit of each
    // isomorphism class.
    std::stable_sort(out_.begin(), out_.end(), [](const Action& x, const Action& y) { return x.smiles < y.smiles; });
    out_.erase(std::unique(out_.begin(), out_.end(), [](const Action& x, const Action& y) { return x.smiles == y.smiles; }),
               out_.end());
    return std::move(out_);
  }

 private:
  bool ring_size_allowed(int size) const {
    return std::find(cfg_.allowed_ring_sizes.begin(), cfg_.allowed_ring_sizes.end(), size) !=
           cfg_.allowed_ring_sizes.end();
  }

  // A ring-changing edit may not add rings of a disallowed size.
  bool rings_ok(const MolGraph& result) {
    if (!source_rings_) source_rings_ = ring_size_histogram(mol_);
    const auto hist = ring_size_histogram(result);
    for (std::size_t s = 0; s < hist.size(); ++s) {
      const int before = s < source_rings_->size() ? (*source_rings_)[s] : 0;
      if (hist[s] > before && !ring_size_allowed(static_cast<int>(s))) return false;
    }
    return true;
  }

  void bfs_tree(int root, std::vector<int>& dist, std::vector<int>& parent) const {
    const int n = mol_.atom_count();
    dist.assign(n, -1);
    parent.assign(n, -1);
    std::vector<int> queue{root};
    dist[root] = 0;
    for (std::size_t h = 0; h < queue.size(); ++h) {
      for (const auto& nb : mol_.neighbors(queue[h])) {
        if (dist[nb.atom] < 0) {
          dist[nb.atom] = dist[queue[h]] + 1;
          parent[nb.atom] = queue[h];
          queue.push_back(nb.atom);
        }
      }
    }
  }

  int bond_index(int x, int y) const {
    if (x > y) std::swap(x, y);
    const auto& bonds = mol_.bonds();
    auto it = std::lower_bound(bonds.begin(), bonds.end(), std::pair{x, y},
                               [](const Bond& bond, const std::pair<int, int>& key) {
                                 return std::pair{bond.a, bond.b} < key;
                               });
    return static_cast<int>(it - bonds.begin());
  }

  void push(Action action) {
    if (cfg_.protect_oh && !has_oh_bond(action.result)) return;
    out_.push_back(std::move(action));
  }

  void push_graph(ActionKind kind, Element e, int a, int b, int order, MolGraph result, std::vector<int> origin) {
    if (cfg_.protect_oh && !has_oh_bond(result)) return;
    CanonicalSmiles smiles = write_smiles(result);
    out_.push_back({kind, e, a, b, order, std::move(result), std::move(smiles), std::move(origin)});
  }

  void add_atoms() {
    const int n = mol_.atom_count();
    for (int host = 0; host < n; ++host) {
      if (free_[host] == 0) continue;
      for (Element e : cfg_.allowed_elements) {
        const int max_order = std::min({free_[host], max_valence(e), 3});
        for (int order = 1; order <= max_order; ++order) {
          auto atoms = mol_.elements();
          atoms.push_back(e);
          auto bonds = mol_.bonds();
          bonds.push_back({host, n, order});
          auto origin = identity_;
          origin.push_back(-1);
          push_graph(ActionKind::AtomAdd, e, host, -1, order, MolGraph(std::move(atoms), std::move(bonds)),
                     std::move(origin));
        }
      }
    }
  }

  void change_bonds() {
    const int n = mol_.atom_count();
    for (int a = 0; a < n; ++a) {
      if (free_[a] == 0) continue;
      std::vector<int> dist, parent;
      for (int b = a + 1; b < n; ++b) {
        if (free_[b] == 0) continue;
        const int current = mol_.bond_order(a, b);
        const int max_order = std::min(3, current + std::min(free_[a], free_[b]));
        if (max_order <= current) continue;
        bool forms_ring = current == 0;
        // When a and b are joined by a single path of bridges the new ring is
        // the only change to the ring set; otherwise rings are recomputed.
        bool check_rings = false;
        if (forms_ring) {
          if (dist.empty()) bfs_tree(a, dist, parent);
          if (!ring_size_allowed(dist[b] + 1)) continue;
          for (int x = b; x != a; x = parent[x]) {
            if (!blocks_.bridge(bond_index(x, parent[x]))) check_rings = true;
          }
        }
        for (int order = current + 1; order <= max_order; ++order) {
          auto bonds = mol_.bonds();
          if (current == 0) {
            bonds.push_back({a, b, order});
          } else {
            for (auto& bond : bonds) {
              if (bond.a == a && bond.b == b) bond.order = order;
            }
          }
          MolGraph result(mol_.elements(), std::move(bonds));
          if (check_rings && !rings_ok(result)) break;
          push_graph(ActionKind::BondChange, Element::C, a, b, order, std::move(result), identity_);
        }
      }
    }
  }

  void remove_bonds() {
    const int n = mol_.atom_count();
    const auto& bonds = mol_.bonds();
    for (std::size_t e = 0; e < bonds.size(); ++e) {
      const Bond bond = bonds[e];
      for (int order = bond.order - 1; order >= 1; --order) {
        auto edited = bonds;
        edited[e].order = order;
        push_graph(ActionKind::BondRemove, Element::C, bond.a, bond.b, order, MolGraph(mol_.elements(), std::move(edited)),
                   identity_);
      }

      std::vector<Bond> rest;
      rest.reserve(bonds.size() - 1);
      for (std::size_t f = 0; f < bonds.size(); ++f) {
        if (f != e) rest.push_back(bonds[f]);
      }
      std::vector<int> labels;
      if (label_components(n, rest, labels) == 1) {
        MolGraph result(mol_.elements(), std::move(rest));
        // Cutting an isolated ring just deletes that ring.
        if (!blocks_.simple_ring(static_cast<int>(e)) && !rings_ok(result)) continue;
        push_graph(ActionKind::BondRemove, Element::C, bond.a, bond.b, 0, std::move(result), identity_);
        continue;
      }

      // Two fragments; keep one of them.
      struct Fragment {
        MolGraph mol;
        std::vector<int> origin;
        bool oh;
        CanonicalSmiles smiles;
      };
      std::vector<Fragment> frags;
      for (int label = 0; label < 2; ++label) {
        std::vector<int> index(n, -1), origin;
        std::vector<Element> atoms;
        for (int i = 0; i < n; ++i) {
          if (labels[i] != label) continue;
          index[i] = static_cast<int>(atoms.size());
          atoms.push_back(mol_.element(i));
          origin.push_back(i);
        }
        std::vector<Bond> fb;
        for (const auto& r : rest) {
          if (labels[r.a] == label) fb.push_back({index[r.a], index[r.b], r.order});
        }
        MolGraph frag(std::move(atoms), std::move(fb));
        const bool oh = has_oh_bond(frag);
        CanonicalSmiles smiles = write_smiles(frag);
        frags.push_back({std::move(frag), std::move(origin), oh, std::move(smiles)});
      }
      auto better = [&](const Fragment& x, const Fragment& y) {
        if (cfg_.protect_oh && x.oh != y.oh) return x.oh;
        if (x.mol.atom_count() != y.mol.atom_count()) return x.mol.atom_count() > y.mol.atom_count();
        return x.smiles < y.smiles;
      };
      Fragment& keep = better(frags[0], frags[1]) ? frags[0] : frags[1];
      if (cfg_.protect_oh && !keep.oh) continue;
      out_.push_back({ActionKind::BondRemove, Element::C, bond.a, bond.b, 0, std::move(keep.mol), std::move(keep.smiles),
                      std::move(keep.origin)});
    }
  }

  const MolGraph& mol_;
  const ActionConfig& cfg_;
  std::vector<int> free_;
  std::vector<int> identity_;
  std::optional<std::vector<int>> source_rings_;
  BlockInfo blocks_;
  std::vector<Action> out_;
};

}  // namespace

ActionSet enumerate_actions(const MolGraph& mol, const ActionConfig& cfg) {
  if (cfg.protect_oh && !has_oh_bond(mol)) throw NoOhBond("enumerate_actions: source molecule has no O-H bond");
  return {Enumerator(mol, cfg).run()};
}

}  // namespace damq
