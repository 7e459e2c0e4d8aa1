#include "damq/molgraph.hpp"

#include <algorithm>
#include <numeric>

#include "damq/hash.hpp"

namespace damq {

MolGraph::MolGraph(std::vector<Element> atoms, std::vector<Bond> bonds)
    : atoms_(std::move(atoms)), bonds_(std::move(bonds)) {
  const int n = atom_count();
  if (n == 0) throw MolError(MolErrorKind::Empty, "molecule has no atoms");

  for (auto& bond : bonds_) {
    if (bond.a < 0 || bond.b < 0 || bond.a >= n || bond.b >= n) {
      throw MolError(MolErrorKind::BadAtomIndex, "bond references atom outside [0, " + std::to_string(n) + ")");
    }
    if (bond.a == bond.b) {
      throw MolError(MolErrorKind::SelfBond, "self bond on atom " + std::to_string(bond.a));
    }
    if (bond.order < 1 || bond.order > 3) {
      throw MolError(MolErrorKind::BadBondOrder, "bond order " + std::to_string(bond.order) + " not in 1..3");
    }
    if (bond.a > bond.b) std::swap(bond.a, bond.b);
  }
  std::sort(bonds_.begin(), bonds_.end(),
            [](const Bond& x, const Bond& y) { return x.a != y.a ? x.a < y.a : x.b < y.b; });
  for (std::size_t i = 1; i < bonds_.size(); ++i) {
    if (bonds_[i].a == bonds_[i - 1].a && bonds_[i].b == bonds_[i - 1].b) {
      throw MolError(MolErrorKind::DuplicateBond,
                     "duplicate bond " + std::to_string(bonds_[i].a) + "-" + std::to_string(bonds_[i].b));
    }
  }

  std::vector<int> degree(n, 0);
  order_sum_.assign(n, 0);
  for (const auto& bond : bonds_) {
    ++degree[bond.a];
    ++degree[bond.b];
    order_sum_[bond.a] += bond.order;
    order_sum_[bond.b] += bond.order;
  }
  for (int i = 0; i < n; ++i) {
    if (order_sum_[i] > max_valence(atoms_[i])) {
      throw MolError(MolErrorKind::ValenceViolation, std::string("atom ") + std::to_string(i) + " (" +
                                                         element_symbol(atoms_[i]) + ") exceeds its valence");
    }
  }

  offsets_.assign(n + 1, 0);
  for (int i = 0; i < n; ++i) offsets_[i + 1] = offsets_[i] + degree[i];
  adjacency_.resize(offsets_[n]);
  std::vector<int> fill(offsets_.begin(), offsets_.end() - 1);
  // Bonds are sorted, so each neighbor list comes out sorted by atom index.
  for (const auto& bond : bonds_) adjacency_[fill[bond.a]++] = {bond.b, bond.order};
  for (const auto& bond : bonds_) adjacency_[fill[bond.b]++] = {bond.a, bond.order};
  for (int i = 0; i < n; ++i) {
    std::sort(adjacency_.begin() + offsets_[i], adjacency_.begin() + offsets_[i + 1],
              [](const Neighbor& x, const Neighbor& y) { return x.atom < y.atom; });
  }

  std::vector<int> labels;
  if (label_components(n, bonds_, labels) != 1) {
    throw MolError(MolErrorKind::Disconnected, "molecule graph is not connected");
  }
}

int MolGraph::bond_order(int a, int b) const {
  for (const auto& nb : neighbors(a)) {
    if (nb.atom == b) return nb.order;
  }
  return 0;
}

int free_valence(const MolGraph& mol, int atom) {
  if (atom < 0 || atom >= mol.atom_count()) throw std::out_of_range("atom index out of range");
  return max_valence(mol.element(atom)) - mol.bond_order_sum(atom);
}

bool has_oh_bond(const MolGraph& mol) {
  for (int i = 0; i < mol.atom_count(); ++i) {
    if (mol.element(i) == Element::O && free_valence(mol, i) >= 1) return true;
  }
  return false;
}

int label_components(int atom_count, std::span<const Bond> bonds, std::vector<int>& labels) {
  std::vector<int> parent(atom_count);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  for (const auto& bond : bonds) {
    int ra = find(bond.a), rb = find(bond.b);
    if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
  }
  labels.assign(atom_count, -1);
  std::vector<int> root_label(atom_count, -1);
  int count = 0;
  for (int i = 0; i < atom_count; ++i) {
    int r = find(i);
    if (root_label[r] < 0) root_label[r] = count++;
    labels[i] = root_label[r];
  }
  return count;
}

std::uint64_t structure_hash(const MolGraph& mol) {
  WordHash h;
  h.add(static_cast<std::uint64_t>(mol.atom_count()));
  for (auto e : mol.elements()) h.add(static_cast<std::uint64_t>(e));
  for (const auto& bond : mol.bonds()) {
    h.add(static_cast<std::uint64_t>(bond.a) << 34 | static_cast<std::uint64_t>(bond.b) << 2 |
          static_cast<std::uint64_t>(bond.order));
  }
  return h.value();
}

std::vector<int> bfs_distances(const MolGraph& mol, int source, int max_depth) {
  std::vector<int> dist(mol.atom_count(), -1);
  std::vector<int> queue{source};
  dist[source] = 0;
  for (std::size_t head = 0; head < queue.size(); ++head) {
    int u = queue[head];
    if (max_depth >= 0 && dist[u] >= max_depth) continue;
    for (const auto& nb : mol.neighbors(u)) {
      if (dist[nb.atom] < 0) {
        dist[nb.atom] = dist[u] + 1;
        queue.push_back(nb.atom);
      }
    }
  }
  return dist;
}

}  // namespace damq
