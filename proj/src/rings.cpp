#include "damq/rings.hpp"

#include <algorithm>
#include <cstdint>

namespace damq {
namespace {

using EdgeSet = std::vector<std::uint64_t>;

struct Candidate {
  int length = 0;
  int root = 0;
  int bond = 0;
};

int bond_index(const MolGraph& mol, int a, int b) {
  if (a > b) std::swap(a, b);
  const auto& bonds = mol.bonds();
  auto it = std::lower_bound(bonds.begin(), bonds.end(), Bond{a, b, 0},
                             [](const Bond& x, const Bond& y) { return x.a != y.a ? x.a < y.a : x.b < y.b; });
  return static_cast<int>(it - bonds.begin());
}

// BFS tree from `root`; neighbors are visited in index order, so the chosen
// shortest paths are deterministic.
void bfs_tree(const MolGraph& mol, int root, std::vector<int>& dist, std::vector<int>& parent) {
  const int n = mol.atom_count();
  dist.assign(n, -1);
  parent.assign(n, -1);
  std::vector<int> queue{root};
  dist[root] = 0;
  for (std::size_t head = 0; head < queue.size(); ++head) {
    int u = queue[head];
    for (const auto& nb : mol.neighbors(u)) {
      if (dist[nb.atom] < 0) {
        dist[nb.atom] = dist[u] + 1;
        parent[nb.atom] = u;
        queue.push_back(nb.atom);
      }
    }
  }
}

// Reduces `v` against a basis kept in echelon form keyed by pivot bit.
bool reduce(EdgeSet& v, const std::vector<EdgeSet>& basis, const std::vector<int>& pivots) {
  for (std::size_t i = 0; i < basis.size(); ++i) {
    int p = pivots[i];
    if ((v[p >> 6] >> (p & 63)) & 1ULL) {
      for (std::size_t w = 0; w < v.size(); ++w) v[w] ^= basis[i][w];
    }
  }
  for (std::size_t w = 0; w < v.size(); ++w) {
    if (v[w]) return true;
  }
  return false;
}

int lowest_bit(const EdgeSet& v) {
  for (std::size_t w = 0; w < v.size(); ++w) {
    if (v[w]) return static_cast<int>(w * 64) + __builtin_ctzll(v[w]);
  }
  return -1;
}

}  // namespace

RingInfo ring_membership(const MolGraph& mol) {
  const int n = mol.atom_count();
  const int m = mol.bond_count();
  RingInfo info;
  info.atom_ring_count.assign(n, 0);
  info.atom_ring_sizes.assign(n, {});
  const int rank = m - n + 1;
  if (rank <= 0) return info;

  std::vector<std::vector<int>> dist(n), parent(n);
  for (int r = 0; r < n; ++r) bfs_tree(mol, r, dist[r], parent[r]);

  // Horton candidates: P(r,u) + (u,v) + P(v,r) with vertex-disjoint paths.
  std::vector<Candidate> candidates;
  const auto& bonds = mol.bonds();
  for (int r = 0; r < n; ++r) {
    for (int e = 0; e < m; ++e) {
      int u = bonds[e].a, v = bonds[e].b;
      if (parent[r][u] == v || parent[r][v] == u) continue;
      candidates.push_back({dist[r][u] + dist[r][v] + 1, r, e});
    }
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate& x, const Candidate& y) { return x.length < y.length; });

  const std::size_t words = (m + 63) / 64;
  std::vector<EdgeSet> basis;
  std::vector<int> pivots;
  std::vector<Ring> accepted;

  std::size_t begin = 0;
  while (begin < candidates.size() && static_cast<int>(accepted.size()) < rank) {
    std::size_t end = begin;
    while (end < candidates.size() && candidates[end].length == candidates[begin].length) ++end;

    // Materialize the cycles of this length, drop non-simple ones, order them.
    std::vector<std::pair<std::vector<int>, EdgeSet>> layer;
    for (std::size_t c = begin; c < end; ++c) {
      const auto& cand = candidates[c];
      const auto& par = parent[cand.root];
      std::vector<int> path_atoms;
      std::vector<int> edge_list{cand.bond};
      bool simple = true;
      for (int start : {bonds[cand.bond].a, bonds[cand.bond].b}) {
        for (int x = start; x != cand.root; x = par[x]) {
          path_atoms.push_back(x);
          edge_list.push_back(bond_index(mol, x, par[x]));
        }
      }
      path_atoms.push_back(cand.root);
      std::sort(path_atoms.begin(), path_atoms.end());
      if (std::adjacent_find(path_atoms.begin(), path_atoms.end()) != path_atoms.end()) simple = false;
      if (!simple || static_cast<int>(path_atoms.size()) != cand.length) continue;
      std::sort(edge_list.begin(), edge_list.end());
      EdgeSet set(words, 0);
      for (int e : edge_list) set[e >> 6] |= 1ULL << (e & 63);
      layer.emplace_back(std::move(edge_list), std::move(set));
    }
    std::sort(layer.begin(), layer.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
    layer.erase(std::unique(layer.begin(), layer.end(), [](const auto& x, const auto& y) { return x.first == y.first; }),
                layer.end());

    for (auto& [edge_list, set] : layer) {
      if (static_cast<int>(accepted.size()) >= rank) break;
      EdgeSet reduced = set;
      if (!reduce(reduced, basis, pivots)) continue;
      int pivot = lowest_bit(reduced);
      // Keep the basis fully reduced on pivot columns.
      for (auto& row : basis) {
        if ((row[pivot >> 6] >> (pivot & 63)) & 1ULL) {
          for (std::size_t w = 0; w < words; ++w) row[w] ^= reduced[w];
        }
      }
      basis.push_back(std::move(reduced));
      pivots.push_back(pivot);

      Ring ring;
      ring.bonds = edge_list;
      for (int e : edge_list) {
        ring.atoms.push_back(bonds[e].a);
        ring.atoms.push_back(bonds[e].b);
      }
      std::sort(ring.atoms.begin(), ring.atoms.end());
      ring.atoms.erase(std::unique(ring.atoms.begin(), ring.atoms.end()), ring.atoms.end());
      accepted.push_back(std::move(ring));
    }
    begin = end;
  }

  info.rings = std::move(accepted);
  for (const auto& ring : info.rings) {
    for (int a : ring.atoms) {
      ++info.atom_ring_count[a];
      info.atom_ring_sizes[a].push_back(ring.size());
    }
  }
  for (auto& sizes : info.atom_ring_sizes) std::sort(sizes.begin(), sizes.end());
  return info;
}

std::vector<int> ring_size_histogram(const MolGraph& mol) {
  std::vector<int> histogram(mol.atom_count() + 1, 0);
  if (cyclomatic_number(mol) <= 0) return histogram;
  for (const auto& ring : ring_membership(mol).rings) ++histogram[ring.size()];
  return histogram;
}

std::vector<bool> ring_atom_flags(const MolGraph& mol) {
  const int n = mol.atom_count();
  std::vector<bool> flags(n, false);
  if (cyclomatic_number(mol) <= 0) return flags;

  // Iterative Tarjan bridge finding; a bond is in a cycle iff it is not a bridge.
  std::vector<int> disc(n, -1), low(n, 0), parent_edge(n, -1);
  std::vector<std::pair<int, int>> stack;  // (atom, next neighbor slot)
  int timer = 0;
  for (int root = 0; root < n; ++root) {
    if (disc[root] >= 0) continue;
    disc[root] = low[root] = timer++;
    stack.push_back({root, 0});
    while (!stack.empty()) {
      auto& [u, slot] = stack.back();
      auto nbrs = mol.neighbors(u);
      if (slot < static_cast<int>(nbrs.size())) {
        int v = nbrs[slot++].atom;
        int e = bond_index(mol, u, v);
        if (e == parent_edge[u]) continue;
        if (disc[v] < 0) {
          disc[v] = low[v] = timer++;
          parent_edge[v] = e;
          stack.push_back({v, 0});
        } else {
          low[u] = std::min(low[u], disc[v]);
        }
      } else {
        int child = u;
        stack.pop_back();
        if (!stack.empty()) {
          int p = stack.back().first;
          low[p] = std::min(low[p], low[child]);
          if (low[child] <= disc[p]) {
            // Not a bridge: both endpoints lie on a cycle.
            flags[child] = true;
            flags[p] = true;
          }
        }
      }
    }
  }
  return flags;
}

BlockInfo bond_blocks(const MolGraph& mol) {
  const int n = mol.atom_count();
  const int m = mol.bond_count();
  BlockInfo info;
  info.block.assign(m, -1);
  if (cyclomatic_number(mol) <= 0) return info;

  // Iterative Tarjan with an edge stack; each articulation cut pops one block.
  std::vector<int> disc(n, -1), low(n, 0), parent_edge(n, -1);
  std::vector<std::pair<int, int>> stack;
  std::vector<int> edges;
  std::vector<int> atom_mark(n, -1);
  int timer = 0;
  auto pop_block = [&](int until_edge) {
    std::vector<int> members;
    for (;;) {
      int e = edges.back();
      edges.pop_back();
      members.push_back(e);
      if (e == until_edge) break;
    }
    if (members.size() == 1) return;  // a bridge
    const int id = static_cast<int>(info.block_bonds.size());
    int atoms = 0;
    for (int e : members) {
      info.block[e] = id;
      for (int x : {mol.bonds()[e].a, mol.bonds()[e].b}) {
        if (atom_mark[x] != id) {
          atom_mark[x] = id;
          ++atoms;
        }
      }
    }
    info.block_bonds.push_back(static_cast<int>(members.size()));
    info.block_atoms.push_back(atoms);
  };
  disc[0] = low[0] = timer++;
  stack.push_back({0, 0});
  while (!stack.empty()) {
    auto [u, slot] = stack.back();
    auto nbrs = mol.neighbors(u);
    if (slot < static_cast<int>(nbrs.size())) {
      ++stack.back().second;
      const int v = nbrs[slot].atom;
      const int e = bond_index(mol, u, v);
      if (e == parent_edge[u]) continue;
      if (disc[v] < 0) {
        edges.push_back(e);
        disc[v] = low[v] = timer++;
        parent_edge[v] = e;
        stack.push_back({v, 0});
      } else if (disc[v] < disc[u]) {
        edges.push_back(e);
        low[u] = std::min(low[u], disc[v]);
      }
    } else {
      stack.pop_back();
      if (!stack.empty()) {
        const int p = stack.back().first;
        low[p] = std::min(low[p], low[u]);
        if (low[u] >= disc[p]) pop_block(parent_edge[u]);
      }
    }
  }
  return info;
}

}  // namespace damq
