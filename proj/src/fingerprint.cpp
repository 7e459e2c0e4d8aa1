#include "damq/fingerprint.hpp"

#include <algorithm>
#include <bit>
#include <numeric>

#include "damq/hash.hpp"
#include "damq/rings.hpp"

namespace damq {

int Fingerprint::count() const {
  int c = 0;
  for (auto w : words_) c += std::popcount(w);
  return c;
}

std::vector<int> Fingerprint::on_bits() const {
  std::vector<int> out;
  for (std::size_t w = 0; w < words_.size(); ++w) {
    for (std::uint64_t x = words_[w]; x; x &= x - 1) out.push_back(static_cast<int>(w * 64) + std::countr_zero(x));
  }
  return out;
}

double tanimoto(const Fingerprint& a, const Fingerprint& b) {
  if (a.length() != b.length()) throw std::invalid_argument("tanimoto: fingerprint lengths differ");
  int both = 0, either = 0;
  for (std::size_t w = 0; w < a.words().size(); ++w) {
    both += std::popcount(a.words()[w] & b.words()[w]);
    either += std::popcount(a.words()[w] | b.words()[w]);
  }
  return either == 0 ? 1.0 : static_cast<double>(both) / either;
}

namespace {

std::uint64_t mix_tag(int tag) {
  std::uint64_t z = static_cast<std::uint64_t>(tag) + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t initial_id(const MolGraph& mol, int atom, bool ring) {
  const auto packed = static_cast<std::uint64_t>(mol.element(atom)) << 32 |
                      static_cast<std::uint64_t>(mol.degree(atom)) << 24 |
                      static_cast<std::uint64_t>(mol.bond_order_sum(atom)) << 16 |
                      static_cast<std::uint64_t>(free_valence(mol, atom)) << 8 | (ring ? 1 : 0);
  return WordHash{}.add(packed).value();
}

template <class GetId>
std::uint64_t round_id(const MolGraph& mol, int atom, int r, GetId&& prev_id) {
  std::pair<int, std::uint64_t> nbrs[4];
  int k = 0;
  for (const auto& nb : mol.neighbors(atom)) nbrs[k++] = {nb.order, prev_id(nb.atom)};
  std::sort(nbrs, nbrs + k);
  WordHash h;
  h.add(static_cast<std::uint64_t>(r)).add(prev_id(atom));
  for (int i = 0; i < k; ++i) h.add(static_cast<std::uint64_t>(nbrs[i].first)).add(nbrs[i].second);
  return h.value();
}

// Tags of the atoms within `radius` of `source`, paired with their distance,
// in nondecreasing distance order.
template <class TagOf>
void ball(const MolGraph& mol, int source, int radius, TagOf&& tag_of, std::vector<std::pair<int, int>>& out,
          std::vector<int>& dist_scratch, std::vector<int>& visited) {
  out.clear();
  visited.assign(1, source);
  dist_scratch[source] = 0;
  for (std::size_t h = 0; h < visited.size(); ++h) {
    int u = visited[h];
    if (dist_scratch[u] == radius) continue;
    for (const auto& nb : mol.neighbors(u)) {
      if (dist_scratch[nb.atom] < 0) {
        dist_scratch[nb.atom] = dist_scratch[u] + 1;
        visited.push_back(nb.atom);
      }
    }
  }
  for (int v : visited) {
    out.push_back({dist_scratch[v], tag_of(v)});
    dist_scratch[v] = -1;
  }
}

// Appends the sorted tag set of each radius in [first_r, radius] to `pool`;
// returns the per-radius keys through `keys` and offsets through `offsets`.
void append_sets(const std::vector<std::pair<int, int>>& by_dist, int first_r, int radius, std::vector<int>& pool,
                 std::vector<int>& offsets, std::vector<std::uint64_t>& keys, std::vector<int>& sorted) {
  std::size_t upto = 0;
  std::uint64_t key = 0;
  sorted.clear();
  for (int r = 0; r <= radius; ++r) {
    while (upto < by_dist.size() && by_dist[upto].first <= r) {
      sorted.insert(std::upper_bound(sorted.begin(), sorted.end(), by_dist[upto].second), by_dist[upto].second);
      key += mix_tag(by_dist[upto].second);
      ++upto;
    }
    if (r < first_r) continue;
    offsets.push_back(static_cast<int>(pool.size()));
    pool.insert(pool.end(), sorted.begin(), sorted.end());
    keys.push_back(key);
  }
}

struct Candidate {
  int radius;
  std::uint64_t id;
  const int* begin;
  const int* end;
};

// One emitted identifier per distinct atom set: smallest radius, then id.
void pick_winners(const std::vector<Candidate>& cands, std::vector<std::uint64_t>& out) {
  int best_buf[64];
  std::vector<int> best_heap;
  int* best = best_buf;
  if (cands.size() > 64) {
    best_heap.resize(cands.size());
    best = best_heap.data();
  }
  int nbest = 0;
  for (int i = 0; i < static_cast<int>(cands.size()); ++i) {
    const auto& c = cands[i];
    bool merged = false;
    for (int k = 0; k < nbest; ++k) {
      int& j = best[k];
      const auto& b = cands[j];
      if (std::equal(c.begin, c.end, b.begin, b.end)) {
        if (std::tie(c.radius, c.id) < std::tie(b.radius, b.id)) j = i;
        merged = true;
        break;
      }
    }
    if (!merged) best[nbest++] = i;
  }
  for (int k = 0; k < nbest; ++k) out.push_back(cands[best[k]].id);
}

struct NewEntry {
  std::uint64_t key;
  int atom;
  int radius;
  int offset;   // into the delta pool, or a cache entry when `cached`
  bool cached;
};

// Buffers reused across fingerprint_delta calls on the same thread.
struct Item {
  std::uint64_t key;
  int index;  // fresh entry, or replaced cache entry
  bool fresh;
};

struct DeltaScratch {
  std::vector<int> inv, seeds, dist, queue, old_dist, dirty, pool, offsets, ball_dist, visited, sorted;
  std::vector<bool> ring;
  std::vector<std::uint64_t> new_ids, keys, old_win, new_win;
  std::vector<std::pair<int, int>> by_dist;
  std::vector<NewEntry> fresh;
  std::vector<Item> items;
  std::vector<std::uint64_t> slot_key;
  std::vector<int> slot_head, chain, slots_used;
  std::vector<Candidate> before, after;
};

DeltaScratch& delta_scratch() {
  thread_local DeltaScratch scratch;
  return scratch;
}

Candidate cache_candidate(const FeatureCache& cache, int e) {
  return {e % (cache.cfg.radius + 1), cache.ids[e], cache.set_pool.data() + cache.set_offsets[e],
          cache.set_pool.data() + cache.set_offsets[e + 1]};
}

}  // namespace

std::vector<std::uint64_t> FeatureCache::emitted() const {
  std::vector<std::uint64_t> out;
  std::vector<Candidate> cands;
  for (std::size_t i = 0; i < groups.size();) {
    cands.clear();
    const std::uint64_t key = groups[i].first;
    for (; i < groups.size() && groups[i].first == key; ++i) cands.push_back(cache_candidate(*this, groups[i].second));
    pick_winners(cands, out);
  }
  std::sort(out.begin(), out.end());
  return out;
}

FeatureCache compute_features(const MolGraph& mol, const FpConfig& cfg) {
  const int n = mol.atom_count();
  const int R = cfg.radius;
  const int width = R + 1;
  FeatureCache cache;
  cache.cfg = cfg;
  cache.mol_hash = structure_hash(mol);
  cache.atoms = n;
  cache.tags.resize(n);
  std::iota(cache.tags.begin(), cache.tags.end(), 0);
  cache.next_tag = n;
  cache.ring = ring_atom_flags(mol);

  cache.ids.assign(static_cast<std::size_t>(n) * width, 0);
  for (int i = 0; i < n; ++i) cache.ids[cache.entry(i, 0)] = initial_id(mol, i, cache.ring[i]);
  for (int r = 1; r <= R; ++r) {
    for (int i = 0; i < n; ++i) {
      cache.ids[cache.entry(i, r)] =
          round_id(mol, i, r, [&](int atom) { return cache.ids[cache.entry(atom, r - 1)]; });
    }
  }

  std::vector<std::pair<int, int>> by_dist;
  std::vector<int> scratch(n, -1), visited, sorted;
  for (int i = 0; i < n; ++i) {
    ball(mol, i, R, [&](int atom) { return cache.tags[atom]; }, by_dist, scratch, visited);
    append_sets(by_dist, 0, R, cache.set_pool, cache.set_offsets, cache.set_keys, sorted);
  }
  cache.set_offsets.push_back(static_cast<int>(cache.set_pool.size()));

  cache.groups.reserve(static_cast<std::size_t>(n) * width);
  for (int e = 0; e < n * width; ++e) cache.groups.push_back({cache.set_keys[e], e});
  std::sort(cache.groups.begin(), cache.groups.end());
  cache.group_sizes.assign(cache.groups.size(), 0);
  for (std::size_t i = 0; i < cache.groups.size();) {
    std::size_t j = i;
    while (j < cache.groups.size() && cache.groups[j].first == cache.groups[i].first) ++j;
    for (std::size_t k = i; k < j; ++k) cache.group_sizes[cache.groups[k].second] = static_cast<int>(j - i);
    i = j;
  }
  cache.counts.assign(cfg.length, 0);
  cache.bits = Fingerprint(cfg.length);
  for (std::uint64_t id : cache.emitted()) {
    const int bit = static_cast<int>(id % static_cast<std::uint64_t>(cfg.length));
    ++cache.counts[bit];
    cache.bits.set(bit);
  }
  return cache;
}

Fingerprint morgan_fp(const MolGraph& mol, const FpConfig& cfg) { return compute_features(mol, cfg).bits; }

FpDelta fingerprint_delta(const MolGraph& prev, const FeatureCache& cache, const Action& action) {
  if (prev.atom_count() != cache.atoms || structure_hash(prev) != cache.mol_hash) {
    throw StaleCache("feature cache does not belong to the source molecule");
  }
  FpDelta delta;
  if (action.kind == ActionKind::NoOp) return delta;

  const MolGraph& mol = action.result;
  const int n = mol.atom_count();
  const int n_old = prev.atom_count();
  const int R = cache.cfg.radius;
  const int width = R + 1;
  constexpr int kFar = 1 << 20;
  DeltaScratch& s = delta_scratch();

  auto& inv = s.inv;
  inv.assign(n_old, -1);
  for (int x = 0; x < n; ++x) {
    if (action.origin[x] >= 0) inv[action.origin[x]] = x;
  }
  auto tag_of = [&](int x) { return action.origin[x] >= 0 ? cache.tags[action.origin[x]] : cache.next_tag; };

  auto& seeds = s.seeds;
  seeds.clear();
  if (action.kind == ActionKind::AtomAdd) {
    seeds.push_back(inv[action.a]);
    for (int x = 0; x < n; ++x) {
      if (action.origin[x] < 0) seeds.push_back(x);
    }
  } else {
    for (int v : {action.a, action.b}) {
      if (inv[v] >= 0) seeds.push_back(inv[v]);
    }
  }
  delta.edited_atoms = seeds;

  const bool topology_changed = (action.kind == ActionKind::BondChange && prev.bond_order(action.a, action.b) == 0) ||
                                (action.kind == ActionKind::BondRemove && action.order == 0);
  auto& ring = s.ring;
  if (topology_changed) {
    ring = ring_atom_flags(mol);
    for (int x = 0; x < n; ++x) {
      if (ring[x] != cache.ring[action.origin[x]]) seeds.push_back(x);
    }
  }
  // Without a topology change ring flags carry over; an added atom is a leaf.
  auto ring_of = [&](int x) {
    if (topology_changed) return static_cast<bool>(ring[x]);
    return action.origin[x] >= 0 && cache.ring[action.origin[x]];
  };

  // Distance of each result atom to the nearest change, capped at R + 1.
  auto& dist = s.dist;
  dist.assign(n, kFar);
  auto& queue = s.queue;
  queue.clear();
  for (int x : seeds) {
    if (dist[x] != 0) {
      dist[x] = 0;
      queue.push_back(x);
    }
  }
  for (std::size_t h = 0; h < queue.size(); ++h) {
    int u = queue[h];
    if (dist[u] == R) continue;
    for (const auto& nb : mol.neighbors(u)) {
      if (dist[nb.atom] == kFar) {
        dist[nb.atom] = dist[u] + 1;
        queue.push_back(nb.atom);
      }
    }
  }
  if (action.kind == ActionKind::BondRemove && action.order == 0) {
    // Environments that used the removed bond are near its ends in the old graph.
    auto& old_dist = s.old_dist;
    old_dist.assign(n_old, kFar);
    queue.assign({action.a, action.b});
    old_dist[action.a] = old_dist[action.b] = 0;
    for (std::size_t h = 0; h < queue.size(); ++h) {
      int u = queue[h];
      if (old_dist[u] == R) continue;
      for (const auto& nb : prev.neighbors(u)) {
        if (old_dist[nb.atom] == kFar) {
          old_dist[nb.atom] = old_dist[u] + 1;
          queue.push_back(nb.atom);
        }
      }
    }
    for (int y : queue) {
      if (inv[y] >= 0) dist[inv[y]] = std::min(dist[inv[y]], old_dist[y]);
    }
  }

  // Recompute the dirty environments (x, r) with dist[x] <= r.
  auto& dirty = s.dirty;
  dirty.clear();
  for (int x = 0; x < n; ++x) {
    if (dist[x] <= R) dirty.push_back(x);
  }
  delta.touched_atoms = static_cast<int>(dirty.size());
  auto& new_ids = s.new_ids;
  new_ids.resize(static_cast<std::size_t>(n) * width);
  auto id_at = [&](int x, int r) {
    return dist[x] <= r ? new_ids[x * width + r] : cache.ids[cache.entry(action.origin[x], r)];
  };
  for (int x : dirty) {
    if (dist[x] == 0) new_ids[x * width] = initial_id(mol, x, ring_of(x));
  }
  for (int r = 1; r <= R; ++r) {
    for (int x : dirty) {
      if (dist[x] <= r) new_ids[x * width + r] = round_id(mol, x, r, [&](int atom) { return id_at(atom, r - 1); });
    }
  }

  auto& fresh = s.fresh;
  auto& pool = s.pool;
  auto& offsets = s.offsets;
  auto& keys = s.keys;
  fresh.clear();
  pool.clear();
  offsets.clear();
  keys.clear();
  if (topology_changed || action.kind == ActionKind::AtomAdd) s.ball_dist.assign(n, -1);
  const std::uint64_t new_tag_key = mix_tag(cache.next_tag);
  for (int x : dirty) {
    const int y = action.origin[x];
    if (y >= 0 && !topology_changed) {
      // Atom sets depend only on topology. An added leaf joins the sets of
      // radius beyond its host distance; its tag is the largest, so it goes last.
      for (int r = dist[x]; r <= R; ++r) {
        const int e = cache.entry(y, r);
        if (action.kind == ActionKind::AtomAdd && dist[x] + 1 <= r) {
          const std::size_t k = keys.size();
          offsets.push_back(static_cast<int>(pool.size()));
          pool.insert(pool.end(), cache.set_pool.begin() + cache.set_offsets[e],
                      cache.set_pool.begin() + cache.set_offsets[e + 1]);
          pool.push_back(cache.next_tag);
          keys.push_back(cache.set_keys[e] + new_tag_key);
          fresh.push_back({keys[k], x, r, static_cast<int>(k), false});
        } else {
          fresh.push_back({cache.set_keys[e], x, r, e, true});
        }
      }
      continue;
    }
    ball(mol, x, R, tag_of, s.by_dist, s.ball_dist, s.visited);
    const std::size_t first = keys.size();
    append_sets(s.by_dist, dist[x], R, pool, offsets, keys, s.sorted);
    for (int r = dist[x]; r <= R; ++r) {
      const std::size_t k = first + (r - dist[x]);
      fresh.push_back({keys[k], x, r, static_cast<int>(k), false});
    }
  }
  offsets.push_back(static_cast<int>(pool.size()));
  delta.recomputed_environments = static_cast<int>(fresh.size());

  auto removed_entry = [&](int e) {
    const int y = e / width;
    const int r = e % width;
    return inv[y] < 0 || dist[inv[y]] <= r;
  };

  // Old entries being replaced and fresh entries, grouped by set key. Most
  // keys belong to a single environment on each side and resolve directly;
  // the rest compare atom sets through pick_winners.
  auto& items = s.items;
  items.clear();
  for (int i = 0; i < static_cast<int>(fresh.size()); ++i) items.push_back({fresh[i].key, i, true});
  for (int y = 0; y < n_old; ++y) {
    const int x = inv[y];
    if (x >= 0 && dist[x] > R) continue;
    for (int r = x < 0 ? 0 : dist[x]; r <= R; ++r) {
      const int e = cache.entry(y, r);
      items.push_back({cache.set_keys[e], e, false});
    }
  }
  // Chain items by key through a small open-addressing table. Set keys are
  // sums of mixed tags, so their low bits index it directly.
  std::size_t cap = 64;
  while (cap < 2 * items.size()) cap <<= 1;
  s.slot_key.resize(cap);
  s.slot_head.assign(cap, -1);
  s.chain.resize(items.size());
  s.slots_used.clear();
  for (int i = 0; i < static_cast<int>(items.size()); ++i) {
    std::size_t h = items[i].key & (cap - 1);
    while (s.slot_head[h] >= 0 && s.slot_key[h] != items[i].key) h = (h + 1) & (cap - 1);
    if (s.slot_head[h] < 0) {
      s.slot_key[h] = items[i].key;
      s.slots_used.push_back(static_cast<int>(h));
    }
    s.chain[i] = s.slot_head[h];
    s.slot_head[h] = i;
  }

  auto fresh_candidate = [&](const NewEntry& f) -> Candidate {
    const std::uint64_t id = new_ids[f.atom * width + f.radius];
    if (f.cached) {
      Candidate c = cache_candidate(cache, f.offset);
      c.id = id;
      return c;
    }
    return {f.radius, id, pool.data() + offsets[f.offset], pool.data() + offsets[f.offset + 1]};
  };

  auto& before = s.before;
  auto& after = s.after;
  auto& old_win = s.old_win;
  auto& new_win = s.new_win;
  delta.removed.reserve(items.size());
  delta.added.reserve(items.size());
  for (int slot : s.slots_used) {
    const std::uint64_t key = s.slot_key[slot];
    int old_count = 0, fresh_count = 0, old_e = -1, fresh_i = -1;
    for (int i = s.slot_head[slot]; i >= 0; i = s.chain[i]) {
      if (items[i].fresh) {
        ++fresh_count;
        fresh_i = items[i].index;
      } else {
        ++old_count;
        old_e = items[i].index;
      }
    }
    int group = old_count > 0 ? cache.group_sizes[old_e] : -1;
    if (group < 0) {
      auto it = std::lower_bound(cache.groups.begin(), cache.groups.end(), std::pair<std::uint64_t, int>{key, -1});
      group = it != cache.groups.end() && it->first == key ? 1 : 0;
    }
    if (group == old_count && old_count <= 1 && fresh_count <= 1) {
      const bool had = old_count == 1, has = fresh_count == 1;
      const std::uint64_t old_id = had ? cache.ids[old_e] : 0;
      const std::uint64_t new_id = has ? new_ids[fresh[fresh_i].atom * width + fresh[fresh_i].radius] : 0;
      if (had && (!has || old_id != new_id)) delta.removed.push_back(old_id);
      if (has && (!had || old_id != new_id)) delta.added.push_back(new_id);
      continue;
    }

    before.clear();
    after.clear();
    old_win.clear();
    new_win.clear();
    auto it = std::lower_bound(cache.groups.begin(), cache.groups.end(), std::pair<std::uint64_t, int>{key, -1});
    for (; it != cache.groups.end() && it->first == key; ++it) {
      before.push_back(cache_candidate(cache, it->second));
      if (!removed_entry(it->second)) after.push_back(before.back());
    }
    for (int i = s.slot_head[slot]; i >= 0; i = s.chain[i]) {
      if (items[i].fresh) after.push_back(fresh_candidate(fresh[items[i].index]));
    }
    pick_winners(before, old_win);
    pick_winners(after, new_win);
    std::sort(old_win.begin(), old_win.end());
    std::sort(new_win.begin(), new_win.end());
    std::set_difference(old_win.begin(), old_win.end(), new_win.begin(), new_win.end(), std::back_inserter(delta.removed));
    std::set_difference(new_win.begin(), new_win.end(), old_win.begin(), old_win.end(), std::back_inserter(delta.added));
  }
  return delta;
}

Fingerprint incremental_fp(const MolGraph& prev, const FeatureCache& cache, const Action& action) {
  FpDelta delta = fingerprint_delta(prev, cache, action);
  Fingerprint out = cache.bits;
  if (delta.removed.empty() && delta.added.empty()) return out;
  const auto length = static_cast<std::uint64_t>(cache.cfg.length);
  thread_local std::vector<int> change;
  thread_local std::vector<int> touched;
  change.resize(cache.cfg.length, 0);
  touched.clear();
  for (auto id : delta.removed) {
    const int bit = static_cast<int>(id % length);
    touched.push_back(bit);
    --change[bit];
  }
  for (auto id : delta.added) {
    const int bit = static_cast<int>(id % length);
    touched.push_back(bit);
    ++change[bit];
  }
  for (int bit : touched) {
    if (cache.counts[bit] + change[bit] > 0) {
      out.set(bit);
    } else {
      out.reset(bit);
    }
  }
  for (int bit : touched) change[bit] = 0;
  return out;
}

}  // namespace damq
