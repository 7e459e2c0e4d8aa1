#pragma once

#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "damq/actions.hpp"
#include "damq/molgraph.hpp"

namespace damq {

struct FpConfig {
  int radius = 3;
  int length = 2048;
};

class Fingerprint {
 public:
  explicit Fingerprint(int length = 2048) : length_(length), words_((length + 63) / 64, 0) {}

  int length() const { return length_; }
  bool test(int bit) const { return (words_[bit >> 6] >> (bit & 63)) & 1ULL; }
  void set(int bit) { words_[bit >> 6] |= 1ULL << (bit & 63); }
  void reset(int bit) { words_[bit >> 6] &= ~(1ULL << (bit & 63)); }
  int count() const;
  std::vector<int> on_bits() const;
  const std::vector<std::uint64_t>& words() const { return words_; }

  friend bool operator==(const Fingerprint&, const Fingerprint&) = default;

 private:
  int length_;
  std::vector<std::uint64_t> words_;
};

// |a & b| / |a | b|; 1.0 when both are empty. Throws std::invalid_argument on
// a length mismatch.
double tanimoto(const Fingerprint& a, const Fingerprint& b);

class StaleCache : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Everything incremental_fp needs about one molecule: the identifier and atom
// set of every (atom, radius) environment, the dedup groups and per-bit
// counts of emitted features.
//
// Environment (i, r) covers the atoms within distance r of i. Its identifier
// starts from hash(element, degree, bond-order sum, H count, ring flag) and
// each round hashes the previous identifier with the sorted (bond order,
// neighbor identifier) pairs. Environments covering the same atom set are
// emitted once: the smallest radius wins, then the smallest identifier.
struct FeatureCache {
  FpConfig cfg;
  std::uint64_t mol_hash = 0;
  int atoms = 0;
  std::vector<std::uint64_t> ids;       // [atom * (radius + 1) + r]
  std::vector<std::uint64_t> set_keys;  // order-free hash of the covered atom tags
  std::vector<int> set_offsets;         // covered tags of entry e: pool[offsets[e] .. offsets[e + 1])
  std::vector<int> set_pool;            // sorted per entry
  std::vector<int> tags;                // per atom; stable atom identity for set comparison
  int next_tag = 0;
  std::vector<bool> ring;
  std::vector<std::pair<std::uint64_t, int>> groups;  // (set key, entry), sorted
  std::vector<int> group_sizes;                       // per entry: entries sharing its set key
  std::vector<std::uint16_t> counts;                   // emitted features per bit
  Fingerprint bits;

  int entry(int atom, int r) const { return atom * (cfg.radius + 1) + r; }
  // Identifiers that are actually emitted, one per distinct atom set.
  std::vector<std::uint64_t> emitted() const;
};

FeatureCache compute_features(const MolGraph& mol, const FpConfig& cfg = {});

Fingerprint morgan_fp(const MolGraph& mol, const FpConfig& cfg = {});

// Change in the emitted feature multiset caused by one action.
struct FpDelta {
  std::vector<int> edited_atoms;         // result indices of the edit's seed atoms
  std::vector<std::uint64_t> removed;    // identifiers no longer emitted
  std::vector<std::uint64_t> added;      // identifiers newly emitted
  int touched_atoms = 0;                 // result atoms whose environments were recomputed
  int recomputed_environments = 0;       // (atom, radius) pairs recomputed
};

// Computes the delta for `action` (a successor of `prev`) from the cached
// features of `prev`. Only environments within `radius` of the edited atoms
// (and of atoms whose ring flag changed) are recomputed. Throws StaleCache
// when `cache` was not built for `prev`.
FpDelta fingerprint_delta(const MolGraph& prev, const FeatureCache& cache, const Action& action);

// Fingerprint of action.result, bit-identical to morgan_fp(action.result).
Fingerprint incremental_fp(const MolGraph& prev, const FeatureCache& cache, const Action& action);

}  // namespace damq
