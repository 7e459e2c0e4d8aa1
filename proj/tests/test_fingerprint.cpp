#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "damq/fingerprint.hpp"
#include "oracles.hpp"

using namespace damq;

TEST(MorganFp, MethaneHasOneBit) {
  Fingerprint fp = morgan_fp(parse_smiles("C"));
  EXPECT_EQ(fp.length(), 2048);
  EXPECT_EQ(fp.count(), 1);
  // The single radius-0 identifier, folded.
  FeatureCache cache = compute_features(parse_smiles("C"));
  ASSERT_EQ(cache.emitted().size(), 1u);
  EXPECT_EQ(fp.on_bits()[0], static_cast<int>(cache.emitted()[0] % 2048));
}

TEST(MorganFp, EmitsOnePerDistinctAtomSet) {
  // Ethanol: radius 0 gives three sets, radius 1 adds {C,C}, {C,O} and the
  // whole molecule, radius 2 adds nothing new.
  FeatureCache cache = compute_features(parse_smiles("CCO"));
  EXPECT_EQ(cache.emitted().size(), 6u);
}

TEST(MorganFp, Deterministic) {
  MolGraph mol = parse_smiles("Oc1ccc(CC(=O)O)cc1");
  EXPECT_EQ(morgan_fp(mol), morgan_fp(mol));
}

TEST(MorganFp, InvariantUnderRelabeling) {
  std::mt19937_64 rng(31);
  for (int i = 0; i < 200; ++i) {
    MolGraph mol = oracle::random_molecule(rng, {.min_atoms = 2, .max_atoms = 30, .extra_bond_prob = 0.3});
    Fingerprint fp = morgan_fp(mol);
    EXPECT_EQ(morgan_fp(oracle::random_relabel(mol, rng)), fp);
    EXPECT_EQ(compute_features(oracle::random_relabel(mol, rng)).emitted(), compute_features(mol).emitted());
  }
}

TEST(MorganFp, DistinguishesSimpleIsomers) {
  EXPECT_NE(morgan_fp(parse_smiles("CCO")), morgan_fp(parse_smiles("COC")));
  EXPECT_NE(morgan_fp(parse_smiles("OC1CC1")), morgan_fp(parse_smiles("OCC=C")));
}

TEST(Tanimoto, Basics) {
  Fingerprint a, b;
  EXPECT_DOUBLE_EQ(tanimoto(a, b), 1.0);
  for (int bit : {1, 2, 3}) a.set(bit);
  for (int bit : {2, 3, 4}) b.set(bit);
  EXPECT_DOUBLE_EQ(tanimoto(a, b), 0.5);
  EXPECT_DOUBLE_EQ(tanimoto(b, a), 0.5);
  EXPECT_DOUBLE_EQ(tanimoto(a, a), 1.0);
  Fingerprint c;
  c.set(100);
  EXPECT_DOUBLE_EQ(tanimoto(a, c), 0.0);
  EXPECT_THROW(tanimoto(a, Fingerprint(1024)), std::invalid_argument);
}

TEST(IncrementalFp, NoOpReturnsPrevious) {
  MolGraph mol = parse_smiles("Oc1ccccc1C");
  FeatureCache cache = compute_features(mol);
  for (const auto& a : enumerate_actions(mol)) {
    if (a.kind == ActionKind::NoOp) EXPECT_EQ(incremental_fp(mol, cache, a), cache.bits);
  }
}

TEST(IncrementalFp, StaleCacheDetected) {
  MolGraph mol = parse_smiles("CCO");
  FeatureCache cache = compute_features(parse_smiles("CCCO"));
  ActionSet set = enumerate_actions(mol);
  EXPECT_THROW(incremental_fp(mol, cache, set[0]), StaleCache);
}

// Every successor along random edit chains, checked against full recomputation
// (fingerprint and emitted feature multiset).
TEST(IncrementalFp, MatchesFullRecomputeOnEditChains) {
  std::mt19937_64 rng(32);
  long long checked = 0;
  for (int chain = 0; chain < 60; ++chain) {
    MolGraph mol = oracle::random_molecule(rng, {.min_atoms = 2, .max_atoms = 40, .extra_bond_prob = 0.25,
                                                 .require_oh = true});
    for (int step = 0; step < 8; ++step) {
      FeatureCache cache = compute_features(mol);
      ActionSet set = enumerate_actions(mol);
      for (const auto& a : set) {
        FeatureCache full = compute_features(a.result);
        ASSERT_EQ(incremental_fp(mol, cache, a), full.bits) << write_smiles(mol).str() << " -> " << a.smiles.str();
        FpDelta d = fingerprint_delta(mol, cache, a);
        auto feats = cache.emitted();
        for (auto id : d.removed) {
          auto it = std::find(feats.begin(), feats.end(), id);
          ASSERT_NE(it, feats.end());
          feats.erase(it);
        }
        feats.insert(feats.end(), d.added.begin(), d.added.end());
        std::sort(feats.begin(), feats.end());
        ASSERT_EQ(feats, full.emitted());
        ++checked;
      }
      mol = set[std::uniform_int_distribution<std::size_t>(0, set.size() - 1)(rng)].result;
    }
  }
  EXPECT_GT(checked, 10000);
}

TEST(IncrementalFp, AtomAddOnChainIsLocal) {
  std::string smiles = "O";
  for (int i = 0; i < 29; ++i) smiles += "C";
  MolGraph chain = parse_smiles(smiles);
  FeatureCache cache = compute_features(chain);
  for (const auto& a : enumerate_actions(chain)) {
    if (a.kind != ActionKind::AtomAdd) continue;
    FpDelta d = fingerprint_delta(chain, cache, a);
    auto dist = bfs_distances(a.result, a.a, 3);
    int within = static_cast<int>(std::count_if(dist.begin(), dist.end(), [](int x) { return x >= 0; }));
    EXPECT_LE(d.touched_atoms, within);
    EXPECT_LT(d.recomputed_environments, a.result.atom_count() * 4);
  }
}

TEST(IncrementalFp, FewerEnvironmentsThanFullOnLargeMolecules) {
  std::mt19937_64 rng(33);
  for (int i = 0; i < 30; ++i) {
    MolGraph mol = oracle::random_molecule(rng, {.min_atoms = 30, .max_atoms = 40, .require_oh = true});
    FeatureCache cache = compute_features(mol);
    for (const auto& a : enumerate_actions(mol)) {
      if (a.kind == ActionKind::NoOp || a.result.atom_count() < 30) continue;
      EXPECT_LT(fingerprint_delta(mol, cache, a).recomputed_environments, a.result.atom_count() * 4);
    }
  }
}
