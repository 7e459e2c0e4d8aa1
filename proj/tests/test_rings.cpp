#include <gtest/gtest.h>

#include <random>

#include "damq/rings.hpp"
#include "damq/smiles.hpp"
#include "oracles.hpp"

using namespace damq;

TEST(Rings, Cyclopropane) {
  RingInfo info = ring_membership(parse_smiles("C1CC1"));
  ASSERT_EQ(info.ring_count(), 1);
  EXPECT_EQ(info.rings[0].size(), 3);
  EXPECT_EQ(info.atom_ring_count, (std::vector<int>{1, 1, 1}));
}

TEST(Rings, Acyclic) {
  RingInfo info = ring_membership(parse_smiles("CCO"));
  EXPECT_EQ(info.ring_count(), 0);
  EXPECT_EQ(info.atom_ring_count, (std::vector<int>{0, 0, 0}));
  EXPECT_EQ(ring_atom_flags(parse_smiles("CCO")), (std::vector<bool>{false, false, false}));
}

TEST(Rings, FusedBicycleSharedAtoms) {
  // Bicyclo[2.2.0]hexane: atoms 0 and 5 (written C1 and C12) are shared.
  MolGraph mol = parse_smiles("C1CC2CCC12");
  RingInfo info = ring_membership(mol);
  ASSERT_EQ(info.ring_count(), 2);
  EXPECT_EQ(info.rings[0].size(), 4);
  EXPECT_EQ(info.rings[1].size(), 4);
  int shared = 0;
  for (int a = 0; a < mol.atom_count(); ++a) {
    if (info.atom_ring_count[a] == 2) ++shared;
  }
  EXPECT_EQ(shared, 2);
  EXPECT_EQ(info.atom_ring_count[2], 2);
  EXPECT_EQ(info.atom_ring_count[5], 2);
  auto oracle_hist = oracle::exhaustive_ring_size_histogram(mol);
  EXPECT_EQ(ring_size_histogram(mol), oracle_hist);
}

TEST(Rings, Naphthalene) {
  RingInfo info = ring_membership(parse_smiles("c1ccc2ccccc2c1"));
  ASSERT_EQ(info.ring_count(), 2);
  EXPECT_EQ(info.rings[0].size(), 6);
  EXPECT_EQ(info.rings[1].size(), 6);
}

TEST(Rings, Cubane) {
  MolGraph cubane = parse_smiles("C12C3C4C1C5C2C3C45");
  RingInfo info = ring_membership(cubane);
  EXPECT_EQ(info.ring_count(), 5);
  for (const auto& ring : info.rings) EXPECT_EQ(ring.size(), 4);
  EXPECT_EQ(ring_size_histogram(cubane), oracle::exhaustive_ring_size_histogram(cubane));
}

TEST(Rings, RingFlagsMatchMembership) {
  MolGraph mol = parse_smiles("OC1CC1CC2CCCC2C");
  RingInfo info = ring_membership(mol);
  auto flags = ring_atom_flags(mol);
  for (int a = 0; a < mol.atom_count(); ++a) EXPECT_EQ(flags[a], info.in_ring(a)) << a;
}

// Every small random graph: ring count equals the cyclomatic number, the size
// multiset equals the exhaustive minimum cycle basis, every ring is a simple
// cycle of the graph and ring flags agree with membership.
TEST(Rings, MatchesExhaustiveOracle) {
  std::mt19937_64 rng(3);
  int with_rings = 0;
  for (int i = 0; i < 3000; ++i) {
    MolGraph mol =
        oracle::random_molecule(rng, {.min_atoms = 3, .max_atoms = 8, .extra_bond_prob = 0.6, .multiple_bond_prob = 0.1});
    RingInfo info = ring_membership(mol);
    ASSERT_EQ(info.ring_count(), std::max(0, cyclomatic_number(mol)));
    ASSERT_EQ(ring_size_histogram(mol), oracle::exhaustive_ring_size_histogram(mol)) << write_smiles(mol).str();
    auto cycles = oracle::all_simple_cycles(mol);
    for (const auto& ring : info.rings) {
      ASSERT_TRUE(std::find(cycles.begin(), cycles.end(), ring.bonds) != cycles.end());
    }
    auto flags = ring_atom_flags(mol);
    for (int a = 0; a < mol.atom_count(); ++a) ASSERT_EQ(flags[a], info.in_ring(a));
    with_rings += info.ring_count() > 0;
  }
  EXPECT_GT(with_rings, 1000);
}

TEST(Rings, DeterministicUnderRepeatedCalls) {
  MolGraph mol = parse_smiles("C1CC2CC1CC2");
  auto a = ring_membership(mol);
  auto b = ring_membership(mol);
  EXPECT_EQ(a.atom_ring_count, b.atom_ring_count);
  ASSERT_EQ(a.ring_count(), b.ring_count());
  for (int r = 0; r < a.ring_count(); ++r) EXPECT_EQ(a.rings[r].bonds, b.rings[r].bonds);
}
