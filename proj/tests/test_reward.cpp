#include <gtest/gtest.h>

#include <random>

#include "damq/reward.hpp"

using namespace damq;

namespace {

PropertyResult props(double bde, double ip, bool valid = true) { return {bde, ip, valid, 2.0}; }

RewardConfig example_config() {
  RewardConfig cfg;
  cfg.bde_bounds = {60.0, 110.0};
  cfg.ip_bounds = {100.0, 200.0};
  return cfg;
}

}  // namespace

TEST(Normalize, Examples) {
  EXPECT_DOUBLE_EQ(normalize(60.0, {60.0, 110.0}), 0.0);
  EXPECT_DOUBLE_EQ(normalize(110.0, {60.0, 110.0}), 1.0);
  EXPECT_DOUBLE_EQ(normalize(70.0, {60.0, 110.0}), 0.2);
}

TEST(Normalize, ExtrapolatesOutsideBounds) {
  EXPECT_DOUBLE_EQ(normalize(50.0, {60.0, 110.0}), -0.2);
  EXPECT_DOUBLE_EQ(normalize(160.0, {60.0, 110.0}), 2.0);
}

TEST(GammaTerm, Examples) {
  MolGraph ring10 = parse_smiles("C1CCCCCCCCC1");
  MolGraph bicyclic8 = parse_smiles("C1CC2CCCC2C1");
  ASSERT_EQ(ring10.atom_count(), 10);
  ASSERT_EQ(ring10.bond_count(), 10);
  ASSERT_EQ(bicyclic8.atom_count(), 8);
  ASSERT_EQ(bicyclic8.bond_count(), 9);
  EXPECT_DOUBLE_EQ(gamma_term(ring10, ring10), 0.0);
  EXPECT_DOUBLE_EQ(gamma_term(ring10, bicyclic8), 0.15);
  EXPECT_LT(gamma_term(parse_smiles("CO"), parse_smiles("CCO")), 0.0);
}

TEST(Reward, Examples) {
  const RewardConfig cfg = example_config();
  EXPECT_DOUBLE_EQ(reward_from_gamma(props(70.0, 160.0, false), 0.1, 0, cfg), -1000.0);
  EXPECT_NEAR(reward_from_gamma(props(70.0, 160.0), 0.1, 0, cfg), 0.01, 1e-12);
  EXPECT_NEAR(reward_from_gamma(props(60.0, 200.0), 0.0, 0, cfg), 0.2, 1e-12);
}

TEST(Reward, StepAttenuation) {
  const RewardConfig cfg = example_config();
  // k = 3: -0.8 * 0.9^3 * 0.2 + 0.2 * 0.8^3 * 0.6 + 0.5 * 0.1
  EXPECT_NEAR(reward_from_gamma(props(70.0, 160.0), 0.1, 3, cfg), -0.8 * 0.729 * 0.2 + 0.2 * 0.512 * 0.6 + 0.05,
              1e-12);
  RewardConfig flat = cfg;
  flat.bde_factor = flat.ip_factor = 1.0;
  EXPECT_DOUBLE_EQ(reward_from_gamma(props(70.0, 160.0), 0.1, 7, flat),
                   reward_from_gamma(props(70.0, 160.0), 0.1, 0, flat));
}

TEST(Reward, UsesGraphsForGamma) {
  const RewardConfig cfg = example_config();
  MolGraph a = parse_smiles("C1CCCCCCCCC1"), b = parse_smiles("C1CC2CCCC2C1");
  EXPECT_DOUBLE_EQ(reward(props(70.0, 160.0), a, b, 2, cfg), reward_from_gamma(props(70.0, 160.0), 0.15, 2, cfg));
}

TEST(Reward, MissingBdeGetsPenalty) {
  PropertyResult p = props(70.0, 160.0);
  p.bde.reset();
  EXPECT_DOUBLE_EQ(reward_from_gamma(p, 0.0, 0, example_config()), -1000.0);
}

TEST(Reward, Monotonicity) {
  const RewardConfig cfg = example_config();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> bde(0.0, 200.0), ip(0.0, 300.0), gamma(-2.0, 1.0), step(0.01, 20.0);
  for (int i = 0; i < 10000; ++i) {
    const double b = bde(rng), p = ip(rng), g = gamma(rng), d = step(rng);
    const int k = static_cast<int>(rng() % 11);
    EXPECT_GT(reward_from_gamma(props(b, p), g, k, cfg), reward_from_gamma(props(b + d, p), g, k, cfg));
    EXPECT_LT(reward_from_gamma(props(b, p), g, k, cfg), reward_from_gamma(props(b, p + d), g, k, cfg));
  }
}

TEST(Reward, PenaltyDominatesValidRewards) {
  // Inputs within the bounds widened by ten ranges on each side; gamma from a
  // molecule that at worst doubles in size every step for ten steps is still
  // far above -1000, so use a generous [-20, 1].
  const RewardConfig cfg = example_config();
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> bde(60.0 - 500.0, 110.0 + 500.0), ip(100.0 - 1000.0, 200.0 + 1000.0),
      gamma(-20.0, 1.0);
  double lowest = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double r = reward_from_gamma(props(bde(rng), ip(rng)), gamma(rng), static_cast<int>(rng() % 11), cfg);
    lowest = std::min(lowest, r);
  }
  // Analytic floor: -0.8 * 11 - 0.2 * 10 - 0.5 * 20.
  EXPECT_GE(lowest, -20.8);
  EXPECT_LT(cfg.invalid_penalty, lowest);
}

TEST(RewardConfig, Validation) {
  RewardConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.bde_bounds = {80.0, 80.0};
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.w2 = -0.1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Dft, BdeExamples) {
  EXPECT_NEAR(dft_bde(100.0, -250.0), 37.56, 1e-12);
  EXPECT_DOUBLE_EQ(dft_bde(0.0, 0.0), -312.44);
  const double hm = -123456.789;
  EXPECT_NEAR(dft_bde(hm + 312.44 + 76.0, hm), 76.0, 1e-9);
}

TEST(Dft, IpExamples) {
  EXPECT_NEAR(dft_ip(-700.0, -890.0), 134.39, 1e-12);
  EXPECT_DOUBLE_EQ(dft_ip(0.0, 0.0), -55.61);
  const double hm = -98765.4321;
  EXPECT_NEAR(dft_ip(hm + 55.61 + 145.0, hm), 145.0, 1e-9);
}
