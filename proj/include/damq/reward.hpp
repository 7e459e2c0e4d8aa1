#pragma once

#include "damq/molgraph.hpp"
#include "damq/predictors.hpp"

namespace damq {

struct Bounds {
  double min = 0.0;
  double max = 1.0;
};

struct RewardConfig {
  double w1 = 0.8;  // BDE weight
  double w2 = 0.2;  // IP weight
  double w3 = 0.5;  // size-reduction weight
  Bounds bde_bounds{60.0, 110.0};
  Bounds ip_bounds{100.0, 200.0};
  // Property terms are scaled by factor^steps_remaining; 1.0 disables.
  double bde_factor = 0.9;
  double ip_factor = 0.8;
  double invalid_penalty = -1000.0;

  // Throws std::invalid_argument unless min < max for both bounds and all
  // weights are non-negative.
  void validate() const;
};

// (value - min) / (max - min), not clamped.
double normalize(double value, const Bounds& bounds);

// ((A0 - At) + (B0 - Bt)) / (A0 + B0) over heavy-atom and bond counts.
// Positive when the molecule shrank.
double gamma_term(const MolGraph& initial, const MolGraph& current);

// cfg.invalid_penalty when !props.valid3d (or, defensively, when BDE is
// undefined); otherwise
//   -w1 * bde_factor^k * nBDE + w2 * ip_factor^k * nIP + w3 * gamma
// with k = steps_remaining.
double reward(const PropertyResult& props, const MolGraph& initial, const MolGraph& current, int steps_remaining,
              const RewardConfig& cfg);
// Same, with gamma already computed.
double reward_from_gamma(const PropertyResult& props, double gamma, int steps_remaining, const RewardConfig& cfg);

// Enthalpies of the species involved, kcal/mol.
inline constexpr double kHydrogenAtomEnthalpy = -312.44;
inline constexpr double kElectronEnthalpy = -55.61;

// H(R.) + H(H.) - H(RH)
double dft_bde(double h_radical, double h_molecule);
// H(RH+.) + H(e-) - H(RH)
double dft_ip(double h_cation, double h_molecule);

}  // namespace damq
