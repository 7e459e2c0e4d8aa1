#include "damq/reward.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace damq {

void RewardConfig::validate() const {
  if (!(bde_bounds.min < bde_bounds.max)) {
    throw std::invalid_argument("BDE bounds need min < max, got [" + std::to_string(bde_bounds.min) + ", " +
                                std::to_string(bde_bounds.max) + "]");
  }
  if (!(ip_bounds.min < ip_bounds.max)) {
    throw std::invalid_argument("IP bounds need min < max, got [" + std::to_string(ip_bounds.min) + ", " +
                                std::to_string(ip_bounds.max) + "]");
  }
  if (w1 < 0 || w2 < 0 || w3 < 0) throw std::invalid_argument("reward weights must be non-negative");
}

double normalize(double value, const Bounds& bounds) { return (value - bounds.min) / (bounds.max - bounds.min); }

double gamma_term(const MolGraph& initial, const MolGraph& current) {
  const double a0 = initial.atom_count(), b0 = initial.bond_count();
  return ((a0 - current.atom_count()) + (b0 - current.bond_count())) / (a0 + b0);
}

double reward_from_gamma(const PropertyResult& props, double gamma, int steps_remaining, const RewardConfig& cfg) {
  if (!props.valid3d || !props.bde) return cfg.invalid_penalty;
  const double nbde = normalize(*props.bde, cfg.bde_bounds);
  const double nip = normalize(props.ip, cfg.ip_bounds);
  return -cfg.w1 * std::pow(cfg.bde_factor, steps_remaining) * nbde +
         cfg.w2 * std::pow(cfg.ip_factor, steps_remaining) * nip + cfg.w3 * gamma;
}

double reward(const PropertyResult& props, const MolGraph& initial, const MolGraph& current, int steps_remaining,
              const RewardConfig& cfg) {
  return reward_from_gamma(props, gamma_term(initial, current), steps_remaining, cfg);
}

double dft_bde(double h_radical, double h_molecule) { return h_radical + kHydrogenAtomEnthalpy - h_molecule; }

double dft_ip(double h_cation, double h_molecule) { return h_cation + kElectronEnthalpy - h_molecule; }

}  // namespace damq
