#pragma once

// Energy estimates and approximation-bound terms.
//
//   E_MBE = T * eta * N * C * N_h * E_AC
//   E_FP  = T^2 * eta1 * eta2 * MO * E_AC
//   ratio = (SOPs * E_AC) / (FLOPs * E_MAC)
//
// Bound terms drop their constants (set to 1) and use natural logs.

#include <cstdint>
#include <map>
#include <string>

#include "mbe/converter.hpp"
#include "mbe/stats.hpp"

namespace mbe {

struct EnergyConstants {
    double e_mac = 4.6;  // pJ
    double e_ac = 0.9;   // pJ

    void validate() const;
};

double energy_mbe(int steps, double eta, int bases, int channels, int heads,
                  const EnergyConstants& c = {});
double energy_fp_mult(int steps, double eta1, double eta2, double ops, const EnergyConstants& c = {});
double energy_ratio(double sops, double flops, const EnergyConstants& c = {});

// One activation: spiking energy against a float cost given both as FLOPs
// and as MACs, each priced at E_MAC. GELU is 70 FLOPs or 35 MACs.
struct ActivationEnergy {
    double spiking = 0.0;  // pJ
    double flop_cost = 0.0;
    double mac_cost = 0.0;
    double ratio_flops = 0.0;
    double ratio_macs = 0.0;
};

inline constexpr double kGeluFlops = 70.0;
inline constexpr double kGeluMacs = 35.0;

ActivationEnergy activation_energy(int steps, double eta, int bases, double flops, double macs,
                                   const EnergyConstants& c = {});

struct BoundInputs {
    int steps = 16;     // T
    int bases = 4;      // N
    int samples = 10000;  // M
    double lipschitz = 1.0;
    double y_max = 1.0;
    double l1 = 1.0;  // ||d||_1 for FS, ||w||_1 for MBE
    double alpha_abs = 1.0;
    double tau_max = 1.0;
    double dt = 1.0;

    void validate() const;
};

struct BoundTerms {
    double empirical = 0.0;
    double parametric = 0.0;
    double quantization = 0.0;
};

// sqrt(T log T log M / M), L_f y_max / T, ||d||_1 / T
BoundTerms bound_fs(const BoundInputs& in);
// sqrt(N log N log M / M), L_f y_max / (N T), ||w||_1 |alpha| tau_max / (T dt)
BoundTerms bound_mbe(const BoundInputs& in);

// spikes / slots, where slots = T * N * elements for an MBE site.
double firing_rate(const SiteStats& s);

// Float FLOPs of the converted sites of one forward over `tokens` rows:
// 1 per add or multiply, kGeluFlops per transcendental (exp, rsqrt,
// reciprocal, activation).
std::map<std::string, double> site_flops(const RefTransformerConfig& config, int tokens);

struct EnergyReport {
    std::int64_t spikes = 0;
    std::int64_t sops = 0;
    double flops = 0.0;
    double snn_pj = 0.0;
    double ann_pj = 0.0;
    double ratio = 0.0;
};

// Stats from forward_spiking over `tokens` rows.
EnergyReport block_energy(const RefTransformerConfig& config, int tokens, const SiteStatsMap& stats,
                          const EnergyConstants& c = {});

}  // namespace mbe
