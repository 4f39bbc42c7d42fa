#pragma once

// Transformer nonlinearities composed from fitted MBE approximators and
// spike multiplication.
//
//   e^x      = 2^k * MBE_2^z(frac),  k = floor(x log2 e), frac in [0, 1)
//   1/x      = MBE_1/z(M) * 2^-E,    x = M 2^E, M in [0.5, 1)
//   1/sqrt x = MBE_1/sqrt z(M') * 2^(-E'/2), E' even, M' in [0.5, 2)
//
// Powers of two are applied with ldexp, which only touches the exponent.

#include <cstdint>
#include <optional>

#include <Eigen/Core>

#include "mbe/fit.hpp"
#include "mbe/spike_arith.hpp"
#include "mbe/stats.hpp"

namespace mbe {

inline constexpr Range kGeluDomain{-120.0, 10.0};
inline constexpr Range kTanhDomain{-8.0, 8.0};
inline constexpr Range kExp2Domain{0.0, 1.0};
inline constexpr Range kInvDomain{0.5, 1.0};
inline constexpr Range kInvSqrtDomain{0.5, 2.0};

struct FrexpParts {
    double mantissa = 0.5;
    int exponent = 0;
};

FrexpParts frexp_decompose(double x);

struct OpSetConfig {
    int steps = 16;
    int n_act = 4;
    int n_other = 8;
    std::uint64_t seed = 0;
    int samples = 10000;
    // Fitting interval for gelu/tanh; the default domain when unset.
    std::optional<Range> act_domain;
};

// Fit settings used for each op-set member; exp2/inv/invsqrt use the shifted
// input map so that their interval endpoints fire.
FitConfig opset_fit_config(TargetId id, const OpSetConfig& cfg);
TargetFn opset_target(TargetId id);
TargetFn opset_target(TargetId id, const OpSetConfig& cfg);

struct SpikingOpSet {
    std::optional<FittedApproximator> gelu;
    std::optional<FittedApproximator> tanh;
    std::optional<FittedApproximator> exp2;
    std::optional<FittedApproximator> inv;
    std::optional<FittedApproximator> invsqrt;

    const FittedApproximator& require(TargetId id) const;  // throws NotFitted
    std::optional<FittedApproximator>& slot(TargetId id);
};

// Fits exp2, inv and invsqrt plus the requested activations.
SpikingOpSet fit_opset(const OpSetConfig& cfg, bool gelu = true, bool tanh = false);

// Evaluates one approximator with spike accounting; x is clamped to the
// fitted interval first.
double spiking_eval(const FittedApproximator& op, double x, SiteStats* stats = nullptr);

Eigen::VectorXd spiking_activation(const FittedApproximator& op, const Eigen::VectorXd& x,
                                   SiteStats* stats = nullptr);

double spiking_exp(const SpikingOpSet& ops, double x, SiteStats* stats = nullptr);
double spiking_reciprocal(const SpikingOpSet& ops, double x, SiteStats* stats = nullptr);
double spiking_inv_sqrt(const SpikingOpSet& ops, double x, SiteStats* stats = nullptr);

struct MultiplySite {
    IdentityEncoder lhs;
    IdentityEncoder rhs;
    IntensityMatrix d;
};

MultiplySite make_multiply_site(const Range& lhs, const Range& rhs, int steps, double scale = 1.0);

struct SoftmaxSite {
    double floor = -20.0;    // lower clip for x - max(x)
    MultiplySite normalize;  // exp output times reciprocal of the sum
};

struct SoftmaxStats {
    SiteStats exp2;
    SiteStats inv;
    SiteStats normalize;
};

// Both multiplicands of the final product lie in [0, 1]; the encoders cover
// that range padded by pad on each side.
SoftmaxSite make_softmax_site(double floor, int steps, double pad = 0.05);

Eigen::VectorXd spiking_softmax(const SpikingOpSet& ops, const SoftmaxSite& site,
                                const Eigen::VectorXd& x, SoftmaxStats* stats = nullptr);

struct LayerNormSite {
    MultiplySite variance;   // deviation x deviation, D pre-scaled by 1/n
    MultiplySite normalize;  // deviation x inverse std
    double eps = 1e-5;
    int width = 1;
};

struct LayerNormStats {
    SiteStats variance;
    SiteStats invsqrt;
    SiteStats normalize;
};

LayerNormSite make_layernorm_site(const Range& deviation, const Range& inv_std, int width,
                                  int steps, double eps = 1e-5);

Eigen::VectorXd spiking_layernorm(const SpikingOpSet& ops, const LayerNormSite& site,
                                  const Eigen::VectorXd& x, const Eigen::VectorXd& gamma,
                                  const Eigen::VectorXd& beta, LayerNormStats* stats = nullptr);

// Float references.
Eigen::VectorXd softmax(const Eigen::VectorXd& x);
Eigen::VectorXd layernorm(const Eigen::VectorXd& x, const Eigen::VectorXd& gamma,
                          const Eigen::VectorXd& beta, double eps = 1e-5);

}  // namespace mbe
