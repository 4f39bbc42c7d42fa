#include "mbe/metrics.hpp"

#include <cmath>

#include "mbe/error.hpp"

namespace mbe {

namespace {

void check_rate(double eta, const char* what) {
    if (!(eta >= 0.0 && eta <= 1.0)) {
        throw InvalidArgument(std::string(what) + ": firing rate must lie in [0, 1]");
    }
}

void check_count(double n, const char* what) {
    if (!(n >= 0.0) || !std::isfinite(n)) {
        throw InvalidArgument(std::string(what) + ": counts must be finite and non-negative");
    }
}

}  // namespace

void EnergyConstants::validate() const {
    if (!(e_mac > 0.0) || !(e_ac > 0.0)) throw InvalidArgument("energy constants must be positive");
}

double energy_mbe(int steps, double eta, int bases, int channels, int heads,
                  const EnergyConstants& c) {
    c.validate();
    check_rate(eta, "energy_mbe");
    check_count(steps, "energy_mbe");
    check_count(bases, "energy_mbe");
    check_count(channels, "energy_mbe");
    check_count(heads, "energy_mbe");
    return double(steps) * eta * double(bases) * double(channels) * double(heads) * c.e_ac;
}

double energy_fp_mult(int steps, double eta1, double eta2, double ops, const EnergyConstants& c) {
    c.validate();
    check_rate(eta1, "energy_fp_mult");
    check_rate(eta2, "energy_fp_mult");
    check_count(steps, "energy_fp_mult");
    check_count(ops, "energy_fp_mult");
    return double(steps) * double(steps) * eta1 * eta2 * ops * c.e_ac;
}

double energy_ratio(double sops, double flops, const EnergyConstants& c) {
    c.validate();
    if (!(flops > 0.0)) throw InvalidArgument("energy_ratio: flops must be positive");
    check_count(sops, "energy_ratio");
    return sops * c.e_ac / (flops * c.e_mac);
}

ActivationEnergy activation_energy(int steps, double eta, int bases, double flops, double macs,
                                   const EnergyConstants& c) {
    if (!(flops > 0.0) || !(macs > 0.0)) {
        throw InvalidArgument("activation_energy: float cost must be positive");
    }
    ActivationEnergy e;
    e.spiking = energy_mbe(steps, eta, bases, 1, 1, c);
    e.flop_cost = flops * c.e_mac;
    e.mac_cost = macs * c.e_mac;
    e.ratio_flops = e.spiking / e.flop_cost;
    e.ratio_macs = e.spiking / e.mac_cost;
    return e;
}

void BoundInputs::validate() const {
    if (steps < 1 || bases < 1) throw InvalidArgument("bounds: T and N must be >= 1");
    if (samples < 2) throw InvalidArgument("bounds: M must be >= 2");
    if (!(lipschitz >= 0.0) || !(y_max >= 0.0) || !(l1 >= 0.0) || !(alpha_abs >= 0.0)) {
        throw InvalidArgument("bounds: L_f, y_max, l1 and |alpha| must be non-negative");
    }
    if (!(tau_max > 0.0) || !(dt > 0.0)) throw InvalidArgument("bounds: tau_max and dt must be positive");
}

BoundTerms bound_fs(const BoundInputs& in) {
    in.validate();
    const double t = in.steps;
    const double m = in.samples;
    BoundTerms b;
    b.empirical = std::sqrt(t * std::log(t) * std::log(m) / m);
    b.parametric = in.lipschitz * in.y_max / t;
    b.quantization = in.l1 / t;
    return b;
}

BoundTerms bound_mbe(const BoundInputs& in) {
    in.validate();
    const double t = in.steps;
    const double n = in.bases;
    const double m = in.samples;
    BoundTerms b;
    b.empirical = std::sqrt(n * std::log(n) * std::log(m) / m);
    b.parametric = in.lipschitz * in.y_max / (n * t);
    b.quantization = in.l1 * in.alpha_abs * in.tau_max / (t * in.dt);
    return b;
}

double firing_rate(const SiteStats& s) {
    if (s.elements <= 0 || s.slots <= 0) throw InvalidArgument("firing_rate: site recorded no elements");
    return double(s.spikes) / double(s.slots);
}

std::map<std::string, double> site_flops(const RefTransformerConfig& config, int tokens) {
    config.validate();
    if (tokens < 1) throw InvalidArgument("site_flops: need at least one token");
    const double s = tokens;
    const double d = config.d_model;
    const double h = config.n_heads;
    const double dh = config.d_head();
    const double f = config.d_ff;
    const double tr = kGeluFlops;
    const double ln = s * (7.0 * d + 3.0 + tr);
    std::map<std::string, double> out;
    for (int li = 0; li < config.n_layers; ++li) {
        const std::string tag = "L" + std::to_string(li) + ".";
        out[tag + "ln1"] = ln;
        out[tag + "ln2"] = ln;
        out[tag + "scores"] = h * (2.0 * s * s * dh + s * s);
        out[tag + "softmax"] = h * s * (s * (4.0 + tr) + tr);
        out[tag + "values"] = h * 2.0 * s * s * dh;
        out[tag + "act"] = s * f * tr;
    }
    return out;
}

EnergyReport block_energy(const RefTransformerConfig& config, int tokens, const SiteStatsMap& stats,
                          const EnergyConstants& c) {
    EnergyReport r;
    for (const auto& [name, st] : stats) {
        r.spikes += st.spikes;
        r.sops += st.sops;
    }
    for (const auto& [name, fl] : site_flops(config, tokens)) r.flops += fl;
    c.validate();
    r.snn_pj = double(r.sops) * c.e_ac;
    r.ann_pj = r.flops * c.e_mac;
    r.ratio = r.flops > 0.0 ? energy_ratio(double(r.sops), r.flops, c) : 0.0;
    return r;
}

}  // namespace mbe
