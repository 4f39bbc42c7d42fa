#include "mbe/spike_ops.hpp"

#include <algorithm>
#include <cmath>

namespace mbe {

FrexpParts frexp_decompose(double x) {
    if (!(x > 0.0) || !std::isfinite(x)) throw InvalidArgument("frexp_decompose: need finite x > 0");
    FrexpParts p;
    p.mantissa = std::frexp(x, &p.exponent);
    return p;
}

TargetFn opset_target(TargetId id) {
    const auto make = [id](const Range& r) { return TargetFn{id, r.lo, r.hi}; };
    switch (id) {
        case TargetId::Gelu: return make(kGeluDomain);
        case TargetId::Tanh: return make(kTanhDomain);
        case TargetId::Exp2Frac: return make(kExp2Domain);
        case TargetId::Inv: return make(kInvDomain);
        case TargetId::InvSqrt: return make(kInvSqrtDomain);
        default: break;
    }
    throw InvalidArgument("no op-set member for target '" + std::string(target_name(id)) + "'");
}

TargetFn opset_target(TargetId id, const OpSetConfig& cfg) {
    TargetFn t = opset_target(id);
    if (cfg.act_domain && (id == TargetId::Gelu || id == TargetId::Tanh)) {
        t.a = cfg.act_domain->lo;
        t.b = cfg.act_domain->hi;
        t.validate();
    }
    return t;
}

FitConfig opset_fit_config(TargetId id, const OpSetConfig& cfg) {
    FitConfig fc;
    fc.samples = cfg.samples;
    fc.seed = cfg.seed;
    fc.steps = cfg.steps;
    const bool activation = id == TargetId::Gelu || id == TargetId::Tanh;
    fc.bases = activation ? cfg.n_act : cfg.n_other;
    fc.input = activation ? InputMode::Auto : InputMode::Shifted;
    return fc;
}

std::optional<FittedApproximator>& SpikingOpSet::slot(TargetId id) {
    switch (id) {
        case TargetId::Gelu: return gelu;
        case TargetId::Tanh: return tanh;
        case TargetId::Exp2Frac: return exp2;
        case TargetId::Inv: return inv;
        case TargetId::InvSqrt: return invsqrt;
        default: break;
    }
    throw InvalidArgument("no op-set member for target '" + std::string(target_name(id)) + "'");
}

const FittedApproximator& SpikingOpSet::require(TargetId id) const {
    const auto& s = const_cast<SpikingOpSet*>(this)->slot(id);
    if (!s) throw NotFitted("op set has no fitted approximator for " + std::string(target_name(id)));
    return *s;
}

SpikingOpSet fit_opset(const OpSetConfig& cfg, bool gelu, bool tanh) {
    SpikingOpSet ops;
    std::vector<TargetId> ids{TargetId::Exp2Frac, TargetId::Inv, TargetId::InvSqrt};
    if (gelu) ids.push_back(TargetId::Gelu);
    if (tanh) ids.push_back(TargetId::Tanh);
    for (TargetId id : ids) ops.slot(id) = fit_mbe(opset_target(id, cfg), opset_fit_config(id, cfg));
    return ops;
}

double spiking_eval(const FittedApproximator& op, double x, SiteStats* stats) {
    const bool clamped = op.clamp(x);
    long spikes = 0;
    const double y = mbe_output(op.neuron, x, &spikes);
    if (stats) {
        stats->spikes += spikes;
        stats->sops += spikes;
        stats->slots += static_cast<std::int64_t>(op.neuron.basis_count()) * op.neuron.steps();
        stats->elements += 1;
        stats->saturated += clamped;
    }
    return y;
}

Eigen::VectorXd spiking_activation(const FittedApproximator& op, const Eigen::VectorXd& x,
                                   SiteStats* stats) {
    Eigen::VectorXd y(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) y[i] = spiking_eval(op, x[i], stats);
    return y;
}

double spiking_exp(const SpikingOpSet& ops, double x, SiteStats* stats) {
    const double z = x * M_LOG2E;
    const double k = std::floor(z);
    double frac = z - k;
    if (frac >= 1.0) frac = std::nextafter(1.0, 0.0);
    return std::ldexp(spiking_eval(ops.require(TargetId::Exp2Frac), frac, stats),
                      static_cast<int>(k));
}

double spiking_reciprocal(const SpikingOpSet& ops, double x, SiteStats* stats) {
    const FrexpParts p = frexp_decompose(x);
    return std::ldexp(spiking_eval(ops.require(TargetId::Inv), p.mantissa, stats), -p.exponent);
}

double spiking_inv_sqrt(const SpikingOpSet& ops, double x, SiteStats* stats) {
    FrexpParts p = frexp_decompose(x);
    if (p.exponent & 1) {
        p.mantissa *= 2.0;
        p.exponent -= 1;
    }
    return std::ldexp(spiking_eval(ops.require(TargetId::InvSqrt), p.mantissa, stats),
                      -p.exponent / 2);
}

MultiplySite make_multiply_site(const Range& lhs, const Range& rhs, int steps, double scale) {
    MultiplySite s;
    s.lhs = IdentityEncoder(lhs.lo, lhs.hi, steps);
    s.rhs = IdentityEncoder(rhs.lo, rhs.hi, steps);
    s.d = IntensityMatrix(s.lhs, s.rhs, scale);
    return s;
}

SoftmaxSite make_softmax_site(double floor, int steps, double pad) {
    if (!(floor < 0.0) || !std::isfinite(floor)) {
        throw InvalidArgument("softmax site: floor must be finite and negative");
    }
    const Range unit = Range{0.0, 1.0}.padded(pad);
    return {floor, make_multiply_site(unit, unit, steps)};
}

Eigen::VectorXd spiking_softmax(const SpikingOpSet& ops, const SoftmaxSite& site,
                                const Eigen::VectorXd& x, SoftmaxStats* stats) {
    if (x.size() == 0) throw InvalidArgument("spiking_softmax: empty input");
    const double top = x.maxCoeff();
    Eigen::VectorXd e(x.size());
    double sum = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        double z = x[i] - top;
        if (z < site.floor) {
            z = site.floor;
            if (stats) ++stats->exp2.saturated;
        }
        e[i] = spiking_exp(ops, z, stats ? &stats->exp2 : nullptr);
        sum += e[i];
    }
    const double recip = spiking_reciprocal(ops, sum, stats ? &stats->inv : nullptr);
    Eigen::VectorXd out(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        out[i] = spike_multiply(site.normalize.lhs, e[i], site.normalize.rhs, recip,
                                site.normalize.d, stats ? &stats->normalize : nullptr);
    }
    return out;
}

LayerNormSite make_layernorm_site(const Range& deviation, const Range& inv_std, int width,
                                  int steps, double eps) {
    if (width < 1) throw InvalidArgument("layernorm site: width must be >= 1");
    if (!(eps >= 0.0)) throw InvalidArgument("layernorm site: eps must be non-negative");
    LayerNormSite s;
    s.variance = make_multiply_site(deviation, deviation, steps, 1.0 / width);
    s.normalize = make_multiply_site(deviation, inv_std, steps);
    s.eps = eps;
    s.width = width;
    return s;
}

Eigen::VectorXd spiking_layernorm(const SpikingOpSet& ops, const LayerNormSite& site,
                                  const Eigen::VectorXd& x, const Eigen::VectorXd& gamma,
                                  const Eigen::VectorXd& beta, LayerNormStats* stats) {
    const Eigen::Index n = x.size();
    if (n < 1) throw InvalidArgument("spiking_layernorm: empty input");
    if (n != site.width || gamma.size() != n || beta.size() != n) {
        throw InvalidArgument("spiking_layernorm: width mismatch");
    }
    const double mean = x.mean();
    const Eigen::VectorXd dev = x.array() - mean;
    double var = 0.0;
    const auto& v = site.variance;
    for (Eigen::Index i = 0; i < n; ++i) {
        var += spike_multiply(v.lhs, dev[i], v.rhs, dev[i], v.d, stats ? &stats->variance : nullptr);
    }
    // Gated sums of an exact square can round a hair below zero.
    const double denom = std::max(var, 0.0) + site.eps;
    const double inv_std = spiking_inv_sqrt(ops, denom > 0.0 ? denom : site.variance.lhs.step(),
                                            stats ? &stats->invsqrt : nullptr);
    const auto& m = site.normalize;
    Eigen::VectorXd out(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        out[i] = gamma[i] * spike_multiply(m.lhs, dev[i], m.rhs, inv_std, m.d,
                                           stats ? &stats->normalize : nullptr) +
                 beta[i];
    }
    return out;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& x) {
    if (x.size() == 0) throw InvalidArgument("softmax: empty input");
    const Eigen::VectorXd e = (x.array() - x.maxCoeff()).exp();
    return e / e.sum();
}

Eigen::VectorXd layernorm(const Eigen::VectorXd& x, const Eigen::VectorXd& gamma,
                          const Eigen::VectorXd& beta, double eps) {
    const double mean = x.mean();
    const Eigen::ArrayXd dev = x.array() - mean;
    const double var = dev.square().mean();
    return (gamma.array() * dev / std::sqrt(var + eps) + beta.array()).matrix();
}

}  // namespace mbe
