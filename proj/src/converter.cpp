#include "mbe/converter.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "mbe/rng.hpp"

namespace mbe {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string role_name(int layer, const char* op, const char* role) {
    return "L" + std::to_string(layer) + "." + op + (role[0] ? "." : "") + role;
}

MatrixXd gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double sd, double mean = 0.0) {
    MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = mean + sd * rng.normal();
    }
    return m;
}

VectorXd gaussian_vector(Rng& rng, Eigen::Index n, double sd, double mean = 0.0) {
    return gaussian(rng, n, 1, sd, mean).col(0);
}

bool same_bits(const MatrixXd& a, const MatrixXd& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

bool same_bits(const VectorXd& a, const VectorXd& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

MatrixXd add_bias(MatrixXd m, const VectorXd& b) {
    m.rowwise() += b.transpose();
    return m;
}

double activate(Activation a, double x) { return a == Activation::Gelu ? gelu(x) : std::tanh(x); }

// Row-wise float LayerNorm that reports deviation and inverse std.
MatrixXd layernorm_rows(const MatrixXd& x, const VectorXd& gamma, const VectorXd& beta, double eps,
                        const SiteHook& hook, const std::string& site) {
    MatrixXd out(x.rows(), x.cols());
    MatrixXd dev(x.rows(), x.cols());
    MatrixXd inv_std(1, x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        dev.row(i) = x.row(i).array() - x.row(i).mean();
        inv_std(0, i) = 1.0 / std::sqrt(dev.row(i).squaredNorm() / double(x.cols()) + eps);
        out.row(i) = (dev.row(i).transpose().array() * inv_std(0, i) * gamma.array() + beta.array())
                         .matrix()
                         .transpose();
    }
    if (hook) {
        hook(site + ".deviation", dev);
        hook(site + ".inv_std", inv_std);
    }
    return out;
}

MatrixXd softmax_rows(const MatrixXd& s, const SiteHook& hook, const std::string& site) {
    MatrixXd shifted = s.colwise() - s.rowwise().maxCoeff();
    if (hook) hook(site + ".shifted", shifted);
    MatrixXd e = shifted.array().exp();
    return e.array().colwise() / e.rowwise().sum().array();
}

Range encoder_range(const SiteRecord& r, double pad) {
    Range out = r.range().padded(pad);
    if (!(out.lo < out.hi)) {
        // Constant site: give the encoder a small span around the value.
        const double h = 1e-3 * std::max(1.0, std::abs(r.min));
        out = {r.min - h, r.max + h};
    }
    return out;
}

void check_member(const SpikingOpSet& ops, TargetId id, int bases, int steps,
                  const std::string& site) {
    const auto& slot = const_cast<SpikingOpSet&>(ops).slot(id);
    const std::string name(target_name(id));
    if (!slot) throw ConversionError(site, "no fitted approximator for " + name);
    if (slot->neuron.steps() != steps) {
        throw ConversionError(site, name + " approximator has T=" +
                                        std::to_string(slot->neuron.steps()) + ", need " +
                                        std::to_string(steps));
    }
    if (slot->neuron.basis_count() != bases) {
        throw ConversionError(site, name + " approximator has N=" +
                                        std::to_string(slot->neuron.basis_count()) + ", need " +
                                        std::to_string(bases));
    }
}

}  // namespace

std::string_view activation_name(Activation a) { return a == Activation::Gelu ? "gelu" : "tanh"; }

Activation parse_activation(std::string_view s) {
    if (s == "gelu") return Activation::Gelu;
    if (s == "tanh") return Activation::Tanh;
    throw InvalidArgument("unknown activation '" + std::string(s) + "' (gelu, tanh)");
}

TargetId activation_target(Activation a) {
    return a == Activation::Gelu ? TargetId::Gelu : TargetId::Tanh;
}

void RefTransformerConfig::validate() const {
    if (d_model < 1 || n_heads < 1 || d_ff < 1 || seq_len < 1 || n_layers < 0) {
        throw InvalidArgument("transformer config: sizes must be positive");
    }
    if (d_model % n_heads != 0) {
        throw InvalidArgument("transformer config: d_model must be divisible by n_heads");
    }
    if (!(ln_eps > 0.0)) throw InvalidArgument("transformer config: ln_eps must be positive");
}

bool LayerWeights::bit_identical(const LayerWeights& o) const {
    return same_bits(wq, o.wq) && same_bits(wk, o.wk) && same_bits(wv, o.wv) &&
           same_bits(wo, o.wo) && same_bits(bq, o.bq) && same_bits(bk, o.bk) &&
           same_bits(bv, o.bv) && same_bits(bo, o.bo) && same_bits(w1, o.w1) &&
           same_bits(b1, o.b1) && same_bits(w2, o.w2) && same_bits(b2, o.b2) &&
           same_bits(ln1_gamma, o.ln1_gamma) && same_bits(ln1_beta, o.ln1_beta) &&
           same_bits(ln2_gamma, o.ln2_gamma) && same_bits(ln2_beta, o.ln2_beta);
}

FloatTransformer::FloatTransformer(RefTransformerConfig config, std::vector<LayerWeights> layers)
    : config_(config), layers_(std::move(layers)) {
    config_.validate();
    if (static_cast<int>(layers_.size()) != config_.n_layers) {
        throw InvalidArgument("transformer: layer count differs from config");
    }
    const Eigen::Index d = config_.d_model;
    const Eigen::Index f = config_.d_ff;
    for (const auto& l : layers_) {
        const bool ok = l.wq.rows() == d && l.wq.cols() == d && l.wk.rows() == d &&
                        l.wk.cols() == d && l.wv.rows() == d && l.wv.cols() == d &&
                        l.wo.rows() == d && l.wo.cols() == d && l.bq.size() == d &&
                        l.bk.size() == d && l.bv.size() == d && l.bo.size() == d &&
                        l.w1.rows() == d && l.w1.cols() == f && l.b1.size() == f &&
                        l.w2.rows() == f && l.w2.cols() == d && l.b2.size() == d &&
                        l.ln1_gamma.size() == d && l.ln1_beta.size() == d &&
                        l.ln2_gamma.size() == d && l.ln2_beta.size() == d;
        if (!ok) throw InvalidArgument("transformer: weight shapes do not match config");
    }
}

std::vector<MatrixXd> FloatTransformer::forward_trace(const MatrixXd& x, const SiteHook& hook) const {
    if (x.cols() != config_.d_model || x.rows() < 1) {
        throw InvalidArgument("forward: input must be (tokens x d_model)");
    }
    const int dh = config_.d_head();
    const double scale = 1.0 / std::sqrt(double(dh));
    std::vector<MatrixXd> trace{x};
    MatrixXd h = x;
    for (int li = 0; li < config_.n_layers; ++li) {
        const auto& l = layers_[static_cast<std::size_t>(li)];
        const MatrixXd xn = layernorm_rows(h, l.ln1_gamma, l.ln1_beta, config_.ln_eps, hook,
                                           role_name(li, "ln1", ""));
        const MatrixXd q = add_bias(xn * l.wq, l.bq);
        const MatrixXd k = add_bias(xn * l.wk, l.bk);
        const MatrixXd v = add_bias(xn * l.wv, l.bv);
        if (hook) {
            hook(role_name(li, "scores", "q"), q);
            hook(role_name(li, "scores", "k"), k);
            hook(role_name(li, "values", "v"), v);
        }
        MatrixXd heads(x.rows(), config_.d_model);
        for (int hd = 0; hd < config_.n_heads; ++hd) {
            const auto qh = q.middleCols(hd * dh, dh);
            const auto kh = k.middleCols(hd * dh, dh);
            const MatrixXd s = scale * (qh * kh.transpose());
            const MatrixXd p = softmax_rows(s, hook, role_name(li, "softmax", ""));
            if (hook) hook(role_name(li, "values", "p"), p);
            heads.middleCols(hd * dh, dh) = p * v.middleCols(hd * dh, dh);
        }
        h += add_bias(heads * l.wo, l.bo);
        const MatrixXd hn = layernorm_rows(h, l.ln2_gamma, l.ln2_beta, config_.ln_eps, hook,
                                           role_name(li, "ln2", ""));
        const MatrixXd pre = add_bias(hn * l.w1, l.b1);
        if (hook) hook(role_name(li, "act", "input"), pre);
        const MatrixXd act = pre.unaryExpr([&](double z) { return activate(config_.activation, z); });
        h += add_bias(act * l.w2, l.b2);
        trace.push_back(h);
    }
    return trace;
}

MatrixXd FloatTransformer::forward(const MatrixXd& x, const SiteHook& hook) const {
    return forward_trace(x, hook).back();
}

bool FloatTransformer::weights_identical(const FloatTransformer& o) const {
    if (layers_.size() != o.layers_.size()) return false;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (!layers_[i].bit_identical(o.layers_[i])) return false;
    }
    return true;
}

FloatTransformer build_reference(const RefTransformerConfig& config) {
    config.validate();
    Rng rng(derive_seed(config.seed, 0));
    const Eigen::Index d = config.d_model;
    const Eigen::Index f = config.d_ff;
    const double sd_d = 1.0 / std::sqrt(double(d));
    const double sd_f = 1.0 / std::sqrt(double(f));
    std::vector<LayerWeights> layers(static_cast<std::size_t>(config.n_layers));
    for (auto& l : layers) {
        l.ln1_gamma = gaussian_vector(rng, d, 0.1, 1.0);
        l.ln1_beta = gaussian_vector(rng, d, 0.05);
        l.wq = gaussian(rng, d, d, sd_d);
        l.bq = gaussian_vector(rng, d, 0.02);
        l.wk = gaussian(rng, d, d, sd_d);
        l.bk = gaussian_vector(rng, d, 0.02);
        l.wv = gaussian(rng, d, d, sd_d);
        l.bv = gaussian_vector(rng, d, 0.02);
        l.wo = gaussian(rng, d, d, sd_d);
        l.bo = gaussian_vector(rng, d, 0.02);
        l.ln2_gamma = gaussian_vector(rng, d, 0.1, 1.0);
        l.ln2_beta = gaussian_vector(rng, d, 0.05);
        l.w1 = gaussian(rng, d, f, sd_d);
        l.b1 = gaussian_vector(rng, f, 0.02);
        l.w2 = gaussian(rng, f, d, sd_f);
        l.b2 = gaussian_vector(rng, d, 0.02);
    }
    return FloatTransformer(config, std::move(layers));
}

MatrixXd random_input(const RefTransformerConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(derive_seed(seed, 1));
    return gaussian(rng, config.seq_len, config.d_model, 1.0);
}

const SiteRecord& CalibrationProfile::at(const std::string& role) const {
    const auto it = sites.find(role);
    if (it == sites.end()) throw ConversionError(role, "no calibration record");
    return it->second;
}

std::vector<std::string> site_roles(const RefTransformerConfig& config) {
    std::vector<std::string> roles;
    for (int li = 0; li < config.n_layers; ++li) {
        for (const char* r : {"ln1.deviation", "ln1.inv_std", "scores.q", "scores.k",
                              "softmax.shifted", "values.p", "values.v", "ln2.deviation",
                              "ln2.inv_std", "act.input"}) {
            roles.push_back("L" + std::to_string(li) + "." + r);
        }
    }
    return roles;
}

CalibrationProfile calibrate(const FloatTransformer& model, const std::vector<MatrixXd>& batches) {
    if (batches.empty()) throw InvalidArgument("calibrate: need at least one batch");
    std::map<std::string, std::vector<double>> seen;
    const SiteHook hook = [&](const std::string& role, const MatrixXd& values) {
        auto& v = seen[role];
        v.insert(v.end(), values.data(), values.data() + values.size());
    };
    for (const auto& b : batches) model.forward(b, hook);
    CalibrationProfile profile;
    for (auto& [role, values] : seen) {
        SiteRecord r;
        const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
        r.min = *lo;
        r.max = *hi;
        r.count = static_cast<std::int64_t>(values.size());
        r.histogram.assign(kHistogramBins, 0);
        const double width = r.max - r.min;
        for (double v : values) {
            int bin = 0;
            if (width > 0.0) {
                bin = std::min(kHistogramBins - 1, static_cast<int>((v - r.min) / width * kHistogramBins));
            }
            ++r.histogram[static_cast<std::size_t>(bin)];
        }
        profile.sites.emplace(role, std::move(r));
    }
    return profile;
}

int SiteCensus::total() const {
    int n = 0;
    for (const auto& [kind, count] : replaced) n += count;
    return n;
}

SpikingTransformer::SpikingTransformer(FloatTransformer model, SpikingOpSet ops,
                                       std::vector<SpikingLayer> layers, ConvertConfig config)
    : model_(std::move(model)), ops_(std::move(ops)), layers_(std::move(layers)), config_(config) {}

SiteCensus SpikingTransformer::census() const {
    SiteCensus c;
    for (auto kind : {SiteKind::LayerNorm, SiteKind::Softmax, SiteKind::SpikeMatmul,
                      SiteKind::Activation}) {
        c.replaced[kind] = 0;
    }
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        c.replaced[SiteKind::LayerNorm] += 2;
        c.replaced[SiteKind::Softmax] += 1;
        c.replaced[SiteKind::SpikeMatmul] += 2;
        c.replaced[SiteKind::Activation] += 1;
    }
    return c;
}

SpikingTransformer convert(const FloatTransformer& model, const CalibrationProfile& profile,
                           const SpikingOpSet& ops, const ConvertConfig& config) {
    if (config.steps < 1 || config.n_act < 1 || config.n_other < 1) {
        throw InvalidArgument("convert: T and N must be >= 1");
    }
    if (!(config.pad >= 0.0)) throw InvalidArgument("convert: pad must be non-negative");
    const auto& mc = model.config();
    for (const auto& role : site_roles(mc)) profile.at(role);

    std::vector<SpikingLayer> layers;
    for (int li = 0; li < mc.n_layers; ++li) {
        const std::string tag = "L" + std::to_string(li);
        check_member(ops, TargetId::InvSqrt, config.n_other, config.steps, tag + ".ln1");
        check_member(ops, TargetId::Exp2Frac, config.n_other, config.steps, tag + ".softmax");
        check_member(ops, TargetId::Inv, config.n_other, config.steps, tag + ".softmax");
        check_member(ops, activation_target(mc.activation), config.n_act, config.steps,
                     tag + ".act");
        auto rng = [&](const char* role) { return encoder_range(profile.at(tag + "." + role), config.pad); };
        SpikingLayer l;
        l.ln1 = make_layernorm_site(rng("ln1.deviation"), rng("ln1.inv_std"), mc.d_model,
                                    config.steps, mc.ln_eps);
        l.ln2 = make_layernorm_site(rng("ln2.deviation"), rng("ln2.inv_std"), mc.d_model,
                                    config.steps, mc.ln_eps);
        l.scores = make_multiply_site(rng("scores.q"), rng("scores.k"), config.steps,
                                      1.0 / std::sqrt(double(mc.d_head())));
        double floor = profile.at(tag + ".softmax.shifted").range().padded(config.pad).lo;
        if (!(floor < 0.0)) floor = -1.0;
        l.softmax = make_softmax_site(floor, config.steps, config.pad);
        l.values = make_multiply_site(rng("values.p"), rng("values.v"), config.steps);
        layers.push_back(std::move(l));
    }
    return SpikingTransformer(model, ops, std::move(layers), config);
}

Range activation_interval(const FloatTransformer& model, const CalibrationProfile& profile,
                          double pad) {
    const auto& mc = model.config();
    if (mc.n_layers < 1) throw InvalidArgument("activation_interval: model has no layers");
    Range seen{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (int li = 0; li < mc.n_layers; ++li) {
        const Range r = profile.at("L" + std::to_string(li) + ".act.input").range().padded(pad);
        seen = {std::min(seen.lo, r.lo), std::max(seen.hi, r.hi)};
    }
    const TargetFn outer = opset_target(activation_target(mc.activation));
    Range out{std::max(seen.lo, outer.a), std::min(seen.hi, outer.b)};
    if (!(out.lo < out.hi)) out = {outer.a, outer.b};
    return out;
}

SpikingTransformer convert(const FloatTransformer& model, const CalibrationProfile& profile,
                           const ConvertConfig& config) {
    for (const auto& role : site_roles(model.config())) profile.at(role);
    OpSetConfig oc;
    oc.steps = config.steps;
    oc.n_act = config.n_act;
    oc.n_other = config.n_other;
    oc.seed = config.seed;
    if (model.config().n_layers > 0) oc.act_domain = activation_interval(model, profile, config.pad);
    const bool gelu = model.config().activation == Activation::Gelu;
    return convert(model, profile, fit_opset(oc, gelu, !gelu), config);
}

std::vector<MatrixXd> forward_spiking_trace(const SpikingTransformer& snn, const MatrixXd& x,
                                            SiteStatsMap* stats) {
    const auto& model = snn.model();
    const auto& mc = model.config();
    if (x.cols() != mc.d_model || x.rows() < 1) {
        throw InvalidArgument("forward_spiking: input must be (tokens x d_model)");
    }
    const int dh = mc.d_head();
    const auto& ops = snn.ops();
    const auto& act_op = ops.require(activation_target(mc.activation));
    auto slot = [&](const std::string& name) -> SiteStats* { return stats ? &(*stats)[name] : nullptr; };

    std::vector<MatrixXd> trace{x};
    MatrixXd h = x;
    for (int li = 0; li < mc.n_layers; ++li) {
        const auto& w = model.layers()[static_cast<std::size_t>(li)];
        const auto& site = snn.layers()[static_cast<std::size_t>(li)];
        const std::string tag = "L" + std::to_string(li) + ".";

        auto norm = [&](const MatrixXd& in, const LayerNormSite& ln, const VectorXd& gamma,
                        const VectorXd& beta, const std::string& name) {
            MatrixXd out(in.rows(), in.cols());
            LayerNormStats ls;
            for (Eigen::Index i = 0; i < in.rows(); ++i) {
                out.row(i) = spiking_layernorm(ops, ln, in.row(i).transpose(), gamma, beta,
                                               stats ? &ls : nullptr)
                                 .transpose();
            }
            if (stats) {
                (*stats)[name + ".variance"] += ls.variance;
                (*stats)[name + ".invsqrt"] += ls.invsqrt;
                (*stats)[name + ".normalize"] += ls.normalize;
            }
            return out;
        };

        const MatrixXd xn = norm(h, site.ln1, w.ln1_gamma, w.ln1_beta, tag + "ln1");
        const MatrixXd q = add_bias(xn * w.wq, w.bq);
        const MatrixXd k = add_bias(xn * w.wk, w.bk);
        const MatrixXd v = add_bias(xn * w.wv, w.bv);
        MatrixXd heads(x.rows(), mc.d_model);
        SoftmaxStats ss;
        for (int hd = 0; hd < mc.n_heads; ++hd) {
            const MatrixXd qh = q.middleCols(hd * dh, dh);
            const MatrixXd kt = k.middleCols(hd * dh, dh).transpose();
            const MatrixXd s = spike_matmul(qh, kt, site.scores.lhs, site.scores.rhs, site.scores.d,
                                            slot(tag + "scores"));
            MatrixXd p(s.rows(), s.cols());
            for (Eigen::Index i = 0; i < s.rows(); ++i) {
                p.row(i) = spiking_softmax(ops, site.softmax, s.row(i).transpose(),
                                           stats ? &ss : nullptr)
                               .transpose().eval();
            }
            heads.middleCols(hd * dh, dh) =
                spike_matmul(p, v.middleCols(hd * dh, dh), site.values.lhs, site.values.rhs,
                             site.values.d, slot(tag + "values"));
        }
        if (stats) {
            (*stats)[tag + "softmax.exp2"] += ss.exp2;
            (*stats)[tag + "softmax.inv"] += ss.inv;
            (*stats)[tag + "softmax.normalize"] += ss.normalize;
        }
        h += add_bias(heads * w.wo, w.bo);
        const MatrixXd hn = norm(h, site.ln2, w.ln2_gamma, w.ln2_beta, tag + "ln2");
        const MatrixXd pre = add_bias(hn * w.w1, w.b1);
        MatrixXd act(pre.rows(), pre.cols());
        SiteStats* as = slot(tag + "act");
        for (Eigen::Index j = 0; j < pre.cols(); ++j) {
            for (Eigen::Index i = 0; i < pre.rows(); ++i) act(i, j) = spiking_eval(act_op, pre(i, j), as);
        }
        h += add_bias(act * w.w2, w.b2);
        trace.push_back(h);
    }
    return trace;
}

MatrixXd forward_spiking(const SpikingTransformer& snn, const MatrixXd& x, SiteStatsMap* stats) {
    return forward_spiking_trace(snn, x, stats).back();
}

Fidelity fidelity(const MatrixXd& reference, const MatrixXd& output) {
    if (reference.rows() != output.rows() || reference.cols() != output.cols()) {
        throw InvalidArgument("compare: shape mismatch");
    }
    Fidelity f;
    if (reference.size() == 0) return f;
    const MatrixXd diff = output - reference;
    f.mse = diff.squaredNorm() / double(diff.size());
    f.linf = diff.cwiseAbs().maxCoeff();
    const double na = reference.norm();
    const double nb = output.norm();
    if (na == 0.0 && nb == 0.0) {
        f.cosine = 1.0;
    } else if (na == 0.0 || nb == 0.0) {
        f.cosine = 0.0;
    } else {
        f.cosine = std::clamp(reference.cwiseProduct(output).sum() / (na * nb), -1.0, 1.0);
    }
    return f;
}

FidelityReport compare(const std::vector<MatrixXd>& reference, const std::vector<MatrixXd>& spiking,
                       const SiteStatsMap& stats) {
    if (reference.size() != spiking.size() || reference.empty()) {
        throw InvalidArgument("compare: traces differ in length");
    }
    FidelityReport rep;
    for (std::size_t i = 1; i < reference.size(); ++i) rep.layers.push_back(fidelity(reference[i], spiking[i]));
    rep.final = fidelity(reference.back(), spiking.back());
    for (const auto& [name, s] : stats) {
        SiteReport r;
        r.stats = s;
        r.firing_rate = s.slots > 0 ? double(s.spikes) / double(s.slots) : 0.0;
        rep.sites.emplace(name, r);
    }
    return rep;
}

}  // namespace mbe
