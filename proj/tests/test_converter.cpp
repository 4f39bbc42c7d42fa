#include <doctest.h>

#include <cmath>

#include "mbe/converter.hpp"
#include "mbe/metrics.hpp"

using namespace mbe;

namespace {

constexpr double kForwardTol = 1e-12;

// Loop-level forward of the pre-LN block, written without Eigen products.
Eigen::MatrixXd naive_forward(const FloatTransformer& m, const Eigen::MatrixXd& x) {
    const auto& c = m.config();
    const int s = static_cast<int>(x.rows());
    const int d = c.d_model;
    const int dh = c.d_head();
    auto ln = [&](const Eigen::MatrixXd& in, const Eigen::VectorXd& g, const Eigen::VectorXd& b) {
        Eigen::MatrixXd out(s, d);
        for (int i = 0; i < s; ++i) {
            double mu = 0.0;
            for (int j = 0; j < d; ++j) mu += in(i, j);
            mu /= d;
            double var = 0.0;
            for (int j = 0; j < d; ++j) var += (in(i, j) - mu) * (in(i, j) - mu);
            var /= d;
            for (int j = 0; j < d; ++j) out(i, j) = (in(i, j) - mu) / std::sqrt(var + c.ln_eps) * g[j] + b[j];
        }
        return out;
    };
    auto affine = [&](const Eigen::MatrixXd& in, const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
        Eigen::MatrixXd out(in.rows(), w.cols());
        for (int i = 0; i < in.rows(); ++i) {
            for (int j = 0; j < w.cols(); ++j) {
                double acc = b[j];
                for (int k = 0; k < in.cols(); ++k) acc += in(i, k) * w(k, j);
                out(i, j) = acc;
            }
        }
        return out;
    };
    Eigen::MatrixXd h = x;
    for (const auto& l : m.layers()) {
        const Eigen::MatrixXd xn = ln(h, l.ln1_gamma, l.ln1_beta);
        const Eigen::MatrixXd q = affine(xn, l.wq, l.bq), k = affine(xn, l.wk, l.bk), v = affine(xn, l.wv, l.bv);
        Eigen::MatrixXd att(s, d);
        for (int hd = 0; hd < c.n_heads; ++hd) {
            for (int i = 0; i < s; ++i) {
                std::vector<double> sc(static_cast<std::size_t>(s));
                double top = -INFINITY;
                for (int j = 0; j < s; ++j) {
                    double acc = 0.0;
                    for (int t = 0; t < dh; ++t) acc += q(i, hd * dh + t) * k(j, hd * dh + t);
                    sc[static_cast<std::size_t>(j)] = acc / std::sqrt(double(dh));
                    top = std::max(top, sc[static_cast<std::size_t>(j)]);
                }
                double z = 0.0;
                for (auto& e : sc) z += (e = std::exp(e - top));
                for (int t = 0; t < dh; ++t) {
                    double acc = 0.0;
                    for (int j = 0; j < s; ++j) acc += sc[static_cast<std::size_t>(j)] / z * v(j, hd * dh + t);
                    att(i, hd * dh + t) = acc;
                }
            }
        }
        h = h + affine(att, l.wo, l.bo);
        Eigen::MatrixXd pre = affine(ln(h, l.ln2_gamma, l.ln2_beta), l.w1, l.b1);
        for (auto& e : pre.reshaped()) {
            e = c.activation == Activation::Gelu ? 0.5 * e * (1.0 + std::erf(e / std::sqrt(2.0))) : std::tanh(e);
        }
        h = h + affine(pre, l.w2, l.b2);
    }
    return h;
}

RefTransformerConfig small_config(std::uint64_t seed, Activation act = Activation::Gelu) {
    RefTransformerConfig c;
    c.seed = seed;
    c.activation = act;
    return c;
}

struct Fixture {
    FloatTransformer model;
    CalibrationProfile profile;
    SpikingOpSet ops;
};

const Fixture& fixture() {
    static const Fixture f = [] {
        Fixture out;
        out.model = build_reference(small_config(3));
        std::vector<Eigen::MatrixXd> batches;
        for (int b = 0; b < 8; ++b) batches.push_back(random_input(out.model.config(), 100 + b));
        out.profile = calibrate(out.model, batches);
        OpSetConfig oc;
        oc.samples = 3000;
        oc.act_domain = activation_interval(out.model, out.profile, 0.05);
        out.ops = fit_opset(oc, true, false);
        return out;
    }();
    return f;
}

}  // namespace

TEST_CASE("reference config validation") {
    RefTransformerConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(c.d_head() == 16);
    c.n_heads = 3;  // 32 not divisible by 3
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = {};
    c.d_ff = 0;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    CHECK(parse_activation(activation_name(Activation::Tanh)) == Activation::Tanh);
    CHECK_THROWS_AS(parse_activation("swish"), InvalidArgument);
}

TEST_CASE("float forward matches a loop-level transcription") {
    for (auto act : {Activation::Gelu, Activation::Tanh}) {
        const FloatTransformer m = build_reference(small_config(7, act));
        const Eigen::MatrixXd x = random_input(m.config(), 1);
        const auto trace = m.forward_trace(x);
        CHECK(trace.size() == 3);
        CHECK(trace.front() == x);
        CHECK((m.forward(x) - naive_forward(m, x)).cwiseAbs().maxCoeff() < kForwardTol);
    }
}

TEST_CASE("reference weights and inputs are seeded") {
    const FloatTransformer a = build_reference(small_config(1));
    const FloatTransformer b = build_reference(small_config(1));
    const FloatTransformer c = build_reference(small_config(2));
    CHECK(a.weights_identical(b));
    CHECK_FALSE(a.weights_identical(c));
    CHECK(random_input(a.config(), 5) == random_input(a.config(), 5));
    CHECK(random_input(a.config(), 5) != random_input(a.config(), 6));
    const auto& l = a.layers()[0];
    CHECK(l.wq.rows() == 32);
    CHECK(l.w1.cols() == 64);
    CHECK(l.w2.rows() == 64);
}

TEST_CASE("calibration covers every role with consistent records") {
    const auto& f = fixture();
    const auto roles = site_roles(f.model.config());
    CHECK(roles.size() == 20);
    CHECK(f.profile.sites.size() == roles.size());
    for (const auto& role : roles) {
        const SiteRecord& r = f.profile.at(role);
        CHECK(r.min <= r.max);
        std::int64_t total = 0;
        for (auto h : r.histogram) total += h;
        CHECK(total == r.count);
        CHECK(r.histogram.size() == std::size_t(kHistogramBins));
    }
    CHECK(f.profile.at("L0.softmax.shifted").max == 0.0);
    CHECK(f.profile.at("L1.values.p").min >= 0.0);
    CHECK_THROWS_AS(f.profile.at("L9.act.input"), ConversionError);
    CHECK_THROWS_AS(calibrate(f.model, {}), InvalidArgument);
}

TEST_CASE("activation interval is the padded union clipped to the default domain") {
    const auto& f = fixture();
    const Range r = activation_interval(f.model, f.profile, 0.05);
    for (const char* site : {"L0.act.input", "L1.act.input"}) {
        const Range p = f.profile.at(site).range().padded(0.05);
        CHECK(r.lo <= std::max(p.lo, -120.0));
        CHECK(r.hi >= std::min(p.hi, 10.0));
    }
    CHECK(r.lo >= -120.0);
    CHECK(r.hi <= 10.0);
}

TEST_CASE("conversion keeps weights bit-identical and replaces every site") {
    const auto& f = fixture();
    const ConvertConfig cc;
    const SpikingTransformer snn = convert(f.model, f.profile, f.ops, cc);
    CHECK(snn.model().weights_identical(f.model));
    const SiteCensus census = snn.census();
    CHECK(census.replaced.at(SiteKind::LayerNorm) == 4);
    CHECK(census.replaced.at(SiteKind::Softmax) == 2);
    CHECK(census.replaced.at(SiteKind::SpikeMatmul) == 4);
    CHECK(census.replaced.at(SiteKind::Activation) == 2);
    CHECK(census.total() == 12);
    CHECK(snn.layers().size() == 2);
}

TEST_CASE("missing coverage names the site") {
    const auto& f = fixture();
    CalibrationProfile partial = f.profile;
    partial.sites.erase("L1.scores.k");
    try {
        convert(f.model, partial, f.ops, ConvertConfig{});
        FAIL("expected ConversionError");
    } catch (const ConversionError& e) {
        CHECK(e.site() == "L1.scores.k");
    }
    SpikingOpSet no_gelu = f.ops;
    no_gelu.gelu.reset();
    try {
        convert(f.model, f.profile, no_gelu, ConvertConfig{});
        FAIL("expected ConversionError");
    } catch (const ConversionError& e) {
        CHECK(e.site() == "L0.act");
    }
    ConvertConfig wrong_t;
    wrong_t.steps = 12;
    CHECK_THROWS_AS(convert(f.model, f.profile, f.ops, wrong_t), ConversionError);
    ConvertConfig wrong_n;
    wrong_n.n_act = 8;
    CHECK_THROWS_AS(convert(f.model, f.profile, f.ops, wrong_n), ConversionError);
}

TEST_CASE("spiking forward is deterministic and reports per-site statistics") {
    const auto& f = fixture();
    const SpikingTransformer snn = convert(f.model, f.profile, f.ops, ConvertConfig{});
    const Eigen::MatrixXd x = random_input(f.model.config(), 900);
    SiteStatsMap a, b;
    const auto ta = forward_spiking_trace(snn, x, &a);
    const auto tb = forward_spiking_trace(snn, x, &b);
    CHECK(ta.back() == tb.back());
    CHECK(a == b);
    CHECK(forward_spiking(snn, x) == ta.back());
    for (const char* key : {"L0.ln1.variance", "L0.ln1.invsqrt", "L0.ln1.normalize", "L0.scores", "L0.values",
                            "L0.softmax.exp2", "L0.softmax.inv", "L0.softmax.normalize", "L0.act",
                            "L1.ln2.normalize"}) {
        REQUIRE(a.count(key));
        CHECK(a.at(key).elements > 0);
        CHECK(a.at(key).spikes <= a.at(key).slots);
    }
    // 8 tokens x d_ff 64 activations per layer
    CHECK(a.at("L0.act").elements == 8 * 64);
    // per head 8 x 8 scores
    CHECK(a.at("L0.scores").elements == 2 * 8 * 8);

    const auto rep = compare(f.model.forward_trace(x), ta, a);
    CHECK(rep.layers.size() == 2);
    CHECK(rep.final.cosine > 0.95);
    for (const auto& [name, s] : rep.sites) {
        CHECK(s.firing_rate >= 0.0);
        CHECK(s.firing_rate <= 1.0);
    }
    CHECK_THROWS_AS(forward_spiking(snn, Eigen::MatrixXd::Zero(8, 5)), InvalidArgument);
}

TEST_CASE("fidelity measures") {
    Eigen::MatrixXd a(2, 2), b(2, 2);
    a << 1, 2, 3, 4;
    b << 1, 2, 3, 5;
    const Fidelity same = fidelity(a, a);
    CHECK(same.mse == 0.0);
    CHECK(same.linf == 0.0);
    CHECK(same.cosine == doctest::Approx(1.0));
    const Fidelity f = fidelity(a, b);
    CHECK(f.mse == 0.25);
    CHECK(f.linf == 1.0);
    CHECK(f.cosine == doctest::Approx((1 + 4 + 9 + 20) / (std::sqrt(30.0) * std::sqrt(39.0))));
    CHECK_THROWS_AS(fidelity(a, Eigen::MatrixXd::Zero(3, 2)), InvalidArgument);
}

TEST_CASE("on-demand conversion fits the activation on the calibrated interval") {
    RefTransformerConfig rc = small_config(4, Activation::Tanh);
    rc.n_layers = 1;
    const FloatTransformer m = build_reference(rc);
    std::vector<Eigen::MatrixXd> batches{random_input(rc, 1), random_input(rc, 2)};
    const CalibrationProfile p = calibrate(m, batches);
    ConvertConfig cc;
    cc.steps = 8;
    cc.n_other = 2;
    cc.n_act = 2;
    const SpikingTransformer snn = convert(m, p, cc);
    REQUIRE(snn.ops().tanh);
    const Range r = activation_interval(m, p, cc.pad);
    CHECK(snn.ops().tanh->target.a == r.lo);
    CHECK(snn.ops().tanh->target.b == r.hi);
    CHECK_FALSE(snn.ops().gelu);
}
