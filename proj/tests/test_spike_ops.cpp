#include <doctest.h>

#include <cmath>
#include <random>

#include "mbe/spike_ops.hpp"

using namespace mbe;

namespace {

constexpr double kOpRelTol = 1e-2;
// worst point of the N=8 fit on [0.5, 2] is ~1.15%; its RMS error is ~0.35%
constexpr double kInvSqrtRelTol = 2e-2;

const SpikingOpSet& ops() {
    static const SpikingOpSet set = fit_opset(OpSetConfig{}, false, false);
    return set;
}

}  // namespace

TEST_CASE("frexp split") {
    std::mt19937_64 g(1);
    std::uniform_real_distribution<double> e(-30.0, 30.0);
    for (int i = 0; i < 2000; ++i) {
        const double x = std::exp(e(g));
        const FrexpParts p = frexp_decompose(x);
        CHECK(p.mantissa >= 0.5);
        CHECK(p.mantissa < 1.0);
        CHECK(std::ldexp(p.mantissa, p.exponent) == x);
    }
    CHECK_THROWS_AS(frexp_decompose(0.0), InvalidArgument);
    CHECK_THROWS_AS(frexp_decompose(-1.0), InvalidArgument);
}

TEST_CASE("op-set fit settings") {
    OpSetConfig c;
    c.n_act = 3;
    c.n_other = 7;
    c.steps = 12;
    CHECK(opset_fit_config(TargetId::Gelu, c).bases == 3);
    CHECK(opset_fit_config(TargetId::Gelu, c).input == InputMode::Auto);
    CHECK(opset_fit_config(TargetId::Inv, c).bases == 7);
    CHECK(opset_fit_config(TargetId::Inv, c).input == InputMode::Shifted);
    CHECK(opset_fit_config(TargetId::Exp2Frac, c).steps == 12);
    CHECK(opset_target(TargetId::Gelu).a == kGeluDomain.lo);
    c.act_domain = Range{-3.0, 4.0};
    CHECK(opset_target(TargetId::Gelu, c).a == -3.0);
    CHECK(opset_target(TargetId::Tanh, c).b == 4.0);
    CHECK(opset_target(TargetId::Inv, c).a == kInvDomain.lo);  // only activations move
    CHECK_THROWS_AS(opset_target(TargetId::Relu), InvalidArgument);
}

TEST_CASE("empty op set reports what is missing") {
    SpikingOpSet empty;
    CHECK_THROWS_AS(empty.require(TargetId::Inv), NotFitted);
    CHECK_THROWS_AS(empty.slot(TargetId::Silu), InvalidArgument);
    CHECK_THROWS_AS(spiking_exp(empty, -1.0), NotFitted);
}

TEST_CASE("exp through floor and fractional 2^x") {
    const auto& op = ops().require(TargetId::Exp2Frac);
    std::mt19937_64 g(2);
    std::uniform_real_distribution<double> u(-20.0, 0.0);
    for (int i = 0; i < 3000; ++i) {
        const double x = u(g);
        const double y = spiking_exp(ops(), x);
        CHECK(std::abs(y - std::exp(x)) <= kOpRelTol * std::exp(x));
        const double z = x * M_LOG2E;
        const double k = std::floor(z);
        CHECK(y == std::ldexp(op(z - k), static_cast<int>(k)));
    }
    CHECK(spiking_exp(ops(), 0.0) == doctest::Approx(1.0).epsilon(kOpRelTol));
}

TEST_CASE("reciprocal and inverse square root scale exactly with powers of two") {
    std::mt19937_64 g(3);
    std::uniform_real_distribution<double> e(-8.0, 8.0);
    for (int i = 0; i < 2000; ++i) {
        const double x = std::exp(e(g));
        const double r = spiking_reciprocal(ops(), x);
        CHECK(std::abs(r * x - 1.0) <= kOpRelTol);
        CHECK(spiking_reciprocal(ops(), 2.0 * x) == r / 2.0);
        const double s = spiking_inv_sqrt(ops(), x);
        CHECK(std::abs(s * std::sqrt(x) - 1.0) <= kInvSqrtRelTol);
        CHECK(spiking_inv_sqrt(ops(), 4.0 * x) == s / 2.0);
    }
}

TEST_CASE("spiking_eval accounts slots and saturation") {
    const auto& inv = ops().require(TargetId::Inv);
    SiteStats st;
    spiking_eval(inv, 0.75, &st);
    CHECK(st.slots == std::int64_t(inv.neuron.basis_count()) * inv.neuron.steps());
    CHECK(st.elements == 1);
    CHECK(st.saturated == 0);
    CHECK(st.sops == st.spikes);
    spiking_eval(inv, 3.0, &st);
    CHECK(st.saturated == 1);
    CHECK(spiking_eval(inv, 3.0) == inv(1.0));
}

TEST_CASE("float softmax and layernorm references") {
    Eigen::VectorXd x(4);
    x << 1.0, 2.0, 3.0, 4.0;
    const Eigen::VectorXd s = softmax(x);
    CHECK(s.sum() == doctest::Approx(1.0));
    CHECK(s[3] / s[2] == doctest::Approx(std::exp(1.0)));
    const Eigen::VectorXd ln = layernorm(x, Eigen::VectorXd::Ones(4), Eigen::VectorXd::Zero(4), 0.0);
    CHECK(ln.mean() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(ln.squaredNorm() / 4 == doctest::Approx(1.0));
}

TEST_CASE("spiking softmax stays a distribution") {
    std::mt19937_64 g(4);
    std::uniform_real_distribution<double> u(-4.0, 4.0);
    const SoftmaxSite site = make_softmax_site(-8.4, 16);
    for (int i = 0; i < 300; ++i) {
        Eigen::VectorXd x(8);
        for (auto& v : x) v = u(g);
        SoftmaxStats st;
        const Eigen::VectorXd y = spiking_softmax(ops(), site, x, &st);
        const Eigen::VectorXd r = softmax(x);
        CHECK((y - r).cwiseAbs().maxCoeff() <= 0.01);
        CHECK(std::abs(y.sum() - 1.0) <= 0.02);
        CHECK(y.minCoeff() >= -0.06);  // normalize encoder floor is -pad
        CHECK(st.exp2.elements == 8);
        CHECK(st.inv.elements == 1);
        CHECK(st.normalize.elements == 8);
    }
    CHECK_THROWS_AS(make_softmax_site(0.0, 16), InvalidArgument);
    CHECK_THROWS_AS(spiking_softmax(ops(), site, Eigen::VectorXd()), InvalidArgument);
}

TEST_CASE("softmax clips far-below-max inputs at the floor") {
    const SoftmaxSite site = make_softmax_site(-5.0, 16);
    Eigen::VectorXd x(3);
    x << 0.0, -30.0, -1.0;
    SoftmaxStats st;
    const Eigen::VectorXd y = spiking_softmax(ops(), site, x, &st);
    CHECK(st.exp2.saturated == 1);
    CHECK(y[1] < 0.02);
}

TEST_CASE("spiking layernorm tracks the float layernorm") {
    std::mt19937_64 g(5);
    std::normal_distribution<double> n(0.0, 1.0);
    const int w = 16;
    std::vector<Eigen::VectorXd> xs;
    Range dev{0.0, 0.0};
    Range inv{INFINITY, 0.0};
    for (int i = 0; i < 200; ++i) {
        Eigen::VectorXd x(w);
        for (auto& v : x) v = 0.3 + 0.8 * n(g);
        const Eigen::VectorXd d = x.array() - x.mean();
        dev = {std::min(dev.lo, d.minCoeff()), std::max(dev.hi, d.maxCoeff())};
        const double is = 1.0 / std::sqrt(d.squaredNorm() / w + 1e-5);
        inv = {std::min(inv.lo, is), std::max(inv.hi, is)};
        xs.push_back(x);
    }
    const LayerNormSite site = make_layernorm_site(dev.padded(0.05), inv.padded(0.05), w, 16);
    Eigen::VectorXd gamma(w), beta(w);
    for (int i = 0; i < w; ++i) {
        gamma[i] = 1.0 + 0.1 * n(g);
        beta[i] = 0.05 * n(g);
    }
    for (const auto& x : xs) {
        LayerNormStats st;
        const Eigen::VectorXd y = spiking_layernorm(ops(), site, x, gamma, beta, &st);
        const Eigen::VectorXd r = layernorm(x, gamma, beta);
        CHECK((y - r).cwiseAbs().maxCoeff() <= 0.02 * r.cwiseAbs().maxCoeff());
        CHECK(st.variance.elements == w);
        CHECK(st.invsqrt.elements == 1);
        CHECK(st.normalize.elements == w);
    }
    CHECK_THROWS_AS(spiking_layernorm(ops(), site, Eigen::VectorXd::Ones(3), gamma, beta), InvalidArgument);
    CHECK_THROWS_AS(make_layernorm_site(dev, inv, 0, 16), InvalidArgument);
}
