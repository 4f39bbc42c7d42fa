#include <doctest.h>

#include <cmath>

#include "mbe/metrics.hpp"

using namespace mbe;

namespace {

constexpr double kRel = 1e-12;

}  // namespace

TEST_CASE("MBE energy for one GELU") {
    // 16 steps, 38.22% firing, 4 bases, one element, 0.9 pJ per add
    const double e = energy_mbe(16, 0.3822, 4, 1, 1);
    CHECK(e == doctest::Approx(16 * 0.3822 * 4 * 0.9).epsilon(kRel));
    CHECK(e == doctest::Approx(22.0147).epsilon(1e-5));
    CHECK(energy_mbe(16, 0.3822, 4, 3, 2) == doctest::Approx(6 * e).epsilon(kRel));
    CHECK_THROWS_AS(energy_mbe(16, 1.5, 4, 1, 1), InvalidArgument);
    CHECK_THROWS_AS(energy_mbe(-1, 0.5, 4, 1, 1), InvalidArgument);
}

TEST_CASE("GELU energy against FLOP and MAC costs") {
    const ActivationEnergy a = activation_energy(16, 0.3822, 4, kGeluFlops, kGeluMacs);
    CHECK(a.flop_cost == doctest::Approx(70 * 4.6).epsilon(kRel));
    CHECK(a.mac_cost == doctest::Approx(35 * 4.6).epsilon(kRel));
    CHECK(a.ratio_flops == doctest::Approx(0.0684).epsilon(1e-3));
    CHECK(a.ratio_macs == doctest::Approx(0.1367).epsilon(1e-3));
    CHECK(a.ratio_macs == doctest::Approx(2 * a.ratio_flops).epsilon(kRel));
    CHECK_THROWS_AS(activation_energy(16, 0.5, 4, 0.0, 35.0), InvalidArgument);
}

TEST_CASE("float multiply energy and ratio") {
    CHECK(energy_fp_mult(8, 0.5, 0.25, 10.0) == doctest::Approx(64 * 0.125 * 10 * 0.9).epsilon(kRel));
    CHECK(energy_ratio(460.0, 90.0) == doctest::Approx(460 * 0.9 / (90 * 4.6)).epsilon(kRel));
    EnergyConstants c;
    c.e_ac = 1.0;
    c.e_mac = 2.0;
    CHECK(energy_ratio(4.0, 1.0, c) == 2.0);
    CHECK_THROWS_AS(energy_ratio(1.0, 0.0), InvalidArgument);
    c.e_ac = 0.0;
    CHECK_THROWS_AS(energy_ratio(1.0, 1.0, c), InvalidArgument);
}

TEST_CASE("bound terms") {
    BoundInputs in;
    in.steps = 16;
    in.bases = 4;
    in.samples = 10000;
    in.lipschitz = 1.2;
    in.y_max = 10.0;
    in.l1 = 3.0;
    in.alpha_abs = 2.0;
    in.tau_max = 5.0;
    in.dt = 0.5;
    const BoundTerms fs = bound_fs(in);
    CHECK(fs.empirical == doctest::Approx(std::sqrt(16 * std::log(16.0) * std::log(1e4) / 1e4)).epsilon(kRel));
    CHECK(fs.parametric == doctest::Approx(12.0 / 16).epsilon(kRel));
    CHECK(fs.quantization == doctest::Approx(3.0 / 16).epsilon(kRel));
    const BoundTerms mbe = bound_mbe(in);
    CHECK(mbe.empirical == doctest::Approx(std::sqrt(4 * std::log(4.0) * std::log(1e4) / 1e4)).epsilon(kRel));
    CHECK(mbe.parametric == doctest::Approx(12.0 / 64).epsilon(kRel));
    CHECK(mbe.quantization == doctest::Approx(3.0 * 2 * 5 / (16 * 0.5)).epsilon(kRel));
    in.dt = 0.0;
    CHECK_THROWS_AS(bound_mbe(in), InvalidArgument);
}

TEST_CASE("bound terms shrink in the right directions") {
    BoundInputs in;
    for (int t = 2; t < 64; ++t) {
        BoundInputs a = in, b = in;
        a.steps = t;
        b.steps = t + 1;
        CHECK(bound_mbe(b).parametric < bound_mbe(a).parametric);
        CHECK(bound_mbe(b).quantization < bound_mbe(a).quantization);
        CHECK(bound_fs(b).quantization < bound_fs(a).quantization);
    }
    for (int n = 1; n < 32; ++n) {
        BoundInputs a = in, b = in;
        a.bases = n;
        b.bases = n + 1;
        CHECK(bound_mbe(b).parametric < bound_mbe(a).parametric);
        CHECK(bound_mbe(b).empirical > bound_mbe(a).empirical);
    }
    for (int m = 100; m < 100000; m *= 3) {
        BoundInputs a = in, b = in;
        a.samples = m;
        b.samples = 3 * m;
        CHECK(bound_mbe(b).empirical < bound_mbe(a).empirical);
        CHECK(bound_fs(b).empirical < bound_fs(a).empirical);
    }
}

TEST_CASE("firing rate") {
    SiteStats s;
    CHECK_THROWS_AS(firing_rate(s), InvalidArgument);
    s.elements = 2;
    s.slots = 128;
    s.spikes = 32;
    CHECK(firing_rate(s) == 0.25);
}

TEST_CASE("site FLOPs for a tiny block") {
    RefTransformerConfig c;
    c.d_model = 4;
    c.n_heads = 2;
    c.d_ff = 8;
    c.n_layers = 1;
    const auto f = site_flops(c, 3);
    // hand-counted with 3 tokens, head width 2, 70 per transcendental
    CHECK(f.at("L0.ln1") == 303.0);
    CHECK(f.at("L0.ln2") == 303.0);
    CHECK(f.at("L0.scores") == 90.0);
    CHECK(f.at("L0.softmax") == 1752.0);
    CHECK(f.at("L0.values") == 72.0);
    CHECK(f.at("L0.act") == 1680.0);
    CHECK(f.size() == 6);
    CHECK_THROWS_AS(site_flops(c, 0), InvalidArgument);
}

TEST_CASE("block energy sums sites") {
    RefTransformerConfig c;
    c.d_model = 4;
    c.n_heads = 2;
    c.d_ff = 8;
    c.n_layers = 1;
    SiteStatsMap m;
    m["a"] = SiteStats{10, 100, 40, 5, 0};
    m["b"] = SiteStats{3, 30, 7, 2, 1};
    const EnergyReport r = block_energy(c, 3, m);
    CHECK(r.spikes == 13);
    CHECK(r.sops == 47);
    CHECK(r.flops == 303.0 * 2 + 90 + 1752 + 72 + 1680);
    CHECK(r.snn_pj == doctest::Approx(47 * 0.9).epsilon(kRel));
    CHECK(r.ann_pj == doctest::Approx(r.flops * 4.6).epsilon(kRel));
    CHECK(r.ratio == doctest::Approx(r.snn_pj / r.ann_pj).epsilon(kRel));
}
