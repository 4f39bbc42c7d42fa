#pragma once

// Desk-scale experiment suites with the published's tabulated values beside
// them. Each table row carries its own pass rule; informational rows have
// an empty rule and always pass.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <future>
#include <string>
#include <thread>
#include <vector>

#include "mbe/converter.hpp"
#include "mbe/fit.hpp"
#include "mbe/store.hpp"

namespace mbe {

struct ReproRow {
    std::string label;
    double measured = 0.0;
    double published = 0.0;  // NaN when the published has no value
    std::string rule;    // e.g. "<= 1e-3", "N=1 > N=4 > N=8"; empty for info rows
    bool pass = true;
};

struct ReproTable {
    std::string name;
    std::vector<ReproRow> rows;

    bool pass() const;
    Json to_json() const;
    std::string to_text() const;
    std::string to_csv() const;
};

struct ReproOptions {
    std::vector<std::uint64_t> seeds{1, 2, 3};
    int jobs = 0;  // 0: hardware concurrency
};

ReproTable repro_bases(const ReproOptions& opt);
ReproTable repro_silu(const ReproOptions& opt);
ReproTable repro_edi(const ReproOptions& opt);
ReproTable repro_timesteps(const ReproOptions& opt);

ReproTable run_repro(const std::string& table, const ReproOptions& opt);  // throws InvalidArgument

double median(std::vector<double> v);

// Runs f(0..n-1) on up to `jobs` threads; results keep index order, so the
// output does not depend on scheduling.
template <typename F>
auto parallel_map(int n, int jobs, F f) -> std::vector<decltype(f(0))> {
    using R = decltype(f(0));
    if (jobs <= 0) jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    std::vector<R> out;
    out.reserve(static_cast<std::size_t>(n));
    if (jobs == 1) {
        for (int i = 0; i < n; ++i) out.push_back(f(i));
        return out;
    }
    std::vector<std::future<R>> pending;
    int next = 0;
    auto launch = [&] { pending.push_back(std::async(std::launch::async, f, next++)); };
    for (int i = 0; i < std::min(n, jobs); ++i) launch();
    for (int i = 0; i < n; ++i) {
        out.push_back(pending[static_cast<std::size_t>(i)].get());
        if (next < n) launch();
    }
    return out;
}

// The conversion benchmark: one model per seed (d_model 32, 2 heads, 2
// layers, seq 8), 16 calibration batches each, activation fitted once per T
// on the union of the models' calibrated activation intervals.
struct DeskSuite {
    std::vector<FloatTransformer> models;
    std::vector<CalibrationProfile> profiles;
    std::vector<Eigen::MatrixXd> eval_inputs;
    Range act_interval;
};

inline constexpr int kCalibrationBatches = 16;

DeskSuite make_desk_suite(const std::vector<std::uint64_t>& seeds, Activation act = Activation::Gelu);

struct SweepPoint {
    int steps = 0;
    std::vector<FidelityReport> reports;  // one per model
    std::vector<SiteStatsMap> stats;
    bool weights_identical = true;

    double median_cosine() const;
    double median_mse() const;
};

// ops_seed seeds the op-set fit shared by every model at one T.
std::vector<SweepPoint> conversion_sweep(const DeskSuite& suite, const std::vector<int>& steps,
                                         int n_act, int n_other, std::uint64_t ops_seed, int jobs);

}  // namespace mbe
