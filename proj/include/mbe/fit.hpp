#pragma once

// Fitting MBE and FS neurons to scalar targets on an interval.
//
// fit_mbe runs in four stages on a fixed uniform sample:
//   1. a seeded pool of candidate decay-rate triples is simulated and N bases
//      are chosen greedily (orthogonal matching pursuit on the basis outputs);
//   2. surrogate-gradient descent on the log time constants with an exponential
//      learning-rate schedule, readout weights re-solved by least squares at
//      every epoch;
//   3. a shrinking random local search over the log time constants;
//   4. a final least-squares readout.
// The best iterate seen is kept at every stage.

#include <cstdint>
#include <string>

#include <Eigen/Core>

#include "mbe/neuron.hpp"
#include "mbe/target.hpp"

namespace mbe {

enum class InputMode {
    Auto,      // try the candidate affine maps below and keep the best fit
    Identity,  // u[0] = x
    Shifted,   // u[0] = alpha * (x - s) / (b - s), s = a - (b - a) / 16
    Scaled,    // u[0] = alpha * x / b (requires b > 0)
};

std::string_view input_mode_name(InputMode m);
InputMode parse_input_mode(std::string_view s);

struct FitConfig {
    int samples = 10000;
    int epochs = 200;
    double lr = 0.01;
    double lr_decay = 0.99;
    std::uint64_t seed = 0;
    int bases = 4;
    int steps = 16;
    double surrogate_width = 1.0;
    int pool = 1024;
    int rounds = 30;
    int proposals = 8;
    InputMode input = InputMode::Auto;

    void validate() const;
};

struct Dataset {
    Eigen::VectorXd x;
    Eigen::VectorXd y;

    Eigen::Index size() const { return x.size(); }
};

// Uniform sample on [a, b]; deterministic for a given seed.
Dataset sample_target(const TargetFn& target, int samples, std::uint64_t seed);

// The fitting set: sample_target with the first two points replaced by the
// endpoints a and b, so the fit also holds where callers clamp to.
Dataset training_sample(const TargetFn& target, int samples, std::uint64_t seed);

struct FittedApproximator {
    static constexpr int kFormatVersion = 1;

    TargetFn target;
    MbeNeuron<double> neuron;
    double mse = 0.0;
    FitConfig config;
    int format_version = kFormatVersion;

    double operator()(double x) const { return mbe_output(neuron, x); }
    // Clamp to the fitted interval first; returns true when x was outside.
    bool clamp(double& x) const;
};

FittedApproximator fit_mbe(const TargetFn& target, const FitConfig& config);

// Ablation: every schedule entry (3 * N * T values) is a free parameter and
// starts from the constant, non-decaying schedule alpha.
FittedApproximator fit_mbe_no_decay(const TargetFn& target, const FitConfig& config);

enum class FsInit { Binary, Random };

struct FittedFs {
    TargetFn target;
    FsParams<double> params;
    double mse = 0.0;
    FsInit init = FsInit::Binary;
    FitConfig config;
};

// Uses config.steps, config.seed and the optimizer settings; bases is ignored.
FittedFs fit_fs(const TargetFn& target, FsInit init, const FitConfig& config);

double evaluate_mse(const MbeNeuron<double>& neuron, const Dataset& data);
double evaluate_mse(const FsParams<double>& params, const Dataset& data);

// max |f| on [a, b], estimated on a dense grid including both endpoints.
double target_max_abs(const TargetFn& target);

}  // namespace mbe
