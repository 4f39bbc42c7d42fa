#pragma once

// Float reference Transformer blocks and their spiking counterpart.
//
// Block (pre-LayerNorm):
//   h   = x + Attn(LN1(x))
//   out = h + W2 act(LN2(h) W1 + b1) + b2
// with x laid out as (seq_len x d_model), one token per row.
//
// Sites are named "L<layer>.<op>" and calibration roles "L<layer>.<op>.<role>":
//   ln1, ln2   deviation, inv_std
//   scores     q, k          (Q K^T / sqrt(d_head), per head)
//   softmax    shifted       (row minus row max)
//   values     p, v          (P V, per head)
//   act        input

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "mbe/spike_ops.hpp"
#include "mbe/stats.hpp"

namespace mbe {

enum class Activation { Gelu, Tanh };

std::string_view activation_name(Activation a);
Activation parse_activation(std::string_view s);
TargetId activation_target(Activation a);

struct RefTransformerConfig {
    int d_model = 32;
    int n_heads = 2;
    int d_ff = 64;
    int n_layers = 2;
    int seq_len = 8;
    std::uint64_t seed = 0;
    Activation activation = Activation::Gelu;
    double ln_eps = 1e-5;

    int d_head() const { return d_model / n_heads; }
    void validate() const;  // throws InvalidArgument
};

struct LayerWeights {
    Eigen::MatrixXd wq, wk, wv, wo;  // d_model x d_model, applied as x W
    Eigen::VectorXd bq, bk, bv, bo;
    Eigen::MatrixXd w1;  // d_model x d_ff
    Eigen::VectorXd b1;
    Eigen::MatrixXd w2;  // d_ff x d_model
    Eigen::VectorXd b2;
    Eigen::VectorXd ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;

    bool bit_identical(const LayerWeights& o) const;
};

// Receives every value that enters a nonlinear or activation-activation site.
using SiteHook = std::function<void(const std::string& role, const Eigen::MatrixXd& values)>;

class FloatTransformer {
public:
    FloatTransformer() = default;
    FloatTransformer(RefTransformerConfig config, std::vector<LayerWeights> layers);

    const RefTransformerConfig& config() const { return config_; }
    const std::vector<LayerWeights>& layers() const { return layers_; }

    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, const SiteHook& hook = {}) const;
    // Input followed by the output of every layer.
    std::vector<Eigen::MatrixXd> forward_trace(const Eigen::MatrixXd& x,
                                               const SiteHook& hook = {}) const;

    bool weights_identical(const FloatTransformer& o) const;

private:
    RefTransformerConfig config_;
    std::vector<LayerWeights> layers_;
};

// Seeded random weights: projections ~ N(0, 1/fan_in), biases ~ N(0, 0.02^2),
// gamma ~ 1 + N(0, 0.1^2), beta ~ N(0, 0.05^2).
FloatTransformer build_reference(const RefTransformerConfig& config);

// (seq_len x d_model) input with N(0, 1) entries.
Eigen::MatrixXd random_input(const RefTransformerConfig& config, std::uint64_t seed);

inline constexpr int kHistogramBins = 32;

struct SiteRecord {
    double min = 0.0;
    double max = 0.0;
    std::int64_t count = 0;
    std::vector<std::int64_t> histogram;  // kHistogramBins equal bins over [min, max]

    Range range() const { return {min, max}; }
    bool operator==(const SiteRecord&) const = default;
};

struct CalibrationProfile {
    std::map<std::string, SiteRecord> sites;

    const SiteRecord& at(const std::string& role) const;  // throws ConversionError
    bool operator==(const CalibrationProfile&) const = default;
};

CalibrationProfile calibrate(const FloatTransformer& model,
                             const std::vector<Eigen::MatrixXd>& batches);

// Every calibration role the model's forward reports.
std::vector<std::string> site_roles(const RefTransformerConfig& config);

struct ConvertConfig {
    int steps = 16;
    int n_act = 4;
    int n_other = 8;
    std::uint64_t seed = 0;  // op-set fitting seed when fitting on demand
    double pad = 0.05;       // calibrated ranges widen by pad * width per side
};

struct SpikingLayer {
    LayerNormSite ln1;
    LayerNormSite ln2;
    MultiplySite scores;  // D pre-scaled by 1/sqrt(d_head)
    SoftmaxSite softmax;
    MultiplySite values;
};

enum class SiteKind { LayerNorm, Softmax, SpikeMatmul, Activation };

struct SiteCensus {
    std::map<SiteKind, int> replaced;
    int total() const;
};

class SpikingTransformer {
public:
    SpikingTransformer() = default;
    SpikingTransformer(FloatTransformer model, SpikingOpSet ops, std::vector<SpikingLayer> layers,
                       ConvertConfig config);

    const FloatTransformer& model() const { return model_; }
    const SpikingOpSet& ops() const { return ops_; }
    const std::vector<SpikingLayer>& layers() const { return layers_; }
    const ConvertConfig& config() const { return config_; }
    SiteCensus census() const;

private:
    FloatTransformer model_;
    SpikingOpSet ops_;
    std::vector<SpikingLayer> layers_;
    ConvertConfig config_;
};

// ops must hold exp2/inv/invsqrt with n_other bases and the model's
// activation with n_act bases, all at config.steps.
SpikingTransformer convert(const FloatTransformer& model, const CalibrationProfile& profile,
                           const SpikingOpSet& ops, const ConvertConfig& config);
// Union of the padded calibrated activation-input ranges over all layers,
// clipped to the activation's default domain. Activations are fitted here.
Range activation_interval(const FloatTransformer& model, const CalibrationProfile& profile,
                          double pad);

// Fits the op set first, the activation on activation_interval.
SpikingTransformer convert(const FloatTransformer& model, const CalibrationProfile& profile,
                           const ConvertConfig& config);

// Site name ("L0.softmax.exp2", ...) to spike statistics of one forward.
using SiteStatsMap = std::map<std::string, SiteStats>;

Eigen::MatrixXd forward_spiking(const SpikingTransformer& snn, const Eigen::MatrixXd& x,
                                SiteStatsMap* stats = nullptr);
std::vector<Eigen::MatrixXd> forward_spiking_trace(const SpikingTransformer& snn,
                                                   const Eigen::MatrixXd& x,
                                                   SiteStatsMap* stats = nullptr);

struct Fidelity {
    double mse = 0.0;
    double linf = 0.0;
    double cosine = 1.0;
};

Fidelity fidelity(const Eigen::MatrixXd& reference, const Eigen::MatrixXd& output);

struct SiteReport {
    SiteStats stats;
    double firing_rate = 0.0;  // spikes / slots
};

struct FidelityReport {
    std::vector<Fidelity> layers;  // one per layer output
    Fidelity final;
    std::map<std::string, SiteReport> sites;
};

// Traces are forward_trace / forward_spiking_trace outputs.
FidelityReport compare(const std::vector<Eigen::MatrixXd>& reference,
                       const std::vector<Eigen::MatrixXd>& spiking, const SiteStatsMap& stats);

}  // namespace mbe
