#pragma once

// Few-spikes (FS) and multi-basis exponential-decay (MBE) neuron dynamics.
//
// Both neurons integrate a single real input into the membrane at t = 0 and
// then run T discrete steps. At each step a basis fires when its membrane
// reaches the step threshold, the membrane is lowered by the step reset and
// the step intensity is added to the basis output. The MBE neuron runs N
// such bases in parallel, each with schedules alpha * exp(-t * dt / tau), and
// reads out a weighted sum of the basis outputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mbe/error.hpp"

namespace mbe {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// N x T binary spike raster (rows are bases, columns timesteps).
using SpikeRaster = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
Vector<Scalar> decay_schedule(Scalar alpha, Scalar tau, Scalar dt, int steps) {
    if (!(tau > Scalar(0)) || !(dt > Scalar(0)) || steps < 1) {
        throw InvalidArgument("decay_schedule: tau, dt and T must be positive");
    }
    Vector<Scalar> out(steps);
    out[0] = alpha;
    for (int t = 1; t < steps; ++t) {
        out[t] = alpha * std::exp(-Scalar(t) * dt / tau);
    }
    return out;
}

// Affine map applied to the input before it is loaded into the membrane:
// u[0] = gain * (x - shift). The identity map gives the plain u[0] = x.
template <typename Scalar>
struct InputMap {
    Scalar shift = Scalar(0);
    Scalar gain = Scalar(1);

    Scalar operator()(Scalar x) const { return gain * (x - shift); }
    bool is_identity() const { return shift == Scalar(0) && gain == Scalar(1); }
};

template <typename Scalar>
struct FsParams {
    Vector<Scalar> d;    // spike intensity
    Vector<Scalar> r;    // reset magnitude
    Vector<Scalar> vth;  // firing threshold
    InputMap<Scalar> input{};

    int steps() const { return static_cast<int>(d.size()); }

    void validate() const {
        if (d.size() < 1 || r.size() != d.size() || vth.size() != d.size()) {
            throw InvalidArgument("FsParams: d, r and vth must share a length T >= 1");
        }
        if (!d.allFinite() || !r.allFinite() || !vth.allFinite()) {
            throw InvalidArgument("FsParams: non-finite schedule entry");
        }
    }
};

// d = r = vth = scale * 2^-(t+1): the greedy binary expansion of x in
// [0, scale) with step scale * 2^-T.
inline FsParams<double> binary_fs_params(int steps, double scale) {
    if (steps < 1) throw InvalidArgument("binary_fs_params: T must be >= 1");
    if (!(scale > 0.0) || !std::isfinite(scale)) {
        throw InvalidArgument("binary_fs_params: scale must be positive");
    }
    FsParams<double> p;
    p.d.resize(steps);
    for (int t = 0; t < steps; ++t) p.d[t] = std::ldexp(scale, -(t + 1));
    p.r = p.d;
    p.vth = p.d;
    return p;
}

template <typename Scalar>
struct MbeBasis {
    Scalar tau_d;
    Scalar tau_r;
    Scalar tau_vth;
    Scalar dt;

    bool valid() const {
        return tau_d > Scalar(0) && tau_r > Scalar(0) && tau_vth > Scalar(0) && dt > Scalar(0) &&
               std::isfinite(tau_d) && std::isfinite(tau_r) && std::isfinite(tau_vth) &&
               std::isfinite(dt);
    }
    Scalar tau_max() const { return std::max({tau_d, tau_r, tau_vth}); }
};

template <typename Scalar>
class MbeNeuron {
public:
    MbeNeuron() = default;

    // Schedules generated by exponential decay from a shared scale alpha.
    static MbeNeuron from_decay(Scalar alpha, std::vector<MbeBasis<Scalar>> bases,
                                Vector<Scalar> weights, int steps,
                                InputMap<Scalar> input = {}) {
        if (bases.empty()) throw InvalidArgument("MbeNeuron: need at least one basis");
        if (static_cast<Eigen::Index>(bases.size()) != weights.size()) {
            throw InvalidArgument("MbeNeuron: one readout weight per basis required");
        }
        if (steps < 1) throw InvalidArgument("MbeNeuron: T must be >= 1");
        if (!std::isfinite(alpha)) throw InvalidArgument("MbeNeuron: alpha must be finite");
        const auto n = static_cast<Eigen::Index>(bases.size());
        MbeNeuron out;
        out.alpha_ = alpha;
        out.d_.resize(n, steps);
        out.r_.resize(n, steps);
        out.vth_.resize(n, steps);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& b = bases[static_cast<std::size_t>(i)];
            if (!b.valid()) throw InvalidArgument("MbeNeuron: time constants and dt must be positive");
            out.d_.row(i) = decay_schedule(alpha, b.tau_d, b.dt, steps).transpose();
            out.r_.row(i) = decay_schedule(alpha, b.tau_r, b.dt, steps).transpose();
            out.vth_.row(i) = decay_schedule(alpha, b.tau_vth, b.dt, steps).transpose();
        }
        out.bases_ = std::move(bases);
        out.w_ = std::move(weights);
        out.input_ = input;
        out.check_weights();
        return out;
    }

    // Free per-timestep schedules (N x T each), used by the no-decay ablation
    // and by hand-built neurons.
    static MbeNeuron from_schedules(Matrix<Scalar> d, Matrix<Scalar> r, Matrix<Scalar> vth,
                                    Vector<Scalar> weights, InputMap<Scalar> input = {},
                                    Scalar alpha = Scalar(0)) {
        if (d.rows() < 1 || d.cols() < 1) throw InvalidArgument("MbeNeuron: empty schedule");
        if (r.rows() != d.rows() || r.cols() != d.cols() || vth.rows() != d.rows() ||
            vth.cols() != d.cols()) {
            throw InvalidArgument("MbeNeuron: schedule shapes differ");
        }
        if (weights.size() != d.rows()) {
            throw InvalidArgument("MbeNeuron: one readout weight per basis required");
        }
        if (!d.allFinite() || !r.allFinite() || !vth.allFinite()) {
            throw InvalidArgument("MbeNeuron: non-finite schedule entry");
        }
        MbeNeuron out;
        out.alpha_ = alpha;
        out.d_ = std::move(d);
        out.r_ = std::move(r);
        out.vth_ = std::move(vth);
        out.w_ = std::move(weights);
        out.input_ = input;
        out.check_weights();
        return out;
    }

    Scalar alpha() const { return alpha_; }
    bool has_decay() const { return !bases_.empty(); }
    const std::vector<MbeBasis<Scalar>>& bases() const { return bases_; }
    const Vector<Scalar>& weights() const { return w_; }
    const Matrix<Scalar>& intensity() const { return d_; }
    const Matrix<Scalar>& reset() const { return r_; }
    const Matrix<Scalar>& threshold() const { return vth_; }
    const InputMap<Scalar>& input_map() const { return input_; }
    int basis_count() const { return static_cast<int>(d_.rows()); }
    int steps() const { return static_cast<int>(d_.cols()); }

    Scalar min_threshold() const { return vth_.minCoeff(); }

private:
    void check_weights() const {
        if (!w_.allFinite()) throw InvalidArgument("MbeNeuron: readout weights must be finite");
    }

    Scalar alpha_ = Scalar(0);
    std::vector<MbeBasis<Scalar>> bases_;
    Matrix<Scalar> d_, r_, vth_;
    Vector<Scalar> w_;
    InputMap<Scalar> input_{};
};

template <typename Scalar>
struct SpikeRecord {
    SpikeRaster spikes;
    Scalar approx = Scalar(0);
    std::optional<Matrix<Scalar>> membrane;  // N x T, value before the step's spike

    long spike_count() const { return spikes.template cast<long>().sum(); }
};

namespace detail {

// One basis: returns the basis output o(T) and writes the spike row.
template <typename Scalar, typename RowD, typename RowR, typename RowV, typename SpikeRow,
          typename TraceRow>
Scalar run_basis(Scalar u, const RowD& d, const RowR& r, const RowV& vth, SpikeRow&& spikes,
                 TraceRow* trace) {
    Scalar o = Scalar(0);
    const Eigen::Index steps = d.size();
    for (Eigen::Index t = 0; t < steps; ++t) {
        if (trace) (*trace)(t) = u;
        const bool fire = u >= vth(t);
        spikes(t) = fire ? 1 : 0;
        if (fire) {
            u -= r(t);
            o += d(t);
        }
    }
    return o;
}

}  // namespace detail

template <typename Scalar>
SpikeRecord<Scalar> fs_simulate(const FsParams<Scalar>& params, Scalar x,
                                bool keep_trace = false) {
    const int steps = params.steps();
    SpikeRecord<Scalar> rec;
    rec.spikes.resize(1, steps);
    Matrix<Scalar> trace;
    if (keep_trace) trace.resize(1, steps);
    auto spike_row = rec.spikes.row(0);
    auto trace_row = trace.row(0);
    rec.approx = detail::run_basis(params.input(x), params.d.transpose(), params.r.transpose(),
                                   params.vth.transpose(), spike_row,
                                   keep_trace ? &trace_row : nullptr);
    if (keep_trace) rec.membrane = std::move(trace);
    return rec;
}

template <typename Scalar>
SpikeRecord<Scalar> mbe_simulate(const MbeNeuron<Scalar>& neuron, Scalar x,
                                 bool keep_trace = false) {
    const int n = neuron.basis_count();
    const int steps = neuron.steps();
    SpikeRecord<Scalar> rec;
    rec.spikes.resize(n, steps);
    Matrix<Scalar> trace;
    if (keep_trace) trace.resize(n, steps);
    const Scalar u0 = neuron.input_map()(x);
    Scalar approx = Scalar(0);
    for (int i = 0; i < n; ++i) {
        auto spike_row = rec.spikes.row(i);
        auto trace_row = trace.row(i);
        const Scalar o = detail::run_basis(u0, neuron.intensity().row(i), neuron.reset().row(i),
                                           neuron.threshold().row(i), spike_row,
                                           keep_trace ? &trace_row : nullptr);
        approx += neuron.weights()[i] * o;
    }
    rec.approx = approx;
    if (keep_trace) rec.membrane = std::move(trace);
    return rec;
}

// Readout only. Same arithmetic order as mbe_simulate, so results are
// bit-identical; optionally reports the number of emitted spikes.
template <typename Scalar>
Scalar mbe_output(const MbeNeuron<Scalar>& neuron, Scalar x, long* spikes = nullptr) {
    const int n = neuron.basis_count();
    const int steps = neuron.steps();
    const Scalar u0 = neuron.input_map()(x);
    Scalar approx = Scalar(0);
    long count = 0;
    for (int i = 0; i < n; ++i) {
        Scalar u = u0;
        Scalar o = Scalar(0);
        for (int t = 0; t < steps; ++t) {
            if (u >= neuron.threshold()(i, t)) {
                u -= neuron.reset()(i, t);
                o += neuron.intensity()(i, t);
                ++count;
            }
        }
        approx += neuron.weights()[i] * o;
    }
    if (spikes) *spikes += count;
    return approx;
}

template <typename Scalar>
Scalar fs_output(const FsParams<Scalar>& params, Scalar x, long* spikes = nullptr) {
    Scalar u = params.input(x);
    Scalar o = Scalar(0);
    long count = 0;
    for (int t = 0; t < params.steps(); ++t) {
        if (u >= params.vth[t]) {
            u -= params.r[t];
            o += params.d[t];
            ++count;
        }
    }
    if (spikes) *spikes += count;
    return o;
}

}  // namespace mbe
