#pragma once

// Spike-driven multiplication. A value x in [lo, hi] is written as
// x = lo + m and m is spike-encoded by a fixed binary-geometric neuron.
// The product of two encoded values expands into
//   scale * (lo1 lo2 + lo2 sum d1 s1 + lo1 sum d2 s2 + sum_ij D_ij s1_i s2_j)
// with D = scale * d1 d2^T precomputed, so each product is a sum of constants
// selected by spikes.

#include <cstdint>

#include <Eigen/Core>

#include "mbe/neuron.hpp"
#include "mbe/stats.hpp"

namespace mbe {

using SpikeTrain = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>;

struct Range {
    double lo = 0.0;
    double hi = 1.0;

    double width() const { return hi - lo; }
    bool contains(double x) const { return x >= lo && x <= hi; }
    // Widen by frac * width on each side.
    Range padded(double frac) const;
    friend bool operator==(const Range&, const Range&) = default;
};

class IdentityEncoder {
public:
    IdentityEncoder() = default;
    IdentityEncoder(double lo, double hi, int steps);

    double lo() const { return range_.lo; }
    double hi() const { return range_.hi; }
    const Range& range() const { return range_; }
    int steps() const { return params_.steps(); }
    double step() const { return std::ldexp(range_.width(), -steps()); }
    const Eigen::VectorXd& intensity() const { return params_.d; }
    const FsParams<double>& params() const { return params_; }

    friend bool operator==(const IdentityEncoder& a, const IdentityEncoder& b) {
        return a.range_ == b.range_ && a.steps() == b.steps();
    }

private:
    Range range_;
    FsParams<double> params_;
};

inline IdentityEncoder make_identity_encoder(double lo, double hi, int steps) {
    return IdentityEncoder(lo, hi, steps);
}

struct Encoded {
    SpikeTrain spikes;
    bool clamped = false;
};

Encoded encode(const IdentityEncoder& enc, double x);
double decode(const IdentityEncoder& enc, const SpikeTrain& spikes);
// decode(encode(x)) without materializing the train.
double quantize(const IdentityEncoder& enc, double x);

class IntensityMatrix {
public:
    IntensityMatrix() = default;
    IntensityMatrix(const IdentityEncoder& lhs, const IdentityEncoder& rhs, double scale = 1.0);

    const Eigen::MatrixXd& matrix() const { return d_; }
    const Eigen::VectorXd& lhs_offset() const { return lhs_offset_; }
    const Eigen::VectorXd& rhs_offset() const { return rhs_offset_; }
    double constant() const { return constant_; }
    double scale() const { return scale_; }
    const Range& lhs_range() const { return lhs_; }
    const Range& rhs_range() const { return rhs_; }

    bool built_from(const IdentityEncoder& lhs, const IdentityEncoder& rhs) const;

private:
    Eigen::MatrixXd d_;
    Eigen::VectorXd lhs_offset_;  // scale * lo2 * d1
    Eigen::VectorXd rhs_offset_;  // scale * lo1 * d2
    double constant_ = 0.0;       // scale * lo1 * lo2
    double scale_ = 1.0;
    Range lhs_, rhs_;
};

// Gated sum over the two trains; sops (if given) receives the number of
// additions performed.
double spike_product(const SpikeTrain& s1, const SpikeTrain& s2, const IntensityMatrix& d,
                     std::int64_t* sops = nullptr);

double spike_multiply(const IdentityEncoder& e1, double x1, const IdentityEncoder& e2, double x2,
                      const IntensityMatrix& d, SiteStats* stats = nullptr);

// (rows x inner) times (inner x cols). Every entry of a is encoded with ea,
// every entry of b with eb.
Eigen::MatrixXd spike_matmul(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                             const IdentityEncoder& ea, const IdentityEncoder& eb,
                             const IntensityMatrix& d, SiteStats* stats = nullptr);

}  // namespace mbe
