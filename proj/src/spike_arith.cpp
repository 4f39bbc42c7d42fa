#include "mbe/spike_arith.hpp"

#include <algorithm>
#include <vector>

namespace mbe {

Range Range::padded(double frac) const {
    const double w = width();
    return {lo - frac * w, hi + frac * w};
}

IdentityEncoder::IdentityEncoder(double lo, double hi, int steps) {
    if (!std::isfinite(lo) || !std::isfinite(hi) || !(lo < hi)) {
        throw InvalidArgument("identity encoder: need finite lo < hi");
    }
    if (steps < 1) throw InvalidArgument("identity encoder: T must be >= 1");
    range_ = {lo, hi};
    params_ = binary_fs_params(steps, hi - lo);
    params_.input.shift = lo;
}

Encoded encode(const IdentityEncoder& enc, double x) {
    Encoded out;
    const double c = std::clamp(x, enc.lo(), enc.hi());
    out.clamped = c != x;
    const auto rec = fs_simulate(enc.params(), c);
    out.spikes = rec.spikes.row(0).transpose();
    return out;
}

double decode(const IdentityEncoder& enc, const SpikeTrain& spikes) {
    if (spikes.size() != enc.steps()) throw InvalidArgument("decode: train length differs from T");
    double m = 0.0;
    for (int t = 0; t < enc.steps(); ++t) {
        if (spikes[t]) m += enc.intensity()[t];
    }
    return enc.lo() + m;
}

double quantize(const IdentityEncoder& enc, double x) {
    return enc.lo() + fs_output(enc.params(), std::clamp(x, enc.lo(), enc.hi()));
}

IntensityMatrix::IntensityMatrix(const IdentityEncoder& lhs, const IdentityEncoder& rhs,
                                 double scale) {
    if (lhs.steps() < 1 || rhs.steps() < 1) throw InvalidArgument("intensity matrix: empty encoder");
    if (!std::isfinite(scale)) throw InvalidArgument("intensity matrix: scale must be finite");
    scale_ = scale;
    lhs_ = lhs.range();
    rhs_ = rhs.range();
    d_ = scale * lhs.intensity() * rhs.intensity().transpose();
    lhs_offset_ = scale * rhs.lo() * lhs.intensity();
    rhs_offset_ = scale * lhs.lo() * rhs.intensity();
    constant_ = scale * lhs.lo() * rhs.lo();
}

bool IntensityMatrix::built_from(const IdentityEncoder& lhs, const IdentityEncoder& rhs) const {
    return lhs.range() == lhs_ && rhs.range() == rhs_ && lhs.steps() == d_.rows() &&
           rhs.steps() == d_.cols();
}

double spike_product(const SpikeTrain& s1, const SpikeTrain& s2, const IntensityMatrix& d,
                     std::int64_t* sops) {
    const auto& dm = d.matrix();
    if (s1.size() != dm.rows() || s2.size() != dm.cols()) {
        throw InvalidArgument("spike_multiply: train length does not match the intensity matrix");
    }
    double acc = d.constant();
    std::int64_t adds = 0;
    for (Eigen::Index j = 0; j < s2.size(); ++j) {
        if (s2[j]) {
            acc += d.rhs_offset()[j];
            ++adds;
        }
    }
    for (Eigen::Index i = 0; i < s1.size(); ++i) {
        if (!s1[i]) continue;
        acc += d.lhs_offset()[i];
        ++adds;
        for (Eigen::Index j = 0; j < s2.size(); ++j) {
            if (s2[j]) {
                acc += dm(i, j);
                ++adds;
            }
        }
    }
    if (sops) *sops += adds;
    return acc;
}

double spike_multiply(const IdentityEncoder& e1, double x1, const IdentityEncoder& e2, double x2,
                      const IntensityMatrix& d, SiteStats* stats) {
    if (e1.steps() != e2.steps()) throw InvalidArgument("spike_multiply: encoders differ in T");
    if (!d.built_from(e1, e2)) {
        throw InvalidArgument("spike_multiply: intensity matrix was built for other encoders");
    }
    const Encoded a = encode(e1, x1);
    const Encoded b = encode(e2, x2);
    std::int64_t sops = 0;
    const double out = spike_product(a.spikes, b.spikes, d, &sops);
    if (stats) {
        stats->spikes += a.spikes.cast<std::int64_t>().sum() + b.spikes.cast<std::int64_t>().sum();
        stats->slots += e1.steps() + e2.steps();
        stats->sops += sops;
        stats->elements += 1;
        stats->saturated += int(a.clamped) + int(b.clamped);
    }
    return out;
}

Eigen::MatrixXd spike_matmul(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                             const IdentityEncoder& ea, const IdentityEncoder& eb,
                             const IntensityMatrix& d, SiteStats* stats) {
    if (a.cols() != b.rows()) throw InvalidArgument("spike_matmul: inner dimensions differ");
    if (ea.steps() != eb.steps()) throw InvalidArgument("spike_matmul: encoders differ in T");
    if (!d.built_from(ea, eb)) {
        throw InvalidArgument("spike_matmul: intensity matrix was built for other encoders");
    }
    SiteStats local;
    auto encode_all = [&](const Eigen::MatrixXd& m, const IdentityEncoder& enc) {
        std::vector<SpikeTrain> trains;
        trains.reserve(static_cast<std::size_t>(m.size()));
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            for (Eigen::Index i = 0; i < m.rows(); ++i) {
                Encoded e = encode(enc, m(i, j));
                local.spikes += e.spikes.cast<std::int64_t>().sum();
                local.slots += enc.steps();
                local.saturated += int(e.clamped);
                trains.push_back(std::move(e.spikes));
            }
        }
        return trains;
    };
    const auto ta = encode_all(a, ea);  // column-major
    const auto tb = encode_all(b, eb);
    Eigen::MatrixXd out(a.rows(), b.cols());
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
            double acc = 0.0;
            for (Eigen::Index k = 0; k < a.cols(); ++k) {
                acc += spike_product(ta[static_cast<std::size_t>(k * a.rows() + i)],
                                     tb[static_cast<std::size_t>(j * b.rows() + k)], d,
                                     &local.sops);
            }
            out(i, j) = acc;
        }
    }
    local.elements += out.size();
    if (stats) *stats += local;
    return out;
}

}  // namespace mbe
