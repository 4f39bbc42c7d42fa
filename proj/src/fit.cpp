#include "mbe/fit.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "mbe/rng.hpp"

namespace mbe {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kLogClamp = 20.0;
constexpr double kPoolRateMin = 1e-3;
constexpr double kPoolRateMax = 3.0;
constexpr double kMapTop = 1.0 - 0x1p-20;
constexpr double kShiftFraction = 1.0 / 16.0;
constexpr int kMaxGridPoints = 4097;
constexpr double kNoDecayJitter = 0.05;
constexpr double kCollinear = 1e-10;
constexpr int kSwapPasses = 4;
constexpr double kSwapMargin = 1e-9;
constexpr int kSelectChunk = 256;
constexpr double kGradClip = 10.0;

// log tau_d, log tau_r, log tau_vth, log dt
struct LogBasis {
    std::array<double, 4> v{};

    MbeBasis<double> basis() const {
        return {std::exp(v[0]), std::exp(v[1]), std::exp(v[2]), std::exp(v[3])};
    }
    void clamp() {
        for (double& e : v) e = std::clamp(e, -kLogClamp, kLogClamp);
    }
};

struct Schedules {
    VectorXd d, r, vth;
};

Schedules make_schedules(double alpha, const LogBasis& p, int steps) {
    const auto b = p.basis();
    return {decay_schedule(alpha, b.tau_d, b.dt, steps), decay_schedule(alpha, b.tau_r, b.dt, steps),
            decay_schedule(alpha, b.tau_vth, b.dt, steps)};
}

template <typename Out>
void simulate_column(const VectorXd& d, const VectorXd& r, const VectorXd& vth, const VectorXd& u0,
                     Out&& out) {
    const Eigen::Index steps = d.size();
    for (Eigen::Index m = 0; m < u0.size(); ++m) {
        double u = u0[m];
        double o = 0.0;
        for (Eigen::Index t = 0; t < steps; ++t) {
            if (u >= vth[t]) {
                u -= r[t];
                o += d[t];
            }
        }
        out[m] = o;
    }
}

// Least-squares readout; silent bases (all-zero columns) get weight zero.
VectorXd solve_readout(const MatrixXd& outputs, const VectorXd& y) {
    std::vector<Eigen::Index> live;
    for (Eigen::Index j = 0; j < outputs.cols(); ++j) {
        if (outputs.col(j).cwiseAbs().maxCoeff() > 0.0) live.push_back(j);
    }
    VectorXd w = VectorXd::Zero(outputs.cols());
    if (live.empty()) return w;
    MatrixXd a(outputs.rows(), static_cast<Eigen::Index>(live.size()));
    for (std::size_t k = 0; k < live.size(); ++k) a.col(static_cast<Eigen::Index>(k)) = outputs.col(live[k]);
    const VectorXd sub = a.colPivHouseholderQr().solve(y);
    for (std::size_t k = 0; k < live.size(); ++k) w[live[k]] = sub[static_cast<Eigen::Index>(k)];
    return w;
}

// Loss of the optimal readout from the normal equations.
double gram_loss(const MatrixXd& gram, const VectorXd& rhs, double yy, double samples) {
    const VectorXd w = gram.completeOrthogonalDecomposition().solve(rhs);
    return std::max(0.0, yy - w.dot(rhs)) / samples;
}

struct ScheduleGrad {
    VectorXd d, r, vth;

    explicit ScheduleGrad(int steps)
        : d(VectorXd::Zero(steps)), r(VectorXd::Zero(steps)), vth(VectorXd::Zero(steps)) {}
};

void clip(ScheduleGrad& g) {
    const double norm = std::sqrt(g.d.squaredNorm() + g.r.squaredNorm() + g.vth.squaredNorm());
    if (norm > kGradClip) {
        const double c = kGradClip / norm;
        g.d *= c;
        g.r *= c;
        g.vth *= c;
    }
}

// Backward pass for one basis and one sample with a rectangular surrogate.
// upstream is dL/do for this basis.
void accumulate_basis_grad(double u0, double upstream, const VectorXd& d, const VectorXd& r,
                           const VectorXd& vth, double width, std::vector<double>& mem,
                           std::vector<char>& fired, ScheduleGrad& g) {
    const int steps = static_cast<int>(d.size());
    double u = u0;
    for (int t = 0; t < steps; ++t) {
        mem[t] = u;
        fired[t] = u >= vth[t];
        if (fired[t]) u -= r[t];
    }
    const double half = 0.5 * width;
    const double slope = 1.0 / width;
    double lambda = 0.0;  // dL/du[t+1]
    for (int t = steps - 1; t >= 0; --t) {
        const double s = fired[t] ? 1.0 : 0.0;
        const double dl_ds = upstream * d[t] - lambda * r[t];
        g.d[t] += upstream * s;
        g.r[t] -= lambda * s;
        const double sg = std::abs(mem[t] - vth[t]) < half ? slope : 0.0;
        g.vth[t] -= dl_ds * sg;
        lambda += dl_ds * sg;
    }
}

std::vector<InputMap<double>> candidate_maps(const TargetFn& target, double alpha, InputMode mode) {
    const double a = target.a;
    const double b = target.b;
    const double s = a - (b - a) * kShiftFraction;
    const InputMap<double> identity{};
    // b lands just below vth[0] = alpha so no input ties the first threshold.
    const InputMap<double> shifted{s, kMapTop * alpha / (b - s)};
    std::vector<InputMap<double>> maps;
    switch (mode) {
        case InputMode::Identity: maps.push_back(identity); break;
        case InputMode::Shifted: maps.push_back(shifted); break;
        case InputMode::Scaled:
            if (!(b > 0.0)) throw InvalidArgument("scaled input map needs b > 0");
            maps.push_back({0.0, kMapTop * alpha / b});
            break;
        case InputMode::Auto:
            maps.push_back(identity);
            maps.push_back(shifted);
            if (a < 0.0 && b > 0.0) {
                if (alpha != b) maps.push_back({0.0, kMapTop * alpha / b});
            }
            break;
    }
    return maps;
}

VectorXd map_inputs(const InputMap<double>& map, const VectorXd& x) {
    return x.unaryExpr([&](double v) { return map(v); });
}

[[noreturn]] void diverged(const char* stage, int epoch, double last) {
    std::ostringstream os;
    os << stage << ": non-finite loss at epoch " << epoch << " (last finite loss " << last << ")";
    throw FitFailure(os.str());
}

// Loss reduction from adding each pool column to the span of `fixed`; zero
// for columns already in `fixed` or adding no rank. residual_norm receives
// the squared residual of the fixed span.
VectorXd selection_gains(const MatrixXd& pool, const VectorXd& norms, const VectorXd& y,
                         const std::vector<int>& fixed, double* residual_norm = nullptr) {
    VectorXd residual = y;
    VectorXd projected = VectorXd::Zero(pool.cols());
    if (!fixed.empty()) {
        MatrixXd a(pool.rows(), static_cast<Eigen::Index>(fixed.size()));
        for (std::size_t k = 0; k < fixed.size(); ++k) a.col(static_cast<Eigen::Index>(k)) = pool.col(fixed[k]);
        const Eigen::HouseholderQR<MatrixXd> qr(a);
        const MatrixXd q = qr.householderQ() * MatrixXd::Identity(a.rows(), a.cols());
        residual -= q * (q.transpose() * y);
        projected = (q.transpose() * pool).colwise().squaredNorm().transpose();
    }
    if (residual_norm) *residual_norm = residual.squaredNorm();
    const VectorXd corr = pool.transpose() * residual;
    VectorXd g = VectorXd::Zero(pool.cols());
    for (Eigen::Index p = 0; p < pool.cols(); ++p) {
        const double rest = norms[p] - projected[p];
        if (norms[p] > 0.0 && rest > kCollinear * norms[p]) g[p] = corr[p] * corr[p] / rest;
    }
    for (int f : fixed) g[f] = 0.0;
    return g;
}

// Replaces each chosen column in turn by the one that best explains the
// residual of the others, until a pass changes nothing.
void swap_passes(const MatrixXd& pool, const VectorXd& norms, const VectorXd& y,
                 std::vector<int>& chosen) {
    for (int pass = 0; pass < kSwapPasses; ++pass) {
        bool swapped = false;
        for (std::size_t i = 0; i < chosen.size(); ++i) {
            std::vector<int> others = chosen;
            others.erase(others.begin() + static_cast<std::ptrdiff_t>(i));
            const VectorXd g = selection_gains(pool, norms, y, others);
            Eigen::Index best = 0;
            if (g.maxCoeff(&best) > g[chosen[i]] * (1.0 + kSwapMargin)) {
                chosen[i] = static_cast<int>(best);
                swapped = true;
            }
        }
        if (!swapped) break;
    }
}

std::vector<int> greedy_pick(const MatrixXd& pool, const VectorXd& norms, const VectorXd& y,
                             int count) {
    std::vector<int> chosen;
    for (int k = 0; k < count; ++k) {
        Eigen::Index best = 0;
        if (!(selection_gains(pool, norms, y, chosen).maxCoeff(&best) > 0.0)) break;
        chosen.push_back(static_cast<int>(best));
    }
    swap_passes(pool, norms, y, chosen);
    return chosen;
}

// Orthogonal matching pursuit with swap refinement. Greedy selection over a
// large pool tends to commit early to a poor path, so it runs separately on
// chunks of the pool and the best chunk result is refined against the whole.
std::vector<int> select_bases(const MatrixXd& pool, const VectorXd& y, int count) {
    const int size = static_cast<int>(pool.cols());
    const VectorXd norms = pool.colwise().squaredNorm().transpose();
    std::vector<int> chosen;
    double best_residual = std::numeric_limits<double>::infinity();
    for (int first = 0; first < size; first += kSelectChunk) {
        const int width = std::min(kSelectChunk, size - first);
        const MatrixXd chunk = pool.middleCols(first, width);
        std::vector<int> pick = greedy_pick(chunk, norms.segment(first, width), y, count);
        for (int& p : pick) p += first;
        double residual = 0.0;
        selection_gains(pool, norms, y, pick, &residual);
        if (residual < best_residual) {
            best_residual = residual;
            chosen = std::move(pick);
        }
    }
    if (size > kSelectChunk) swap_passes(pool, norms, y, chosen);
    // Pad with unused candidates when the pool runs out of independent columns.
    for (int p = 0; p < size && static_cast<int>(chosen.size()) < count; ++p) {
        if (std::find(chosen.begin(), chosen.end(), p) == chosen.end()) chosen.push_back(p);
    }
    return chosen;
}

struct DecayFit {
    std::vector<LogBasis> params;
    double loss = std::numeric_limits<double>::infinity();
};

class DecayFitter {
public:
    DecayFitter(const VectorXd& u0, const VectorXd& y, double alpha, const FitConfig& cfg)
        : u0_(u0), y_(y), alpha_(alpha), cfg_(cfg), outputs_(u0.size(), cfg.bases) {}

    DecayFit run(Rng& rng) {
        DecayFit fit;
        fit.params = initial_bases(rng);
        fit = descend(std::move(fit.params));
        fit = local_search(std::move(fit), rng);
        return fit;
    }

private:
    std::vector<LogBasis> initial_bases(Rng& rng) {
        const int size = std::max(cfg_.pool, cfg_.bases);
        std::vector<LogBasis> pool(static_cast<std::size_t>(size));
        const double lo = std::log(kPoolRateMin);
        const double hi = std::log(kPoolRateMax);
        auto draw = [&] { return lo + (hi - lo) * rng.uniform(); };
        for (auto& p : pool) {
            // a third free, a third with tied reset/threshold, a third fully tied
            const int kind = std::min(2, static_cast<int>(3.0 * rng.uniform()));
            const double kd = draw();
            const double kr = kind == 2 ? kd : draw();
            const double kv = kind == 0 ? draw() : kr;
            p.v = {-kd, -kr, -kv, 0.0};
        }
        MatrixXd columns(u0_.size(), size);
        for (int j = 0; j < size; ++j) {
            const auto s = make_schedules(alpha_, pool[static_cast<std::size_t>(j)], cfg_.steps);
            simulate_column(s.d, s.r, s.vth, u0_, columns.col(j));
        }
        std::vector<LogBasis> chosen;
        for (int idx : select_bases(columns, y_, cfg_.bases)) {
            chosen.push_back(pool[static_cast<std::size_t>(idx)]);
        }
        return chosen;
    }

    void fill_outputs(const std::vector<LogBasis>& params, std::vector<Schedules>& sched) {
        sched.clear();
        for (int n = 0; n < cfg_.bases; ++n) {
            sched.push_back(make_schedules(alpha_, params[static_cast<std::size_t>(n)], cfg_.steps));
            const auto& s = sched.back();
            simulate_column(s.d, s.r, s.vth, u0_, outputs_.col(n));
        }
    }

    DecayFit descend(std::vector<LogBasis> params) {
        const double samples = static_cast<double>(u0_.size());
        const int steps = cfg_.steps;
        std::vector<Schedules> sched;
        std::vector<double> mem(static_cast<std::size_t>(steps));
        std::vector<char> fired(static_cast<std::size_t>(steps));
        DecayFit best;
        double lr = cfg_.lr;
        double last = std::numeric_limits<double>::infinity();
        for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
            fill_outputs(params, sched);
            const VectorXd w = solve_readout(outputs_, y_);
            const VectorXd err = outputs_ * w - y_;
            const double loss = err.squaredNorm() / samples;
            if (!std::isfinite(loss)) diverged("fit_mbe", epoch, last);
            last = loss;
            if (loss < best.loss) {
                best.loss = loss;
                best.params = params;
            }
            for (int n = 0; n < cfg_.bases; ++n) {
                const auto& s = sched[static_cast<std::size_t>(n)];
                ScheduleGrad g(steps);
                for (Eigen::Index m = 0; m < u0_.size(); ++m) {
                    const double up = 2.0 * err[m] * w[n] / samples;
                    if (up == 0.0) continue;
                    accumulate_basis_grad(u0_[m], up, s.d, s.r, s.vth, cfg_.surrogate_width, mem,
                                          fired, g);
                }
                auto& p = params[static_cast<std::size_t>(n)];
                const auto b = p.basis();
                const double kd = b.dt / b.tau_d;
                const double kr = b.dt / b.tau_r;
                const double kv = b.dt / b.tau_vth;
                double gtd = 0.0, gtr = 0.0, gtv = 0.0;
                for (int t = 1; t < steps; ++t) {
                    gtd += g.d[t] * s.d[t] * t * kd;
                    gtr += g.r[t] * s.r[t] * t * kr;
                    gtv += g.vth[t] * s.vth[t] * t * kv;
                }
                double gdt = -(gtd + gtr + gtv);
                if (!std::isfinite(gtd + gtr + gtv)) diverged("fit_mbe", epoch, last);
                const double gnorm = std::sqrt(gtd * gtd + gtr * gtr + gtv * gtv + gdt * gdt);
                if (gnorm > kGradClip) {
                    const double c = kGradClip / gnorm;
                    gtd *= c;
                    gtr *= c;
                    gtv *= c;
                    gdt *= c;
                }
                p.v[0] -= lr * gtd;
                p.v[1] -= lr * gtr;
                p.v[2] -= lr * gtv;
                p.v[3] -= lr * gdt;
                p.clamp();
            }
            lr *= cfg_.lr_decay;
        }
        return best;
    }

    DecayFit local_search(DecayFit fit, Rng& rng) {
        const double samples = static_cast<double>(u0_.size());
        std::vector<Schedules> sched;
        fill_outputs(fit.params, sched);
        MatrixXd gram = outputs_.transpose() * outputs_;
        VectorXd rhs = outputs_.transpose() * y_;
        const double yy = y_.squaredNorm();
        double current = gram_loss(gram, rhs, yy, samples);
        VectorXd col(u0_.size());
        for (int round = 0; round < cfg_.rounds; ++round) {
            const double sigma = 0.5 * std::pow(0.9, round);
            for (int n = 0; n < cfg_.bases; ++n) {
                for (int k = 0; k < cfg_.proposals; ++k) {
                    LogBasis cand = fit.params[static_cast<std::size_t>(n)];
                    for (int j = 0; j < 3; ++j) cand.v[j] += sigma * rng.normal();
                    cand.clamp();
                    const auto s = make_schedules(alpha_, cand, cfg_.steps);
                    simulate_column(s.d, s.r, s.vth, u0_, col);
                    MatrixXd g2 = gram;
                    VectorXd cross = outputs_.transpose() * col;
                    cross[n] = col.squaredNorm();
                    g2.row(n) = cross.transpose();
                    g2.col(n) = cross;
                    VectorXd r2 = rhs;
                    r2[n] = col.dot(y_);
                    const double loss = gram_loss(g2, r2, yy, samples);
                    if (loss < current) {
                        current = loss;
                        gram = std::move(g2);
                        rhs = std::move(r2);
                        outputs_.col(n) = col;
                        fit.params[static_cast<std::size_t>(n)] = cand;
                    }
                }
            }
        }
        fit.loss = current;
        return fit;
    }

    const VectorXd& u0_;
    const VectorXd& y_;
    double alpha_;
    const FitConfig& cfg_;
    MatrixXd outputs_;
};

MbeNeuron<double> decay_neuron(double alpha, const std::vector<LogBasis>& params,
                               const VectorXd& u0, const VectorXd& y, int steps,
                               const InputMap<double>& map) {
    std::vector<MbeBasis<double>> bases;
    MatrixXd outputs(u0.size(), static_cast<Eigen::Index>(params.size()));
    for (std::size_t n = 0; n < params.size(); ++n) {
        bases.push_back(params[n].basis());
        const auto s = make_schedules(alpha, params[n], steps);
        simulate_column(s.d, s.r, s.vth, u0, outputs.col(static_cast<Eigen::Index>(n)));
    }
    return MbeNeuron<double>::from_decay(alpha, std::move(bases), solve_readout(outputs, y), steps,
                                         map);
}

// Free-schedule descent shared by the no-decay ablation.
struct FreeSchedules {
    MatrixXd d, r, vth;
};

FreeSchedules descend_free(FreeSchedules p, const VectorXd& u0, const VectorXd& y,
                           const FitConfig& cfg) {
    const double samples = static_cast<double>(u0.size());
    const int steps = cfg.steps;
    const int bases = static_cast<int>(p.d.rows());
    MatrixXd outputs(u0.size(), bases);
    std::vector<double> mem(static_cast<std::size_t>(steps));
    std::vector<char> fired(static_cast<std::size_t>(steps));
    FreeSchedules best = p;
    double best_loss = std::numeric_limits<double>::infinity();
    double last = best_loss;
    double lr = cfg.lr;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (int n = 0; n < bases; ++n) {
            const VectorXd d = p.d.row(n).transpose();
            const VectorXd r = p.r.row(n).transpose();
            const VectorXd v = p.vth.row(n).transpose();
            simulate_column(d, r, v, u0, outputs.col(n));
        }
        const VectorXd w = solve_readout(outputs, y);
        const VectorXd err = outputs * w - y;
        const double loss = err.squaredNorm() / samples;
        if (!std::isfinite(loss)) diverged("fit_mbe_no_decay", epoch, last);
        last = loss;
        if (loss < best_loss) {
            best_loss = loss;
            best = p;
        }
        for (int n = 0; n < bases; ++n) {
            const VectorXd d = p.d.row(n).transpose();
            const VectorXd r = p.r.row(n).transpose();
            const VectorXd v = p.vth.row(n).transpose();
            ScheduleGrad g(steps);
            for (Eigen::Index m = 0; m < u0.size(); ++m) {
                const double up = 2.0 * err[m] * w[n] / samples;
                if (up == 0.0) continue;
                accumulate_basis_grad(u0[m], up, d, r, v, cfg.surrogate_width, mem, fired, g);
            }
            if (!g.d.allFinite() || !g.r.allFinite() || !g.vth.allFinite()) {
                diverged("fit_mbe_no_decay", epoch, last);
            }
            clip(g);
            p.d.row(n) -= lr * g.d.transpose();
            p.r.row(n) -= lr * g.r.transpose();
            p.vth.row(n) -= lr * g.vth.transpose();
        }
        lr *= cfg.lr_decay;
    }
    return best;
}

}  // namespace

std::string_view input_mode_name(InputMode m) {
    switch (m) {
        case InputMode::Auto: return "auto";
        case InputMode::Identity: return "identity";
        case InputMode::Shifted: return "shifted";
        case InputMode::Scaled: return "scaled";
    }
    return "auto";
}

InputMode parse_input_mode(std::string_view s) {
    for (auto m : {InputMode::Auto, InputMode::Identity, InputMode::Shifted, InputMode::Scaled}) {
        if (input_mode_name(m) == s) return m;
    }
    throw InvalidArgument("unknown input mode '" + std::string(s) + "'");
}

void FitConfig::validate() const {
    if (samples < 2) throw InvalidArgument("FitConfig: need at least 2 samples");
    if (epochs < 1) throw InvalidArgument("FitConfig: epochs must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw InvalidArgument("FitConfig: lr must be positive");
    if (!(lr_decay > 0.0) || lr_decay > 1.0) throw InvalidArgument("FitConfig: lr_decay must be in (0, 1]");
    if (bases < 1) throw InvalidArgument("FitConfig: N must be >= 1");
    if (steps < 1) throw InvalidArgument("FitConfig: T must be >= 1");
    if (!(surrogate_width > 0.0)) throw InvalidArgument("FitConfig: surrogate width must be positive");
    if (pool < 1 || rounds < 0 || proposals < 0) throw InvalidArgument("FitConfig: bad search sizes");
}

Dataset sample_target(const TargetFn& target, int samples, std::uint64_t seed) {
    target.validate();
    if (samples < 2) throw InvalidArgument("sample_target: M must be >= 2");
    std::mt19937_64 eng(seed);
    Dataset data;
    data.x.resize(samples);
    data.y.resize(samples);
    for (int m = 0; m < samples; ++m) {
        const double x = target.a + (target.b - target.a) * unit_uniform(eng());
        data.x[m] = x;
        data.y[m] = target(x);
    }
    return data;
}

Dataset training_sample(const TargetFn& target, int samples, std::uint64_t seed) {
    Dataset data = sample_target(target, samples, seed);
    data.x[0] = target.a;
    data.y[0] = target(target.a);
    data.x[1] = target.b;
    data.y[1] = target(target.b);
    return data;
}

double target_max_abs(const TargetFn& target) {
    target.validate();
    double best = 0.0;
    for (int i = 0; i < kMaxGridPoints; ++i) {
        const double x = i + 1 == kMaxGridPoints
                             ? target.b
                             : target.a + (target.b - target.a) * i / (kMaxGridPoints - 1);
        best = std::max(best, std::abs(target(x)));
    }
    return best;
}

bool FittedApproximator::clamp(double& x) const {
    if (x < target.a) {
        x = target.a;
        return true;
    }
    if (x > target.b) {
        x = target.b;
        return true;
    }
    return false;
}

double evaluate_mse(const MbeNeuron<double>& neuron, const Dataset& data) {
    if (data.size() == 0) throw InvalidArgument("evaluate_mse: empty dataset");
    double acc = 0.0;
    for (Eigen::Index m = 0; m < data.size(); ++m) {
        const double e = data.y[m] - mbe_output(neuron, data.x[m]);
        acc += e * e;
    }
    return acc / static_cast<double>(data.size());
}

double evaluate_mse(const FsParams<double>& params, const Dataset& data) {
    if (data.size() == 0) throw InvalidArgument("evaluate_mse: empty dataset");
    double acc = 0.0;
    for (Eigen::Index m = 0; m < data.size(); ++m) {
        const double e = data.y[m] - fs_output(params, data.x[m]);
        acc += e * e;
    }
    return acc / static_cast<double>(data.size());
}

namespace {

void reject_constant(const TargetFn& target, const Dataset& data) {
    if (target.id == TargetId::Identity) return;
    if (data.y.maxCoeff() == data.y.minCoeff()) {
        throw InvalidArgument("target is constant on the interval; no bias term to fit it");
    }
}

}  // namespace

FittedApproximator fit_mbe(const TargetFn& target, const FitConfig& config) {
    config.validate();
    const Dataset data = training_sample(target, config.samples, config.seed);
    reject_constant(target, data);
    const double alpha = target_max_abs(target);
    FittedApproximator best;
    best.mse = std::numeric_limits<double>::infinity();
    std::uint64_t stream = 0;
    for (const auto& map : candidate_maps(target, alpha, config.input)) {
        Rng rng(derive_seed(config.seed, stream++));
        const VectorXd u0 = map_inputs(map, data.x);
        DecayFitter fitter(u0, data.y, alpha, config);
        const DecayFit fit = fitter.run(rng);
        auto neuron = decay_neuron(alpha, fit.params, u0, data.y, config.steps, map);
        const double mse = evaluate_mse(neuron, data);
        if (!std::isfinite(mse)) diverged("fit_mbe", config.epochs, fit.loss);
        if (mse < best.mse) {
            best.neuron = std::move(neuron);
            best.mse = mse;
        }
    }
    best.target = target;
    best.config = config;
    return best;
}

FittedApproximator fit_mbe_no_decay(const TargetFn& target, const FitConfig& config) {
    config.validate();
    const Dataset data = training_sample(target, config.samples, config.seed);
    reject_constant(target, data);
    const double alpha = target_max_abs(target);
    FittedApproximator best;
    best.mse = std::numeric_limits<double>::infinity();
    std::uint64_t stream = 0;
    for (const auto& map : candidate_maps(target, alpha, config.input)) {
        Rng rng(derive_seed(config.seed, stream++));
        const VectorXd u0 = map_inputs(map, data.x);
        FreeSchedules p;
        for (MatrixXd* m : {&p.d, &p.r, &p.vth}) {
            m->resize(config.bases, config.steps);
            for (Eigen::Index i = 0; i < m->size(); ++i) {
                (*m)(i) = alpha * (1.0 + kNoDecayJitter * (2.0 * rng.uniform() - 1.0));
            }
        }
        p = descend_free(std::move(p), u0, data.y, config);
        MatrixXd outputs(u0.size(), config.bases);
        for (int n = 0; n < config.bases; ++n) {
            simulate_column(VectorXd(p.d.row(n).transpose()), VectorXd(p.r.row(n).transpose()),
                            VectorXd(p.vth.row(n).transpose()), u0, outputs.col(n));
        }
        auto neuron = MbeNeuron<double>::from_schedules(p.d, p.r, p.vth,
                                                        solve_readout(outputs, data.y), map, alpha);
        const double mse = evaluate_mse(neuron, data);
        if (mse < best.mse) {
            best.neuron = std::move(neuron);
            best.mse = mse;
        }
    }
    best.target = target;
    best.config = config;
    return best;
}

FittedFs fit_fs(const TargetFn& target, FsInit init, const FitConfig& config) {
    config.validate();
    const Dataset data = training_sample(target, config.samples, config.seed);
    reject_constant(target, data);
    const double alpha = target_max_abs(target);
    const int steps = config.steps;
    FittedFs best;
    best.mse = std::numeric_limits<double>::infinity();
    std::uint64_t stream = 0;
    for (const auto& map : candidate_maps(target, alpha, config.input)) {
        Rng rng(derive_seed(config.seed, stream++));
        const VectorXd u0 = map_inputs(map, data.x);
        FreeSchedules p;
        if (init == FsInit::Binary) {
            const auto bin = binary_fs_params(steps, alpha);
            p.d = bin.d.transpose();
            p.r = bin.r.transpose();
            p.vth = bin.vth.transpose();
        } else {
            for (MatrixXd* m : {&p.d, &p.r, &p.vth}) {
                m->resize(1, steps);
                for (Eigen::Index i = 0; i < m->size(); ++i) (*m)(i) = alpha * rng.uniform();
            }
        }
        // FS has no readout weight: fix it to one by descending on the raw
        // schedules with a unit readout.
        const double samples = static_cast<double>(u0.size());
        std::vector<double> mem(static_cast<std::size_t>(steps));
        std::vector<char> fired(static_cast<std::size_t>(steps));
        FreeSchedules keep = p;
        double keep_loss = std::numeric_limits<double>::infinity();
        double last = keep_loss;
        double lr = config.lr;
        VectorXd out(u0.size());
        for (int epoch = 0; epoch < config.epochs; ++epoch) {
            const VectorXd d = p.d.row(0).transpose();
            const VectorXd r = p.r.row(0).transpose();
            const VectorXd v = p.vth.row(0).transpose();
            simulate_column(d, r, v, u0, out);
            const VectorXd err = out - data.y;
            const double loss = err.squaredNorm() / samples;
            if (!std::isfinite(loss)) diverged("fit_fs", epoch, last);
            last = loss;
            if (loss < keep_loss) {
                keep_loss = loss;
                keep = p;
            }
            ScheduleGrad g(steps);
            for (Eigen::Index m = 0; m < u0.size(); ++m) {
                const double up = 2.0 * err[m] / samples;
                if (up == 0.0) continue;
                accumulate_basis_grad(u0[m], up, d, r, v, config.surrogate_width, mem, fired, g);
            }
            if (!g.d.allFinite() || !g.r.allFinite() || !g.vth.allFinite()) {
                diverged("fit_fs", epoch, last);
            }
            clip(g);
            p.d.row(0) -= lr * g.d.transpose();
            p.r.row(0) -= lr * g.r.transpose();
            p.vth.row(0) -= lr * g.vth.transpose();
            lr *= config.lr_decay;
        }
        FsParams<double> params;
        params.d = keep.d.row(0).transpose();
        params.r = keep.r.row(0).transpose();
        params.vth = keep.vth.row(0).transpose();
        params.input = map;
        const double mse = evaluate_mse(params, data);
        if (mse < best.mse) {
            best.params = std::move(params);
            best.mse = mse;
        }
    }
    best.target = target;
    best.init = init;
    best.config = config;
    return best;
}

}  // namespace mbe
