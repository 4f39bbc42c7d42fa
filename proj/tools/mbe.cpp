// mbe: fit approximators, convert the reference Transformer and report.
//
// Exit codes: 0 ok, 1 other error, 2 usage, 3 fit failure, 4 conversion
// error (names the site), 5 unsupported document version.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mbe/converter.hpp"
#include "mbe/error.hpp"
#include "mbe/fit.hpp"
#include "mbe/metrics.hpp"
#include "mbe/repro.hpp"
#include "mbe/spike_ops.hpp"
#include "mbe/store.hpp"

namespace fs = std::filesystem;
using namespace mbe;

namespace {

constexpr int kExitOther = 1;
constexpr int kExitUsage = 2;
constexpr int kExitFit = 3;
constexpr int kExitConversion = 4;
constexpr int kExitVersion = 5;

constexpr const char* kStoreEnv = "MBE_STORE_DIR";
constexpr const char* kDefaultStore = "mbe_store";

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

Range parse_interval(const std::string& s) {
    const auto comma = s.find(',');
    if (comma == std::string::npos || s.find(',', comma + 1) != std::string::npos) {
        throw UsageError("--interval expects a,b (got '" + s + "')");
    }
    auto number = [&](const std::string& part) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(part, &used);
        } catch (const std::exception&) {
            throw UsageError("--interval: '" + part + "' is not a number");
        }
        if (used != part.size() || !std::isfinite(v)) throw UsageError("--interval: '" + part + "' is not a number");
        return v;
    };
    const Range r{number(s.substr(0, comma)), number(s.substr(comma + 1))};
    if (!(r.lo < r.hi)) throw UsageError("--interval needs a < b");
    return r;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        try {
            out.push_back(std::stoull(item, &used));
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != item.size()) throw UsageError("--seeds expects a comma list of integers");
    }
    if (out.empty()) throw UsageError("--seeds is empty");
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

fs::path csv_path(const fs::path& report) {
    fs::path p = report;
    p.replace_extension(".csv");
    return p;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Calibration and run inputs: {"batches": [matrix, ...]}.
std::vector<Eigen::MatrixXd> load_batches(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    Json j;
    try {
        j = Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(path.string() + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("batches") || !j["batches"].is_array()) {
        throw InvalidArgument(path.string() + ": expected {\"batches\": [...]}");
    }
    std::vector<Eigen::MatrixXd> out;
    for (const auto& b : j["batches"]) out.push_back(matrix_from_json(b));
    if (out.empty()) throw InvalidArgument(path.string() + ": no batches");
    return out;
}

// ---- fit ------------------------------------------------------------------

struct FitArgs {
    std::string target;
    std::string interval;
    int n = 4;
    int t = 16;
    bool no_decay = false;
    std::uint64_t seed = 0;
    int samples = FitConfig{}.samples;
    std::string out;
};

int cmd_fit(const FitArgs& a) {
    TargetId id;
    try {
        id = parse_target(a.target);
    } catch (const InvalidArgument& e) {
        throw UsageError(e.what());
    }
    if (id == TargetId::Identity) {
        throw UsageError("target 'identity' is not fitted: identity encoders use fixed binary parameters");
    }
    const Range r = parse_interval(a.interval);
    TargetFn target{id, r.lo, r.hi};
    FitConfig fc;
    fc.bases = a.n;
    fc.steps = a.t;
    fc.seed = a.seed;
    fc.samples = a.samples;
    try {
        target.validate();
        fc.validate();
    } catch (const InvalidArgument& e) {
        throw UsageError(e.what());
    }
    const FittedApproximator fit = a.no_decay ? fit_mbe_no_decay(target, fc) : fit_mbe(target, fc);
    if (!a.out.empty()) save_document(a.out, make_approximator_document(fit));
    std::printf("target %s [%g, %g] N=%d T=%d%s seed=%llu\n", a.target.c_str(), r.lo, r.hi, a.n, a.t,
                a.no_decay ? " no-decay" : "", static_cast<unsigned long long>(a.seed));
    std::printf("mse %.6e\n", fit.mse);
    return 0;
}

// ---- build / inputs -------------------------------------------------------

struct BuildArgs {
    RefTransformerConfig config;
    std::string activation = "gelu";
    std::string out;
};

int cmd_build(BuildArgs a) {
    try {
        a.config.activation = parse_activation(a.activation);
        a.config.validate();
    } catch (const InvalidArgument& e) {
        throw UsageError(e.what());
    }
    const FloatTransformer model = build_reference(a.config);
    StoreDocument doc;
    doc.kind = DocKind::Model;
    doc.payload = float_model_to_json(model);
    doc.created_with = {{"command", "build"}, {"seed", a.config.seed}, {"config", model_config_to_json(a.config)}};
    save_document(a.out, doc);
    std::printf("model %s: %d layers, d_model %d, %d heads\n", a.out.c_str(), a.config.n_layers,
                a.config.d_model, a.config.n_heads);
    return 0;
}

struct InputsArgs {
    std::string model;
    int batches = kCalibrationBatches;
    std::uint64_t seed = 1000;
    std::string out;
};

int cmd_inputs(const InputsArgs& a) {
    if (a.batches < 1) throw UsageError("--batches must be >= 1");
    const StoreDocument doc = load_document(a.model, DocKind::Model);
    const Json& p = doc.payload;
    const RefTransformerConfig rc =
        is_spiking_model(p) ? model_config_from_json(p["model"]["config"]) : model_config_from_json(p["config"]);
    Json batches = Json::array();
    for (int b = 0; b < a.batches; ++b) batches.push_back(matrix_to_json(random_input(rc, a.seed + b)));
    write_text(a.out, Json{{"batches", batches}, {"seed", a.seed}}.dump(1) + "\n");
    std::printf("inputs %s: %d batches of %d x %d\n", a.out.c_str(), a.batches, rc.seq_len, rc.d_model);
    return 0;
}

// ---- calibrate ------------------------------------------------------------

struct CalibrateArgs {
    std::string model;
    std::string data;
    std::string out;
};

int cmd_calibrate(const CalibrateArgs& a) {
    const StoreDocument mdoc = load_document(a.model, DocKind::Model);
    const FloatTransformer model = float_model_from_json(mdoc.payload);
    const auto batches = load_batches(a.data);
    const CalibrationProfile profile = calibrate(model, batches);
    StoreDocument doc;
    doc.kind = DocKind::Calibration;
    doc.payload = profile_to_json(profile);
    doc.created_with = {{"command", "calibrate"},
                        {"seed", model.config().seed},
                        {"config", model_config_to_json(model.config())},
                        {"batches", static_cast<int>(batches.size())}};
    save_document(a.out, doc);
    std::printf("profile %s: %zu sites from %zu batches\n", a.out.c_str(), profile.sites.size(), batches.size());
    return 0;
}

// ---- convert --------------------------------------------------------------

struct ConvertArgs {
    std::string model;
    std::string profile;
    std::string store;
    int t = 16;
    int n_act = 4;
    int n_other = 8;
    std::uint64_t seed = 0;
    std::string out;
};

fs::path store_dir(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv(kStoreEnv); env && *env) return env;
    return kDefaultStore;
}

// Loads the approximator from the store when one with the same target and
// fit settings exists; fits and saves it otherwise.
FittedApproximator store_fetch(const fs::path& dir, const TargetFn& target, const FitConfig& fc) {
    const fs::path path = dir / approximator_file_name(target, fc, true);
    if (fs::exists(path)) {
        const StoreDocument doc = load_document(path, DocKind::Approximator);
        FittedApproximator a = approximator_from_json(doc.payload);
        const bool same_target = a.target.id == target.id && a.target.a == target.a && a.target.b == target.b;
        if (same_target && fit_config_to_json(a.config) == fit_config_to_json(fc) && a.neuron.has_decay()) {
            std::printf("  store hit  %s\n", path.filename().string().c_str());
            return a;
        }
    }
    FittedApproximator a = fit_mbe(target, fc);
    fs::create_directories(dir);
    save_document(path, make_approximator_document(a));
    std::printf("  fitted     %s (mse %.3e)\n", path.filename().string().c_str(), a.mse);
    return a;
}

int cmd_convert(const ConvertArgs& a) {
    if (a.t < 1 || a.n_act < 1 || a.n_other < 1) throw UsageError("--t, --n-act and --n-other must be >= 1");
    const StoreDocument mdoc = load_document(a.model, DocKind::Model);
    const StoreDocument pdoc = load_document(a.profile, DocKind::Calibration);
    const FloatTransformer model = float_model_from_json(mdoc.payload);
    const CalibrationProfile profile = profile_from_json(pdoc.payload);
    for (const auto& role : site_roles(model.config())) profile.at(role);

    ConvertConfig cc;
    cc.steps = a.t;
    cc.n_act = a.n_act;
    cc.n_other = a.n_other;
    cc.seed = a.seed;
    OpSetConfig oc;
    oc.steps = a.t;
    oc.n_act = a.n_act;
    oc.n_other = a.n_other;
    oc.seed = a.seed;
    if (model.config().n_layers > 0) oc.act_domain = activation_interval(model, profile, cc.pad);

    const fs::path dir = store_dir(a.store);
    std::printf("store %s\n", dir.string().c_str());
    SpikingOpSet ops;
    std::vector<TargetId> ids{TargetId::Exp2Frac, TargetId::Inv, TargetId::InvSqrt};
    if (model.config().n_layers > 0) ids.push_back(activation_target(model.config().activation));
    for (TargetId id : ids) ops.slot(id) = store_fetch(dir, opset_target(id, oc), opset_fit_config(id, oc));

    const SpikingTransformer snn = convert(model, profile, ops, cc);
    StoreDocument doc;
    doc.kind = DocKind::Model;
    doc.payload = spiking_model_to_json(snn, profile);
    doc.created_with = {{"command", "convert"}, {"seed", a.seed}, {"config", convert_config_to_json(cc)}};
    save_document(a.out, doc);
    const SiteCensus census = snn.census();
    std::printf("spiking model %s: %d sites replaced, T=%d N_act=%d N_other=%d\n", a.out.c_str(), census.total(),
                a.t, a.n_act, a.n_other);
    return 0;
}

// ---- run ------------------------------------------------------------------

struct RunArgs {
    std::string snn;
    std::string input;
    std::string report;
    std::string csv;
};

Json fidelity_json(const Fidelity& f) { return {{"mse", f.mse}, {"linf", f.linf}, {"cosine", f.cosine}}; }

int cmd_run(const RunArgs& a) {
    const StoreDocument sdoc = load_document(a.snn, DocKind::Model);
    if (!is_spiking_model(sdoc.payload)) throw UsageError(a.snn + " holds a float model; run convert first");
    const SpikingTransformer snn = spiking_model_from_json(sdoc.payload);
    const auto batches = load_batches(a.input);
    const auto& mc = snn.model().config();

    std::vector<Eigen::MatrixXd> ref_rows, spk_rows;
    Json per_batch = Json::array();
    SiteStatsMap merged;
    EnergyReport energy;
    for (const auto& x : batches) {
        SiteStatsMap st;
        const auto ref = snn.model().forward_trace(x);
        const auto spk = forward_spiking_trace(snn, x, &st);
        const FidelityReport rep = compare(ref, spk, st);
        per_batch.push_back(fidelity_json(rep.final));
        ref_rows.push_back(ref.back());
        spk_rows.push_back(spk.back());
        for (const auto& [k, v] : st) merged[k] += v;
        const EnergyReport e = block_energy(mc, static_cast<int>(x.rows()), st);
        energy.spikes += e.spikes;
        energy.sops += e.sops;
        energy.flops += e.flops;
    }
    const EnergyConstants ec;
    energy.snn_pj = double(energy.sops) * ec.e_ac;
    energy.ann_pj = energy.flops * ec.e_mac;
    energy.ratio = energy_ratio(double(energy.sops), energy.flops, ec);

    Eigen::Index rows = 0;
    for (const auto& m : ref_rows) rows += m.rows();
    Eigen::MatrixXd ref_all(rows, mc.d_model), spk_all(rows, mc.d_model);
    for (std::size_t i = 0, r = 0; i < ref_rows.size(); r += static_cast<std::size_t>(ref_rows[i].rows()), ++i) {
        ref_all.middleRows(static_cast<Eigen::Index>(r), ref_rows[i].rows()) = ref_rows[i];
        spk_all.middleRows(static_cast<Eigen::Index>(r), spk_rows[i].rows()) = spk_rows[i];
    }
    const Fidelity overall = fidelity(ref_all, spk_all);

    Json sites = Json::object();
    std::ostringstream csv;
    csv << "site,spikes,slots,sops,elements,saturated,firing_rate\n";
    for (const auto& [name, s] : merged) {
        const double rate = s.slots > 0 ? firing_rate(s) : 0.0;
        sites[name] = {{"spikes", s.spikes}, {"slots", s.slots},         {"sops", s.sops},
                       {"elements", s.elements}, {"saturated", s.saturated}, {"firing_rate", rate}};
        csv << name << "," << s.spikes << "," << s.slots << "," << s.sops << "," << s.elements << ","
            << s.saturated << "," << fmt(rate) << "\n";
    }
    StoreDocument doc;
    doc.kind = DocKind::Report;
    doc.payload = {{"type", "fidelity"},
                   {"fidelity", {{"final", fidelity_json(overall)}, {"batches", per_batch}}},
                   {"sites", sites},
                   {"energy",
                    {{"spikes", energy.spikes},
                     {"sops", energy.sops},
                     {"flops", energy.flops},
                     {"snn_pj", energy.snn_pj},
                     {"ann_pj", energy.ann_pj},
                     {"ratio", energy.ratio}}}};
    doc.created_with = {{"command", "run"},
                        {"seed", snn.config().seed},
                        {"config", convert_config_to_json(snn.config())},
                        {"batches", static_cast<int>(batches.size())}};
    save_document(a.report, doc);
    write_text(a.csv.empty() ? csv_path(a.report) : fs::path(a.csv), csv.str());
    std::printf("final cosine %.6f mse %.6e linf %.6e over %zu batches\n", overall.cosine, overall.mse, overall.linf,
                batches.size());
    std::printf("energy snn %.4g pJ ann %.4g pJ ratio %.4f\n", energy.snn_pj, energy.ann_pj, energy.ratio);
    return 0;
}

// ---- report ---------------------------------------------------------------

struct ReportArgs {
    std::string kind;
    std::string rates;
    std::string report;
    std::string out;
    BoundInputs bounds;
};

int report_energy(const ReportArgs& a) {
    if (a.rates.empty()) throw UsageError("--kind energy needs --rates FILE");
    std::ifstream in(a.rates, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + a.rates);
    Json j;
    try {
        j = Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(a.rates + ": " + e.what());
    }
    const int steps = j.value("steps", 16);
    const EnergyConstants ec{j.value("e_mac", EnergyConstants{}.e_mac), j.value("e_ac", EnergyConstants{}.e_ac)};
    Json rows = Json::array();
    std::ostringstream csv;
    csv << "op,firing_rate,steps,bases,channels,heads,e_mbe_pj,float_flops,float_macs,ratio_flops,ratio_macs\n";
    std::printf("%-28s %8s %4s %5s %8s %6s %12s %10s %10s\n", "op", "eta", "T", "N", "C", "N_h", "E_MBE pJ",
                "vs FLOPs", "vs MACs");
    for (const auto& op : j.at("ops")) {
        const std::string name = op.at("name").get<std::string>();
        const double eta = op.at("firing_rate").get<double>();
        const int bases = op.value("bases", 1);
        const int channels = op.value("channels", 1);
        const int heads = op.value("heads", 1);
        const double e = energy_mbe(steps, eta, bases, channels, heads, ec);
        Json row = {{"op", name}, {"firing_rate", eta}, {"steps", steps},  {"bases", bases},
                    {"channels", channels}, {"heads", heads}, {"e_mbe_pj", e}};
        std::string vs_f = "-", vs_m = "-";
        csv << name << "," << fmt(eta) << "," << steps << "," << bases << "," << channels << "," << heads << ","
            << fmt(e) << ",";
        if (op.contains("flops") && op.contains("macs")) {
            const double fl = op["flops"].get<double>() * channels * heads;
            const double mc = op["macs"].get<double>() * channels * heads;
            const ActivationEnergy ae = activation_energy(steps, eta, bases * channels * heads, fl, mc, ec);
            row["float_flops"] = fl;
            row["float_macs"] = mc;
            row["ratio_flops"] = ae.ratio_flops;
            row["ratio_macs"] = ae.ratio_macs;
            char b1[32], b2[32];
            std::snprintf(b1, sizeof b1, "%.2f%%", 100.0 * ae.ratio_flops);
            std::snprintf(b2, sizeof b2, "%.2f%%", 100.0 * ae.ratio_macs);
            vs_f = b1;
            vs_m = b2;
            csv << fmt(fl) << "," << fmt(mc) << "," << fmt(ae.ratio_flops) << "," << fmt(ae.ratio_macs);
        } else {
            csv << ",,,";
        }
        csv << "\n";
        std::printf("%-28s %8.4f %4d %5d %8d %6d %12.4f %10s %10s\n", name.c_str(), eta, steps, bases, channels,
                    heads, e, vs_f.c_str(), vs_m.c_str());
        rows.push_back(std::move(row));
    }
    if (!a.out.empty()) {
        StoreDocument doc;
        doc.kind = DocKind::Report;
        doc.payload = {{"type", "energy"}, {"rows", rows}, {"e_mac", ec.e_mac}, {"e_ac", ec.e_ac}};
        doc.created_with = {{"command", "report"}, {"seed", 0}, {"config", {{"kind", "energy"}, {"steps", steps}}}};
        save_document(a.out, doc);
        write_text(csv_path(a.out), csv.str());
    }
    return 0;
}

int report_bounds(const ReportArgs& a) {
    try {
        a.bounds.validate();
    } catch (const InvalidArgument& e) {
        throw UsageError(e.what());
    }
    const BoundTerms f = bound_fs(a.bounds);
    const BoundTerms m = bound_mbe(a.bounds);
    std::printf("T=%d N=%d M=%d\n", a.bounds.steps, a.bounds.bases, a.bounds.samples);
    std::printf("%-6s %14s %14s %14s %14s\n", "neuron", "empirical", "parametric", "quantization", "sum");
    std::printf("%-6s %14.6e %14.6e %14.6e %14.6e\n", "FS", f.empirical, f.parametric, f.quantization,
                f.empirical + f.parametric + f.quantization);
    std::printf("%-6s %14.6e %14.6e %14.6e %14.6e\n", "MBE", m.empirical, m.parametric, m.quantization,
                m.empirical + m.parametric + m.quantization);
    if (!a.out.empty()) {
        auto terms = [](const BoundTerms& b) {
            return Json{{"empirical", b.empirical}, {"parametric", b.parametric}, {"quantization", b.quantization}};
        };
        const BoundInputs& in = a.bounds;
        StoreDocument doc;
        doc.kind = DocKind::Report;
        doc.payload = {{"type", "bounds"}, {"fs", terms(f)}, {"mbe", terms(m)}};
        doc.created_with = {{"command", "report"},
                            {"seed", 0},
                            {"config",
                             {{"steps", in.steps}, {"bases", in.bases}, {"samples", in.samples},
                              {"lipschitz", in.lipschitz}, {"y_max", in.y_max}, {"l1", in.l1},
                              {"alpha", in.alpha_abs}, {"tau_max", in.tau_max}, {"dt", in.dt}}}};
        save_document(a.out, doc);
        std::ostringstream csv;
        csv << "neuron,empirical,parametric,quantization\n"
            << "fs," << fmt(f.empirical) << "," << fmt(f.parametric) << "," << fmt(f.quantization) << "\n"
            << "mbe," << fmt(m.empirical) << "," << fmt(m.parametric) << "," << fmt(m.quantization) << "\n";
        write_text(csv_path(a.out), csv.str());
    }
    return 0;
}

int report_fidelity(const ReportArgs& a) {
    if (a.report.empty()) throw UsageError("--kind fidelity needs --report FILE (written by run)");
    const StoreDocument doc = load_document(a.report, DocKind::Report);
    const Json& p = doc.payload;
    if (p.value("type", std::string()) != "fidelity") throw UsageError(a.report + " is not a run report");
    const Json& f = p["fidelity"]["final"];
    std::printf("final cosine %.6f mse %.6e linf %.6e\n", f["cosine"].get<double>(), f["mse"].get<double>(),
                f["linf"].get<double>());
    std::printf("%-26s %12s %12s %10s %10s\n", "site", "spikes", "slots", "rate", "saturated");
    for (const auto& [name, s] : p["sites"].items()) {
        std::printf("%-26s %12lld %12lld %10.4f %10lld\n", name.c_str(), s["spikes"].get<long long>(),
                    s["slots"].get<long long>(), s["firing_rate"].get<double>(), s["saturated"].get<long long>());
    }
    const Json& e = p["energy"];
    std::printf("energy snn %.4g pJ ann %.4g pJ ratio %.4f\n", e["snn_pj"].get<double>(), e["ann_pj"].get<double>(),
                e["ratio"].get<double>());
    if (!a.out.empty()) {
        StoreDocument out;
        out.kind = DocKind::Report;
        out.payload = {{"type", "fidelity_summary"}, {"final", f}, {"energy", e}};
        out.created_with = {{"command", "report"}, {"seed", 0}, {"config", {{"kind", "fidelity"}}}};
        std::ostringstream csv;
        csv << "site,spikes,slots,firing_rate,saturated\n";
        for (const auto& [name, s] : p["sites"].items()) {
            csv << name << "," << s["spikes"].get<long long>() << "," << s["slots"].get<long long>() << ","
                << fmt(s["firing_rate"].get<double>()) << "," << s["saturated"].get<long long>() << "\n";
        }
        save_document(a.out, out);
        write_text(csv_path(a.out), csv.str());
    }
    return 0;
}

int cmd_report(const ReportArgs& a) {
    if (a.kind == "energy") return report_energy(a);
    if (a.kind == "bounds") return report_bounds(a);
    if (a.kind == "fidelity") return report_fidelity(a);
    throw UsageError("--kind must be energy, bounds or fidelity");
}

// ---- repro ----------------------------------------------------------------

struct ReproArgs {
    std::string table;
    std::string seeds = "1,2,3,4,5";
    int jobs = 0;
    std::string out;
};

int cmd_repro(const ReproArgs& a) {
    if (a.table != "bases" && a.table != "silu" && a.table != "edi" && a.table != "timesteps") {
        throw UsageError("--table must be bases, silu, edi or timesteps");
    }
    ReproOptions opt;
    opt.seeds = parse_seeds(a.seeds);
    opt.jobs = a.jobs;
    const ReproTable t = run_repro(a.table, opt);
    std::fputs(t.to_text().c_str(), stdout);
    std::printf("%s\n", t.pass() ? "all checks pass" : "some checks FAIL");
    if (!a.out.empty()) {
        StoreDocument doc;
        doc.kind = DocKind::Report;
        doc.payload = t.to_json();
        doc.created_with = {{"command", "repro"}, {"seed", opt.seeds}, {"config", {{"table", a.table}}}};
        save_document(a.out, doc);
        write_text(csv_path(a.out), t.to_csv());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-basis spiking neuron fitting and Transformer conversion"};
    app.require_subcommand(1);

    FitArgs fa;
    auto* fit = app.add_subcommand("fit", "Fit an MBE approximator to a target on an interval");
    fit->add_option("--target", fa.target, "gelu, tanh, silu, relu, exp2, inv, invsqrt")->required();
    fit->add_option("--interval", fa.interval, "a,b")->required()->allow_extra_args(false);
    fit->add_option("--n", fa.n, "Number of bases")->capture_default_str();
    fit->add_option("--t", fa.t, "Timesteps")->capture_default_str();
    fit->add_flag("--no-decay", fa.no_decay, "Free per-step schedules (ablation)");
    fit->add_option("--seed", fa.seed)->capture_default_str();
    fit->add_option("--samples", fa.samples)->capture_default_str();
    fit->add_option("--out", fa.out, "Approximator document to write");

    BuildArgs ba;
    auto* build = app.add_subcommand("build", "Write a seeded reference Transformer");
    build->add_option("--d-model", ba.config.d_model)->capture_default_str();
    build->add_option("--heads", ba.config.n_heads)->capture_default_str();
    build->add_option("--d-ff", ba.config.d_ff)->capture_default_str();
    build->add_option("--layers", ba.config.n_layers)->capture_default_str();
    build->add_option("--seq", ba.config.seq_len)->capture_default_str();
    build->add_option("--seed", ba.config.seed)->capture_default_str();
    build->add_option("--activation", ba.activation, "gelu or tanh")->capture_default_str();
    build->add_option("--out", ba.out)->required();

    InputsArgs ia;
    auto* inputs = app.add_subcommand("inputs", "Write seeded N(0,1) input batches for a model");
    inputs->add_option("--model", ia.model)->required();
    inputs->add_option("--batches", ia.batches)->capture_default_str();
    inputs->add_option("--seed", ia.seed, "Batch b uses seed + b")->capture_default_str();
    inputs->add_option("--out", ia.out)->required();

    CalibrateArgs ca;
    auto* cal = app.add_subcommand("calibrate", "Record per-site ranges of a float model");
    cal->add_option("--model", ca.model)->required();
    cal->add_option("--data", ca.data)->required();
    cal->add_option("--out", ca.out)->required();

    ConvertArgs va;
    auto* conv = app.add_subcommand("convert", "Replace nonlinear sites with spiking ones");
    conv->add_option("--model", va.model)->required();
    conv->add_option("--profile", va.profile)->required();
    conv->add_option("--store", va.store, std::string("Approximator directory (else $") + kStoreEnv + ", else " +
                                              kDefaultStore + ")");
    conv->add_option("--t", va.t)->capture_default_str();
    conv->add_option("--n-act", va.n_act)->capture_default_str();
    conv->add_option("--n-other", va.n_other)->capture_default_str();
    conv->add_option("--seed", va.seed, "Seed for approximators fitted on demand")->capture_default_str();
    conv->add_option("--out", va.out)->required();

    RunArgs ra;
    auto* run = app.add_subcommand("run", "Run a spiking model against its float forward");
    run->add_option("--snn", ra.snn)->required();
    run->add_option("--input", ra.input)->required();
    run->add_option("--report", ra.report)->required();
    run->add_option("--csv", ra.csv, "Per-site CSV (default: report path with .csv)");

    ReportArgs pa;
    auto* report = app.add_subcommand("report", "Energy, bound or fidelity tables");
    report->add_option("--kind", pa.kind, "energy, bounds or fidelity")->required();
    report->add_option("--rates", pa.rates, "Firing-rate file for --kind energy");
    report->add_option("--report", pa.report, "Run report for --kind fidelity");
    report->add_option("--out", pa.out, "Report document (CSV written beside it)");
    report->add_option("--t", pa.bounds.steps)->capture_default_str();
    report->add_option("--n", pa.bounds.bases)->capture_default_str();
    report->add_option("--samples", pa.bounds.samples)->capture_default_str();
    report->add_option("--lipschitz", pa.bounds.lipschitz)->capture_default_str();
    report->add_option("--y-max", pa.bounds.y_max)->capture_default_str();
    report->add_option("--l1", pa.bounds.l1)->capture_default_str();
    report->add_option("--alpha", pa.bounds.alpha_abs)->capture_default_str();
    report->add_option("--tau-max", pa.bounds.tau_max)->capture_default_str();
    report->add_option("--dt", pa.bounds.dt)->capture_default_str();

    ReproArgs pr;
    auto* repro = app.add_subcommand("repro", "Desk-scale reproduction tables");
    repro->add_option("--table", pr.table, "bases, silu, edi or timesteps")->required();
    repro->add_option("--seeds", pr.seeds)->capture_default_str();
    repro->add_option("--jobs", pr.jobs, "Concurrent fits (0: all cores)")->capture_default_str();
    repro->add_option("--out", pr.out, "Report document (CSV written beside it)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (*fit) return cmd_fit(fa);
        if (*build) return cmd_build(ba);
        if (*inputs) return cmd_inputs(ia);
        if (*cal) return cmd_calibrate(ca);
        if (*conv) return cmd_convert(va);
        if (*run) return cmd_run(ra);
        if (*report) return cmd_report(pa);
        if (*repro) return cmd_repro(pr);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return kExitUsage;
    } catch (const FitFailure& e) {
        std::fprintf(stderr, "fit failed: %s\n", e.what());
        return kExitFit;
    } catch (const ConversionError& e) {
        std::fprintf(stderr, "conversion error at site %s: %s\n", e.site().c_str(), e.what());
        return kExitConversion;
    } catch (const VersionMismatch& e) {
        std::fprintf(stderr, "version mismatch: %s\n", e.what());
        return kExitVersion;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitOther;
    }
    return kExitOther;
}
