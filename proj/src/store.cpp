#include "mbe/store.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "mbe/error.hpp"

namespace mbe {

namespace {

const Json& field(const Json& j, const char* key) {
    if (!j.is_object()) throw InvalidArgument(std::string("expected an object holding '") + key + "'");
    auto it = j.find(key);
    if (it == j.end()) throw InvalidArgument(std::string("missing field '") + key + "'");
    return *it;
}

template <typename T>
T get(const Json& j, const char* key) {
    try {
        return field(j, key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("field '") + key + "': " + e.what());
    }
}

Json vector_to_json(const Eigen::VectorXd& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

Eigen::VectorXd vector_from_json(const Json& j) {
    if (!j.is_array()) throw InvalidArgument("expected a number array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw InvalidArgument("expected a number array");
        v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    }
    return v;
}

Json target_to_json(const TargetFn& t) {
    return {{"id", std::string(target_name(t.id))}, {"a", t.a}, {"b", t.b}};
}

TargetFn target_from_json(const Json& j) {
    TargetFn t;
    t.id = parse_target(get<std::string>(j, "id"));
    t.a = get<double>(j, "a");
    t.b = get<double>(j, "b");
    t.validate();
    return t;
}

Json layer_to_json(const LayerWeights& l) {
    return {{"wq", matrix_to_json(l.wq)},        {"wk", matrix_to_json(l.wk)},
            {"wv", matrix_to_json(l.wv)},        {"wo", matrix_to_json(l.wo)},
            {"bq", vector_to_json(l.bq)},        {"bk", vector_to_json(l.bk)},
            {"bv", vector_to_json(l.bv)},        {"bo", vector_to_json(l.bo)},
            {"w1", matrix_to_json(l.w1)},        {"b1", vector_to_json(l.b1)},
            {"w2", matrix_to_json(l.w2)},        {"b2", vector_to_json(l.b2)},
            {"ln1_gamma", vector_to_json(l.ln1_gamma)}, {"ln1_beta", vector_to_json(l.ln1_beta)},
            {"ln2_gamma", vector_to_json(l.ln2_gamma)}, {"ln2_beta", vector_to_json(l.ln2_beta)}};
}

LayerWeights layer_from_json(const Json& j) {
    LayerWeights l;
    l.wq = matrix_from_json(field(j, "wq"));
    l.wk = matrix_from_json(field(j, "wk"));
    l.wv = matrix_from_json(field(j, "wv"));
    l.wo = matrix_from_json(field(j, "wo"));
    l.bq = vector_from_json(field(j, "bq"));
    l.bk = vector_from_json(field(j, "bk"));
    l.bv = vector_from_json(field(j, "bv"));
    l.bo = vector_from_json(field(j, "bo"));
    l.w1 = matrix_from_json(field(j, "w1"));
    l.b1 = vector_from_json(field(j, "b1"));
    l.w2 = matrix_from_json(field(j, "w2"));
    l.b2 = vector_from_json(field(j, "b2"));
    l.ln1_gamma = vector_from_json(field(j, "ln1_gamma"));
    l.ln1_beta = vector_from_json(field(j, "ln1_beta"));
    l.ln2_gamma = vector_from_json(field(j, "ln2_gamma"));
    l.ln2_beta = vector_from_json(field(j, "ln2_beta"));
    return l;
}

const char* const kOpSlots[] = {"gelu", "tanh", "exp2", "inv", "invsqrt"};

}  // namespace

std::string_view doc_kind_name(DocKind k) {
    switch (k) {
        case DocKind::Approximator: return "approximator";
        case DocKind::Calibration: return "calibration";
        case DocKind::Model: return "model";
        case DocKind::Report: return "report";
    }
    return "report";
}

DocKind parse_doc_kind(std::string_view s) {
    for (auto k : {DocKind::Approximator, DocKind::Calibration, DocKind::Model, DocKind::Report}) {
        if (doc_kind_name(k) == s) return k;
    }
    throw InvalidArgument("unknown document kind '" + std::string(s) + "'");
}

std::string dump_document(const StoreDocument& doc) {
    Json j = {{"format_version", doc.format_version},
              {"kind", std::string(doc_kind_name(doc.kind))},
              {"payload", doc.payload},
              {"created_with", doc.created_with}};
    return j.dump(1) + "\n";
}

StoreDocument parse_document(std::string_view text) {
    Json j;
    try {
        j = Json::parse(text.begin(), text.end());
    } catch (const nlohmann::json::parse_error& e) {
        throw InvalidArgument(std::string("document is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw InvalidArgument("document must be a JSON object");
    const Json& v = field(j, "format_version");
    if (!v.is_number_integer()) throw InvalidArgument("format_version must be an integer");
    const auto version = v.get<long long>();
    if (version != kStoreFormatVersion) {
        throw VersionMismatch("document format_version " + std::to_string(version) +
                              " is not supported (this build reads version " +
                              std::to_string(kStoreFormatVersion) + ")");
    }
    StoreDocument doc;
    doc.format_version = static_cast<int>(version);
    doc.kind = parse_doc_kind(get<std::string>(j, "kind"));
    doc.payload = field(j, "payload");
    doc.created_with = field(j, "created_with");
    return doc;
}

StoreDocument parse_document(std::string_view text, DocKind expected) {
    StoreDocument doc = parse_document(text);
    if (doc.kind != expected) {
        throw InvalidArgument("expected a " + std::string(doc_kind_name(expected)) + " document, got " +
                              std::string(doc_kind_name(doc.kind)));
    }
    return doc;
}

void save_document(const std::filesystem::path& path, const StoreDocument& doc) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidArgument("cannot write " + path.string());
    out << dump_document(doc);
    if (!out) throw InvalidArgument("write failed: " + path.string());
}

namespace {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidArgument("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

StoreDocument load_document(const std::filesystem::path& path) { return parse_document(read_file(path)); }

StoreDocument load_document(const std::filesystem::path& path, DocKind expected) {
    return parse_document(read_file(path), expected);
}

Json fit_config_to_json(const FitConfig& c) {
    return {{"samples", c.samples},
            {"epochs", c.epochs},
            {"lr", c.lr},
            {"lr_decay", c.lr_decay},
            {"seed", c.seed},
            {"bases", c.bases},
            {"steps", c.steps},
            {"surrogate_width", c.surrogate_width},
            {"pool", c.pool},
            {"rounds", c.rounds},
            {"proposals", c.proposals},
            {"input", std::string(input_mode_name(c.input))}};
}

FitConfig fit_config_from_json(const Json& j) {
    FitConfig c;
    c.samples = get<int>(j, "samples");
    c.epochs = get<int>(j, "epochs");
    c.lr = get<double>(j, "lr");
    c.lr_decay = get<double>(j, "lr_decay");
    c.seed = get<std::uint64_t>(j, "seed");
    c.bases = get<int>(j, "bases");
    c.steps = get<int>(j, "steps");
    c.surrogate_width = get<double>(j, "surrogate_width");
    c.pool = get<int>(j, "pool");
    c.rounds = get<int>(j, "rounds");
    c.proposals = get<int>(j, "proposals");
    c.input = parse_input_mode(get<std::string>(j, "input"));
    return c;
}

Json matrix_to_json(const Eigen::MatrixXd& m) {
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const Json& j) {
    if (!j.is_array()) throw InvalidArgument("expected a matrix (array of rows)");
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : Eigen::Index(0);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const Eigen::VectorXd r = vector_from_json(j[static_cast<std::size_t>(i)]);
        if (r.size() != cols) throw InvalidArgument("matrix rows differ in length");
        m.row(i) = r.transpose();
    }
    return m;
}

Json approximator_to_json(const FittedApproximator& a) {
    const auto& n = a.neuron;
    Json neuron = {{"steps", n.steps()},
                   {"alpha", n.alpha()},
                   {"weights", vector_to_json(n.weights())},
                   {"input", {{"shift", n.input_map().shift}, {"gain", n.input_map().gain}}},
                   {"decay", n.has_decay()}};
    if (n.has_decay()) {
        Json bases = Json::array();
        for (const auto& b : n.bases()) {
            bases.push_back({{"tau_d", b.tau_d}, {"tau_r", b.tau_r}, {"tau_vth", b.tau_vth}, {"dt", b.dt}});
        }
        neuron["bases"] = std::move(bases);
    } else {
        neuron["d"] = matrix_to_json(n.intensity());
        neuron["r"] = matrix_to_json(n.reset());
        neuron["vth"] = matrix_to_json(n.threshold());
    }
    return {{"target", target_to_json(a.target)},
            {"mse", a.mse},
            {"config", fit_config_to_json(a.config)},
            {"neuron", std::move(neuron)}};
}

FittedApproximator approximator_from_json(const Json& j) {
    FittedApproximator a;
    a.target = target_from_json(field(j, "target"));
    a.mse = get<double>(j, "mse");
    a.config = fit_config_from_json(field(j, "config"));
    const Json& n = field(j, "neuron");
    InputMap<double> map;
    map.shift = get<double>(field(n, "input"), "shift");
    map.gain = get<double>(field(n, "input"), "gain");
    const double alpha = get<double>(n, "alpha");
    Eigen::VectorXd w = vector_from_json(field(n, "weights"));
    if (get<bool>(n, "decay")) {
        std::vector<MbeBasis<double>> bases;
        for (const auto& b : field(n, "bases")) {
            bases.push_back({get<double>(b, "tau_d"), get<double>(b, "tau_r"), get<double>(b, "tau_vth"),
                             get<double>(b, "dt")});
        }
        a.neuron = MbeNeuron<double>::from_decay(alpha, std::move(bases), std::move(w),
                                                 get<int>(n, "steps"), map);
    } else {
        a.neuron = MbeNeuron<double>::from_schedules(matrix_from_json(field(n, "d")),
                                                     matrix_from_json(field(n, "r")),
                                                     matrix_from_json(field(n, "vth")), std::move(w),
                                                     map, alpha);
        if (a.neuron.steps() != get<int>(n, "steps")) throw InvalidArgument("neuron: steps differ from schedule");
    }
    return a;
}

Json profile_to_json(const CalibrationProfile& p) {
    Json sites = Json::object();
    for (const auto& [role, r] : p.sites) {
        sites[role] = {{"min", r.min}, {"max", r.max}, {"count", r.count}, {"histogram", r.histogram}};
    }
    return {{"sites", std::move(sites)}, {"histogram_bins", kHistogramBins}};
}

CalibrationProfile profile_from_json(const Json& j) {
    if (get<int>(j, "histogram_bins") != kHistogramBins) {
        throw InvalidArgument("calibration profile uses a different histogram size");
    }
    CalibrationProfile p;
    for (const auto& [role, r] : field(j, "sites").items()) {
        SiteRecord s;
        s.min = get<double>(r, "min");
        s.max = get<double>(r, "max");
        s.count = get<std::int64_t>(r, "count");
        s.histogram = get<std::vector<std::int64_t>>(r, "histogram");
        p.sites.emplace(role, std::move(s));
    }
    return p;
}

Json model_config_to_json(const RefTransformerConfig& c) {
    return {{"d_model", c.d_model},
            {"n_heads", c.n_heads},
            {"d_ff", c.d_ff},
            {"n_layers", c.n_layers},
            {"seq_len", c.seq_len},
            {"seed", c.seed},
            {"activation", std::string(activation_name(c.activation))},
            {"ln_eps", c.ln_eps}};
}

RefTransformerConfig model_config_from_json(const Json& j) {
    RefTransformerConfig c;
    c.d_model = get<int>(j, "d_model");
    c.n_heads = get<int>(j, "n_heads");
    c.d_ff = get<int>(j, "d_ff");
    c.n_layers = get<int>(j, "n_layers");
    c.seq_len = get<int>(j, "seq_len");
    c.seed = get<std::uint64_t>(j, "seed");
    c.activation = parse_activation(get<std::string>(j, "activation"));
    c.ln_eps = get<double>(j, "ln_eps");
    c.validate();
    return c;
}

Json convert_config_to_json(const ConvertConfig& c) {
    return {{"steps", c.steps}, {"n_act", c.n_act}, {"n_other", c.n_other}, {"seed", c.seed}, {"pad", c.pad}};
}

ConvertConfig convert_config_from_json(const Json& j) {
    ConvertConfig c;
    c.steps = get<int>(j, "steps");
    c.n_act = get<int>(j, "n_act");
    c.n_other = get<int>(j, "n_other");
    c.seed = get<std::uint64_t>(j, "seed");
    c.pad = get<double>(j, "pad");
    return c;
}

Json float_model_to_json(const FloatTransformer& m) {
    Json layers = Json::array();
    for (const auto& l : m.layers()) layers.push_back(layer_to_json(l));
    return {{"type", "float"}, {"config", model_config_to_json(m.config())}, {"layers", std::move(layers)}};
}

FloatTransformer float_model_from_json(const Json& j) {
    if (get<std::string>(j, "type") != "float") throw InvalidArgument("expected a float model payload");
    const RefTransformerConfig c = model_config_from_json(field(j, "config"));
    std::vector<LayerWeights> layers;
    for (const auto& l : field(j, "layers")) layers.push_back(layer_from_json(l));
    return FloatTransformer(c, std::move(layers));
}

bool is_spiking_model(const Json& payload) {
    return payload.is_object() && payload.value("type", std::string()) == "spiking";
}

Json spiking_model_to_json(const SpikingTransformer& s, const CalibrationProfile& profile) {
    Json ops = Json::object();
    SpikingOpSet set = s.ops();
    for (const char* name : kOpSlots) {
        const auto& slot = set.slot(parse_target(name));
        if (slot) ops[name] = approximator_to_json(*slot);
    }
    return {{"type", "spiking"},
            {"model", float_model_to_json(s.model())},
            {"profile", profile_to_json(profile)},
            {"convert", convert_config_to_json(s.config())},
            {"ops", std::move(ops)}};
}

SpikingTransformer spiking_model_from_json(const Json& j) {
    if (!is_spiking_model(j)) throw InvalidArgument("expected a spiking model payload");
    const FloatTransformer model = float_model_from_json(field(j, "model"));
    const CalibrationProfile profile = profile_from_json(field(j, "profile"));
    const ConvertConfig cc = convert_config_from_json(field(j, "convert"));
    SpikingOpSet ops;
    for (const auto& [name, a] : field(j, "ops").items()) {
        ops.slot(parse_target(name)) = approximator_from_json(a);
    }
    return convert(model, profile, ops, cc);
}

StoreDocument make_approximator_document(const FittedApproximator& a) {
    StoreDocument doc;
    doc.kind = DocKind::Approximator;
    doc.payload = approximator_to_json(a);
    doc.created_with = {{"command", "fit"},
                        {"seed", a.config.seed},
                        {"config", fit_config_to_json(a.config)},
                        {"decay", a.neuron.has_decay()}};
    return doc;
}

std::string approximator_file_name(const TargetFn& target, const FitConfig& config, bool decay) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s_%.17g_%.17g_n%d_t%d_s%llu%s.json",
                  std::string(target_name(target.id)).c_str(), target.a, target.b, config.bases,
                  config.steps, static_cast<unsigned long long>(config.seed), decay ? "" : "_nodecay");
    return buf;
}

}  // namespace mbe
