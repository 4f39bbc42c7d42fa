#pragma once

// JSON documents for fitted approximators, calibration profiles, models and
// reports. Every document carries a format version and the settings that
// produced it:
//
//   {"created_with": {...}, "format_version": 1, "kind": "approximator",
//    "payload": {...}}
//
// Object keys are sorted and doubles are written in shortest round-trip
// form, so save(load(save(x))) reproduces the first file byte for byte.

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "mbe/converter.hpp"
#include "mbe/fit.hpp"

namespace mbe {

using Json = nlohmann::json;

inline constexpr int kStoreFormatVersion = 1;

enum class DocKind { Approximator, Calibration, Model, Report };

std::string_view doc_kind_name(DocKind k);
DocKind parse_doc_kind(std::string_view s);  // throws InvalidArgument

struct StoreDocument {
    int format_version = kStoreFormatVersion;
    DocKind kind = DocKind::Report;
    Json payload;
    Json created_with = Json::object();

    bool operator==(const StoreDocument&) const = default;
};

std::string dump_document(const StoreDocument& doc);
// Throws VersionMismatch for any version other than kStoreFormatVersion and
// InvalidArgument for malformed documents.
StoreDocument parse_document(std::string_view text);
// parse_document plus a kind check.
StoreDocument parse_document(std::string_view text, DocKind expected);

void save_document(const std::filesystem::path& path, const StoreDocument& doc);
StoreDocument load_document(const std::filesystem::path& path);
StoreDocument load_document(const std::filesystem::path& path, DocKind expected);

// Payload codecs. Each from_json throws InvalidArgument on missing fields.
Json fit_config_to_json(const FitConfig& c);
FitConfig fit_config_from_json(const Json& j);

Json approximator_to_json(const FittedApproximator& a);
FittedApproximator approximator_from_json(const Json& j);

Json profile_to_json(const CalibrationProfile& p);
CalibrationProfile profile_from_json(const Json& j);

Json model_config_to_json(const RefTransformerConfig& c);
RefTransformerConfig model_config_from_json(const Json& j);

Json convert_config_to_json(const ConvertConfig& c);
ConvertConfig convert_config_from_json(const Json& j);

Json matrix_to_json(const Eigen::MatrixXd& m);  // list of rows
Eigen::MatrixXd matrix_from_json(const Json& j);

// {"type": "float", "config", "layers"}
Json float_model_to_json(const FloatTransformer& m);
// {"type": "spiking", "model", "profile", "convert", "ops"}; rebuilt through
// convert(), so the sites are recomputed rather than stored.
Json spiking_model_to_json(const SpikingTransformer& s, const CalibrationProfile& profile);

bool is_spiking_model(const Json& payload);
FloatTransformer float_model_from_json(const Json& j);
SpikingTransformer spiking_model_from_json(const Json& j);

StoreDocument make_approximator_document(const FittedApproximator& a);

// A file name for an approximator that identifies it within a store
// directory: target, interval, N, T, seed, decay.
std::string approximator_file_name(const TargetFn& target, const FitConfig& config, bool decay);

}  // namespace mbe
