#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ccverify/model.hpp"

namespace ccv {

// Model JSON:    {"layers":[{"weights":[[...],...], "bias":[...]}, ...]}
// Instance JSON: {"x0":[...], "delta":r, "norm":"inf"|"two", "label":k,
//                 "target":a, "epsilon":e, "t_max":n, "tau_max":m,
//                 "lambda":l, "eps_comp":c}
// "target" may be omitted for single-output networks. The last five keys
// default to kDefaultEpsilon, kDefaultTMax, kDefaultTauMax, kDefaultLambda
// and kDefaultEpsComp. An optional "model" key names a model file relative
// to the instance file.

nlohmann::json network_to_json(const ReluNetwork& network);
ReluNetwork network_from_json(const nlohmann::json& doc);

ReluNetwork load_network(const std::filesystem::path& path);
void save_network(const ReluNetwork& network, const std::filesystem::path& path);

/// Instance fields only; the caller supplies the network.
nlohmann::json instance_to_json(const VerificationInstance& instance);
VerificationInstance instance_from_json(const nlohmann::json& doc,
                                        std::shared_ptr<const ReluNetwork> network);

/// Parses JSON text, mapping bare NaN/Infinity tokens (as emitted by
/// Python's json module) to strings so they surface as non-finite errors
/// rather than parse errors.
nlohmann::json parse_json_lenient(const std::string& text);
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const nlohmann::json& doc, const std::filesystem::path& path);

/// An instance file holds one instance object, an array of them, or
/// {"instances":[...]}.
std::vector<nlohmann::json> instance_documents(const nlohmann::json& doc);

}  // namespace ccv
