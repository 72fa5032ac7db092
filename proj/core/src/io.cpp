#include "ccverify/io.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace ccv {
namespace {

using Kind = ModelError::Kind;
using nlohmann::json;

double read_number(const json& v, const std::string& where, std::optional<int> layer) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const auto& s = v.get_ref<const std::string&>();
    char* end = nullptr;
    const double parsed = std::strtod(s.c_str(), &end);
    if (end != s.c_str() && *end == '\0' && !std::isfinite(parsed)) {
      throw ModelError(Kind::non_finite, where + " is non-finite (" + s + ")", layer);
    }
  }
  throw ModelError(Kind::schema, where + " must be a number", layer);
}

Eigen::VectorXd read_vector(const json& v, const std::string& where, std::optional<int> layer) {
  if (!v.is_array()) throw ModelError(Kind::schema, where + " must be an array", layer);
  Eigen::VectorXd out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[static_cast<Eigen::Index>(i)] =
        read_number(v[i], where + "[" + std::to_string(i) + "]", layer);
  }
  return out;
}

const json& require(const json& doc, const char* key, std::optional<int> layer = std::nullopt) {
  if (!doc.is_object() || !doc.contains(key)) {
    throw ModelError(Kind::schema, std::string("missing key \"") + key + "\"", layer);
  }
  return doc.at(key);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ModelError(Kind::io, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

json network_to_json(const ReluNetwork& network) {
  json layers = json::array();
  for (const auto& layer : network.layers()) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      json row = json::array();
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) row.push_back(layer.weights(r, c));
      rows.push_back(std::move(row));
    }
    json bias = json::array();
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) bias.push_back(layer.bias[r]);
    layers.push_back({{"weights", std::move(rows)}, {"bias", std::move(bias)}});
  }
  return json{{"layers", std::move(layers)}};
}

ReluNetwork network_from_json(const json& doc) {
  const auto& layers = require(doc, "layers");
  if (!layers.is_array() || layers.empty()) {
    throw ModelError(Kind::schema, "\"layers\" must be a non-empty array");
  }
  std::vector<DenseLayer> out;
  out.reserve(layers.size());
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const int idx = static_cast<int>(k);
    const std::string where = "layers[" + std::to_string(k) + "]";
    const auto& wj = require(layers[k], "weights", idx);
    const auto& bj = require(layers[k], "bias", idx);
    if (!wj.is_array() || wj.empty()) {
      throw ModelError(Kind::schema, where + ".weights must be a non-empty 2-D array", idx);
    }
    const auto rows = static_cast<Eigen::Index>(wj.size());
    if (!wj[0].is_array()) {
      throw ModelError(Kind::schema, where + ".weights must be a 2-D array", idx);
    }
    const auto cols = static_cast<Eigen::Index>(wj[0].size());
    Eigen::MatrixXd w(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const auto row = read_vector(wj[r], where + ".weights[" + std::to_string(r) + "]", idx);
      if (row.size() != cols) {
        throw ModelError(Kind::dimension, where + ": ragged weight matrix", idx);
      }
      w.row(r) = row.transpose();
    }
    out.push_back(DenseLayer{std::move(w), read_vector(bj, where + ".bias", idx)});
  }
  return ReluNetwork(std::move(out));
}

ReluNetwork load_network(const std::filesystem::path& path) {
  return network_from_json(read_json_file(path));
}

void save_network(const ReluNetwork& network, const std::filesystem::path& path) {
  write_json_file(network_to_json(network), path);
}

json instance_to_json(const VerificationInstance& instance) {
  json x0 = json::array();
  for (Eigen::Index i = 0; i < instance.x0.size(); ++i) x0.push_back(instance.x0[i]);
  json doc{{"x0", std::move(x0)},
           {"delta", instance.delta},
           {"norm", to_string(instance.norm)},
           {"label", instance.spec.label},
           {"epsilon", instance.epsilon},
           {"t_max", instance.t_max},
           {"tau_max", instance.tau_max},
           {"lambda", instance.lambda},
           {"eps_comp", instance.eps_comp}};
  if (instance.spec.target) doc["target"] = *instance.spec.target;
  return doc;
}

VerificationInstance instance_from_json(const json& doc,
                                        std::shared_ptr<const ReluNetwork> network) {
  VerificationInstance inst;
  inst.network = std::move(network);
  inst.x0 = read_vector(require(doc, "x0"), "x0", std::nullopt);
  inst.delta = read_number(require(doc, "delta"), "delta", std::nullopt);
  const auto& norm = require(doc, "norm");
  if (!norm.is_string()) throw ModelError(Kind::schema, "\"norm\" must be \"inf\" or \"two\"");
  if (norm == "inf") {
    inst.norm = Norm::inf;
  } else if (norm == "two") {
    inst.norm = Norm::two;
  } else {
    throw ModelError(Kind::schema, "\"norm\" must be \"inf\" or \"two\"");
  }
  const auto read_int = [&](const char* key, int fallback) {
    if (!doc.contains(key) || doc.at(key).is_null()) return fallback;
    const auto& v = doc.at(key);
    if (!v.is_number_integer()) {
      throw ModelError(Kind::schema, std::string("\"") + key + "\" must be an integer");
    }
    return v.get<int>();
  };
  const auto read_real = [&](const char* key, double fallback) {
    if (!doc.contains(key) || doc.at(key).is_null()) return fallback;
    return read_number(doc.at(key), key, std::nullopt);
  };
  if (!require(doc, "label").is_number_integer()) {
    throw ModelError(Kind::schema, "\"label\" must be an integer");
  }
  inst.spec.label = doc.at("label").get<int>();
  if (doc.contains("target") && !doc.at("target").is_null()) {
    inst.spec.target = read_int("target", 0);
  }
  inst.epsilon = read_real("epsilon", kDefaultEpsilon);
  inst.t_max = read_int("t_max", kDefaultTMax);
  inst.tau_max = read_int("tau_max", kDefaultTauMax);
  inst.lambda = read_real("lambda", kDefaultLambda);
  inst.eps_comp = read_real("eps_comp", kDefaultEpsComp);
  inst.validate();
  return inst;
}

json parse_json_lenient(const std::string& text) {
  std::string fixed;
  fixed.reserve(text.size() + 16);
  bool in_string = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      fixed.push_back(c);
      if (c == '\\' && i + 1 < text.size()) {
        fixed.push_back(text[++i]);
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
      fixed.push_back(c);
      continue;
    }
    bool replaced = false;
    for (const char* token : {"-Infinity", "Infinity", "NaN"}) {
      const std::string_view tok(token);
      if (text.compare(i, tok.size(), tok) == 0) {
        fixed.push_back('"');
        fixed.append(tok);
        fixed.push_back('"');
        i += tok.size() - 1;
        replaced = true;
        break;
      }
    }
    if (!replaced) fixed.push_back(c);
  }
  try {
    return json::parse(fixed);
  } catch (const json::parse_error& e) {
    throw ModelError(Kind::schema, std::string("malformed JSON: ") + e.what());
  }
}

json read_json_file(const std::filesystem::path& path) {
  return parse_json_lenient(read_text(path));
}

void write_json_file(const json& doc, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ModelError(Kind::io, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

std::vector<json> instance_documents(const json& doc) {
  if (doc.is_array()) return {doc.begin(), doc.end()};
  if (doc.is_object() && doc.contains("instances")) {
    const auto& arr = doc.at("instances");
    if (!arr.is_array()) throw ModelError(Kind::schema, "\"instances\" must be an array");
    return {arr.begin(), arr.end()};
  }
  if (doc.is_object()) return {doc};
  throw ModelError(Kind::schema, "instance file must hold an object or an array");
}

}  // namespace ccv
