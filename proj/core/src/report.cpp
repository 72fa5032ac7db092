#include "ccverify/report.hpp"

#include <cmath>
#include <vector>

namespace ccv {

nlohmann::json number_or_null(double value) {
  if (!std::isfinite(value)) return nullptr;
  return value;
}

nlohmann::json certificate_to_json(const Certificate& c) {
  using nlohmann::json;
  json doc;
  doc["verdict"] = to_string(c.verdict);
  doc["lower"] = number_or_null(c.global_lower);
  doc["upper"] = number_or_null(c.global_upper);
  doc["gap"] = number_or_null(c.gap);
  if (c.counterexample) {
    doc["counterexample"] =
        std::vector<double>(c.counterexample->data(), c.counterexample->data() + c.counterexample->size());
  } else {
    doc["counterexample"] = nullptr;
  }
  doc["rounds"] = c.rounds;
  doc["nlp_solves"] = c.nlp_solves;
  doc["domains_pruned"] = c.domains_pruned;
  doc["tau_max"] = c.tau_max;
  doc["time_s"] = c.wall_time_s;
  doc["timed_out"] = c.timed_out;
  json history = json::array();
  for (const auto& h : c.history) {
    history.push_back({{"round", h.round}, {"lower", number_or_null(h.lower)},
                       {"upper", number_or_null(h.upper)}});
  }
  doc["history"] = std::move(history);
  return doc;
}

}  // namespace ccv
