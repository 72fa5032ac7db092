#pragma once

#include <nlohmann/json.hpp>

#include "ccverify/bab.hpp"

namespace ccv {

// Certificate JSON:
//   {"verdict":"safe"|"unsafe"|"gap", "lower":l, "upper":u, "gap":g,
//    "counterexample":[...] | null, "rounds":n, "nlp_solves":n,
//    "domains_pruned":n, "tau_max":n, "time_s":t, "timed_out":b,
//    "history":[{"round":i,"lower":l,"upper":u}, ...]}
// Non-finite bounds are written as null.
nlohmann::json certificate_to_json(const Certificate& certificate);

/// Finite values as numbers, infinities and NaN as null.
nlohmann::json number_or_null(double value);

}  // namespace ccv
