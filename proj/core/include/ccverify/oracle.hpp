#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>

#include <Eigen/Core>

#include "ccverify/model.hpp"

namespace ccv::oracle {

// Exact ground truth by activation-pattern enumeration. Each full pattern
// fixes every ReLU, which makes f affine on the closed polyhedral region
// P_a = {x in C : sign constraints of a}; the global minimum is the least
// region minimum. Regions are enumerated depth-first, layer by layer, and a
// neuron is only branched on when its pre-activation changes sign over the
// region built so far.
//
// Under the l_inf norm each region LP goes to the dense simplex in
// lp_simplex.hpp; under the l_2 norm (a ball constraint) to the
// interior-point solver.

struct PatternRegion {
  ActivationPattern pattern;  // every hidden neuron, 1 = active
  bool feasible = false;
  double value = 0.0;
  Eigen::VectorXd argmin;
};

class PatternCapExceeded : public std::runtime_error {
 public:
  PatternCapExceeded(int unstable, int cap);
  int unstable() const noexcept { return unstable_; }
  int cap() const noexcept { return cap_; }

 private:
  int unstable_;
  int cap_;
};

inline constexpr int kDefaultPatternCap = 20;

PatternRegion solve_pattern_lp(const VerificationInstance& instance, const ActivationPattern& pattern);

/// Calls `visit` for every enumerated leaf region. Throws PatternCapExceeded
/// when the root unstable count exceeds `pattern_cap`.
int for_each_region(const VerificationInstance& instance, int pattern_cap,
                    const std::function<void(const PatternRegion&)>& visit);

struct GlobalMin {
  double f_star = 0.0;
  Eigen::VectorXd x_star;
  int regions_solved = 0;
  int unstable = 0;  // |U| at the root
};

GlobalMin global_min(const VerificationInstance& instance, int pattern_cap = kDefaultPatternCap);

struct PgdOptions {
  int steps = 100;
  int restarts = 5;
  /// 0 selects 2.5 * delta / steps.
  double step_size = 0.0;
  std::uint64_t seed = 0;
};

struct PgdResult {
  double value = 0.0;
  Eigen::VectorXd x;
};

/// Projected (sub)gradient descent on f; sign steps under l_inf, normalized
/// steps under l_2. Restart 0 starts at x0, later ones at seeded uniform
/// points of C. Returns the best iterate seen, evaluated exactly.
PgdResult pgd_upper_bound(const VerificationInstance& instance, const PgdOptions& options = {});

}  // namespace ccv::oracle
