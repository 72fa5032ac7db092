#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "ccverify/ipm.hpp"
#include "ccverify/model.hpp"
#include "ccverify/propagate.hpp"

namespace ccv {

// The activation-exact program for a split domain:
//
//   min  c^T (W_L zhat_{L-1} + b_L)
//   s.t. z_k = W_k zhat_{k-1} + b_k            for every hidden layer k
//        zhat = z (stable active), 0 (stable inactive)
//        z = p - q, zhat = p, p, q >= 0, p q <= eps_comp   (unsplit unstable)
//        zhat = z, z >= 0  /  zhat = 0, z <= 0             (split active / inactive)
//        l <= z <= u for unstable and split neurons, x in C
//
// zhat is substituted out, so the variables are x, every z, and (p, q) per
// unsplit unstable neuron.

/// Semantic identity of a variable or constraint, stable across domains so
/// that warm starts can map iterates between problems.
struct Key {
  enum class Kind : std::uint8_t {
    x,
    z,
    p,
    q,
    affine,    // equality: z row
    link,      // equality: z - p + q = 0
    x_lower,
    x_upper,
    z_lower,
    z_upper,
    p_nonneg,
    q_nonneg,
    comp,      // eps - p q >= 0
    ball,
  };
  Kind kind = Kind::x;
  int layer = -1;  // -1 for input-space entries
  int index = 0;

  auto operator<=>(const Key&) const = default;
};

std::string to_string(const Key& key);

struct MpccProblem {
  std::shared_ptr<const ReluNetwork> network;
  Specification spec;
  Norm norm = Norm::inf;
  Eigen::VectorXd x0;
  double delta = 0.0;
  double eps_comp = kDefaultEpsComp;
  LayerBounds bounds;
  SplitSet splits;
  /// Unsplit unstable neurons in (layer, index) order; one (p, q) pair and
  /// one complementarity row each.
  std::vector<NeuronId> complementarity;

  ipm::Program program;
  std::vector<Key> var_keys;
  std::vector<Key> eq_keys;
  std::vector<Key> ineq_keys;  // slack order of the program

  int x_var(int i) const { return i; }
  int z_var(NeuronId id) const { return z_offset_.at(id.layer) + id.index; }
  int p_var(std::size_t pair) const { return pair_offset_ + 2 * static_cast<int>(pair); }
  int q_var(std::size_t pair) const { return pair_offset_ + 2 * static_cast<int>(pair) + 1; }
  int num_vars() const { return program.num_vars; }

  /// A feasible-ish primal point from an input x: exact forward pass with
  /// p = max(z, 0), q = max(-z, 0), split neurons clamped to their phase.
  Eigen::VectorXd lift(const Eigen::VectorXd& x) const;
  /// The decoded input (first d variables) projected onto C.
  Eigen::VectorXd input_of(const Eigen::VectorXd& v) const;
  bool point_domain() const { return delta == 0.0; }
  /// Projection onto the input set C.
  Eigen::VectorXd project(const Eigen::VectorXd& x) const;

  /// Documented debug form: {"variables":[names], "equalities":[[row, var,
  /// coeff]...], "equality_constants":[...], "inequalities":..., "products":
  /// [[first, second, cap]...], "ball":{...}, "objective":{...}}.
  nlohmann::json to_json() const;

 private:
  friend MpccProblem build_problem(const VerificationInstance&, const LayerBounds&,
                                   const SplitSet&);
  std::vector<int> z_offset_;
  int pair_offset_ = 0;
};

/// Throws std::invalid_argument naming the neuron when a split contradicts
/// the given bounds (an active split on a neuron with u < 0, or inactive with
/// l > 0).
MpccProblem build_problem(const VerificationInstance& instance, const LayerBounds& bounds,
                          const SplitSet& splits);

enum class SolveStatus { solved, max_iter, infeasible };
std::string to_string(SolveStatus status);

struct Partition {
  std::vector<std::size_t> i_p;
  std::vector<std::size_t> i_q;
  std::vector<std::size_t> i_0;
  std::vector<std::uint8_t> pattern;
};

/// Positions refer to the entries of p and q.
Partition classify_partition(const Eigen::VectorXd& p, const Eigen::VectorXd& q, double tol);
/// 1e-5 * max(1, max |p|, max |q|).
double default_partition_tol(const Eigen::VectorXd& p, const Eigen::VectorXd& q);

struct MpccSolution {
  SolveStatus status = SolveStatus::infeasible;
  Eigen::VectorXd x_star;
  /// Exact f at x_star (the decoded upper-bound candidate).
  double objective = kInfeasibleBound;
  /// The program's own objective at the returned iterate.
  double nlp_objective = kInfeasibleBound;
  Eigen::VectorXd p_star;  // aligned with MpccProblem::complementarity
  Eigen::VectorXd q_star;
  Partition partition;
  /// a_nlp: split phases plus the decoded pattern on unsplit unstable neurons.
  SplitSet assignment;
  ipm::Iterate iterate;  // duals: iterate.y (equalities), iterate.w (inequalities)
  double kkt_residual = 0.0;
  int ipm_iterations = 0;
  bool warm_started = false;

  bool has_point() const { return status != SolveStatus::infeasible; }
};

/// Phase projection of a neuron that the child fixes but the parent relaxed.
struct PhaseProjection {
  NeuronId neuron;
  Phase phase = Phase::inactive;
  double z = 0.0;
  double p = 0.0;
  double q = 0.0;
};

struct WarmStart {
  ipm::Iterate iterate;
  double mu = 0.0;
  std::vector<PhaseProjection> projections;
};

inline constexpr double kWarmPush = 1e-4;

/// nullopt when the child's split set does not extend the parent's (the
/// caller then cold-starts).
std::optional<WarmStart> make_warm_start(const MpccSolution& parent_solution,
                                         const MpccProblem& parent_problem,
                                         const MpccProblem& child_problem);

struct MpccOptions {
  ipm::Options ipm{};
  /// Random feasible restarts in addition to the start at x0.
  int restarts = 4;
  std::uint64_t seed = 0;
  /// Cold starts first solve with every complementarity cap at this value
  /// and tighten it by factors of 100 down to eps_comp, each stage starting
  /// from the previous iterate. Values <= eps_comp solve at eps_comp directly.
  double continuation_start = 1e-4;
};

/// With a warm start only that iterate is run; otherwise x0 plus `restarts`
/// seeded random inputs, each through the cap continuation, keeping the best
/// decoded objective. ipm_iterations counts every stage.
MpccSolution solve(const MpccProblem& problem, const std::optional<WarmStart>& warm = std::nullopt,
                   const MpccOptions& options = {});

struct PolishResult {
  bool feasible = false;
  double value = kInfeasibleBound;  // exact f at x
  Eigen::VectorXd x;
  ipm::Iterate iterate;
  MpccProblem problem;  // the pattern LP that was solved
};

/// Solves the LP with every unstable neuron of `bounds` fixed to `pattern`
/// (neurons missing from `pattern` keep their split, if any).
PolishResult region_lp_polish(const VerificationInstance& instance, const LayerBounds& bounds,
                              const SplitSet& pattern, const ipm::Options& options = {});

/// solve() followed by region_lp_polish on the decoded pattern; keeps the
/// smaller exact value.
MpccSolution upper_bound(const VerificationInstance& instance, const MpccProblem& problem,
                         const std::optional<WarmStart>& warm = std::nullopt,
                         const MpccOptions& options = {});

}  // namespace ccv
