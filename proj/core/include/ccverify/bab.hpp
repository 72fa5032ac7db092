#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "ccverify/branch.hpp"
#include "ccverify/model.hpp"
#include "ccverify/mpcc.hpp"
#include "ccverify/propagate.hpp"

namespace ccv {

enum class Verdict { safe, unsafe, gap };
std::string to_string(Verdict verdict);

struct HistoryEntry {
  int round = 0;
  double lower = 0.0;
  double upper = 0.0;
};

/// One warm-started NLP re-solve next to a cold single-start solve of the
/// same child problem.
struct ResolveComparison {
  int warm_iterations = 0;
  int cold_iterations = 0;
  SolveStatus warm_status = SolveStatus::infeasible;
  SolveStatus cold_status = SolveStatus::infeasible;
};

struct BabOptions {
  double timeout_s = 600.0;
  /// Replace the instance's tau_max by ceil(t_nlp / t_bound) measured at the
  /// root.
  bool auto_tau = false;
  MpccOptions mpcc{};
  BranchOptions branch{};
  OptimizeOptions bound{};
  /// Also run a cold single-start solve next to every warm-started re-solve
  /// and record both iteration counts (diagnostics; costs time).
  bool compare_cold = false;
};

struct Certificate {
  Verdict verdict = Verdict::gap;
  double global_lower = -kInfeasibleBound;
  double global_upper = kInfeasibleBound;
  double gap = kInfeasibleBound;
  std::optional<Eigen::VectorXd> counterexample;
  /// Input attaining global_upper, when one was found.
  std::optional<Eigen::VectorXd> incumbent;
  int rounds = 0;
  int nlp_solves = 0;
  int domains_pruned = 0;
  int bound_computations = 0;
  int tau_max = 0;
  double wall_time_s = 0.0;
  bool timed_out = false;
  std::vector<HistoryEntry> history;
  /// Filled for every warm-started re-solve when compare_cold is set.
  std::vector<ResolveComparison> resolve_comparisons;
  /// Root-level quantities, for reporting.
  double root_lower = -kInfeasibleBound;
  double root_upper = kInfeasibleBound;

  bool upper_found() const { return incumbent.has_value(); }
};

struct LeafBound {
  double lower = -kInfeasibleBound;
  /// Region LP value and its input, when the region is nonempty.
  std::optional<std::pair<double, Eigen::VectorXd>> upper;
};

/// Bounds a domain whose unstable neurons are all split. Its region LP is
/// exact; the LP duals on the sign rows become the beta multipliers of the
/// backward bound, which certifies the LP value (up to solver accuracy) as a
/// lower bound. A short ascent from those multipliers covers LP inaccuracy;
/// the larger of the two bounds is kept. An empty region is certified with
/// Farkas weights from a phase-I program, giving +inf.
LeafBound leaf_bound(const VerificationInstance& instance, const LayerBounds& root,
                     const SplitSet& splits, const ipm::Options& ipm_options = {});

Certificate verify(const VerificationInstance& instance, const BabOptions& options = {});

/// Error of one upper bound against an exact reference.
struct Metrics {
  double abs_err = 0.0;  // |u - f*|
  /// abs_err / |f*|; equal to abs_err when f* == 0.
  double rel_err = 0.0;
  double upper_rate = 0.0;
  double reference = 0.0;
};

struct MetricsSummary {
  std::vector<std::optional<Metrics>> cases;  // nullopt: no reference or no upper bound
  double mean_abs_err = 0.0;
  double mean_rel_err = 0.0;
  double median_rel_err = 0.0;
  /// Fraction of cases with a finite upper bound (phi).
  double upper_rate = 0.0;
  int counted = 0;  // cases entering the error aggregates
};

/// `uppers[i]` is +inf when case i produced no upper bound; a missing
/// reference excludes the case from the error aggregates but not from phi.
MetricsSummary compute_metrics(const std::vector<double>& uppers,
                               const std::vector<std::optional<double>>& references);

}  // namespace ccv
