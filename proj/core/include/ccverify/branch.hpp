#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "ccverify/model.hpp"
#include "ccverify/mpcc.hpp"
#include "ccverify/propagate.hpp"

namespace ccv {

// Neuron selection. Candidates are the unsplit unstable neurons of a domain.
// Stage one ranks them by |lambda_j| * (-u l / (u - l)), the backward
// coefficient times the intercept of the upper relaxation. Stage two
// re-scores the top K by bounding both children: child c of neuron j gains
// g_c = max(0, lb(child) - lb(domain)) (+inf for an empty child).
//
// The pattern-aligned score of neuron j is min over its children of
// g_c + lambda * m_c, where m_c is the alignment of the child's split set
// with the incumbent NLP pattern. The binding child supplies the reported
// base (g_c) and alignment (m_c), so combined == base + lambda * alignment,
// and lambda = 0 gives plain min-gain strong branching.

struct BranchScore {
  NeuronId neuron;
  double base = 0.0;
  double alignment = 0.0;
  double combined = 0.0;
  Phase binding_child = Phase::inactive;
};

struct BranchOptions {
  int top_k = 3;
};

struct BaseScores {
  double parent_lower = 0.0;
  std::vector<NeuronId> neurons;           // unsplit unstable, (layer, index) order
  std::vector<double> stage_one;           // aligned with neurons
  std::vector<std::size_t> candidates;     // positions re-scored in stage two
  std::vector<std::array<double, 2>> gain;  // per candidate: {inactive, active}
  int bound_evaluations = 0;

  /// Per-neuron base score: the min child gain for candidates, stage one
  /// otherwise.
  std::vector<std::pair<NeuronId, double>> scores() const;
};

/// Throws std::invalid_argument("no unstable neurons") when the domain has no
/// unsplit unstable neuron.
BaseScores base_scores(const VerificationInstance& instance, const LayerBounds& root,
                       const SplitSet& splits, const BranchOptions& options = {});

/// n_m / |U|: split neurons of `splits` inside `unstable` whose phase equals
/// a_nlp's.
double alignment_fraction(const SplitSet& splits, const SplitSet& a_nlp,
                          const std::vector<NeuronId>& unstable);

/// Scores the stage-two candidates. Without an incumbent pattern every
/// alignment is 0.
std::vector<BranchScore> pattern_aligned_scores(const BaseScores& base, const SplitSet& splits,
                                                const std::optional<SplitSet>& a_nlp,
                                                const std::vector<NeuronId>& unstable,
                                                double lambda);

/// Highest combined score; exact ties go to the lowest (layer, index).
const BranchScore& select_split(const std::vector<BranchScore>& scores);

struct Domain {
  SplitSet splits;
  double lower = -kInfeasibleBound;
  double upper = kInfeasibleBound;
  int depth = 0;
  std::uint64_t insertion_seq = 0;
  /// Nearest ancestor NLP solution and its problem, for warm starts.
  std::shared_ptr<const MpccSolution> warm;
  std::shared_ptr<const MpccProblem> warm_problem;
  /// Relaxation parameters of this domain's bound, the children's start.
  std::shared_ptr<const RelaxationParams> params;
};

/// Live domains ordered by lower bound, earliest insertion first among ties.
/// Not synchronized: one mutator at a time.
class DomainQueue {
 public:
  /// Assigns the insertion sequence number.
  void push(Domain domain);
  /// The domain with minimal lower bound, removed; nullopt when empty.
  std::optional<Domain> pop();
  const Domain* peek() const;
  bool empty() const noexcept { return items_.empty(); }
  std::size_t size() const noexcept { return items_.size(); }
  /// +inf when empty.
  double min_lower() const;

 private:
  std::map<std::pair<double, std::uint64_t>, Domain> items_;
  std::uint64_t next_seq_ = 0;
};

/// select_domain over an explicit list (used by tests and tools): index of
/// the minimal lower bound, earliest among ties; nullopt when empty.
std::optional<std::size_t> select_domain(const std::vector<Domain>& domains);

}  // namespace ccv
