#pragma once

#include <limits>
#include <map>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "ccverify/model.hpp"

namespace ccv {

/// Certified pre-activation intervals for every hidden layer.
struct LayerBounds {
  std::vector<Eigen::VectorXd> lower;
  std::vector<Eigen::VectorXd> upper;

  int num_layers() const { return static_cast<int>(lower.size()); }
  double lo(NeuronId id) const { return lower[id.layer][id.index]; }
  double hi(NeuronId id) const { return upper[id.layer][id.index]; }
  bool is_unstable(NeuronId id) const { return lo(id) < 0.0 && hi(id) > 0.0; }
  /// The unstable set U in (layer, index) order.
  std::vector<NeuronId> unstable() const;
};

/// A partial ReLU phase assignment.
class SplitSet {
 public:
  SplitSet() = default;

  bool contains(NeuronId id) const { return assignments_.count(id) != 0; }
  std::optional<Phase> phase(NeuronId id) const;
  void assign(NeuronId id, Phase phase) { assignments_[id] = phase; }
  SplitSet with(NeuronId id, Phase phase) const;

  const std::map<NeuronId, Phase>& assignments() const noexcept { return assignments_; }
  std::size_t size() const noexcept { return assignments_.size(); }
  bool empty() const noexcept { return assignments_.empty(); }
  /// Every key of *this is assigned the same phase in `other`.
  bool subset_of(const SplitSet& other) const;

  bool operator==(const SplitSet&) const = default;

 private:
  std::map<NeuronId, Phase> assignments_;
};

/// a^T x + c, a lower bound on f over the domain it was computed for.
struct LinearBound {
  Eigen::VectorXd coeffs;
  double offset = 0.0;

  double evaluate(const Eigen::VectorXd& x) const { return coeffs.dot(x) + offset; }
};

/// Lower-relaxation slopes (alpha, read at unsplit unstable neurons) and
/// split multipliers (beta >= 0, read at split neurons), laid out per hidden
/// layer like LayerBounds.
struct RelaxationParams {
  std::vector<Eigen::VectorXd> alpha;
  std::vector<Eigen::VectorXd> beta;

  /// alpha = 1 where u >= -l, else 0; beta = 0.
  static RelaxationParams initial(const LayerBounds& bounds);
};

inline constexpr double kInfeasibleBound = std::numeric_limits<double>::infinity();

struct LowerBoundResult {
  /// max(backward bound, interval bound), or +inf when the split domain is
  /// provably empty.
  double lower = 0.0;
  LinearBound linear;
  bool infeasible = false;
  double backward_value = 0.0;
  double interval_value = 0.0;
};

LayerBounds ibp_bounds(const ReluNetwork& network, const InputBox& box);
/// Interval bounds on the instance's input box; for the l_2 norm this is the
/// enclosing box (sound, looser).
LayerBounds ibp_bounds(const VerificationInstance& instance);

/// Interval bounds intersected with layer-by-layer backward bounds. Used for
/// the root intermediate bounds.
LayerBounds crown_bounds(const VerificationInstance& instance);

/// Tightens `root` to a split domain: interval propagation with split
/// neurons fixed, intersected with `root`, plus the phase relations
/// (active => l >= 0, inactive => u <= 0). Returns nullopt when some
/// interval becomes empty.
std::optional<LayerBounds> restrict_bounds(const ReluNetwork& network, const InputBox& box,
                                           const LayerBounds& root, const SplitSet& splits);

/// Lower bound of f from the post-activation intervals of the last hidden
/// layer.
double interval_objective_bound(const VerificationInstance& instance, const LayerBounds& bounds);

/// Backward linear bound propagation over the split domain. With `params`
/// absent this uses the initial slopes and zero multipliers.
LowerBoundResult crown_lower_bound(const VerificationInstance& instance, const LayerBounds& root,
                                   const SplitSet& splits,
                                   const RelaxationParams* params = nullptr);

struct OptimizeOptions {
  int iters = 20;
  double step = 0.1;
  double decay = 0.98;
};

struct OptimizedBound {
  double lower = 0.0;
  double initial = 0.0;  // iteration-0 value (== crown_lower_bound)
  bool infeasible = false;
  int iterations = 0;
  RelaxationParams params;
  LinearBound linear;
};

/// Projected Adam ascent (step = learning rate, decayed geometrically) over alpha in [0,1] and beta >= 0; keeps
/// the best iterate. With `start` (typically the parent domain's params) the
/// ascent begins from whichever of `start` and the initial params bounds
/// higher; `initial` still reports the initial-params value.
OptimizedBound optimize_relaxation(const VerificationInstance& instance, const LayerBounds& root,
                                   const SplitSet& splits, const OptimizeOptions& options = {},
                                   const RelaxationParams* start = nullptr);

/// Bound of a child domain: optimize_relaxation started from the parent's
/// params, floored at the parent's bound (the child domain is a subset of the
/// parent's). With a finite ascent budget the raw child bound can fall below
/// the parent's, because a fresh split multiplier starts at zero.
OptimizedBound child_bound(const VerificationInstance& instance, const LayerBounds& root,
                           const SplitSet& child_splits, const OptimizedBound& parent,
                           const OptimizeOptions& options = {});

struct BackwardCoefficients {
  LayerBounds domain;                   // restrict_bounds of the split domain
  std::vector<Eigen::VectorXd> lambda;  // coefficient of f on each hidden post-activation
};

/// Coefficients of the initial backward bound; nullopt when the domain is
/// empty.
std::optional<BackwardCoefficients> backward_coefficients(const VerificationInstance& instance,
                                                         const LayerBounds& root,
                                                         const SplitSet& splits);

/// Certifies that the split domain is empty using nonnegative weights y on
/// the split sign constraints (s_j z_j >= 0, s_j = +1 active, -1 inactive):
/// true when the backward lower bound of -sum_j y_j s_j z_j over the
/// relaxed domain is strictly positive.
bool certify_empty_domain(const VerificationInstance& instance, const LayerBounds& root,
                          const SplitSet& splits, const std::vector<Eigen::VectorXd>& weights);

}  // namespace ccv
