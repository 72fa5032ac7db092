#pragma once

#include <compare>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace ccv {

enum class Norm { inf, two };
enum class Phase : std::uint8_t { inactive = 0, active = 1 };

/// A hidden ReLU neuron, addressed by 0-based hidden-layer index and
/// 0-based position inside that layer.
struct NeuronId {
  int layer = 0;
  int index = 0;
  auto operator<=>(const NeuronId&) const = default;
};

std::string to_string(NeuronId id);
std::string to_string(Norm norm);
std::string to_string(Phase phase);

/// Per hidden layer, one byte per neuron: 1 when the pre-activation is
/// strictly positive.
using ActivationPattern = std::vector<std::vector<std::uint8_t>>;

class ModelError : public std::runtime_error {
 public:
  enum class Kind { schema, dimension, non_finite, invalid_spec, invalid_instance, io };

  ModelError(Kind kind, const std::string& what, std::optional<int> layer = std::nullopt)
      : std::runtime_error(what), kind_(kind), layer_(layer) {}

  Kind kind() const noexcept { return kind_; }
  /// Offending layer (0-based, counting the output layer last), if any.
  std::optional<int> layer() const noexcept { return layer_; }

 private:
  Kind kind_;
  std::optional<int> layer_;
};

struct DenseLayer {
  Eigen::MatrixXd weights;  // [out x in]
  Eigen::VectorXd bias;     // [out]
};

/// Fully connected network; every layer except the last is followed by ReLU.
/// Immutable after construction.
class ReluNetwork {
 public:
  /// Validates dimension chaining and finiteness; throws ModelError.
  explicit ReluNetwork(std::vector<DenseLayer> layers);

  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  int num_hidden() const noexcept { return static_cast<int>(layers_.size()) - 1; }
  int input_dim() const noexcept { return static_cast<int>(layers_.front().weights.cols()); }
  int output_dim() const noexcept { return static_cast<int>(layers_.back().weights.rows()); }
  int hidden_width(int k) const { return static_cast<int>(layers_.at(k).weights.rows()); }
  int total_hidden() const noexcept;

  /// Hidden layer k (0-based); the output layer is layer(num_hidden()).
  const DenseLayer& layer(int k) const { return layers_.at(k); }
  const DenseLayer& output_layer() const noexcept { return layers_.back(); }

 private:
  std::vector<DenseLayer> layers_;
};

struct ForwardResult {
  Eigen::VectorXd logits;
  std::vector<Eigen::VectorXd> preacts;  // hidden layers only
  ActivationPattern pattern;
};

ForwardResult forward_eval(const ReluNetwork& network, const Eigen::VectorXd& x);

/// f(x) = z_label - z_target, or f(x) = z_label when no target is given
/// (single-output networks whose output already is the margin).
struct Specification {
  int label = 0;
  std::optional<int> target;

  void validate(int output_dim) const;
  /// Coefficients c over the logits with f = c^T z^L.
  Eigen::VectorXd objective(int output_dim) const;
};

double spec_value(const ReluNetwork& network, const Specification& spec, const Eigen::VectorXd& x);

/// Gradient of f at x through the activation pattern at x (a subgradient on
/// the measure-zero set of kinks).
Eigen::VectorXd spec_gradient(const ReluNetwork& network, const Specification& spec,
                              const Eigen::VectorXd& x);

struct InputBox {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  Eigen::VectorXd center() const { return 0.5 * (lower + upper); }
  Eigen::VectorXd radius() const { return 0.5 * (upper - lower); }
  int dim() const { return static_cast<int>(lower.size()); }
};

inline constexpr double kDefaultEpsilon = 1e-3;
inline constexpr int kDefaultTMax = 10000;
inline constexpr int kDefaultTauMax = 20;
inline constexpr double kDefaultLambda = 0.1;
inline constexpr double kDefaultEpsComp = 1e-6;

struct VerificationInstance {
  std::shared_ptr<const ReluNetwork> network;
  Eigen::VectorXd x0;
  double delta = 0.0;
  Norm norm = Norm::inf;
  Specification spec;
  double epsilon = kDefaultEpsilon;
  int t_max = kDefaultTMax;
  int tau_max = kDefaultTauMax;
  double lambda = kDefaultLambda;
  double eps_comp = kDefaultEpsComp;

  /// Throws ModelError on hard violations; returns advisory warnings
  /// (eps_comp outside [1e-8, 1e-5]).
  std::vector<std::string> validate() const;

  const ReluNetwork& net() const { return *network; }
  Eigen::VectorXd objective() const { return spec.objective(network->output_dim()); }
  /// The l_inf ball itself, or the enclosing box of the l_2 ball.
  InputBox box() const;
  bool contains(const Eigen::VectorXd& x, double tol = 1e-9) const;
  /// Nearest point of the input set (clip for l_inf, radial scaling for l_2).
  Eigen::VectorXd project(const Eigen::VectorXd& x) const;
  double value(const Eigen::VectorXd& x) const { return spec_value(*network, spec, x); }
};

}  // namespace ccv
