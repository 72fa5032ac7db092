#include "ccverify/model.hpp"

#include <cmath>
#include <sstream>

namespace ccv {

std::string to_string(NeuronId id) {
  return "(" + std::to_string(id.layer) + "," + std::to_string(id.index) + ")";
}

std::string to_string(Norm norm) { return norm == Norm::inf ? "inf" : "two"; }

std::string to_string(Phase phase) { return phase == Phase::active ? "active" : "inactive"; }

ReluNetwork::ReluNetwork(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  using Kind = ModelError::Kind;
  if (layers_.size() < 2) {
    throw ModelError(Kind::schema, "network needs at least one hidden layer and an output layer");
  }
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto& layer = layers_[k];
    const int idx = static_cast<int>(k);
    if (layer.weights.rows() == 0 || layer.weights.cols() == 0) {
      throw ModelError(Kind::dimension, "layer " + std::to_string(k) + " has an empty weight matrix",
                       idx);
    }
    if (layer.bias.size() != layer.weights.rows()) {
      std::ostringstream msg;
      msg << "layer " << k << ": bias length " << layer.bias.size() << " does not match "
          << layer.weights.rows() << " output rows";
      throw ModelError(Kind::dimension, msg.str(), idx);
    }
    if (k > 0 && layer.weights.cols() != layers_[k - 1].weights.rows()) {
      std::ostringstream msg;
      msg << "layer " << k << ": input dimension " << layer.weights.cols()
          << " does not chain with layer " << k - 1 << " output dimension "
          << layers_[k - 1].weights.rows();
      throw ModelError(Kind::dimension, msg.str(), idx);
    }
    if (!layer.weights.allFinite() || !layer.bias.allFinite()) {
      throw ModelError(Kind::non_finite, "layer " + std::to_string(k) + " has a non-finite entry",
                       idx);
    }
  }
}

int ReluNetwork::total_hidden() const noexcept {
  int total = 0;
  for (int k = 0; k < num_hidden(); ++k) total += hidden_width(k);
  return total;
}

ForwardResult forward_eval(const ReluNetwork& network, const Eigen::VectorXd& x) {
  if (x.size() != network.input_dim()) {
    std::ostringstream msg;
    msg << "layer 0: input has dimension " << x.size() << ", network expects "
        << network.input_dim();
    throw ModelError(ModelError::Kind::dimension, msg.str(), 0);
  }
  ForwardResult out;
  out.preacts.reserve(network.num_hidden());
  out.pattern.reserve(network.num_hidden());
  Eigen::VectorXd act = x;
  for (int k = 0; k < network.num_hidden(); ++k) {
    const auto& layer = network.layer(k);
    Eigen::VectorXd z = layer.weights * act + layer.bias;
    std::vector<std::uint8_t> bits(z.size());
    for (Eigen::Index j = 0; j < z.size(); ++j) bits[j] = z[j] > 0.0 ? 1 : 0;
    act = z.cwiseMax(0.0);
    out.preacts.push_back(std::move(z));
    out.pattern.push_back(std::move(bits));
  }
  out.logits = network.output_layer().weights * act + network.output_layer().bias;
  return out;
}

void Specification::validate(int output_dim) const {
  using Kind = ModelError::Kind;
  if (label < 0 || label >= output_dim) {
    throw ModelError(Kind::invalid_spec, "label index " + std::to_string(label) +
                                             " out of range for " + std::to_string(output_dim) +
                                             " outputs");
  }
  if (target) {
    if (*target < 0 || *target >= output_dim) {
      throw ModelError(Kind::invalid_spec, "target index " + std::to_string(*target) +
                                               " out of range for " +
                                               std::to_string(output_dim) + " outputs");
    }
    if (*target == label) {
      throw ModelError(Kind::invalid_spec, "label and target must differ");
    }
  }
}

Eigen::VectorXd Specification::objective(int output_dim) const {
  validate(output_dim);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(output_dim);
  c[label] = 1.0;
  if (target) c[*target] = -1.0;
  return c;
}

double spec_value(const ReluNetwork& network, const Specification& spec, const Eigen::VectorXd& x) {
  spec.validate(network.output_dim());
  const auto fwd = forward_eval(network, x);
  double f = fwd.logits[spec.label];
  if (spec.target) f -= fwd.logits[*spec.target];
  return f;
}

Eigen::VectorXd spec_gradient(const ReluNetwork& network, const Specification& spec,
                              const Eigen::VectorXd& x) {
  const auto fwd = forward_eval(network, x);
  Eigen::VectorXd g = network.output_layer().weights.transpose() * spec.objective(network.output_dim());
  for (int k = network.num_hidden() - 1; k >= 0; --k) {
    for (Eigen::Index j = 0; j < g.size(); ++j) {
      if (!fwd.pattern[k][j]) g[j] = 0.0;
    }
    g = network.layer(k).weights.transpose() * g;
  }
  return g;
}

std::vector<std::string> VerificationInstance::validate() const {
  using Kind = ModelError::Kind;
  if (!network) throw ModelError(Kind::invalid_instance, "instance has no network");
  if (x0.size() != network->input_dim()) {
    std::ostringstream msg;
    msg << "layer 0: x0 has dimension " << x0.size() << ", network expects "
        << network->input_dim();
    throw ModelError(Kind::dimension, msg.str(), 0);
  }
  if (!x0.allFinite()) throw ModelError(Kind::non_finite, "x0 has a non-finite entry");
  if (!std::isfinite(delta) || delta < 0.0) {
    throw ModelError(Kind::invalid_instance, "delta must be finite and nonnegative");
  }
  spec.validate(network->output_dim());
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw ModelError(Kind::invalid_instance, "epsilon must be positive");
  }
  if (t_max <= 0) throw ModelError(Kind::invalid_instance, "t_max must be a positive integer");
  if (tau_max <= 0) throw ModelError(Kind::invalid_instance, "tau_max must be a positive integer");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ModelError(Kind::invalid_instance, "lambda must be nonnegative");
  }
  if (!(eps_comp > 0.0) || !std::isfinite(eps_comp)) {
    throw ModelError(Kind::invalid_instance, "eps_comp must be positive");
  }
  std::vector<std::string> warnings;
  if (eps_comp < 1e-8 || eps_comp > 1e-5) {
    std::ostringstream msg;
    msg << "eps_comp = " << eps_comp << " lies outside the recommended band [1e-8, 1e-5]";
    warnings.push_back(msg.str());
  }
  return warnings;
}

InputBox VerificationInstance::box() const {
  const Eigen::VectorXd r = Eigen::VectorXd::Constant(x0.size(), delta);
  return InputBox{x0 - r, x0 + r};
}

bool VerificationInstance::contains(const Eigen::VectorXd& x, double tol) const {
  if (x.size() != x0.size()) return false;
  if (norm == Norm::inf) return (x - x0).lpNorm<Eigen::Infinity>() <= delta + tol;
  return (x - x0).norm() <= delta + tol;
}

Eigen::VectorXd VerificationInstance::project(const Eigen::VectorXd& x) const {
  if (norm == Norm::inf) {
    const auto b = box();
    return x.cwiseMax(b.lower).cwiseMin(b.upper);
  }
  const Eigen::VectorXd d = x - x0;
  const double n = d.norm();
  if (n <= delta) return x;
  return x0 + d * (delta / n);
}

}  // namespace ccv
