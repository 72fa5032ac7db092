#include "ccverify/toy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace ccv::toy {

ReluNetwork two_neuron_network() {
  DenseLayer hidden{Eigen::MatrixXd(2, 1), Eigen::VectorXd(2)};
  hidden.weights << 2.0, -1.0;
  hidden.bias << -1.0, 0.5;
  DenseLayer out{Eigen::MatrixXd(1, 2), Eigen::VectorXd(1)};
  out.weights << 1.0, -2.0;
  out.bias << 0.1;
  return ReluNetwork({std::move(hidden), std::move(out)});
}

VerificationInstance two_neuron_instance() {
  VerificationInstance inst;
  inst.network = std::make_shared<const ReluNetwork>(two_neuron_network());
  inst.x0 = Eigen::VectorXd::Zero(1);
  inst.delta = 1.0;
  inst.norm = Norm::inf;
  inst.spec = Specification{0, std::nullopt};
  inst.epsilon = 0.01;
  return inst;
}

ReluNetwork random_network(const std::vector<int>& widths, std::uint64_t seed) {
  if (widths.size() < 3) throw std::invalid_argument("random_network needs at least 3 widths");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<DenseLayer> layers;
  for (std::size_t k = 1; k < widths.size(); ++k) {
    const int in = widths[k - 1];
    const int out = widths[k];
    const double scale = std::sqrt(2.0 / in);
    DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd(out)};
    for (int r = 0; r < out; ++r) {
      for (int c = 0; c < in; ++c) layer.weights(r, c) = scale * normal(rng);
    }
    for (int r = 0; r < out; ++r) layer.bias[r] = 0.1 * normal(rng);
    layers.push_back(std::move(layer));
  }
  return ReluNetwork(std::move(layers));
}

VerificationInstance random_instance(std::shared_ptr<const ReluNetwork> network,
                                     std::uint64_t seed, double delta, Norm norm) {
  if (network->output_dim() < 2) {
    throw std::invalid_argument("random_instance needs at least two output classes");
  }
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  VerificationInstance inst;
  inst.network = std::move(network);
  inst.x0.resize(inst.network->input_dim());
  for (Eigen::Index i = 0; i < inst.x0.size(); ++i) inst.x0[i] = unif(rng);
  const auto fwd = forward_eval(*inst.network, inst.x0);
  std::vector<int> order(fwd.logits.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return fwd.logits[a] > fwd.logits[b]; });
  inst.spec = Specification{order[0], order[1]};
  inst.delta = delta;
  inst.norm = norm;
  return inst;
}

}  // namespace ccv::toy
