#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "ccverify/model.hpp"

namespace ccv::toy {

/// Scalar input, two hidden ReLUs, scalar output:
///   z1 = [2, -1]^T x + [-1, 0.5],  y = [1, -2] . relu(z1) + 0.1
ReluNetwork two_neuron_network();

/// The two-neuron network on x in [-1, 1] with f = y.
VerificationInstance two_neuron_instance();

/// Gaussian weights with variance 2/fan_in and small Gaussian biases, fully
/// determined by `seed`. `widths` lists every layer size including input and
/// output, e.g. {2, 8, 8, 2}.
ReluNetwork random_network(const std::vector<int>& widths, std::uint64_t seed);

/// x0 uniform in [-1, 1]^d; label is the argmax class at x0 and target the
/// runner-up class.
VerificationInstance random_instance(std::shared_ptr<const ReluNetwork> network,
                                     std::uint64_t seed, double delta, Norm norm = Norm::inf);

}  // namespace ccv::toy
