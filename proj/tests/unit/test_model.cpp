#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "ccverify/io.hpp"
#include "ccverify/model.hpp"
#include "ccverify/toy.hpp"
#include "support.hpp"

using namespace ccv;
using ccv::testing::fixture;
using ccv::testing::reference_value;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

}  // namespace

TEST_CASE("forward_eval on the two-neuron network") {
  const auto net = toy::two_neuron_network();
  const auto fw = forward_eval(net, vec({1.0}));
  CHECK(fw.logits[0] == doctest::Approx(1.1).epsilon(1e-12));
  REQUIRE(fw.pattern.size() == 1);
  CHECK(fw.pattern[0] == std::vector<std::uint8_t>{1, 0});
  CHECK(fw.preacts[0][0] == doctest::Approx(1.0));
  CHECK(fw.preacts[0][1] == doctest::Approx(-0.5));
}

TEST_CASE("zero network outputs zeros") {
  std::vector<DenseLayer> layers;
  layers.push_back({Eigen::MatrixXd::Zero(4, 3), Eigen::VectorXd::Zero(4)});
  layers.push_back({Eigen::MatrixXd::Zero(2, 4), Eigen::VectorXd::Zero(2)});
  const ReluNetwork net(std::move(layers));
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  for (int t = 0; t < 20; ++t) {
    const Eigen::VectorXd x = vec({g(rng), g(rng), g(rng)});
    CHECK(forward_eval(net, x).logits.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("identity hidden layer on nonnegative inputs is the final affine map") {
  Eigen::MatrixXd w2(2, 3);
  w2 << 1.0, -2.0, 0.5, 0.3, 0.0, -1.0;
  const Eigen::Vector2d b2(0.25, -0.75);
  std::vector<DenseLayer> layers;
  layers.push_back({Eigen::MatrixXd::Identity(3, 3), Eigen::VectorXd::Zero(3)});
  layers.push_back({w2, b2});
  const ReluNetwork net(std::move(layers));
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int t = 0; t < 50; ++t) {
    const Eigen::Vector3d x(u(rng), u(rng), u(rng));
    const Eigen::VectorXd expect = w2 * x + b2;
    CHECK((forward_eval(net, x).logits - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("spec_value on the two-neuron network") {
  const auto inst = toy::two_neuron_instance();
  CHECK(inst.value(vec({-1.0})) == doctest::Approx(-2.9).epsilon(1e-12));
  // y = 2x - 0.9 on [-1, 0.5] and y = 2x - 0.9 again on [0.5, 1]
  for (double x = -1.0; x <= 1.0; x += 0.125) {
    CHECK(inst.value(vec({x})) == doctest::Approx(2.0 * x - 0.9).epsilon(1e-12));
  }
}

TEST_CASE("specification validation") {
  SUBCASE("large margin at x0 is positive") {
    std::vector<DenseLayer> layers;
    layers.push_back({Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2)});
    Eigen::MatrixXd w(3, 2);
    w << 1.0, 0.0, 0.0, 0.0, 0.0, 0.0;
    layers.push_back({w, Eigen::Vector3d(100.0, 0.0, 0.0)});
    const ReluNetwork net(std::move(layers));
    CHECK(spec_value(net, Specification{0, 2}, vec({0.1, 0.2})) > 0.0);
  }
  SUBCASE("label equal to target is rejected") {
    CHECK_THROWS_AS(Specification({1, 1}).validate(3), ModelError);
  }
  SUBCASE("out-of-range indices are rejected") {
    CHECK_THROWS_AS(Specification({3, 0}).validate(3), ModelError);
    CHECK_THROWS_AS(Specification({0, -1}).validate(3), ModelError);
  }
}

TEST_CASE("network construction validates shapes and values") {
  SUBCASE("dimension chain") {
    std::vector<DenseLayer> layers;
    layers.push_back({Eigen::MatrixXd::Ones(3, 2), Eigen::VectorXd::Zero(3)});
    layers.push_back({Eigen::MatrixXd::Ones(1, 4), Eigen::VectorXd::Zero(1)});
    CHECK_THROWS_AS(ReluNetwork(std::move(layers)), ModelError);
  }
  SUBCASE("no hidden layer") {
    std::vector<DenseLayer> layers;
    layers.push_back({Eigen::MatrixXd::Ones(1, 2), Eigen::VectorXd::Zero(1)});
    CHECK_THROWS_AS(ReluNetwork(std::move(layers)), ModelError);
  }
  SUBCASE("non-finite") {
    std::vector<DenseLayer> layers;
    Eigen::MatrixXd w = Eigen::MatrixXd::Ones(2, 2);
    w(1, 0) = std::numeric_limits<double>::infinity();
    layers.push_back({w, Eigen::VectorXd::Zero(2)});
    layers.push_back({Eigen::MatrixXd::Ones(1, 2), Eigen::VectorXd::Zero(1)});
    try {
      ReluNetwork net(std::move(layers));
      FAIL("expected ModelError");
    } catch (const ModelError& e) {
      CHECK(e.kind() == ModelError::Kind::non_finite);
      CHECK(e.layer() == 0);
    }
  }
}

TEST_CASE("instance validation") {
  auto inst = toy::two_neuron_instance();
  CHECK(inst.validate().empty());
  SUBCASE("x0 dimension") {
    inst.x0 = Eigen::VectorXd::Zero(2);
    CHECK_THROWS_AS(inst.validate(), ModelError);
  }
  SUBCASE("negative delta") {
    inst.delta = -0.1;
    CHECK_THROWS_AS(inst.validate(), ModelError);
  }
  SUBCASE("eps_comp outside the band only warns") {
    inst.eps_comp = 1e-3;
    CHECK(inst.validate().size() == 1);
    inst.eps_comp = 1e-9;
    CHECK(inst.validate().size() == 1);
  }
  SUBCASE("nonpositive parameters") {
    inst.epsilon = 0.0;
    CHECK_THROWS_AS(inst.validate(), ModelError);
    inst = toy::two_neuron_instance();
    inst.tau_max = 0;
    CHECK_THROWS_AS(inst.validate(), ModelError);
    inst = toy::two_neuron_instance();
    inst.lambda = -1.0;
    CHECK_THROWS_AS(inst.validate(), ModelError);
  }
}

TEST_CASE("input set projection and membership") {
  auto inst = toy::random_instance(
      std::make_shared<const ReluNetwork>(toy::random_network({3, 4, 2}, 1)), 1, 0.5, Norm::two);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 2.0);
  for (int t = 0; t < 100; ++t) {
    const Eigen::VectorXd x = inst.x0 + Eigen::Vector3d(g(rng), g(rng), g(rng));
    const Eigen::VectorXd p = inst.project(x);
    CHECK(inst.contains(p));
    CHECK((p - inst.x0).norm() <= 0.5 + 1e-12);
  }
  inst.norm = Norm::inf;
  const Eigen::VectorXd far = inst.x0 + Eigen::Vector3d(3.0, -3.0, 0.1);
  const Eigen::VectorXd p = inst.project(far);
  CHECK(p[0] == doctest::Approx(inst.x0[0] + 0.5));
  CHECK(p[1] == doctest::Approx(inst.x0[1] - 0.5));
  CHECK(p[2] == doctest::Approx(inst.x0[2] + 0.1));
}

// Properties over seeded random networks.

TEST_CASE("forward_eval agrees with an independent evaluation") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto net = toy::random_network({3, 7, 5, 4}, seed);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    for (int t = 0; t < 20; ++t) {
      const Eigen::Vector3d x(g(rng), g(rng), g(rng));
      const Specification spec{1, 3};
      CHECK(spec_value(net, spec, x) == doctest::Approx(reference_value(net, spec, x)).epsilon(1e-12));
    }
  }
}

TEST_CASE("pattern bits imply positive pre-activations") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto net = toy::random_network({2, 6, 6, 2}, seed);
    std::mt19937_64 rng(seed + 100);
    std::normal_distribution<double> g;
    for (int t = 0; t < 20; ++t) {
      const auto fw = forward_eval(net, Eigen::Vector2d(g(rng), g(rng)));
      for (std::size_t k = 0; k < fw.pattern.size(); ++k) {
        for (std::size_t j = 0; j < fw.pattern[k].size(); ++j) {
          CHECK((fw.pattern[k][j] == 1) == (fw.preacts[k][static_cast<Eigen::Index>(j)] > 0.0));
        }
      }
    }
  }
}

TEST_CASE("f is affine inside one activation region") {
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto net = toy::random_network({2, 6, 6, 2}, seed);
    const Specification spec{0, 1};
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    for (int t = 0; t < 50; ++t) {
      const Eigen::Vector2d x1(g(rng), g(rng));
      const Eigen::Vector2d x2 = x1 + 1e-2 * Eigen::Vector2d(g(rng), g(rng));
      // Same region along the segment: same pattern at both ends and at 9
      // interior points.
      const auto p1 = forward_eval(net, x1).pattern;
      bool same = forward_eval(net, x2).pattern == p1;
      for (int s = 1; s < 10 && same; ++s) {
        same = forward_eval(net, x1 + (s / 10.0) * (x2 - x1)).pattern == p1;
      }
      if (!same) continue;
      ++checked;
      const double mid = spec_value(net, spec, 0.5 * (x1 + x2));
      CHECK(std::abs(mid - 0.5 * (spec_value(net, spec, x1) + spec_value(net, spec, x2))) <= 1e-9);
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("spec_gradient matches finite differences away from kinks") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto net = toy::random_network({3, 6, 2}, seed);
    const Specification spec{0, 1};
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    const Eigen::Vector3d x(g(rng), g(rng), g(rng));
    const Eigen::VectorXd grad = spec_gradient(net, spec, x);
    const double h = 1e-7;
    for (int i = 0; i < 3; ++i) {
      Eigen::Vector3d e = Eigen::Vector3d::Zero();
      e[i] = h;
      if (forward_eval(net, x + e).pattern != forward_eval(net, x - e).pattern) continue;
      const double fd = (spec_value(net, spec, x + e) - spec_value(net, spec, x - e)) / (2 * h);
      CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

// Serialization.

TEST_CASE("network JSON round trip preserves forward_eval") {
  const auto net = toy::two_neuron_network();
  const auto dir = std::filesystem::temp_directory_path() / "ccverify_test_model";
  std::filesystem::create_directories(dir);
  const auto path = dir / "appdx_d.json";
  save_network(net, path);
  const auto back = load_network(path);
  std::mt19937_64 rng(0);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int t = 0; t < 100; ++t) {
    const Eigen::VectorXd x = vec({u(rng)});
    CHECK(forward_eval(back, x).logits[0] == forward_eval(net, x).logits[0]);
  }
}

TEST_CASE("fixture model matches the built-in two-neuron network") {
  const auto net = load_network(fixture("appdx_d.json"));
  const auto ref = toy::two_neuron_network();
  for (int k = 0; k < 2; ++k) {
    CHECK(net.layer(k).weights == ref.layer(k).weights);
    CHECK(net.layer(k).bias == ref.layer(k).bias);
  }
}

TEST_CASE("model file errors") {
  SUBCASE("mismatched bias names the layer") {
    try {
      load_network(fixture("bad_bias.json"));
      FAIL("expected ModelError");
    } catch (const ModelError& e) {
      CHECK(e.kind() == ModelError::Kind::dimension);
      REQUIRE(e.layer().has_value());
      CHECK(*e.layer() == 1);
      CHECK(std::string(e.what()).find("1") != std::string::npos);
    }
  }
  SUBCASE("NaN weight") {
    try {
      load_network(fixture("nan_weight.json"));
      FAIL("expected ModelError");
    } catch (const ModelError& e) {
      CHECK(e.kind() == ModelError::Kind::non_finite);
    }
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_network(fixture("does_not_exist.json")), ModelError);
  }
}

TEST_CASE("instance JSON round trip and containers") {
  auto inst = toy::random_instance(
      std::make_shared<const ReluNetwork>(toy::random_network({2, 5, 3}, 4)), 4, 0.1, Norm::two);
  inst.lambda = 0.0;
  inst.tau_max = 7;
  const auto doc = instance_to_json(inst);
  const auto back = instance_from_json(doc, inst.network);
  CHECK(back.x0 == inst.x0);
  CHECK(back.delta == inst.delta);
  CHECK(back.norm == Norm::two);
  CHECK(back.spec.label == inst.spec.label);
  CHECK(back.spec.target == inst.spec.target);
  CHECK(back.lambda == 0.0);
  CHECK(back.tau_max == 7);

  CHECK(instance_documents(doc).size() == 1);
  CHECK(instance_documents(nlohmann::json::array({doc, doc})).size() == 2);
  CHECK(instance_documents(nlohmann::json{{"instances", {doc, doc, doc}}}).size() == 3);
}

TEST_CASE("instance defaults") {
  const auto net = std::make_shared<const ReluNetwork>(toy::two_neuron_network());
  const auto inst = instance_from_json(
      nlohmann::json{{"x0", {0.0}}, {"delta", 0.5}, {"norm", "inf"}, {"label", 0}}, net);
  CHECK(inst.norm == Norm::inf);
  CHECK(inst.epsilon == kDefaultEpsilon);
  CHECK(inst.t_max == kDefaultTMax);
  CHECK(inst.tau_max == kDefaultTauMax);
  CHECK(inst.lambda == kDefaultLambda);
  CHECK(inst.eps_comp == kDefaultEpsComp);
  CHECK_THROWS_AS(instance_from_json(nlohmann::json{{"x0", {0.0}}, {"delta", 0.5}, {"label", 0},
                                                    {"norm", "l1"}},
                                     net),
                  ModelError);
  // norm is required
  CHECK_THROWS_AS(instance_from_json(nlohmann::json{{"x0", {0.0}}, {"delta", 0.5}, {"label", 0}}, net),
                  ModelError);
}
