#include <doctest.h>

#include <random>

#include "ccverify/io.hpp"
#include "ccverify/mpcc.hpp"
#include "ccverify/oracle.hpp"
#include "ccverify/toy.hpp"
#include "support.hpp"

using namespace ccv;
namespace t = ccv::testing;

namespace {

// z1 = x, z2 = x - 0.5 on x in [-1, 1]; f = z1_hat + z2_hat.
VerificationInstance parallel_instance() {
  std::vector<DenseLayer> layers;
  Eigen::MatrixXd w(2, 1);
  w << 1.0, 1.0;
  layers.push_back({w, Eigen::Vector2d(0.0, -0.5)});
  layers.push_back({Eigen::MatrixXd::Ones(1, 2), Eigen::VectorXd::Zero(1)});
  VerificationInstance inst;
  inst.network = std::make_shared<const ReluNetwork>(std::move(layers));
  inst.x0 = Eigen::VectorXd::Zero(1);
  inst.delta = 1.0;
  inst.spec = {0, std::nullopt};
  return inst;
}

}  // namespace

TEST_CASE("global minimum of the two-neuron network") {
  const auto g = oracle::global_min(toy::two_neuron_instance());
  CHECK(g.f_star == doctest::Approx(-2.9).epsilon(1e-9));
  CHECK(g.x_star[0] == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(g.regions_solved <= 4);
  CHECK(g.unstable == 2);
}

TEST_CASE("point and affine inputs") {
  SUBCASE("delta = 0") {
    auto inst = toy::random_instance(
        std::make_shared<const ReluNetwork>(toy::random_network({2, 8, 8, 2}, 3)), 3, 0.0);
    const auto g = oracle::global_min(inst);
    CHECK(g.f_star == doctest::Approx(inst.value(inst.x0)).epsilon(1e-12));
    CHECK(g.regions_solved == 1);
  }
  SUBCASE("no unstable neuron") {
    const auto net = std::make_shared<const ReluNetwork>(load_network(t::fixture("affine.json")));
    const auto inst = instance_from_json(read_json_file(t::fixture("affine_instance.json")), net);
    const auto g = oracle::global_min(inst);
    CHECK(g.regions_solved == 1);
    CHECK(g.f_star == doctest::Approx(-8.0).epsilon(1e-12));
    CHECK(g.x_star[0] == doctest::Approx(-1.0));
    CHECK(g.x_star[1] == doctest::Approx(1.0));
  }
}

TEST_CASE("pattern regions of the two-neuron network") {
  const auto inst = toy::two_neuron_instance();
  const auto lp = [&](std::uint8_t a, std::uint8_t b) {
    return oracle::solve_pattern_lp(inst, {{a, b}});
  };
  const auto r01 = lp(0, 1);
  REQUIRE(r01.feasible);
  CHECK(r01.value == doctest::Approx(-2.9).epsilon(1e-9));
  CHECK(r01.argmin[0] == doctest::Approx(-1.0));
  const auto r10 = lp(1, 0);
  REQUIRE(r10.feasible);
  CHECK(r10.value == doctest::Approx(0.1).epsilon(1e-9));
  CHECK(r10.argmin[0] == doctest::Approx(0.5));
  CHECK_THROWS_AS(oracle::solve_pattern_lp(inst, {{1}}), std::invalid_argument);
}

TEST_CASE("contradictory pattern is infeasible") {
  const auto inst = parallel_instance();
  CHECK_FALSE(oracle::solve_pattern_lp(inst, {{0, 1}}).feasible);  // x <= 0 and x >= 0.5
  const auto g = oracle::global_min(inst);
  CHECK(g.f_star == doctest::Approx(0.0).scale(1.0));
}

TEST_CASE("pattern cap") {
  auto inst = toy::random_instance(
      std::make_shared<const ReluNetwork>(toy::random_network({2, 16, 16, 2}, 1)), 1, 1.0);
  const int u = t::unstable_count(inst);
  REQUIRE(u > 3);
  try {
    oracle::global_min(inst, 3);
    FAIL("expected PatternCapExceeded");
  } catch (const oracle::PatternCapExceeded& e) {
    CHECK(e.unstable() == u);
    CHECK(e.cap() == 3);
  }
}

TEST_CASE("projected gradient baseline") {
  const auto inst = toy::two_neuron_instance();
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    oracle::PgdOptions opt;
    opt.seed = seed;
    CHECK(oracle::pgd_upper_bound(inst, opt).value == doctest::Approx(-2.9).epsilon(1e-9));
  }
  oracle::PgdOptions none;
  none.steps = 0;
  CHECK_THROWS_AS(oracle::pgd_upper_bound(inst, none), std::invalid_argument);

  for (const auto& c : t::sweep(10)) {
    oracle::PgdOptions one;
    one.steps = 1;
    one.restarts = 1;
    const auto r = oracle::pgd_upper_bound(c.instance, one);
    CHECK(r.value <= c.instance.value(c.instance.x0));
    CHECK(c.instance.contains(r.x));
  }
}

// Properties.

TEST_CASE("global minimum is below every sampled value") {
  for (const auto& c : t::sweep(20)) {
    const auto g = oracle::global_min(c.instance);
    CHECK(g.f_star == doctest::Approx(t::reference_value(c.instance, g.x_star)).epsilon(1e-9).scale(1.0));
    std::mt19937_64 rng(c.seed);
    double lowest = kInfeasibleBound;
    for (int i = 0; i < 10000; ++i) {
      lowest = std::min(lowest, t::reference_value(c.instance, t::sample_input(c.instance, rng)));
    }
    CHECK(g.f_star <= lowest + 1e-12);
  }
}

TEST_CASE("global minimum equals the least feasible region value") {
  for (const auto& c : t::sweep(20)) {
    double least = kInfeasibleBound;
    const int n = oracle::for_each_region(c.instance, oracle::kDefaultPatternCap,
                                          [&](const oracle::PatternRegion& r) {
                                            if (!r.feasible) return;
                                            least = std::min(least, r.value);
                                            // region argmin respects its own signs
                                            const auto fw = forward_eval(c.instance.net(), r.argmin);
                                            for (std::size_t k = 0; k < r.pattern.size(); ++k) {
                                              for (std::size_t j = 0; j < r.pattern[k].size(); ++j) {
                                                const double z = fw.preacts[k][static_cast<Eigen::Index>(j)];
                                                if (r.pattern[k][j]) {
                                                  CHECK(z >= -1e-7);
                                                } else {
                                                  CHECK(z <= 1e-7);
                                                }
                                              }
                                            }
                                            CHECK(std::abs(r.value - t::reference_value(c.instance, r.argmin)) <= 1e-6);
                                          });
    const auto g = oracle::global_min(c.instance);
    CHECK(n == g.regions_solved);
    CHECK(g.f_star == least);
  }
}

TEST_CASE("soundness sandwich: f* <= mpcc, f* <= pgd") {
  int mpcc_not_worse = 0;
  const auto cases = t::sweep(50);
  for (const auto& c : cases) {
    const double f_star = oracle::global_min(c.instance).f_star;
    const auto sol = upper_bound(c.instance, build_problem(c.instance, crown_bounds(c.instance), {}));
    const double pgd = oracle::pgd_upper_bound(c.instance).value;
    REQUIRE(sol.has_point());
    CHECK(f_star <= sol.objective + 1e-6);
    CHECK(f_star <= pgd + 1e-6);
    mpcc_not_worse += sol.objective <= pgd + 1e-9;
  }
  MESSAGE("mpcc upper <= pgd on " << mpcc_not_worse << " of " << cases.size() << " seeds");
}

TEST_CASE("l2 inputs") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    auto net = std::make_shared<const ReluNetwork>(toy::random_network({2, 6, 6, 2}, seed));
    auto inst = toy::random_instance(net, seed, 0.3, Norm::two);
    const auto g = oracle::global_min(inst);
    CHECK(inst.contains(g.x_star, 1e-6));
    std::mt19937_64 rng(seed);
    for (int i = 0; i < 2000; ++i) {
      CHECK(g.f_star <= t::reference_value(inst, t::sample_input(inst, rng)) + 1e-6);
    }
    const auto sol = upper_bound(inst, build_problem(inst, crown_bounds(inst), {}));
    REQUIRE(sol.has_point());
    CHECK(g.f_star <= sol.objective + 1e-6);
  }
}
