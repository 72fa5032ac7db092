#include <doctest.h>

#include <map>
#include <numeric>
#include <random>
#include <set>

#include "ccverify/mpcc.hpp"
#include "ccverify/oracle.hpp"
#include "ccverify/toy.hpp"
#include "support.hpp"

using namespace ccv;
namespace t = ccv::testing;

namespace {

// Coefficient of each variable in the program objective.
std::map<int, double> objective_coeffs(const MpccProblem& prob) {
  std::map<int, double> out;
  for (const auto& term : prob.program.objective.terms) out[term.var] += term.coeff;
  return out;
}

// A point satisfying every equality of `prob`, built from x by a forward pass
// in which each complementarity pair (p, q) = (max(z,0), max(-z,0)) is
// shifted by `shift` in both entries (zhat = p carries the shift forward).
Eigen::VectorXd shifted_point(const MpccProblem& prob, const Eigen::VectorXd& x, double shift) {
  const auto& net = *prob.network;
  Eigen::VectorXd v = Eigen::VectorXd::Zero(prob.num_vars());
  v.head(x.size()) = x;
  std::map<NeuronId, std::size_t> pair_of;
  for (std::size_t i = 0; i < prob.complementarity.size(); ++i) pair_of[prob.complementarity[i]] = i;
  Eigen::VectorXd prev = x;
  for (int k = 0; k < net.num_hidden(); ++k) {
    const Eigen::VectorXd z = net.layer(k).weights * prev + net.layer(k).bias;
    Eigen::VectorXd post(z.size());
    for (Eigen::Index j = 0; j < z.size(); ++j) {
      const NeuronId id{k, static_cast<int>(j)};
      v[prob.z_var(id)] = z[j];
      if (const auto it = pair_of.find(id); it != pair_of.end()) {
        const double p = std::max(z[j], 0.0) + shift;
        const double q = std::max(-z[j], 0.0) + shift;
        v[prob.p_var(it->second)] = p;
        v[prob.q_var(it->second)] = q;
        post[j] = p;
      } else if (const auto ph = prob.splits.phase(id)) {
        post[j] = *ph == Phase::active ? z[j] : 0.0;
      } else {
        post[j] = prob.bounds.lo(id) >= 0.0 ? z[j] : 0.0;
      }
    }
    prev = post;
  }
  return v;
}

double max_comp_product(const MpccSolution& sol) {
  return sol.p_star.size() ? sol.p_star.cwiseProduct(sol.q_star).maxCoeff() : 0.0;
}

}  // namespace

TEST_CASE("two-neuron program layout") {
  const auto inst = toy::two_neuron_instance();
  const auto prob = build_problem(inst, crown_bounds(inst), {});
  CHECK(prob.complementarity.size() == 2);
  CHECK(prob.program.products.size() == 2);
  CHECK(prob.num_vars() == 7);  // x, z1, z2, p1, q1, p2, q2
  std::multiset<Key::Kind> kinds;
  for (const auto& k : prob.var_keys) kinds.insert(k.kind);
  CHECK(kinds.count(Key::Kind::x) == 1);
  CHECK(kinds.count(Key::Kind::z) == 2);
  CHECK(kinds.count(Key::Kind::p) == 2);
  CHECK(kinds.count(Key::Kind::q) == 2);
  // objective p1 - 2 p2 + 0.1
  const auto c = objective_coeffs(prob);
  CHECK(c.at(prob.p_var(0)) == doctest::Approx(1.0));
  CHECK(c.at(prob.p_var(1)) == doctest::Approx(-2.0));
  CHECK(prob.program.objective.constant == doctest::Approx(0.1));
  for (const auto& [var, coeff] : c) {
    if (var != prob.p_var(0) && var != prob.p_var(1)) CHECK(coeff == 0.0);
  }
  const auto doc = prob.to_json();
  CHECK(doc.at("variables").size() == 7);
  CHECK(doc.at("products").size() == 2);
}

TEST_CASE("every neuron split leaves a linear program") {
  const auto inst = toy::two_neuron_instance();
  SplitSet s;
  s.assign({0, 0}, Phase::inactive);
  s.assign({0, 1}, Phase::active);
  const auto prob = build_problem(inst, crown_bounds(inst), s);
  CHECK(prob.complementarity.empty());
  CHECK(prob.program.products.empty());
  const auto sol = solve(prob);
  REQUIRE(sol.status == SolveStatus::solved);
  CHECK(sol.objective == doctest::Approx(-2.9).epsilon(1e-6));
}

TEST_CASE("contradictory split is rejected") {
  auto inst = toy::two_neuron_instance();
  inst.delta = 0.1;  // z1 in [-1.2, -0.8]: stable inactive
  CHECK_THROWS_AS(build_problem(inst, crown_bounds(inst), SplitSet{}.with({0, 0}, Phase::active)),
                  std::invalid_argument);
}

TEST_CASE("point domain") {
  for (const auto& c : t::sweep(10)) {
    auto inst = c.instance;
    inst.delta = 0.0;
    const auto prob = build_problem(inst, crown_bounds(inst), {});
    CHECK(prob.point_domain());
    const auto sol = solve(prob);
    REQUIRE(sol.has_point());
    CHECK(sol.objective == inst.value(inst.x0));
    CHECK(sol.x_star == inst.x0);
  }
}

TEST_CASE("cold solve of the two-neuron problem") {
  const auto inst = toy::two_neuron_instance();
  const auto prob = build_problem(inst, crown_bounds(inst), {});
  const auto sol = solve(prob);
  REQUIRE(sol.status == SolveStatus::solved);
  CHECK(sol.objective == doctest::Approx(-2.9).epsilon(1e-5));
  CHECK(sol.x_star[0] == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(sol.kkt_residual <= 1e-7);
  // at x = -1: z1 = -3 (inactive), z2 = 1.5 (active)
  CHECK(sol.partition.i_q == std::vector<std::size_t>{0});
  CHECK(sol.partition.i_p == std::vector<std::size_t>{1});
  CHECK(sol.assignment.phase({0, 0}) == Phase::inactive);
  CHECK(sol.assignment.phase({0, 1}) == Phase::active);
}

TEST_CASE("partition classification") {
  SUBCASE("strict complementarity") {
    const auto part = classify_partition(Eigen::Vector2d(1.0, 0.0), Eigen::Vector2d(0.0, 2.0), 1e-5);
    CHECK(part.i_p == std::vector<std::size_t>{0});
    CHECK(part.i_q == std::vector<std::size_t>{1});
    CHECK(part.i_0.empty());
    CHECK(part.pattern == std::vector<std::uint8_t>{1, 0});
  }
  SUBCASE("biactive within tolerance") {
    const auto part = classify_partition(Eigen::VectorXd::Constant(1, 1e-6),
                                         Eigen::VectorXd::Constant(1, 1e-6), 1e-5);
    CHECK(part.i_0 == std::vector<std::size_t>{0});
  }
  SUBCASE("threshold boundary") {
    const auto part = classify_partition(Eigen::VectorXd::Constant(1, 2e-5),
                                         Eigen::VectorXd::Constant(1, 0.0), 1e-5);
    CHECK(part.i_p == std::vector<std::size_t>{0});
  }
  SUBCASE("scaled default tolerance") {
    CHECK(default_partition_tol(Eigen::Vector2d(0.0, 3.0), Eigen::Vector2d(0.5, 0.0)) ==
          doctest::Approx(3e-5));
    CHECK(default_partition_tol(Eigen::Vector2d(0.0, 0.1), Eigen::Vector2d(0.5, 0.0)) ==
          doctest::Approx(1e-5));
  }
}

TEST_CASE("warm start from the two-neuron parent") {
  const auto inst = toy::two_neuron_instance();
  const auto root = crown_bounds(inst);
  const auto parent = build_problem(inst, root, {});
  const auto sol = solve(parent);
  REQUIRE(sol.status == SolveStatus::solved);

  SUBCASE("fixing neuron 1 inactive projects its pair") {
    const SplitSet s = SplitSet{}.with({0, 0}, Phase::inactive);
    const auto dom = restrict_bounds(inst.net(), inst.box(), root, s);
    REQUIRE(dom);
    const auto child = build_problem(inst, *dom, s);
    const auto warm = make_warm_start(sol, parent, child);
    REQUIRE(warm);
    REQUIRE(warm->projections.size() == 1);
    const auto& proj = warm->projections[0];
    const double z_star = sol.iterate.v[parent.z_var({0, 0})];
    CHECK(proj.neuron == NeuronId{0, 0});
    CHECK(proj.p == 0.0);
    CHECK(proj.q == doctest::Approx(std::max(-z_star, kWarmPush)));
    const auto warm_sol = solve(child, warm);
    CHECK(warm_sol.warm_started);
    REQUIRE(warm_sol.has_point());
    CHECK(warm_sol.objective == doctest::Approx(-2.9).epsilon(1e-5));
  }

  SUBCASE("identical problem converges at once") {
    const auto warm = make_warm_start(sol, parent, parent);
    REQUIRE(warm);
    const auto again = solve(parent, warm);
    CHECK(again.ipm_iterations <= 2);
    CHECK(again.objective == doctest::Approx(sol.objective).epsilon(1e-9));
  }

  SUBCASE("a child that drops a split is not warm-startable") {
    const SplitSet s = SplitSet{}.with({0, 0}, Phase::inactive);
    const auto dom = restrict_bounds(inst.net(), inst.box(), root, s);
    const auto child = build_problem(inst, *dom, s);
    const auto child_sol = solve(child);
    CHECK_FALSE(make_warm_start(child_sol, child, parent).has_value());
  }
}

TEST_CASE("region polish on the two-neuron network") {
  const auto inst = toy::two_neuron_instance();
  const auto root = crown_bounds(inst);
  const auto pattern = [](Phase a, Phase b) {
    return SplitSet{}.with({0, 0}, a).with({0, 1}, b);
  };
  SUBCASE("inactive, active") {
    const auto r = region_lp_polish(inst, root, pattern(Phase::inactive, Phase::active));
    REQUIRE(r.feasible);
    CHECK(r.value == doctest::Approx(-2.9).epsilon(1e-6));
    CHECK(r.x[0] == doctest::Approx(-1.0).epsilon(1e-6));
  }
  SUBCASE("active, inactive") {
    const auto r = region_lp_polish(inst, root, pattern(Phase::active, Phase::inactive));
    REQUIRE(r.feasible);
    CHECK(r.value == doctest::Approx(0.1).epsilon(1e-6));
    CHECK(r.x[0] == doctest::Approx(0.5).epsilon(1e-5));
  }
  SUBCASE("active, active is the boundary point or empty") {
    // both active needs x >= 0.5 and x <= 0.5: the single point x = 0.5
    const auto r = region_lp_polish(inst, root, pattern(Phase::active, Phase::active));
    if (r.feasible) CHECK(r.value == doctest::Approx(0.1).epsilon(1e-5));
  }
}

// Properties over the seeded sweep.

TEST_CASE("solutions are sound, decoded exactly and partitioned") {
  for (const auto& c : t::sweep(100)) {
    const auto& inst = c.instance;
    const auto root = crown_bounds(inst);
    const auto prob = build_problem(inst, root, {});
    const auto sol = upper_bound(inst, prob);
    REQUIRE(sol.has_point());
    const double f_star = oracle::global_min(inst).f_star;
    CHECK(sol.objective >= f_star - 1e-6);
    CHECK(inst.contains(sol.x_star, 1e-6));
    CHECK(sol.objective == doctest::Approx(t::reference_value(inst, sol.x_star)).epsilon(1e-12).scale(1e-5));
    if (sol.status == SolveStatus::solved) CHECK(sol.kkt_residual <= 1e-7);

    std::vector<std::size_t> all;
    for (const auto* part : {&sol.partition.i_p, &sol.partition.i_q, &sol.partition.i_0}) {
      all.insert(all.end(), part->begin(), part->end());
    }
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expect(prob.complementarity.size());
    std::iota(expect.begin(), expect.end(), 0);
    CHECK(all == expect);
  }
}

TEST_CASE("program objective decodes to forward_eval at feasible complementarity points") {
  int checked = 0;
  for (const auto& c : t::sweep(25)) {
    const auto& inst = c.instance;
    const auto prob = build_problem(inst, crown_bounds(inst), {});
    std::mt19937_64 rng(c.seed);
    for (int i = 0; i < 40; ++i) {
      const Eigen::VectorXd x = t::sample_input(inst, rng);
      const Eigen::VectorXd v = shifted_point(prob, x, 0.0);
      CHECK(prob.program.equality_values(v).cwiseAbs().maxCoeff() <= 1e-9);
      CHECK(prob.program.inequality_values(v).minCoeff() >= -1e-9);
      const double f = t::reference_value(inst, prob.input_of(v));
      CHECK(std::abs(prob.program.objective.evaluate(v) - f) <= 1e-5 * (1.0 + std::abs(f)));
      // lift() builds the same point
      CHECK((prob.lift(x) - v).cwiseAbs().maxCoeff() <= 1e-12);
      ++checked;
    }
  }
  CHECK(checked == 1000);
}

TEST_CASE("softened pairs move the objective by a bounded amount") {
  // With both entries of every pair raised by s, zhat moves by s per
  // neuron; the objective moves by at most s times the l1 norm of the
  // network's absolute path weights.
  for (const auto& c : t::sweep(10)) {
    const auto& inst = c.instance;
    const auto prob = build_problem(inst, crown_bounds(inst), {});
    std::mt19937_64 rng(c.seed);
    double gain = 1.0;
    for (const auto& layer : inst.net().layers()) gain *= 1.0 + layer.weights.cwiseAbs().rowwise().sum().maxCoeff();
    for (int i = 0; i < 20; ++i) {
      const Eigen::VectorXd x = t::sample_input(inst, rng);
      const double s = 1e-7;
      const Eigen::VectorXd v = shifted_point(prob, x, s);
      const double f = t::reference_value(inst, x);
      CHECK(std::abs(prob.program.objective.evaluate(v) - f) <= s * gain * 2.0);
    }
  }
}

TEST_CASE("decode discrepancy at solver solutions") {
  // At a pair with p q <= eps, zhat = p differs from relu(p - q) by
  // min(p, q) <= sqrt(eps); the objective moves by at most that times the
  // network gain. Strictly complementary solutions decode within 1e-5.
  for (const double eps : {1e-8, 1e-6, 1e-5}) {
    double worst_strict = 0.0;
    double worst_any = 0.0;
    int strict = 0;
    int solved = 0;
    for (const auto& c : t::sweep(30)) {
      auto inst = c.instance;
      inst.eps_comp = eps;
      const auto prob = build_problem(inst, crown_bounds(inst), {});
      const auto sol = solve(prob);
      if (sol.status != SolveStatus::solved || max_comp_product(sol) > eps * (1 + 1e-6)) continue;
      ++solved;
      double gain = 1.0;
      for (const auto& layer : inst.net().layers()) {
        gain *= 1.0 + layer.weights.cwiseAbs().rowwise().sum().maxCoeff();
      }
      const double diff = std::abs(sol.nlp_objective - t::reference_value(inst, sol.x_star));
      CHECK(diff <= gain * std::sqrt(eps) + 1e-9);
      worst_any = std::max(worst_any, diff);
      if (sol.partition.i_0.empty()) {
        ++strict;
        CHECK(diff <= 1e-5);
        worst_strict = std::max(worst_strict, diff);
      }
    }
    CHECK(solved >= 25);
    MESSAGE("eps_comp " << eps << ": solved " << solved << ", strictly complementary " << strict
                        << ", max decode gap " << worst_any << " (strict " << worst_strict << ")");
  }
}

TEST_CASE("softening has negligible effect on the upper bound") {
  for (const auto& c : t::sweep(30)) {
    auto tight = c.instance;
    auto loose = c.instance;
    tight.eps_comp = 1e-8;
    loose.eps_comp = 1e-5;
    const auto a = upper_bound(tight, build_problem(tight, crown_bounds(tight), {}));
    const auto b = upper_bound(loose, build_problem(loose, crown_bounds(loose), {}));
    REQUIRE(a.has_point());
    REQUIRE(b.has_point());
    CHECK(std::abs(a.objective - b.objective) <= 1e-4);
  }
}

TEST_CASE("solve is deterministic for a fixed seed") {
  for (const auto& c : t::sweep(10)) {
    const auto prob = build_problem(c.instance, crown_bounds(c.instance), {});
    MpccOptions opt;
    opt.seed = 17;
    const auto a = solve(prob, std::nullopt, opt);
    const auto b = solve(prob, std::nullopt, opt);
    CHECK(a.objective == b.objective);
    CHECK(a.ipm_iterations == b.ipm_iterations);
  }
}
