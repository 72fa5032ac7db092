#pragma once

// Shared helpers for the unit and acceptance tests: an independent scalar
// forward pass, the seeded 2-8-8-2 sweep, instances near the decision
// boundary, and samplers over the input set.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ccverify/model.hpp"
#include "ccverify/mpcc.hpp"
#include "ccverify/oracle.hpp"
#include "ccverify/propagate.hpp"
#include "ccverify/toy.hpp"

#ifndef CCVERIFY_FIXTURE_DIR
#define CCVERIFY_FIXTURE_DIR "."
#endif

namespace ccv::testing {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(CCVERIFY_FIXTURE_DIR) / name;
}

/// Plain loop evaluation of z_label - z_target, written without Eigen
/// expressions so it shares nothing with forward_eval.
inline double reference_value(const ReluNetwork& net, const Specification& spec,
                              const Eigen::VectorXd& x) {
  std::vector<double> a(x.data(), x.data() + x.size());
  const auto& layers = net.layers();
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& w = layers[k].weights;
    std::vector<double> next(static_cast<std::size_t>(w.rows()));
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      double acc = layers[k].bias[i];
      for (Eigen::Index j = 0; j < w.cols(); ++j) acc += w(i, j) * a[static_cast<std::size_t>(j)];
      const bool hidden = k + 1 < layers.size();
      next[static_cast<std::size_t>(i)] = hidden ? (acc > 0.0 ? acc : 0.0) : acc;
    }
    a = std::move(next);
  }
  double f = a[static_cast<std::size_t>(spec.label)];
  if (spec.target) f -= a[static_cast<std::size_t>(*spec.target)];
  return f;
}

inline double reference_value(const VerificationInstance& inst, const Eigen::VectorXd& x) {
  return reference_value(*inst.network, inst.spec, x);
}

/// Uniform point of the input set C.
inline Eigen::VectorXd sample_input(const VerificationInstance& inst, std::mt19937_64& rng) {
  const auto d = inst.x0.size();
  Eigen::VectorXd x(d);
  if (inst.norm == Norm::inf) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (Eigen::Index i = 0; i < d; ++i) x[i] = inst.x0[i] + inst.delta * u(rng);
    return x;
  }
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::VectorXd dir(d);
  for (Eigen::Index i = 0; i < d; ++i) dir[i] = g(rng);
  const double n = dir.norm();
  if (n > 0.0) dir /= n;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r = inst.delta * std::pow(u(rng), 1.0 / static_cast<double>(d));
  return inst.x0 + r * dir;
}

/// Uniform point of the box restricted so that `splits` hold at the point,
/// found by rejection; nullopt after `tries` misses.
inline std::optional<Eigen::VectorXd> sample_in_split(const VerificationInstance& inst,
                                                      const SplitSet& splits,
                                                      std::mt19937_64& rng, int tries = 2000) {
  for (int t = 0; t < tries; ++t) {
    Eigen::VectorXd x = sample_input(inst, rng);
    const auto fw = forward_eval(*inst.network, x);
    bool ok = true;
    for (const auto& [id, ph] : splits.assignments()) {
      const double z = fw.preacts[id.layer][id.index];
      if ((ph == Phase::active && z < 0.0) || (ph == Phase::inactive && z > 0.0)) {
        ok = false;
        break;
      }
    }
    if (ok) return x;
  }
  return std::nullopt;
}

inline int unstable_count(const VerificationInstance& inst) {
  return static_cast<int>(crown_bounds(inst).unstable().size());
}

struct SweepCase {
  std::uint64_t seed = 0;
  VerificationInstance instance;
};

/// The seeded 2-8-8-2 sweep: seed s builds its own network and instance with
/// delta 0.05 (even s) or 0.2 (odd s). Seeds whose root unstable set exceeds
/// `max_unstable` are skipped until `count` cases are collected.
inline std::vector<SweepCase> sweep(int count, int max_unstable = 20, std::uint64_t first_seed = 0) {
  std::vector<SweepCase> out;
  for (std::uint64_t s = first_seed; static_cast<int>(out.size()) < count; ++s) {
    auto net = std::make_shared<const ReluNetwork>(toy::random_network({2, 8, 8, 2}, s));
    auto inst = toy::random_instance(net, s, s % 2 ? 0.2 : 0.05);
    if (unstable_count(inst) > max_unstable) continue;
    out.push_back({s, std::move(inst)});
  }
  return out;
}

/// {2, 16, 16, 2} network of `seed` around its own x0, with delta bisected
/// (in [0, 2]) until the projected-gradient value falls to 5% of f(x0).
inline VerificationInstance boundary_instance(std::uint64_t seed) {
  auto net = std::make_shared<const ReluNetwork>(toy::random_network({2, 16, 16, 2}, seed));
  auto inst = toy::random_instance(net, seed, 0.0);
  const double target = 0.05 * inst.value(inst.x0);
  double lo = 0.0;
  double hi = 2.0;
  oracle::PgdOptions pgd;
  pgd.seed = seed;
  for (int i = 0; i < 30; ++i) {
    inst.delta = 0.5 * (lo + hi);
    (oracle::pgd_upper_bound(inst, pgd).value > target ? lo : hi) = inst.delta;
  }
  inst.delta = lo;
  return inst;
}

/// Boundary instances the root cannot decide (root lower bound < 0 and root
/// NLP upper bound > 0), with at most `max_unstable` unstable neurons so the
/// oracle can check them; the first `count` seeds that qualify.
inline std::vector<SweepCase> hard_cases(int count, int max_unstable = 20) {
  std::vector<SweepCase> out;
  for (std::uint64_t s = 0; static_cast<int>(out.size()) < count; ++s) {
    auto inst = boundary_instance(s);
    const auto root = crown_bounds(inst);
    if (static_cast<int>(root.unstable().size()) > max_unstable) continue;
    if (optimize_relaxation(inst, root, {}).lower > 0.0) continue;
    const auto sol = upper_bound(inst, build_problem(inst, root, {}));
    if (sol.has_point() && sol.objective < 0.0) continue;
    out.push_back({s, std::move(inst)});
  }
  return out;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace ccv::testing
