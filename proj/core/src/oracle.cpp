#include "ccverify/oracle.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ccverify/ipm.hpp"
#include "ccverify/lp_simplex.hpp"
#include "ccverify/propagate.hpp"

namespace ccv::oracle {
namespace {

// Linear constraints A x <= b accumulated along a DFS path.
struct Polytope {
  std::vector<Eigen::VectorXd> rows;
  std::vector<double> rhs;

  void add(const Eigen::VectorXd& a, double b) {
    rows.push_back(a);
    rhs.push_back(b);
  }
  void pop() {
    rows.pop_back();
    rhs.pop_back();
  }
};

struct LinearResult {
  bool feasible = false;
  double value = 0.0;
  Eigen::VectorXd x;
};

// min cost^T x over C intersected with the polytope.
LinearResult minimize(const VerificationInstance& inst, const Polytope& poly,
                      const Eigen::VectorXd& cost) {
  const auto d = inst.x0.size();
  const auto m = static_cast<Eigen::Index>(poly.rows.size());
  LinearResult out;
  if (inst.norm == Norm::inf) {
    lp::Problem prob;
    prob.cost = cost;
    prob.a.resize(m, d);
    prob.b.resize(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      prob.a.row(i) = poly.rows[static_cast<std::size_t>(i)].transpose();
      prob.b[i] = poly.rhs[static_cast<std::size_t>(i)];
    }
    const InputBox box = inst.box();
    prob.lower = box.lower;
    prob.upper = box.upper;
    const auto sol = lp::solve(prob);
    if (sol.status != lp::Status::optimal) return out;
    out.feasible = true;
    out.value = sol.value;
    out.x = sol.x;
    return out;
  }
  if (inst.delta == 0.0) {
    for (Eigen::Index i = 0; i < m; ++i) {
      if (poly.rows[static_cast<std::size_t>(i)].dot(inst.x0) > poly.rhs[static_cast<std::size_t>(i)] + 1e-9) {
        return out;
      }
    }
    out.feasible = true;
    out.x = inst.x0;
    out.value = cost.dot(inst.x0);
    return out;
  }
  ipm::Program prog;
  prog.num_vars = static_cast<int>(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    if (cost[i] != 0.0) prog.objective.terms.push_back({static_cast<int>(i), cost[i]});
  }
  for (Eigen::Index r = 0; r < m; ++r) {
    ipm::LinearForm row;
    for (Eigen::Index i = 0; i < d; ++i) {
      const double a = poly.rows[static_cast<std::size_t>(r)][i];
      if (a != 0.0) row.terms.push_back({static_cast<int>(i), -a});
    }
    row.constant = poly.rhs[static_cast<std::size_t>(r)];
    prog.inequalities.push_back(std::move(row));
  }
  ipm::Ball ball;
  for (Eigen::Index i = 0; i < d; ++i) ball.vars.push_back(static_cast<int>(i));
  ball.center = inst.x0;
  ball.radius = inst.delta;
  prog.ball = std::move(ball);
  const double mu0 = 0.1;
  const auto res = ipm::solve(prog, ipm::primal_start(prog, inst.x0, mu0, 0.03), mu0);
  if (res.status != ipm::Status::solved && res.status != ipm::Status::max_iter) return out;
  out.feasible = true;
  out.x = inst.project(res.iterate.v);
  out.value = cost.dot(out.x);
  return out;
}

// Range of a^T x + c over C (ignoring the polytope).
std::pair<double, double> range_over_input(const VerificationInstance& inst,
                                           const Eigen::VectorXd& a, double c) {
  const double mid = a.dot(inst.x0) + c;
  const double rad = inst.norm == Norm::inf ? inst.delta * a.lpNorm<1>() : inst.delta * a.norm();
  return {mid - rad, mid + rad};
}

struct Enumerator {
  const VerificationInstance& inst;
  const std::function<void(const PatternRegion&)>& visit;
  Polytope poly;
  ActivationPattern pattern;
  int regions = 0;

  // Affine map of the current layer's pre-activations: z = m x + c.
  void descend(int layer, int index, const Eigen::MatrixXd& m, const Eigen::VectorXd& c) {
    const auto& net = inst.net();
    if (layer == net.num_hidden()) {
      leaf(m, c);
      return;
    }
    if (index == net.hidden_width(layer)) {
      // Post-activations of this layer feed the next one.
      Eigen::MatrixXd pm = m;
      Eigen::VectorXd pc = c;
      for (Eigen::Index j = 0; j < m.rows(); ++j) {
        if (!pattern[layer][j]) {
          pm.row(j).setZero();
          pc[j] = 0.0;
        }
      }
      const auto& next = layer + 1 < net.num_hidden() ? net.layer(layer + 1) : net.output_layer();
      descend(layer + 1, 0, next.weights * pm, next.weights * pc + next.bias);
      return;
    }
    const Eigen::VectorXd a = m.row(index).transpose();
    const double b = c[index];
    auto [lo, hi] = range_over_input(inst, a, b);
    if (lo < 0.0 && hi > 0.0 && inst.norm == Norm::inf) {
      // Tighten to the exact range over the region built so far.
      const auto min_res = minimize(inst, poly, a);
      if (!min_res.feasible) return;
      const auto max_res = minimize(inst, poly, -a);
      lo = min_res.value + b;
      hi = -max_res.value + b;
    }
    const auto branch = [&](std::uint8_t bit) {
      pattern[layer][index] = bit;
      // active: a^T x + b >= 0;  inactive: a^T x + b <= 0.
      if (bit) {
        poly.add(-a, b);
      } else {
        poly.add(a, -b);
      }
      descend(layer, index + 1, m, c);
      poly.pop();
    };
    if (lo >= 0.0) {
      branch(1);
    } else if (hi <= 0.0) {
      branch(0);
    } else {
      branch(1);
      branch(0);
    }
  }

  void leaf(const Eigen::MatrixXd& m, const Eigen::VectorXd& c) {
    // m, c: the logits as an affine function of x.
    const Eigen::VectorXd obj = inst.objective();
    const Eigen::VectorXd cost = m.transpose() * obj;
    const auto res = minimize(inst, poly, cost);
    PatternRegion region;
    region.pattern = pattern;
    region.feasible = res.feasible;
    if (res.feasible) {
      region.value = res.value + obj.dot(c);
      region.argmin = res.x;
    } else {
      region.value = std::numeric_limits<double>::infinity();
    }
    ++regions;
    visit(region);
  }
};

}  // namespace

PatternCapExceeded::PatternCapExceeded(int unstable, int cap)
    : std::runtime_error("oracle refuses: " + std::to_string(unstable) +
                         " unstable neurons exceed the pattern cap of " + std::to_string(cap)),
      unstable_(unstable),
      cap_(cap) {}

PatternRegion solve_pattern_lp(const VerificationInstance& instance, const ActivationPattern& pattern) {
  const auto& net = instance.net();
  if (static_cast<int>(pattern.size()) != net.num_hidden()) {
    throw std::invalid_argument("pattern must cover every hidden layer");
  }
  Polytope poly;
  Eigen::MatrixXd m = net.layer(0).weights;
  Eigen::VectorXd c = net.layer(0).bias;
  for (int k = 0; k < net.num_hidden(); ++k) {
    if (static_cast<Eigen::Index>(pattern[k].size()) != m.rows()) {
      throw std::invalid_argument("pattern width mismatch at hidden layer " + std::to_string(k));
    }
    for (Eigen::Index j = 0; j < m.rows(); ++j) {
      const Eigen::VectorXd a = m.row(j).transpose();
      if (pattern[k][j]) {
        poly.add(-a, c[j]);
      } else {
        poly.add(a, -c[j]);
        m.row(j).setZero();
        c[j] = 0.0;
      }
    }
    const auto& next = k + 1 < net.num_hidden() ? net.layer(k + 1) : net.output_layer();
    c = (next.weights * c + next.bias).eval();
    m = (next.weights * m).eval();
  }
  const Eigen::VectorXd obj = instance.objective();
  const auto res = minimize(instance, poly, m.transpose() * obj);
  PatternRegion region;
  region.pattern = pattern;
  region.feasible = res.feasible;
  region.value = res.feasible ? res.value + obj.dot(c) : std::numeric_limits<double>::infinity();
  region.argmin = res.x;
  return region;
}

int for_each_region(const VerificationInstance& instance, int pattern_cap,
                    const std::function<void(const PatternRegion&)>& visit) {
  instance.validate();
  const int unstable = static_cast<int>(crown_bounds(instance).unstable().size());
  if (unstable > pattern_cap) throw PatternCapExceeded(unstable, pattern_cap);
  const auto& net = instance.net();
  Enumerator e{instance, visit, {}, {}, 0};
  e.pattern.resize(static_cast<std::size_t>(net.num_hidden()));
  for (int k = 0; k < net.num_hidden(); ++k) {
    e.pattern[static_cast<std::size_t>(k)].assign(static_cast<std::size_t>(net.hidden_width(k)), 0);
  }
  e.descend(0, 0, net.layer(0).weights, net.layer(0).bias);
  return e.regions;
}

GlobalMin global_min(const VerificationInstance& instance, int pattern_cap) {
  GlobalMin out;
  out.f_star = std::numeric_limits<double>::infinity();
  out.unstable = static_cast<int>(crown_bounds(instance).unstable().size());
  out.regions_solved = for_each_region(instance, pattern_cap, [&](const PatternRegion& r) {
    if (r.feasible && r.value < out.f_star) {
      out.f_star = r.value;
      out.x_star = r.argmin;
    }
  });
  return out;
}

PgdResult pgd_upper_bound(const VerificationInstance& instance, const PgdOptions& options) {
  if (options.steps < 1 || options.restarts < 1) {
    throw std::invalid_argument("pgd needs steps >= 1 and restarts >= 1");
  }
  const auto& net = instance.net();
  const double step = options.step_size > 0.0 ? options.step_size
                                              : 2.5 * instance.delta / options.steps;
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  PgdResult best{instance.value(instance.x0), instance.x0};
  for (int r = 0; r < options.restarts; ++r) {
    Eigen::VectorXd x = instance.x0;
    if (r > 0) {
      for (Eigen::Index i = 0; i < x.size(); ++i) x[i] += instance.delta * unif(rng);
      x = instance.project(x);
    }
    for (int s = 0; s <= options.steps; ++s) {
      const double f = instance.value(x);
      if (f < best.value) best = {f, x};
      if (s == options.steps) break;
      const Eigen::VectorXd g = spec_gradient(net, instance.spec, x);
      if (!g.allFinite() || g.isZero(0.0)) break;
      if (instance.norm == Norm::inf) {
        x -= step * g.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
      } else {
        x -= step * g / g.norm();
      }
      x = instance.project(x);
    }
  }
  return best;
}

}  // namespace ccv::oracle
