#include "ccverify/mpcc.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace ccv {
namespace {

enum class Role : std::uint8_t { stable_active, stable_inactive, unstable, split_active, split_inactive };

Role role_of(const LayerBounds& bounds, const SplitSet& splits, NeuronId id) {
  if (auto ph = splits.phase(id)) {
    return *ph == Phase::active ? Role::split_active : Role::split_inactive;
  }
  if (bounds.lo(id) >= 0.0) return Role::stable_active;
  if (bounds.hi(id) <= 0.0) return Role::stable_inactive;
  return Role::unstable;
}

const char* kind_name(Key::Kind kind) {
  switch (kind) {
    case Key::Kind::x: return "x";
    case Key::Kind::z: return "z";
    case Key::Kind::p: return "p";
    case Key::Kind::q: return "q";
    case Key::Kind::affine: return "affine";
    case Key::Kind::link: return "link";
    case Key::Kind::x_lower: return "x_lower";
    case Key::Kind::x_upper: return "x_upper";
    case Key::Kind::z_lower: return "z_lower";
    case Key::Kind::z_upper: return "z_upper";
    case Key::Kind::p_nonneg: return "p_nonneg";
    case Key::Kind::q_nonneg: return "q_nonneg";
    case Key::Kind::comp: return "comp";
    case Key::Kind::ball: return "ball";
  }
  return "?";
}

SolveStatus map_status(ipm::Status s) {
  switch (s) {
    case ipm::Status::solved: return SolveStatus::solved;
    case ipm::Status::max_iter: return SolveStatus::max_iter;
    default: return SolveStatus::infeasible;
  }
}

// Uniform sample from the input set C.
Eigen::VectorXd random_input(const MpccProblem& problem, std::mt19937_64& rng) {
  const auto d = problem.x0.size();
  Eigen::VectorXd x(d);
  if (problem.norm == Norm::inf) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (Eigen::Index i = 0; i < d; ++i) x[i] = problem.x0[i] + problem.delta * u(rng);
    return x;
  }
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Eigen::Index i = 0; i < d; ++i) x[i] = g(rng);
  const double n = x.norm();
  if (n == 0.0) return problem.x0;
  const double r = problem.delta * std::pow(u(rng), 1.0 / static_cast<double>(d));
  return problem.x0 + x * (r / n);
}

void decode(const MpccProblem& problem, MpccSolution& sol) {
  const auto& v = sol.iterate.v;
  sol.x_star = problem.input_of(v);
  sol.objective = spec_value(*problem.network, problem.spec, sol.x_star);
  sol.nlp_objective = problem.program.objective.evaluate(v);
  const std::size_t n = problem.complementarity.size();
  sol.p_star.resize(static_cast<Eigen::Index>(n));
  sol.q_star.resize(static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < n; ++k) {
    sol.p_star[static_cast<Eigen::Index>(k)] = v[problem.p_var(k)];
    sol.q_star[static_cast<Eigen::Index>(k)] = v[problem.q_var(k)];
  }
  sol.partition = classify_partition(sol.p_star, sol.q_star,
                                     default_partition_tol(sol.p_star, sol.q_star));
  sol.assignment = problem.splits;
  for (std::size_t k = 0; k < n; ++k) {
    sol.assignment.assign(problem.complementarity[k],
                          sol.partition.pattern[k] ? Phase::active : Phase::inactive);
  }
}

MpccSolution run(const MpccProblem& problem, ipm::Iterate start, double mu,
                 const ipm::Options& options) {
  const auto res = ipm::solve(problem.program, std::move(start), mu, options);
  MpccSolution sol;
  sol.status = map_status(res.status);
  sol.iterate = res.iterate;
  sol.kkt_residual = res.residual.kkt();
  sol.ipm_iterations = res.iterations;
  decode(problem, sol);
  if (!sol.has_point()) {
    sol.objective = kInfeasibleBound;
  }
  return sol;
}

// The iterate re-seated on `program`: slacks recomputed and floored, duals
// floored, mu from the resulting complementarity.
double reseat(const ipm::Program& program, ipm::Iterate& it) {
  const Eigen::VectorXd g = program.inequality_values(it.v);
  it.s = g.cwiseMax(kWarmPush);
  it.w = it.w.cwiseMax(kWarmPush);
  const double m = it.s.size() > 0 ? it.s.cwiseProduct(it.w).mean() : 0.0;
  return std::max(m, 1e-9);
}

MpccSolution run_continued(const MpccProblem& problem, const Eigen::VectorXd& x,
                           const MpccOptions& options) {
  double mu = options.ipm.mu_init;
  auto it = ipm::primal_start(problem.program, problem.lift(x), mu, std::sqrt(mu) * 0.1);
  int iterations = 0;
  if (!problem.program.products.empty()) {
    ipm::Program relaxed = problem.program;
    for (double cap = options.continuation_start; cap > problem.eps_comp; cap *= 1e-2) {
      for (auto& prod : relaxed.products) prod.cap = cap;
      const auto res = ipm::solve(relaxed, it, mu, options.ipm);
      iterations += res.iterations;
      if (res.status != ipm::Status::solved && res.status != ipm::Status::max_iter) break;
      it = res.iterate;
      mu = reseat(problem.program, it);
    }
  }
  auto sol = run(problem, std::move(it), mu, options.ipm);
  sol.ipm_iterations += iterations;
  return sol;
}

}  // namespace

std::string to_string(const Key& key) {
  std::ostringstream out;
  out << kind_name(key.kind);
  if (key.layer >= 0) {
    out << '[' << key.layer << ',' << key.index << ']';
  } else if (key.kind != Key::Kind::ball) {
    out << '[' << key.index << ']';
  }
  return out.str();
}

std::string to_string(SolveStatus status) {
  switch (status) {
    case SolveStatus::solved: return "solved";
    case SolveStatus::max_iter: return "max_iter";
    case SolveStatus::infeasible: return "infeasible";
  }
  return "unknown";
}

MpccProblem build_problem(const VerificationInstance& instance, const LayerBounds& bounds,
                          const SplitSet& splits) {
  const auto& net = instance.net();
  const int hidden = net.num_hidden();
  const int d = net.input_dim();
  if (bounds.num_layers() != hidden) {
    throw std::invalid_argument("bounds do not match the network depth");
  }
  for (const auto& [id, ph] : splits.assignments()) {
    if (id.layer < 0 || id.layer >= hidden || id.index < 0 || id.index >= net.hidden_width(id.layer)) {
      throw std::invalid_argument("split on unknown neuron " + to_string(id));
    }
    const bool contradicts = ph == Phase::active ? bounds.hi(id) < 0.0 : bounds.lo(id) > 0.0;
    if (contradicts) {
      throw std::invalid_argument("split of stable neuron " + to_string(id) + " to " +
                                  to_string(ph) + " contradicts its bounds");
    }
  }

  MpccProblem prob;
  prob.network = instance.network;
  prob.spec = instance.spec;
  prob.norm = instance.norm;
  prob.x0 = instance.x0;
  prob.delta = instance.delta;
  prob.eps_comp = instance.eps_comp;
  prob.bounds = bounds;
  prob.splits = splits;

  // Variable layout.
  int next = d;
  for (int i = 0; i < d; ++i) prob.var_keys.push_back({Key::Kind::x, -1, i});
  for (int k = 0; k < hidden; ++k) {
    prob.z_offset_.push_back(next);
    for (int j = 0; j < net.hidden_width(k); ++j) prob.var_keys.push_back({Key::Kind::z, k, j});
    next += net.hidden_width(k);
  }
  prob.pair_offset_ = next;
  std::map<NeuronId, std::size_t> pair_of;
  for (int k = 0; k < hidden; ++k) {
    for (int j = 0; j < net.hidden_width(k); ++j) {
      const NeuronId id{k, j};
      if (role_of(bounds, splits, id) == Role::unstable) {
        pair_of[id] = prob.complementarity.size();
        prob.complementarity.push_back(id);
        prob.var_keys.push_back({Key::Kind::p, k, j});
        prob.var_keys.push_back({Key::Kind::q, k, j});
      }
    }
  }
  auto& program = prob.program;
  program.num_vars = static_cast<int>(prob.var_keys.size());

  // zhat of a neuron as a variable index, or -1 when it is identically zero.
  const auto post_var = [&](NeuronId id) -> int {
    switch (role_of(bounds, splits, id)) {
      case Role::stable_active:
      case Role::split_active:
        return prob.z_var(id);
      case Role::unstable:
        return prob.p_var(pair_of.at(id));
      default:
        return -1;
    }
  };

  for (int k = 0; k < hidden; ++k) {
    const auto& layer = net.layer(k);
    for (int j = 0; j < net.hidden_width(k); ++j) {
      ipm::LinearForm row;
      row.terms.push_back({prob.z_var({k, j}), 1.0});
      for (Eigen::Index i = 0; i < layer.weights.cols(); ++i) {
        const double w = layer.weights(j, i);
        if (w == 0.0) continue;
        const int var = k == 0 ? static_cast<int>(i) : post_var({k - 1, static_cast<int>(i)});
        if (var >= 0) row.terms.push_back({var, -w});
      }
      row.constant = -layer.bias[j];
      program.equalities.push_back(std::move(row));
      prob.eq_keys.push_back({Key::Kind::affine, k, j});
    }
  }
  for (std::size_t m = 0; m < prob.complementarity.size(); ++m) {
    const NeuronId id = prob.complementarity[m];
    program.equalities.push_back(
        {{{prob.z_var(id), 1.0}, {prob.p_var(m), -1.0}, {prob.q_var(m), 1.0}}, 0.0});
    prob.eq_keys.push_back({Key::Kind::link, id.layer, id.index});
  }

  const InputBox box = instance.box();
  for (int i = 0; i < d; ++i) {
    program.inequalities.push_back({{{i, 1.0}}, -box.lower[i]});
    prob.ineq_keys.push_back({Key::Kind::x_lower, -1, i});
    program.inequalities.push_back({{{i, -1.0}}, box.upper[i]});
    prob.ineq_keys.push_back({Key::Kind::x_upper, -1, i});
  }
  for (int k = 0; k < hidden; ++k) {
    for (int j = 0; j < net.hidden_width(k); ++j) {
      const NeuronId id{k, j};
      const Role role = role_of(bounds, splits, id);
      if (role == Role::stable_active || role == Role::stable_inactive) continue;
      double lo = bounds.lo(id);
      double hi = bounds.hi(id);
      if (role == Role::split_active) lo = std::max(lo, 0.0);
      if (role == Role::split_inactive) hi = std::min(hi, 0.0);
      program.inequalities.push_back({{{prob.z_var(id), 1.0}}, -lo});
      prob.ineq_keys.push_back({Key::Kind::z_lower, k, j});
      program.inequalities.push_back({{{prob.z_var(id), -1.0}}, hi});
      prob.ineq_keys.push_back({Key::Kind::z_upper, k, j});
    }
  }
  for (std::size_t m = 0; m < prob.complementarity.size(); ++m) {
    const NeuronId id = prob.complementarity[m];
    program.inequalities.push_back({{{prob.p_var(m), 1.0}}, 0.0});
    prob.ineq_keys.push_back({Key::Kind::p_nonneg, id.layer, id.index});
    program.inequalities.push_back({{{prob.q_var(m), 1.0}}, 0.0});
    prob.ineq_keys.push_back({Key::Kind::q_nonneg, id.layer, id.index});
  }
  for (std::size_t m = 0; m < prob.complementarity.size(); ++m) {
    const NeuronId id = prob.complementarity[m];
    program.products.push_back({prob.p_var(m), prob.q_var(m), instance.eps_comp});
    prob.ineq_keys.push_back({Key::Kind::comp, id.layer, id.index});
  }
  if (instance.norm == Norm::two) {
    ipm::Ball ball;
    for (int i = 0; i < d; ++i) ball.vars.push_back(i);
    ball.center = instance.x0;
    ball.radius = instance.delta;
    program.ball = std::move(ball);
    prob.ineq_keys.push_back({Key::Kind::ball, -1, 0});
  }

  // Objective c^T (W_L zhat + b_L).
  const Eigen::VectorXd c = instance.objective();
  const Eigen::VectorXd coeff = net.output_layer().weights.transpose() * c;
  program.objective.constant = c.dot(net.output_layer().bias);
  for (int j = 0; j < net.hidden_width(hidden - 1); ++j) {
    const int var = post_var({hidden - 1, j});
    if (var >= 0 && coeff[j] != 0.0) program.objective.terms.push_back({var, coeff[j]});
  }
  return prob;
}

Eigen::VectorXd MpccProblem::lift(const Eigen::VectorXd& x) const {
  const auto& net = *network;
  Eigen::VectorXd v = Eigen::VectorXd::Zero(program.num_vars);
  v.head(x.size()) = x;
  std::map<NeuronId, std::size_t> pair_of;
  for (std::size_t m = 0; m < complementarity.size(); ++m) pair_of[complementarity[m]] = m;
  Eigen::VectorXd post = x;
  for (int k = 0; k < net.num_hidden(); ++k) {
    const Eigen::VectorXd z = net.layer(k).weights * post + net.layer(k).bias;
    Eigen::VectorXd next(z.size());
    for (Eigen::Index j = 0; j < z.size(); ++j) {
      const NeuronId id{k, static_cast<int>(j)};
      v[z_var(id)] = z[j];
      switch (role_of(bounds, splits, id)) {
        case Role::stable_active:
        case Role::split_active:
          next[j] = z[j];
          break;
        case Role::unstable: {
          const std::size_t m = pair_of.at(id);
          v[p_var(m)] = std::max(z[j], 0.0);
          v[q_var(m)] = std::max(-z[j], 0.0);
          next[j] = v[p_var(m)];
          break;
        }
        default:
          next[j] = 0.0;
      }
    }
    post = std::move(next);
  }
  return v;
}

Eigen::VectorXd MpccProblem::project(const Eigen::VectorXd& x) const {
  if (norm == Norm::inf) {
    const Eigen::VectorXd r = Eigen::VectorXd::Constant(x0.size(), delta);
    return x.cwiseMax(x0 - r).cwiseMin(x0 + r);
  }
  const Eigen::VectorXd dx = x - x0;
  const double n = dx.norm();
  if (n <= delta) return x;
  return x0 + dx * (delta / n);
}

Eigen::VectorXd MpccProblem::input_of(const Eigen::VectorXd& v) const {
  return project(v.head(x0.size()));
}

nlohmann::json MpccProblem::to_json() const {
  using nlohmann::json;
  json doc;
  json names = json::array();
  for (const auto& k : var_keys) names.push_back(to_string(k));
  doc["variables"] = names;
  const auto rows = [](const std::vector<ipm::LinearForm>& forms, const std::vector<Key>& keys) {
    json triples = json::array();
    json constants = json::array();
    json labels = json::array();
    for (std::size_t r = 0; r < forms.size(); ++r) {
      for (const auto& t : forms[r].terms) triples.push_back({r, t.var, t.coeff});
      constants.push_back(forms[r].constant);
      labels.push_back(to_string(keys[r]));
    }
    return json{{"triples", triples}, {"constants", constants}, {"names", labels}};
  };
  doc["equalities"] = rows(program.equalities, eq_keys);
  doc["inequalities"] = rows(program.inequalities, ineq_keys);
  json products = json::array();
  for (const auto& p : program.products) products.push_back({p.first, p.second, p.cap});
  doc["products"] = products;
  if (program.ball) {
    doc["ball"] = {{"vars", program.ball->vars},
                   {"center", std::vector<double>(program.ball->center.data(),
                                                  program.ball->center.data() +
                                                      program.ball->center.size())},
                   {"radius", program.ball->radius}};
  }
  json obj = json::array();
  for (const auto& t : program.objective.terms) obj.push_back({t.var, t.coeff});
  doc["objective"] = {{"terms", obj}, {"constant", program.objective.constant}};
  return doc;
}

double default_partition_tol(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  double scale = 1.0;
  if (p.size() > 0) scale = std::max(scale, p.cwiseAbs().maxCoeff());
  if (q.size() > 0) scale = std::max(scale, q.cwiseAbs().maxCoeff());
  return 1e-5 * scale;
}

Partition classify_partition(const Eigen::VectorXd& p, const Eigen::VectorXd& q, double tol) {
  if (p.size() != q.size()) throw std::invalid_argument("p and q differ in length");
  Partition out;
  out.pattern.resize(static_cast<std::size_t>(p.size()));
  for (Eigen::Index j = 0; j < p.size(); ++j) {
    const auto k = static_cast<std::size_t>(j);
    if (p[j] > tol && q[j] <= tol) {
      out.i_p.push_back(k);
      out.pattern[k] = 1;
    } else if (q[j] > tol && p[j] <= tol) {
      out.i_q.push_back(k);
      out.pattern[k] = 0;
    } else {
      out.i_0.push_back(k);
      out.pattern[k] = p[j] > q[j] ? 1 : 0;
    }
  }
  return out;
}

std::optional<WarmStart> make_warm_start(const MpccSolution& parent_solution,
                                         const MpccProblem& parent_problem,
                                         const MpccProblem& child_problem) {
  if (parent_problem.network != child_problem.network ||
      !parent_problem.splits.subset_of(child_problem.splits) ||
      parent_solution.iterate.v.size() != parent_problem.num_vars() ||
      parent_solution.iterate.w.size() != parent_problem.program.num_inequalities()) {
    return std::nullopt;
  }
  const ipm::Iterate& from = parent_solution.iterate;
  WarmStart warm;

  const bool identical = parent_problem.var_keys == child_problem.var_keys &&
                         parent_problem.eq_keys == child_problem.eq_keys &&
                         parent_problem.ineq_keys == child_problem.ineq_keys &&
                         parent_problem.splits == child_problem.splits &&
                         parent_problem.eps_comp == child_problem.eps_comp;
  if (identical) {
    // Same program: restart exactly where the parent stopped.
    warm.iterate = from;
    const double m = from.s.size() > 0 ? from.s.cwiseProduct(from.w).mean() : 0.0;
    warm.mu = std::max(m, 1e-9);
    return warm;
  }

  std::map<Key, double> var_value;
  for (std::size_t i = 0; i < parent_problem.var_keys.size(); ++i) {
    var_value[parent_problem.var_keys[i]] = from.v[static_cast<Eigen::Index>(i)];
  }
  std::map<Key, double> eq_value;
  for (std::size_t i = 0; i < parent_problem.eq_keys.size(); ++i) {
    eq_value[parent_problem.eq_keys[i]] = from.y[static_cast<Eigen::Index>(i)];
  }
  std::map<Key, double> ineq_dual;
  for (std::size_t i = 0; i < parent_problem.ineq_keys.size(); ++i) {
    ineq_dual[parent_problem.ineq_keys[i]] = from.w[static_cast<Eigen::Index>(i)];
  }

  ipm::Iterate& it = warm.iterate;
  it.v.resize(child_problem.num_vars());
  for (std::size_t i = 0; i < child_problem.var_keys.size(); ++i) {
    const auto found = var_value.find(child_problem.var_keys[i]);
    it.v[static_cast<Eigen::Index>(i)] = found != var_value.end() ? found->second : 0.0;
  }
  // Project each newly fixed neuron onto its phase.
  for (const auto& [id, ph] : child_problem.splits.assignments()) {
    if (parent_problem.splits.contains(id)) continue;
    const int zv = child_problem.z_var(id);
    const double z = it.v[zv];
    PhaseProjection proj{id, ph, z, 0.0, 0.0};
    if (ph == Phase::inactive) {
      it.v[zv] = std::min(z, -kWarmPush);
      proj.q = std::max(-z, kWarmPush);
    } else {
      it.v[zv] = std::max(z, kWarmPush);
      proj.p = std::max(z, kWarmPush);
    }
    warm.projections.push_back(proj);
  }

  it.y.resize(static_cast<Eigen::Index>(child_problem.eq_keys.size()));
  for (std::size_t i = 0; i < child_problem.eq_keys.size(); ++i) {
    const auto found = eq_value.find(child_problem.eq_keys[i]);
    it.y[static_cast<Eigen::Index>(i)] = found != eq_value.end() ? found->second : 0.0;
  }
  const Eigen::VectorXd g = child_problem.program.inequality_values(it.v);
  it.s = g.cwiseMax(kWarmPush);
  it.w.resize(g.size());
  for (std::size_t i = 0; i < child_problem.ineq_keys.size(); ++i) {
    const auto found = ineq_dual.find(child_problem.ineq_keys[i]);
    it.w[static_cast<Eigen::Index>(i)] =
        found != ineq_dual.end() ? std::max(found->second, kWarmPush) : kWarmPush;
  }
  const double m = it.s.size() > 0 ? it.s.cwiseProduct(it.w).mean() : 0.0;
  warm.mu = std::max(m, 1e-9);
  return warm;
}

MpccSolution solve(const MpccProblem& problem, const std::optional<WarmStart>& warm,
                   const MpccOptions& options) {
  if (problem.point_domain()) {
    MpccSolution sol;
    sol.status = SolveStatus::solved;
    sol.iterate = ipm::primal_start(problem.program, problem.lift(problem.x0), 0.0, 0.0);
    decode(problem, sol);
    return sol;
  }
  if (warm) {
    auto sol = run(problem, warm->iterate, warm->mu, options.ipm);
    sol.warm_started = true;
    return sol;
  }
  std::vector<Eigen::VectorXd> starts{problem.x0};
  std::mt19937_64 rng(options.seed);
  for (int r = 0; r < options.restarts; ++r) starts.push_back(random_input(problem, rng));

  std::optional<MpccSolution> best;
  for (const auto& x : starts) {
    auto sol = run_continued(problem, x, options);
    const auto rank = [](const MpccSolution& s) { return s.has_point() ? s.objective : kInfeasibleBound; };
    if (!best || rank(sol) < rank(*best)) best = std::move(sol);
  }
  return *best;
}

PolishResult region_lp_polish(const VerificationInstance& instance, const LayerBounds& bounds,
                              const SplitSet& pattern, const ipm::Options& options) {
  PolishResult out;
  for (const NeuronId id : bounds.unstable()) {
    if (!pattern.contains(id)) {
      throw std::invalid_argument("pattern does not fix unstable neuron " + to_string(id));
    }
  }
  out.problem = build_problem(instance, bounds, pattern);
  if (!restrict_bounds(instance.net(), instance.box(), bounds, pattern)) return out;
  const auto& prob = out.problem;
  if (prob.point_domain()) {
    out.x = instance.x0;
    out.value = instance.value(out.x);
    out.iterate = ipm::primal_start(prob.program, prob.lift(out.x), 0.0, 0.0);
    const Eigen::VectorXd g = prob.program.inequality_values(out.iterate.v);
    out.feasible = g.size() == 0 || g.minCoeff() >= -1e-9;
    if (!out.feasible) out.value = kInfeasibleBound;
    return out;
  }
  const double mu0 = options.mu_init;
  auto start = ipm::primal_start(prob.program, prob.lift(instance.x0), mu0, std::sqrt(mu0) * 0.1);
  const auto res = ipm::solve(prob.program, std::move(start), mu0, options);
  out.iterate = res.iterate;
  if (res.status != ipm::Status::solved && res.status != ipm::Status::max_iter) return out;
  out.feasible = true;
  out.x = prob.input_of(res.iterate.v);
  out.value = instance.value(out.x);
  return out;
}

MpccSolution upper_bound(const VerificationInstance& instance, const MpccProblem& problem,
                         const std::optional<WarmStart>& warm, const MpccOptions& options) {
  MpccSolution sol = solve(problem, warm, options);
  if (!sol.has_point() || problem.point_domain()) return sol;
  const auto polish = region_lp_polish(instance, problem.bounds, sol.assignment, options.ipm);
  if (polish.feasible && polish.value < sol.objective) {
    sol.x_star = polish.x;
    sol.objective = polish.value;
  }
  return sol;
}

}  // namespace ccv
