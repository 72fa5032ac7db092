#include "ccverify/bab.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <memory>

namespace ccv {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Multipliers of the sign rows (z >= 0 for active splits, z <= 0 for
// inactive ones), laid out per hidden layer.
std::vector<Eigen::VectorXd> sign_multipliers(const MpccProblem& prob, const Eigen::VectorXd& w) {
  const auto& net = *prob.network;
  std::vector<Eigen::VectorXd> out(static_cast<std::size_t>(net.num_hidden()));
  for (int k = 0; k < net.num_hidden(); ++k) out[k] = Eigen::VectorXd::Zero(net.hidden_width(k));
  for (std::size_t i = 0; i < prob.ineq_keys.size(); ++i) {
    const Key& key = prob.ineq_keys[i];
    const auto ph = prob.splits.phase({key.layer, key.index});
    if (!ph) continue;
    const bool sign_row = (key.kind == Key::Kind::z_lower && *ph == Phase::active) ||
                          (key.kind == Key::Kind::z_upper && *ph == Phase::inactive);
    if (sign_row) out[key.layer][key.index] = std::max(0.0, w[static_cast<Eigen::Index>(i)]);
  }
  return out;
}

// Phase-I program: minimize t with every z bound row relaxed by t. A
// positive optimum means the split region is empty; its multipliers on the
// sign rows are Farkas weights.
std::optional<std::vector<Eigen::VectorXd>> farkas_weights(const MpccProblem& prob,
                                                           const Eigen::VectorXd& x0) {
  ipm::Program p1 = prob.program;
  const int t = p1.num_vars++;
  p1.objective = ipm::LinearForm{{{t, 1.0}}, 0.0};
  for (std::size_t i = 0; i < p1.inequalities.size(); ++i) {
    const auto kind = prob.ineq_keys[i].kind;
    if (kind == Key::Kind::z_lower || kind == Key::Kind::z_upper) {
      p1.inequalities[i].terms.push_back({t, 1.0});
    }
  }
  Eigen::VectorXd v(p1.num_vars);
  v.head(prob.num_vars()) = prob.lift(x0);
  v[t] = 0.0;
  const Eigen::VectorXd g = p1.inequality_values(v);
  v[t] = std::max(0.0, -g.minCoeff()) + 1.0;
  const double mu0 = 0.1;
  const auto res = ipm::solve(p1, ipm::primal_start(p1, v, mu0, 0.03), mu0);
  if (res.status != ipm::Status::solved || res.objective <= 0.0) return std::nullopt;
  return sign_multipliers(prob, res.iterate.w);
}

bool has_unsplit_unstable(const VerificationInstance& inst, const LayerBounds& root,
                          const SplitSet& splits) {
  const auto dom = restrict_bounds(inst.net(), inst.box(), root, splits);
  if (!dom) return false;
  for (const NeuronId id : dom->unstable()) {
    if (!splits.contains(id)) return true;
  }
  return false;
}

class Run {
 public:
  Run(const VerificationInstance& inst, const BabOptions& opt)
      : inst_(inst), opt_(opt), start_(Clock::now()) {}

  Certificate go() {
    inst_.validate();
    root_ = crown_bounds(inst_);
    unstable_ = root_.unstable();
    cert_.tau_max = inst_.tau_max;

    // Root lower bound.
    const auto t_bound = Clock::now();
    const auto root_lb = optimize_relaxation(inst_, root_, {}, opt_.bound);
    const double cost_bound = seconds_since(t_bound);
    ++cert_.bound_computations;
    cert_.root_lower = root_lb.lower;
    lower_ = root_lb.lower;
    if (lower_ > 0.0) {
      record(0);
      return finish();
    }

    // Root NLP.
    const auto t_nlp = Clock::now();
    auto root_problem = std::make_shared<const MpccProblem>(build_problem(inst_, root_, {}));
    auto root_sol = std::make_shared<const MpccSolution>(upper_bound(inst_, *root_problem, std::nullopt, opt_.mpcc));
    const double cost_nlp = seconds_since(t_nlp);
    ++cert_.nlp_solves;
    if (opt_.auto_tau) {
      const double ratio = cost_nlp / std::max(cost_bound, 1e-9);
      cert_.tau_max = static_cast<int>(std::clamp(std::ceil(ratio), 1.0, 1000.0));
    }
    if (root_sol->has_point()) {
      cert_.root_upper = root_sol->objective;
      if (offer_upper(root_sol->objective, root_sol->x_star)) return finish();
      a_nlp_ = root_sol->assignment;
    }

    Domain root_domain;
    root_domain.lower = lower_;
    root_domain.upper = upper_;
    root_domain.params = std::make_shared<const RelaxationParams>(root_lb.params);
    if (root_sol->has_point()) {
      root_domain.warm = root_sol;
      root_domain.warm_problem = root_problem;
    }
    queue_.push(std::move(root_domain));
    record(0);

    int tau = 0;
    int t = 0;
    while (upper_ - lower_ > inst_.epsilon && !queue_.empty() && t < inst_.t_max) {
      if (seconds_since(start_) > opt_.timeout_s) {
        cert_.timed_out = true;
        break;
      }
      ++t;
      Domain dom = *queue_.pop();

      if (!has_unsplit_unstable(inst_, root_, dom.splits)) {
        const auto leaf = leaf_bound(inst_, root_, dom.splits, opt_.mpcc.ipm);
        ++cert_.bound_computations;
        if (leaf.upper && offer_upper(leaf.upper->first, leaf.upper->second)) {
          cert_.rounds = t;
          return finish();
        }
        close(std::max(dom.lower, leaf.lower));
        update_lower();
        record(t);
        continue;
      }

      const auto base = base_scores(inst_, root_, dom.splits, opt_.branch);
      cert_.bound_computations += base.bound_evaluations;
      const auto scores =
          pattern_aligned_scores(base, dom.splits, a_nlp_, unstable_, inst_.lambda);
      const BranchScore pick = select_split(scores);

      std::vector<Phase> order{Phase::inactive, Phase::active};
      if (inst_.lambda > 0.0 && a_nlp_) {
        if (const auto ph = a_nlp_->phase(pick.neuron); ph && *ph == Phase::active) {
          order = {Phase::active, Phase::inactive};
        }
      }

      for (const Phase ph : order) {
        Domain child;
        child.splits = dom.splits.with(pick.neuron, ph);
        child.depth = dom.depth + 1;
        child.upper = dom.upper;
        child.warm = dom.warm;
        child.warm_problem = dom.warm_problem;
        const auto ob =
            optimize_relaxation(inst_, root_, child.splits, opt_.bound, dom.params.get());
        ++cert_.bound_computations;
        ++tau;
        if (ob.infeasible) {
          ++cert_.domains_pruned;
          continue;
        }
        child.lower = std::max(dom.lower, ob.lower);
        child.params = std::make_shared<const RelaxationParams>(ob.params);

        if (tau > cert_.tau_max) {
          tau = 0;
          if (resolve_nlp(child)) {
            cert_.rounds = t;
            return finish();
          }
        }
        if (child.lower > 0.0 || child.lower >= upper_ - inst_.epsilon) {
          ++cert_.domains_pruned;
          close(child.lower);
          continue;
        }
        queue_.push(std::move(child));
      }
      update_lower();
      record(t);
    }
    cert_.rounds = t;
    return finish();
  }

 private:
  // Solves the NLP on `child`; returns true on a global Unsafe stop.
  bool resolve_nlp(Domain& child) {
    const auto dom = restrict_bounds(inst_.net(), inst_.box(), root_, child.splits);
    if (!dom) return false;
    auto problem = std::make_shared<const MpccProblem>(build_problem(inst_, *dom, child.splits));
    std::optional<WarmStart> warm;
    if (child.warm && child.warm_problem) {
      warm = make_warm_start(*child.warm, *child.warm_problem, *problem);
    }
    auto sol = std::make_shared<const MpccSolution>(upper_bound(inst_, *problem, warm, opt_.mpcc));
    ++cert_.nlp_solves;
    if (opt_.compare_cold && warm) {
      MpccOptions single = opt_.mpcc;
      single.restarts = 0;
      const auto cold = solve(*problem, std::nullopt, single);
      cert_.resolve_comparisons.push_back(
          {sol->ipm_iterations, cold.ipm_iterations, sol->status, cold.status});
    }
    if (!sol->has_point()) return false;
    child.upper = sol->objective;
    child.warm = sol;
    child.warm_problem = problem;
    const bool improved = sol->objective < upper_;
    if (offer_upper(sol->objective, sol->x_star)) return true;
    if (improved) a_nlp_ = sol->assignment;
    return false;
  }

  // Running-min update of the global upper bound; true when it certifies
  // Unsafe.
  bool offer_upper(double value, const Eigen::VectorXd& x) {
    if (!(value < upper_)) return false;
    upper_ = value;
    cert_.incumbent = x;
    if (upper_ < 0.0) {
      // Re-check independently of the solver before declaring Unsafe.
      if (inst_.contains(x, 1e-9) && inst_.value(x) < 0.0) {
        cert_.counterexample = x;
        return true;
      }
    }
    return false;
  }

  void close(double lower) { closed_min_ = std::min(closed_min_, lower); }

  void update_lower() { lower_ = std::min(queue_.min_lower(), closed_min_); }

  void record(int round) { cert_.history.push_back({round, lower_, upper_}); }

  Certificate finish() {
    cert_.global_lower = lower_;
    cert_.global_upper = upper_;
    if (cert_.counterexample) {
      cert_.verdict = Verdict::unsafe;
    } else if (lower_ > 0.0) {
      cert_.verdict = Verdict::safe;
    } else {
      cert_.verdict = Verdict::gap;
    }
    cert_.gap = upper_ - lower_;
    cert_.wall_time_s = seconds_since(start_);
    if (cert_.history.empty() || cert_.history.back().lower != lower_ ||
        cert_.history.back().upper != upper_) {
      record(cert_.rounds);
    }
    return cert_;
  }

  const VerificationInstance& inst_;
  const BabOptions& opt_;
  Clock::time_point start_;
  LayerBounds root_;
  std::vector<NeuronId> unstable_;
  DomainQueue queue_;
  std::optional<SplitSet> a_nlp_;
  double lower_ = -kInfeasibleBound;
  double upper_ = kInfeasibleBound;
  double closed_min_ = kInfeasibleBound;
  Certificate cert_;
};

}  // namespace

LeafBound leaf_bound(const VerificationInstance& inst, const LayerBounds& root,
                        const SplitSet& splits, const ipm::Options& ipm_options) {
  LeafBound out;
  const auto dom = restrict_bounds(inst.net(), inst.box(), root, splits);
  if (!dom) {
    out.lower = kInfeasibleBound;
    return out;
  }
  SplitSet full = splits;
  for (const NeuronId id : dom->unstable()) {
    if (!full.contains(id)) full.assign(id, Phase::inactive);  // not reached: caller checks
  }
  const auto polish = region_lp_polish(inst, *dom, full, ipm_options);
  if (polish.feasible) {
    out.upper = std::make_pair(polish.value, polish.x);
    RelaxationParams params = RelaxationParams::initial(*dom);
    params.beta = sign_multipliers(polish.problem, polish.iterate.w);
    // Multipliers on other binding rows (non-sign z bounds) are dropped, so
    // ascend from the dual point as well.
    out.lower = std::max(crown_lower_bound(inst, root, full, &params).lower,
                         optimize_relaxation(inst, root, full, {}, &params).lower);
    return out;
  }
  if (const auto weights = farkas_weights(polish.problem, inst.x0)) {
    if (certify_empty_domain(inst, root, full, *weights)) {
      out.lower = kInfeasibleBound;
      return out;
    }
  }
  out.lower = optimize_relaxation(inst, root, full).lower;
  return out;
}

std::string to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::safe: return "safe";
    case Verdict::unsafe: return "unsafe";
    case Verdict::gap: return "gap";
  }
  return "unknown";
}

Certificate verify(const VerificationInstance& instance, const BabOptions& options) {
  return Run(instance, options).go();
}

MetricsSummary compute_metrics(const std::vector<double>& uppers,
                               const std::vector<std::optional<double>>& references) {
  if (uppers.size() != references.size()) {
    throw std::invalid_argument("compute_metrics: case counts differ");
  }
  MetricsSummary out;
  std::vector<double> rel;
  int found = 0;
  for (std::size_t i = 0; i < uppers.size(); ++i) {
    const bool has_upper = std::isfinite(uppers[i]);
    if (has_upper) ++found;
    if (!has_upper || !references[i]) {
      out.cases.emplace_back(std::nullopt);
      continue;
    }
    Metrics m;
    m.reference = *references[i];
    m.abs_err = std::abs(uppers[i] - m.reference);
    m.rel_err = m.reference != 0.0 ? m.abs_err / std::abs(m.reference) : m.abs_err;
    m.upper_rate = 1.0;
    out.mean_abs_err += m.abs_err;
    out.mean_rel_err += m.rel_err;
    rel.push_back(m.rel_err);
    out.cases.emplace_back(m);
  }
  out.counted = static_cast<int>(rel.size());
  if (!rel.empty()) {
    out.mean_abs_err /= static_cast<double>(rel.size());
    out.mean_rel_err /= static_cast<double>(rel.size());
    std::sort(rel.begin(), rel.end());
    const std::size_t n = rel.size();
    out.median_rel_err = n % 2 == 1 ? rel[n / 2] : 0.5 * (rel[n / 2 - 1] + rel[n / 2]);
  }
  out.upper_rate = uppers.empty() ? 0.0 : static_cast<double>(found) / static_cast<double>(uppers.size());
  return out;
}

}  // namespace ccv
