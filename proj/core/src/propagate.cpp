#include "ccverify/propagate.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace ccv {
namespace {

enum class Role : std::uint8_t { active, inactive, relaxed, split_active, split_inactive };

using Roles = std::vector<std::vector<Role>>;

Roles assign_roles(const LayerBounds& bounds, const SplitSet& splits) {
  Roles roles(bounds.num_layers());
  for (int k = 0; k < bounds.num_layers(); ++k) {
    const auto width = bounds.lower[k].size();
    roles[k].resize(width);
    for (Eigen::Index j = 0; j < width; ++j) {
      const NeuronId id{k, static_cast<int>(j)};
      if (auto ph = splits.phase(id)) {
        roles[k][j] = *ph == Phase::active ? Role::split_active : Role::split_inactive;
      } else if (bounds.lower[k][j] >= 0.0) {
        roles[k][j] = Role::active;
      } else if (bounds.upper[k][j] <= 0.0) {
        roles[k][j] = Role::inactive;
      } else {
        roles[k][j] = Role::relaxed;
      }
    }
  }
  return roles;
}

// Slope of the upper chord through (l, 0) and (u, u).
double chord_slope(double l, double u) { return u / (u - l); }

double concretize_min(const Eigen::VectorXd& a, const InputBox& box) {
  return a.dot(box.center()) - a.cwiseAbs().dot(box.radius());
}

struct BackwardOutput {
  double value = 0.0;
  LinearBound linear;
  std::vector<Eigen::VectorXd> grad_alpha;
  std::vector<Eigen::VectorXd> grad_beta;
  std::vector<Eigen::VectorXd> lam;
};

// Lower bound of  out_c^T z^L + sum_k extra[k]^T z^k  over the relaxed domain.
BackwardOutput backward_bound(const ReluNetwork& net, const InputBox& box,
                              const LayerBounds& dom, const Roles& roles,
                              const RelaxationParams& params, const Eigen::VectorXd* out_c,
                              const std::vector<Eigen::VectorXd>* extra, bool want_grad) {
  const int hidden = net.num_hidden();
  // lam[m]: coefficient on post-activations of hidden layer m (before relaxation).
  std::vector<Eigen::VectorXd> lam(hidden);
  double constant = 0.0;
  if (out_c != nullptr) {
    lam[hidden - 1] = net.output_layer().weights.transpose() * *out_c;
    constant += out_c->dot(net.output_layer().bias);
  } else {
    lam[hidden - 1] = Eigen::VectorXd::Zero(net.hidden_width(hidden - 1));
  }
  Eigen::VectorXd coeff_x;
  for (int m = hidden - 1; m >= 0; --m) {
    const auto& l = dom.lower[m];
    const auto& u = dom.upper[m];
    Eigen::VectorXd mu(lam[m].size());
    for (Eigen::Index j = 0; j < mu.size(); ++j) {
      const double lj = lam[m][j];
      switch (roles[m][j]) {
        case Role::active:
          mu[j] = lj;
          break;
        case Role::inactive:
          mu[j] = 0.0;
          break;
        case Role::split_active:
          mu[j] = lj - params.beta[m][j];
          break;
        case Role::split_inactive:
          mu[j] = params.beta[m][j];
          break;
        case Role::relaxed:
          if (lj >= 0.0) {
            mu[j] = params.alpha[m][j] * lj;
          } else {
            const double s = chord_slope(l[j], u[j]);
            mu[j] = s * lj;
            constant -= s * l[j] * lj;
          }
          break;
      }
    }
    if (extra != nullptr && (*extra)[m].size() > 0) mu += (*extra)[m];
    constant += mu.dot(net.layer(m).bias);
    Eigen::VectorXd down = net.layer(m).weights.transpose() * mu;
    if (m > 0) {
      lam[m - 1] = std::move(down);
    } else {
      coeff_x = std::move(down);
    }
  }

  BackwardOutput out;
  out.value = concretize_min(coeff_x, box) + constant;
  out.linear = LinearBound{coeff_x, constant};
  out.lam = lam;
  if (!want_grad) return out;

  out.grad_alpha.resize(hidden);
  out.grad_beta.resize(hidden);
  const Eigen::VectorXd center = box.center();
  const Eigen::VectorXd radius = box.radius();
  Eigen::VectorXd adj(coeff_x.size());
  for (Eigen::Index i = 0; i < adj.size(); ++i) {
    const double sgn = coeff_x[i] > 0.0 ? 1.0 : (coeff_x[i] < 0.0 ? -1.0 : 0.0);
    adj[i] = center[i] - sgn * radius[i];
  }
  for (int m = 0; m < hidden; ++m) {
    const auto& l = dom.lower[m];
    const auto& u = dom.upper[m];
    const Eigen::VectorXd adj_mu = net.layer(m).weights * adj + net.layer(m).bias;
    Eigen::VectorXd adj_lam = Eigen::VectorXd::Zero(adj_mu.size());
    out.grad_alpha[m] = Eigen::VectorXd::Zero(adj_mu.size());
    out.grad_beta[m] = Eigen::VectorXd::Zero(adj_mu.size());
    for (Eigen::Index j = 0; j < adj_mu.size(); ++j) {
      const double lj = lam[m][j];
      switch (roles[m][j]) {
        case Role::active:
          adj_lam[j] = adj_mu[j];
          break;
        case Role::inactive:
          break;
        case Role::split_active:
          adj_lam[j] = adj_mu[j];
          out.grad_beta[m][j] = -adj_mu[j];
          break;
        case Role::split_inactive:
          out.grad_beta[m][j] = adj_mu[j];
          break;
        case Role::relaxed:
          if (lj >= 0.0) {
            out.grad_alpha[m][j] = adj_mu[j] * lj;
            adj_lam[j] = adj_mu[j] * params.alpha[m][j];
          } else {
            const double s = chord_slope(l[j], u[j]);
            adj_lam[j] = adj_mu[j] * s - s * l[j];
          }
          break;
      }
    }
    adj = std::move(adj_lam);
  }
  return out;
}

// Row-batched lower bounds of rows(coeffs)^T z^top over the input box, using
// the (already final) bounds of layers below `top`.
Eigen::VectorXd batched_layer_lower(const ReluNetwork& net, const InputBox& box,
                                    const LayerBounds& bounds, int top,
                                    const Eigen::MatrixXd& coeffs) {
  // coeffs: rows x width(top), coefficient on z^top.
  Eigen::MatrixXd mu = coeffs;
  Eigen::VectorXd constant = Eigen::VectorXd::Zero(coeffs.rows());
  for (int m = top; m >= 0; --m) {
    constant += mu * net.layer(m).bias;
    Eigen::MatrixXd lam = mu * net.layer(m).weights;  // on post-activations of m-1 (or x)
    if (m == 0) {
      const Eigen::VectorXd center = box.center();
      const Eigen::VectorXd radius = box.radius();
      return lam * center - lam.cwiseAbs() * radius + constant;
    }
    const auto& l = bounds.lower[m - 1];
    const auto& u = bounds.upper[m - 1];
    mu.resize(lam.rows(), lam.cols());
    for (Eigen::Index j = 0; j < lam.cols(); ++j) {
      if (l[j] >= 0.0) {
        mu.col(j) = lam.col(j);
      } else if (u[j] <= 0.0) {
        mu.col(j).setZero();
      } else {
        const double s = chord_slope(l[j], u[j]);
        const double alpha = u[j] >= -l[j] ? 1.0 : 0.0;
        for (Eigen::Index r = 0; r < lam.rows(); ++r) {
          const double v = lam(r, j);
          if (v >= 0.0) {
            mu(r, j) = alpha * v;
          } else {
            mu(r, j) = s * v;
            constant[r] -= s * l[j] * v;
          }
        }
      }
    }
  }
  return constant;  // unreachable
}

}  // namespace

std::vector<NeuronId> LayerBounds::unstable() const {
  std::vector<NeuronId> out;
  for (int k = 0; k < num_layers(); ++k) {
    for (Eigen::Index j = 0; j < lower[k].size(); ++j) {
      const NeuronId id{k, static_cast<int>(j)};
      if (is_unstable(id)) out.push_back(id);
    }
  }
  return out;
}

std::optional<Phase> SplitSet::phase(NeuronId id) const {
  const auto it = assignments_.find(id);
  if (it == assignments_.end()) return std::nullopt;
  return it->second;
}

SplitSet SplitSet::with(NeuronId id, Phase phase) const {
  SplitSet copy = *this;
  copy.assign(id, phase);
  return copy;
}

bool SplitSet::subset_of(const SplitSet& other) const {
  for (const auto& [id, ph] : assignments_) {
    const auto o = other.phase(id);
    if (!o || *o != ph) return false;
  }
  return true;
}

RelaxationParams RelaxationParams::initial(const LayerBounds& bounds) {
  RelaxationParams p;
  p.alpha.resize(bounds.num_layers());
  p.beta.resize(bounds.num_layers());
  for (int k = 0; k < bounds.num_layers(); ++k) {
    const auto& l = bounds.lower[k];
    const auto& u = bounds.upper[k];
    p.alpha[k] = (u.array() >= -l.array()).cast<double>().matrix();
    p.beta[k] = Eigen::VectorXd::Zero(l.size());
  }
  return p;
}

LayerBounds ibp_bounds(const ReluNetwork& network, const InputBox& box) {
  if (box.dim() != network.input_dim()) {
    throw ModelError(ModelError::Kind::dimension, "layer 0: input box dimension mismatch", 0);
  }
  LayerBounds out;
  Eigen::VectorXd lo = box.lower;
  Eigen::VectorXd hi = box.upper;
  for (int k = 0; k < network.num_hidden(); ++k) {
    const auto& w = network.layer(k).weights;
    const Eigen::VectorXd mid = 0.5 * (lo + hi);
    const Eigen::VectorXd rad = 0.5 * (hi - lo);
    const Eigen::VectorXd zc = w * mid + network.layer(k).bias;
    const Eigen::VectorXd zr = w.cwiseAbs() * rad;
    out.lower.push_back(zc - zr);
    out.upper.push_back(zc + zr);
    lo = out.lower.back().cwiseMax(0.0);
    hi = out.upper.back().cwiseMax(0.0);
  }
  return out;
}

LayerBounds ibp_bounds(const VerificationInstance& instance) {
  return ibp_bounds(instance.net(), instance.box());
}

LayerBounds crown_bounds(const VerificationInstance& instance) {
  const auto& net = instance.net();
  const InputBox box = instance.box();
  const LayerBounds ibp = ibp_bounds(net, box);
  LayerBounds out;
  for (int k = 0; k < net.num_hidden(); ++k) {
    if (k == 0) {
      // First layer: interval arithmetic is already exact.
      out.lower.push_back(ibp.lower[0]);
      out.upper.push_back(ibp.upper[0]);
      continue;
    }
    const int w = net.hidden_width(k);
    Eigen::MatrixXd rows(2 * w, w);
    rows.topRows(w) = Eigen::MatrixXd::Identity(w, w);
    rows.bottomRows(w) = -Eigen::MatrixXd::Identity(w, w);
    const Eigen::VectorXd lb = batched_layer_lower(net, box, out, k, rows);
    out.lower.push_back(ibp.lower[k].cwiseMax(lb.head(w)));
    out.upper.push_back(ibp.upper[k].cwiseMin(-lb.tail(w)));
    // Guard against round-off crossing on degenerate (zero-width) inputs.
    for (int j = 0; j < w; ++j) {
      if (out.lower[k][j] > out.upper[k][j]) {
        const double m = 0.5 * (out.lower[k][j] + out.upper[k][j]);
        out.lower[k][j] = out.upper[k][j] = m;
      }
    }
  }
  return out;
}

std::optional<LayerBounds> restrict_bounds(const ReluNetwork& network, const InputBox& box,
                                           const LayerBounds& root, const SplitSet& splits) {
  LayerBounds out;
  Eigen::VectorXd lo = box.lower;
  Eigen::VectorXd hi = box.upper;
  for (int k = 0; k < network.num_hidden(); ++k) {
    const auto& w = network.layer(k).weights;
    const Eigen::VectorXd mid = 0.5 * (lo + hi);
    const Eigen::VectorXd rad = 0.5 * (hi - lo);
    const Eigen::VectorXd zc = w * mid + network.layer(k).bias;
    const Eigen::VectorXd zr = w.cwiseAbs() * rad;
    Eigen::VectorXd l = (zc - zr).cwiseMax(root.lower[k]);
    Eigen::VectorXd u = (zc + zr).cwiseMin(root.upper[k]);
    for (Eigen::Index j = 0; j < l.size(); ++j) {
      if (auto ph = splits.phase({k, static_cast<int>(j)})) {
        if (*ph == Phase::active) {
          l[j] = std::max(l[j], 0.0);
        } else {
          u[j] = std::min(u[j], 0.0);
        }
      }
      if (l[j] > u[j]) {
        // Rounding between the two interval computations is not emptiness.
        if (l[j] - u[j] > 1e-12 * (1.0 + std::abs(l[j]) + std::abs(u[j]))) return std::nullopt;
        std::swap(l[j], u[j]);
      }
    }
    lo = l.cwiseMax(0.0);
    hi = u.cwiseMax(0.0);
    out.lower.push_back(std::move(l));
    out.upper.push_back(std::move(u));
  }
  return out;
}

double interval_objective_bound(const VerificationInstance& instance, const LayerBounds& bounds) {
  const auto& net = instance.net();
  const Eigen::VectorXd coeff =
      net.output_layer().weights.transpose() * instance.objective();
  const int last = net.num_hidden() - 1;
  const Eigen::VectorXd lo = bounds.lower[last].cwiseMax(0.0);
  const Eigen::VectorXd hi = bounds.upper[last].cwiseMax(0.0);
  double value = instance.objective().dot(net.output_layer().bias);
  for (Eigen::Index j = 0; j < coeff.size(); ++j) {
    value += coeff[j] >= 0.0 ? coeff[j] * lo[j] : coeff[j] * hi[j];
  }
  return value;
}

LowerBoundResult crown_lower_bound(const VerificationInstance& instance, const LayerBounds& root,
                                   const SplitSet& splits, const RelaxationParams* params) {
  const auto& net = instance.net();
  const InputBox box = instance.box();
  LowerBoundResult result;
  const auto dom = restrict_bounds(net, box, root, splits);
  if (!dom) {
    result.lower = kInfeasibleBound;
    result.infeasible = true;
    result.backward_value = result.interval_value = kInfeasibleBound;
    result.linear = LinearBound{Eigen::VectorXd::Zero(net.input_dim()), kInfeasibleBound};
    return result;
  }
  const Roles roles = assign_roles(*dom, splits);
  const RelaxationParams defaults = RelaxationParams::initial(*dom);
  const RelaxationParams& use = params != nullptr ? *params : defaults;
  const Eigen::VectorXd c = instance.objective();
  auto bw = backward_bound(net, box, *dom, roles, use, &c, nullptr, false);
  result.backward_value = bw.value;
  result.interval_value = interval_objective_bound(instance, *dom);
  result.lower = std::max(bw.value, result.interval_value);
  result.linear = std::move(bw.linear);
  return result;
}

OptimizedBound optimize_relaxation(const VerificationInstance& instance, const LayerBounds& root,
                                   const SplitSet& splits, const OptimizeOptions& options,
                                   const RelaxationParams* start) {
  const auto& net = instance.net();
  const InputBox box = instance.box();
  OptimizedBound out;
  const auto dom = restrict_bounds(net, box, root, splits);
  if (!dom) {
    out.lower = out.initial = kInfeasibleBound;
    out.infeasible = true;
    out.linear = LinearBound{Eigen::VectorXd::Zero(net.input_dim()), kInfeasibleBound};
    return out;
  }
  const Roles roles = assign_roles(*dom, splits);
  const Eigen::VectorXd c = instance.objective();
  const double interval = interval_objective_bound(instance, *dom);

  RelaxationParams params = RelaxationParams::initial(*dom);
  auto bw = backward_bound(net, box, *dom, roles, params, &c, nullptr, options.iters > 0);
  out.initial = std::max(bw.value, interval);
  if (start) {
    auto warm = backward_bound(net, box, *dom, roles, *start, &c, nullptr, options.iters > 0);
    if (warm.value > bw.value) {
      params = *start;
      bw = std::move(warm);
    }
  }
  double best_raw = bw.value;
  out.params = params;
  out.linear = bw.linear;

  // Projected Adam on (alpha, beta), one moment pair per parameter.
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<Eigen::VectorXd> m_a, v_a, m_b, v_b;
  for (int k = 0; k < net.num_hidden(); ++k) {
    m_a.push_back(Eigen::VectorXd::Zero(params.alpha[k].size()));
    v_a.push_back(Eigen::VectorXd::Zero(params.alpha[k].size()));
    m_b.push_back(Eigen::VectorXd::Zero(params.beta[k].size()));
    v_b.push_back(Eigen::VectorXd::Zero(params.beta[k].size()));
  }
  const auto adam = [&](double& m, double& v, double g, int t, double lr) {
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    return lr * mh / (std::sqrt(vh) + eps);
  };
  double step = options.step;
  for (int it = 0; it < options.iters; ++it) {
    bool finite = true;
    for (int k = 0; k < net.num_hidden() && finite; ++k) {
      finite = bw.grad_alpha[k].allFinite() && bw.grad_beta[k].allFinite();
    }
    if (!finite) break;
    for (int k = 0; k < net.num_hidden(); ++k) {
      for (Eigen::Index j = 0; j < params.alpha[k].size(); ++j) {
        if (roles[k][j] == Role::relaxed) {
          const double d = adam(m_a[k][j], v_a[k][j], bw.grad_alpha[k][j], it + 1, step);
          params.alpha[k][j] = std::clamp(params.alpha[k][j] + d, 0.0, 1.0);
        } else if (roles[k][j] == Role::split_active || roles[k][j] == Role::split_inactive) {
          const double d = adam(m_b[k][j], v_b[k][j], bw.grad_beta[k][j], it + 1, step);
          params.beta[k][j] = std::max(0.0, params.beta[k][j] + d);
        }
      }
    }
    step *= options.decay;
    bw = backward_bound(net, box, *dom, roles, params, &c, nullptr, true);
    out.iterations = it + 1;
    if (!std::isfinite(bw.value)) break;
    if (bw.value > best_raw) {
      best_raw = bw.value;
      out.params = params;
      out.linear = bw.linear;
    }
  }
  out.lower = std::max(best_raw, interval);
  return out;
}

OptimizedBound child_bound(const VerificationInstance& instance, const LayerBounds& root,
                           const SplitSet& child_splits, const OptimizedBound& parent,
                           const OptimizeOptions& options) {
  OptimizedBound out = optimize_relaxation(instance, root, child_splits, options, &parent.params);
  if (!out.infeasible && out.lower < parent.lower) {
    out.lower = parent.lower;
    out.params = parent.params;
    out.linear = parent.linear;
  }
  return out;
}

std::optional<BackwardCoefficients> backward_coefficients(const VerificationInstance& instance,
                                                         const LayerBounds& root,
                                                         const SplitSet& splits) {
  const auto& net = instance.net();
  const InputBox box = instance.box();
  auto dom = restrict_bounds(net, box, root, splits);
  if (!dom) return std::nullopt;
  const Roles roles = assign_roles(*dom, splits);
  const RelaxationParams params = RelaxationParams::initial(*dom);
  const Eigen::VectorXd c = instance.objective();
  auto bw = backward_bound(net, box, *dom, roles, params, &c, nullptr, false);
  return BackwardCoefficients{std::move(*dom), std::move(bw.lam)};
}

bool certify_empty_domain(const VerificationInstance& instance, const LayerBounds& root,
                          const SplitSet& splits, const std::vector<Eigen::VectorXd>& weights) {
  const auto& net = instance.net();
  const InputBox box = instance.box();
  const auto dom = restrict_bounds(net, box, root, splits);
  if (!dom) return true;
  std::vector<Eigen::VectorXd> extra(net.num_hidden());
  for (int k = 0; k < net.num_hidden(); ++k) {
    extra[k] = Eigen::VectorXd::Zero(net.hidden_width(k));
  }
  for (const auto& [id, ph] : splits.assignments()) {
    const double y = std::max(0.0, weights.at(id.layer)[id.index]);
    extra[id.layer][id.index] = ph == Phase::active ? -y : y;
  }
  const Roles roles = assign_roles(*dom, splits);
  const RelaxationParams params = RelaxationParams::initial(*dom);
  const auto bw = backward_bound(net, box, *dom, roles, params, nullptr, &extra, false);
  return bw.value > 0.0;
}

}  // namespace ccv
