#include "ccverify/ipm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>
#include <cstdlib>

#include <Eigen/Dense>
#include <lapacke.h>

namespace ccv::ipm {
namespace {

constexpr double kSigmaBound = 1e10;  // multiplier safeguard
constexpr double kArmijo = 1e-4;
constexpr double kPenaltyRho = 0.1;

struct Dense {
  Eigen::MatrixXd eq;   // m_eq x n
  Eigen::VectorXd eq0;  // constants
  Eigen::MatrixXd lin;  // m_lin x n
  Eigen::VectorXd lin0;
  Eigen::VectorXd cost;
};

Dense densify(const Program& p) {
  Dense d;
  const auto fill = [&](const std::vector<LinearForm>& rows, Eigen::MatrixXd& m,
                        Eigen::VectorXd& c) {
    m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), p.num_vars);
    c.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (const auto& t : rows[r].terms) m(static_cast<Eigen::Index>(r), t.var) += t.coeff;
      c[static_cast<Eigen::Index>(r)] = rows[r].constant;
    }
  };
  fill(p.equalities, d.eq, d.eq0);
  fill(p.inequalities, d.lin, d.lin0);
  d.cost = Eigen::VectorXd::Zero(p.num_vars);
  for (const auto& t : p.objective.terms) d.cost[t.var] += t.coeff;
  return d;
}

Eigen::MatrixXd inequality_jacobian(const Program& p, const Dense& d, const Eigen::VectorXd& v) {
  const Eigen::Index m = p.num_inequalities();
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(m, p.num_vars);
  const Eigen::Index nl = d.lin.rows();
  j.topRows(nl) = d.lin;
  Eigen::Index row = nl;
  for (const auto& pr : p.products) {
    j(row, pr.first) -= v[pr.second];
    j(row, pr.second) -= v[pr.first];
    ++row;
  }
  if (p.ball) {
    for (std::size_t i = 0; i < p.ball->vars.size(); ++i) {
      const int var = p.ball->vars[i];
      j(row, var) = -2.0 * (v[var] - p.ball->center[static_cast<Eigen::Index>(i)]);
    }
  }
  return j;
}

// Hessian of the Lagrangian f - y^T h - w^T g (only the nonlinear
// inequalities contribute).
Eigen::MatrixXd lagrangian_hessian(const Program& p, const Eigen::VectorXd& w) {
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(p.num_vars, p.num_vars);
  Eigen::Index row = static_cast<Eigen::Index>(p.inequalities.size());
  for (const auto& pr : p.products) {
    h(pr.first, pr.second) += w[row];
    h(pr.second, pr.first) += w[row];
    ++row;
  }
  if (p.ball) {
    for (const int var : p.ball->vars) h(var, var) += 2.0 * w[row];
  }
  return h;
}

struct Inertia {
  int positive = 0;
  int negative = 0;
  int zero = 0;
};

// Bunch-Kaufman factorization of a symmetric matrix (lower triangle used).
struct SymmetricFactor {
  Eigen::MatrixXd lu;
  std::vector<lapack_int> pivots;
  bool ok = false;

  Inertia factor(const Eigen::MatrixXd& k) {
    lu = k;
    const auto n = static_cast<lapack_int>(k.rows());
    pivots.assign(static_cast<std::size_t>(n), 0);
    const lapack_int info =
        LAPACKE_dsytrf(LAPACK_COL_MAJOR, 'L', n, lu.data(), n, pivots.data());
    ok = info >= 0;
    Inertia in;
    if (info < 0) return in;
    // Only (numerically) exact zero pivots count as singular; the matrix is
    // badly scaled near the boundary, so a relative threshold misfires.
    const double zero_tol = 1e-20;
    for (lapack_int i = 0; i < n; ++i) {
      if (pivots[static_cast<std::size_t>(i)] > 0) {
        const double d = lu(i, i);
        if (std::abs(d) <= zero_tol) {
          ++in.zero;
        } else if (d > 0) {
          ++in.positive;
        } else {
          ++in.negative;
        }
      } else {
        // 2x2 block: one eigenvalue of each sign unless singular.
        const double a = lu(i, i);
        const double b = lu(i + 1, i);
        const double c = lu(i + 1, i + 1);
        const double det = a * c - b * b;
        if (std::abs(det) <= zero_tol * std::max(std::abs(a), std::abs(c))) {
          ++in.zero;
          ++in.negative;
        } else if (det < 0) {
          ++in.positive;
          ++in.negative;
        } else if (a + c > 0) {
          in.positive += 2;
        } else {
          in.negative += 2;
        }
        ++i;
      }
    }
    return in;
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
    Eigen::VectorXd x = rhs;
    const auto n = static_cast<lapack_int>(lu.rows());
    LAPACKE_dsytrs(LAPACK_COL_MAJOR, 'L', n, 1, lu.data(), n, pivots.data(), x.data(), n);
    return x;
  }
};

double inf_norm(const Eigen::VectorXd& v) { return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>(); }
double one_norm(const Eigen::VectorXd& v) { return v.size() == 0 ? 0.0 : v.lpNorm<1>(); }

double max_step(const Eigen::VectorXd& x, const Eigen::VectorXd& dx, double tau) {
  double alpha = 1.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (dx[i] < 0.0) alpha = std::min(alpha, -tau * x[i] / dx[i]);
  }
  return alpha;
}

}  // namespace

double LinearForm::evaluate(const Eigen::VectorXd& v) const {
  double out = constant;
  for (const auto& t : terms) out += t.coeff * v[t.var];
  return out;
}

Eigen::VectorXd Program::inequality_values(const Eigen::VectorXd& v) const {
  Eigen::VectorXd g(num_inequalities());
  Eigen::Index row = 0;
  for (const auto& r : inequalities) g[row++] = r.evaluate(v);
  for (const auto& pr : products) g[row++] = pr.cap - v[pr.first] * v[pr.second];
  if (ball) {
    double sq = 0.0;
    for (std::size_t i = 0; i < ball->vars.size(); ++i) {
      const double d = v[ball->vars[i]] - ball->center[static_cast<Eigen::Index>(i)];
      sq += d * d;
    }
    g[row] = ball->radius * ball->radius - sq;
  }
  return g;
}

Eigen::VectorXd Program::equality_values(const Eigen::VectorXd& v) const {
  Eigen::VectorXd h(static_cast<Eigen::Index>(equalities.size()));
  for (std::size_t r = 0; r < equalities.size(); ++r) {
    h[static_cast<Eigen::Index>(r)] = equalities[r].evaluate(v);
  }
  return h;
}

std::string to_string(Status status) {
  switch (status) {
    case Status::solved:
      return "solved";
    case Status::max_iter:
      return "max_iter";
    case Status::infeasible:
      return "infeasible";
    case Status::numerical_error:
      return "numerical_error";
  }
  return "unknown";
}

Residuals residuals(const Program& program, const Iterate& it) {
  const Dense d = densify(program);
  Residuals r;
  const Eigen::MatrixXd jac = inequality_jacobian(program, d, it.v);
  Eigen::VectorXd grad = d.cost;
  if (d.eq.rows() > 0) grad -= d.eq.transpose() * it.y;
  if (jac.rows() > 0) grad -= jac.transpose() * it.w;
  r.stationarity = inf_norm(grad);
  r.equality = inf_norm(program.equality_values(it.v));
  r.inequality = inf_norm(program.inequality_values(it.v) - it.s);
  r.complementarity = inf_norm(it.s.cwiseProduct(it.w));
  return r;
}

Iterate primal_start(const Program& program, const Eigen::VectorXd& v, double mu,
                     double slack_floor) {
  Iterate it;
  it.v = v;
  it.s = program.inequality_values(v).cwiseMax(slack_floor);
  it.w = (mu / it.s.array()).matrix();
  it.y = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(program.equalities.size()));
  return it;
}

Result solve(const Program& program, Iterate it, double mu0, const Options& options) {
  const Dense d = densify(program);
  const Eigen::Index n = program.num_vars;
  const Eigen::Index meq = d.eq.rows();
  const Eigen::Index mi = program.num_inequalities();

  Result result;
  double mu = std::max(mu0, options.tol / 10.0);
  double penalty = 1.0;
  double last_reg = 0.0;

  std::optional<Iterate> best;
  double best_obj = std::numeric_limits<double>::infinity();

  SymmetricFactor factor;
  Eigen::MatrixXd kkt(n + meq, n + meq);

  const auto objective_of = [&](const Eigen::VectorXd& v) { return d.cost.dot(v) + program.objective.constant; };
  const auto merit = [&](const Eigen::VectorXd& v, const Eigen::VectorXd& s, double nu) {
    if ((s.array() <= 0.0).any()) return std::numeric_limits<double>::infinity();
    const double barrier = mi > 0 ? s.array().log().sum() : 0.0;
    const double infeas = one_norm(program.equality_values(v)) +
                          one_norm(program.inequality_values(v) - s);
    return objective_of(v) - mu * barrier + nu * infeas;
  };

  int iter = 0;
  for (;; ++iter) {
    const Eigen::MatrixXd jac = inequality_jacobian(program, d, it.v);
    const Eigen::VectorXd geq = program.equality_values(it.v);
    const Eigen::VectorXd gin = program.inequality_values(it.v);
    Eigen::VectorXd rd = d.cost;
    if (meq > 0) rd -= d.eq.transpose() * it.y;
    if (mi > 0) rd -= jac.transpose() * it.w;
    const Eigen::VectorXd rg = gin - it.s;
    const Eigen::VectorXd sw = it.s.cwiseProduct(it.w);

    Residuals res;
    res.stationarity = inf_norm(rd);
    res.equality = inf_norm(geq);
    res.inequality = inf_norm(rg);
    res.complementarity = inf_norm(sw);

    // Track the best point that is feasible for the original constraints.
    const double true_infeas =
        std::max(inf_norm(geq), mi > 0 ? std::max(0.0, -gin.minCoeff()) : 0.0);
    if (true_infeas <= options.feas_tol) {
      const double obj = objective_of(it.v);
      if (obj < best_obj) {
        best_obj = obj;
        best = it;
      }
    }

    if (res.kkt() <= options.tol) {
      result.status = Status::solved;
      result.residual = res;
      break;
    }
    if (iter >= options.max_iter) {
      result.status = best ? Status::max_iter : Status::infeasible;
      if (best) it = *best;
      result.residual = residuals(program, it);
      break;
    }

    const auto barrier_error = [&]() {
      const double comp = mi > 0 ? inf_norm((sw.array() - mu).matrix()) : 0.0;
      return std::max({res.stationarity, res.primal(), comp});
    };
    while (mu > options.tol / 10.0 && barrier_error() <= options.kappa_mu * mu) {
      mu = std::max(options.tol / 10.0, options.mu_decrease * mu);
    }

    // Condensed Newton system.
    const Eigen::VectorXd sigma = it.w.cwiseQuotient(it.s);
    Eigen::MatrixXd hc = lagrangian_hessian(program, it.w);
    if (mi > 0) hc.noalias() += jac.transpose() * sigma.asDiagonal() * jac;
    const Eigen::VectorXd rc = (sw.array() - mu).matrix();
    Eigen::VectorXd rhs(n + meq);
    rhs.head(n) = -rd;
    if (mi > 0) {
      rhs.head(n) -= jac.transpose() * (rc.cwiseQuotient(it.s) + sigma.cwiseProduct(rg));
    }
    rhs.tail(meq) = -geq;

    double reg = 0.0;
    double reg_eq = 0.0;
    bool factored = false;
    for (int attempt = 0; attempt < 60; ++attempt) {
      kkt.setZero();
      kkt.topLeftCorner(n, n) = hc;
      kkt.topLeftCorner(n, n).diagonal().array() += reg;
      if (meq > 0) {
        kkt.bottomLeftCorner(meq, n) = d.eq;
        kkt.topRightCorner(n, meq) = d.eq.transpose();
        kkt.bottomRightCorner(meq, meq).diagonal().setConstant(-reg_eq);
      }
      const Inertia in = factor.factor(kkt);
      if (!factor.ok) break;
      if (in.positive == n && in.negative == meq && in.zero == 0) {
        factored = true;
        break;
      }
      if (in.zero > 0 && reg_eq == 0.0) {
        reg_eq = 1e-8 * std::pow(std::max(mu, 1e-12), 0.25);
      }
      if (reg == 0.0) {
        reg = last_reg > 0.0 ? std::max(1e-20, last_reg / 3.0) : options.reg_init;
      } else {
        reg *= options.reg_factor;
      }
      if (reg > 1e40) break;
    }
    if (!factored) {
      result.status = best ? Status::max_iter : Status::numerical_error;
      if (best) it = *best;
      result.residual = residuals(program, it);
      break;
    }
    if (reg > 0.0) last_reg = reg;

    const Eigen::VectorXd sol = factor.solve(rhs);
    const Eigen::VectorXd dv = sol.head(n);
    const Eigen::VectorXd dy = -sol.tail(meq);
    Eigen::VectorXd ds(mi), dw(mi);
    if (mi > 0) {
      ds = jac * dv + rg;
      dw = -(rc + it.w.cwiseProduct(ds)).cwiseQuotient(it.s);
    }

    const double alpha_p_max = mi > 0 ? max_step(it.s, ds, options.tau) : 1.0;
    const double alpha_d = mi > 0 ? max_step(it.w, dw, options.tau) : 1.0;

    // Merit penalty update and backtracking.
    const double theta = one_norm(geq) + one_norm(rg);
    const double barrier_slope =
        d.cost.dot(dv) - (mi > 0 ? mu * ds.cwiseQuotient(it.s).sum() : 0.0);
    if (theta > 1e-14) {
      const double curvature = std::max(0.0, 0.5 * dv.dot(hc * dv));
      const double needed = (barrier_slope + curvature) / ((1.0 - kPenaltyRho) * theta);
      if (penalty < needed) penalty = needed + 1.0;
    }
    const double slope = barrier_slope - penalty * theta;
    const double phi0 = merit(it.v, it.s, penalty);
    double alpha = alpha_p_max;
    for (int bt = 0; bt < 40; ++bt) {
      const double phi = merit(it.v + alpha * dv, it.s + alpha * ds, penalty);
      if (phi <= phi0 + kArmijo * alpha * std::min(slope, 0.0)) break;
      alpha *= 0.5;
    }

    it.v += alpha * dv;
    if (mi > 0) it.s += alpha * ds;
    if (meq > 0) it.y += alpha * dy;
    if (mi > 0) {
      it.w += alpha_d * dw;
      for (Eigen::Index i = 0; i < mi; ++i) {
        const double lo = mu / (kSigmaBound * it.s[i]);
        const double hi = kSigmaBound * mu / it.s[i];
        it.w[i] = std::clamp(it.w[i], lo, hi);
      }
    }
  }

  result.iterate = std::move(it);
  result.iterations = iter;
  result.objective = objective_of(result.iterate.v);
  result.final_mu = mu;
  return result;
}

}  // namespace ccv::ipm
