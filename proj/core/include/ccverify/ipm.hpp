#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace ccv::ipm {

// Primal-dual interior-point method for
//
//   min  c^T v + c0
//   s.t. A v + a = 0                       (linear equalities)
//        G v + g >= 0                      (linear inequalities)
//        cap_i - v[first_i] v[second_i] >= 0   (bilinear caps)
//        radius^2 - ||v[ball] - center||^2 >= 0 (optional ball)
//
// Inequalities carry slacks s > 0 and multipliers w > 0, ordered as
// [linear..., bilinear..., ball]. The KKT system is condensed to the
// symmetric-indefinite form
//
//   [ H + J^T S^-1 W J + dw I   A^T   ] [dv]
//   [ A                        -dc I  ] [-dy]
//
// and factorized with Bunch-Kaufman; dw is raised until the inertia is
// (n, m_eq, 0). The barrier parameter decreases monotonically
// (mu <- mu_decrease * mu once the barrier KKT error is below kappa * mu), and
// steps are globalized by backtracking on an l1 merit function.

struct Term {
  int var = 0;
  double coeff = 0.0;
};

struct LinearForm {
  std::vector<Term> terms;
  double constant = 0.0;

  double evaluate(const Eigen::VectorXd& v) const;
};

struct Product {
  int first = 0;
  int second = 0;
  double cap = 0.0;
};

struct Ball {
  std::vector<int> vars;
  Eigen::VectorXd center;
  double radius = 0.0;
};

struct Program {
  int num_vars = 0;
  LinearForm objective;
  std::vector<LinearForm> equalities;
  std::vector<LinearForm> inequalities;
  std::vector<Product> products;
  std::optional<Ball> ball;

  int num_inequalities() const {
    return static_cast<int>(inequalities.size() + products.size() + (ball ? 1 : 0));
  }
  /// Values of all inequality constraints, in slack order.
  Eigen::VectorXd inequality_values(const Eigen::VectorXd& v) const;
  Eigen::VectorXd equality_values(const Eigen::VectorXd& v) const;
};

struct Iterate {
  Eigen::VectorXd v;  // primal
  Eigen::VectorXd s;  // slacks
  Eigen::VectorXd y;  // equality multipliers
  Eigen::VectorXd w;  // inequality multipliers
};

enum class Status { solved, max_iter, infeasible, numerical_error };

std::string to_string(Status status);

struct Options {
  int max_iter = 200;
  double tol = 1e-7;
  double mu_init = 0.1;
  double mu_decrease = 0.2;
  double kappa_mu = 10.0;
  double tau = 0.995;
  double reg_init = 1e-8;
  double reg_factor = 10.0;
  double feas_tol = 1e-6;
};

struct Residuals {
  double stationarity = 0.0;
  double equality = 0.0;
  double inequality = 0.0;
  double complementarity = 0.0;  // max_i s_i w_i

  double primal() const { return std::max(equality, inequality); }
  double kkt() const {
    return std::max(std::max(stationarity, complementarity), primal());
  }
};

Residuals residuals(const Program& program, const Iterate& it);

struct Result {
  Iterate iterate;
  Status status = Status::numerical_error;
  Residuals residual;
  int iterations = 0;
  double objective = 0.0;
  double final_mu = 0.0;
};

/// Slacks are set to max(g(v), slack_floor) and multipliers to mu / s.
Iterate primal_start(const Program& program, const Eigen::VectorXd& v, double mu,
                     double slack_floor);

/// Runs the method from `start` with initial barrier parameter `mu0`.
/// Slacks and inequality multipliers of `start` must be positive.
Result solve(const Program& program, Iterate start, double mu0, const Options& options = {});

}  // namespace ccv::ipm
