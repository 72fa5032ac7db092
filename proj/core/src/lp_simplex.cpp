#include "ccverify/lp_simplex.hpp"

#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace ccv::lp {
namespace {

constexpr double kPivotTol = 1e-11;
constexpr double kFeasTol = 1e-9;

struct Tableau {
  Eigen::MatrixXd t;  // rows: constraints, last column: rhs
  std::vector<int> basis;
  std::vector<bool> allowed;
  Eigen::VectorXd reduced;  // reduced costs, last entry: -objective
  int pivots = 0;

  int cols() const { return static_cast<int>(t.cols()) - 1; }

  void price(const Eigen::VectorXd& cost) {
    reduced = Eigen::VectorXd::Zero(t.cols());
    reduced.head(cols()) = cost;
    for (std::size_t i = 0; i < basis.size(); ++i) {
      reduced -= cost[basis[i]] * t.row(static_cast<Eigen::Index>(i)).transpose();
    }
  }

  void pivot(int row, int col) {
    t.row(row) /= t(row, col);
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
      if (i != row && t(i, col) != 0.0) t.row(i) -= t(i, col) * t.row(row);
    }
    if (reduced[col] != 0.0) reduced -= reduced[col] * t.row(row).transpose();
    basis[static_cast<std::size_t>(row)] = col;
    ++pivots;
  }

  // Bland's rule: smallest improving column, smallest basic index among
  // ratio ties.
  void optimize() {
    for (;;) {
      int enter = -1;
      for (int j = 0; j < cols(); ++j) {
        if (allowed[static_cast<std::size_t>(j)] && reduced[j] < -kPivotTol) {
          enter = j;
          break;
        }
      }
      if (enter < 0) return;
      int leave = -1;
      double best = 0.0;
      for (Eigen::Index i = 0; i < t.rows(); ++i) {
        const double a = t(i, enter);
        if (a <= kPivotTol) continue;
        const double ratio = t(i, cols()) / a;
        if (leave < 0 || ratio < best - 1e-14 ||
            (ratio <= best + 1e-14 && basis[static_cast<std::size_t>(i)] <
                                          basis[static_cast<std::size_t>(leave)])) {
          leave = static_cast<int>(i);
          best = ratio;
        }
      }
      if (leave < 0) throw std::logic_error("simplex: unbounded direction in a bounded LP");
      pivot(leave, enter);
    }
  }
};

}  // namespace

Solution solve(const Problem& problem) {
  const Eigen::Index n = problem.cost.size();
  const Eigen::Index mr = problem.a.rows();
  if (problem.a.cols() != n || problem.b.size() != mr || problem.lower.size() != n ||
      problem.upper.size() != n) {
    throw std::invalid_argument("simplex: inconsistent problem dimensions");
  }
  Solution out;
  if ((problem.lower.array() > problem.upper.array()).any()) return out;

  // Shift x = lower + y, y >= 0, and add y <= upper - lower as rows.
  const Eigen::Index m = mr + n;
  Eigen::MatrixXd rows(m, n);
  Eigen::VectorXd rhs(m);
  rows.topRows(mr) = problem.a;
  rhs.head(mr) = problem.b - problem.a * problem.lower;
  rows.bottomRows(n) = Eigen::MatrixXd::Identity(n, n);
  rhs.tail(n) = problem.upper - problem.lower;

  std::vector<Eigen::Index> needs_art;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (rhs[i] < 0.0) needs_art.push_back(i);
  }
  const auto k = static_cast<Eigen::Index>(needs_art.size());
  const Eigen::Index total = n + m + k;

  Tableau tab;
  tab.t = Eigen::MatrixXd::Zero(m, total + 1);
  tab.basis.assign(static_cast<std::size_t>(m), 0);
  tab.allowed.assign(static_cast<std::size_t>(total), true);
  Eigen::Index art = n + m;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double sign = rhs[i] < 0.0 ? -1.0 : 1.0;
    tab.t.row(i).head(n) = sign * rows.row(i);
    tab.t(i, n + i) = sign;
    tab.t(i, total) = sign * rhs[i];
    if (sign > 0.0) {
      tab.basis[static_cast<std::size_t>(i)] = static_cast<int>(n + i);
    } else {
      tab.t(i, art) = 1.0;
      tab.basis[static_cast<std::size_t>(i)] = static_cast<int>(art);
      ++art;
    }
  }

  if (k > 0) {
    Eigen::VectorXd phase1 = Eigen::VectorXd::Zero(total);
    phase1.tail(k).setOnes();
    tab.price(phase1);
    tab.optimize();
    if (-tab.reduced[total] > kFeasTol) {
      out.pivots = tab.pivots;
      return out;
    }
    // Drive zero-level artificials out of the basis where possible.
    for (Eigen::Index i = 0; i < m; ++i) {
      if (tab.basis[static_cast<std::size_t>(i)] < n + m) continue;
      for (Eigen::Index j = 0; j < n + m; ++j) {
        if (std::abs(tab.t(i, j)) > 1e-9) {
          tab.pivot(static_cast<int>(i), static_cast<int>(j));
          break;
        }
      }
    }
    for (Eigen::Index j = n + m; j < total; ++j) tab.allowed[static_cast<std::size_t>(j)] = false;
  }

  Eigen::VectorXd cost = Eigen::VectorXd::Zero(total);
  cost.head(n) = problem.cost;
  tab.price(cost);
  tab.optimize();

  Eigen::VectorXd y = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < m; ++i) {
    const int b = tab.basis[static_cast<std::size_t>(i)];
    if (b < n) y[b] = tab.t(i, total);
  }
  out.status = Status::optimal;
  out.x = (problem.lower + y).cwiseMax(problem.lower).cwiseMin(problem.upper);
  out.value = problem.cost.dot(out.x);
  out.pivots = tab.pivots;
  return out;
}

}  // namespace ccv::lp
