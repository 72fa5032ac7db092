#pragma once

#include <Eigen/Core>

namespace ccv::lp {

// Dense two-phase tableau simplex with Bland's rule for
//
//   min c^T x  s.t.  A x <= b,  lower <= x <= upper   (finite bounds).
//
// Meant for the small exact subproblems of the oracle; it shares no code
// with the interior-point solver.

struct Problem {
  Eigen::VectorXd cost;
  Eigen::MatrixXd a;
  Eigen::VectorXd b;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

enum class Status { optimal, infeasible };

struct Solution {
  Status status = Status::infeasible;
  Eigen::VectorXd x;
  double value = 0.0;
  int pivots = 0;
};

Solution solve(const Problem& problem);

}  // namespace ccv::lp
