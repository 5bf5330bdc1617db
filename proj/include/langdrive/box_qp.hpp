#pragma once

#include <Eigen/Dense>
#include <vector>

namespace langdrive {

/// minimize 0.5 x'Hx + g'x  subject to  lb <= x <= ub.
struct BoxQp {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  Eigen::VectorXd lb;
  Eigen::VectorXd ub;

  double objective(const Eigen::VectorXd& x) const { return 0.5 * x.dot(H * x) + g.dot(x); }
  Eigen::VectorXd project(const Eigen::VectorXd& x) const { return x.cwiseMax(lb).cwiseMin(ub); }
  /// ||x - P(x - grad)||_inf, zero exactly at a KKT point.
  double kkt_residual(const Eigen::VectorXd& x) const;
};

enum class QpStatus { optimal, max_iter };

struct BoxQpOptions {
  int max_iter = 200;
  double tol = 1e-9;
  bool record_trace = false;
};

struct BoxQpResult {
  Eigen::VectorXd x;
  QpStatus status = QpStatus::max_iter;
  int iterations = 0;
  double kkt_residual = 0.0;
  double objective = 0.0;
  /// Objective after each accepted iterate, starting with the initial point.
  std::vector<double> trace;
};

/// Gradient projection plus face Newton: each iteration takes an Armijo
/// step along the projected-gradient arc (the Cauchy point), then a
/// Cholesky Newton step on the variables strictly inside their bounds,
/// projected and backtracked. The objective never increases between
/// iterates. H is symmetrized and, if the free block is not positive
/// definite, shifted by a small multiple of the identity.
BoxQpResult solve_box_qp(const BoxQp& qp, const BoxQpOptions& options = {},
                         const Eigen::VectorXd* warm_start = nullptr);

}  // namespace langdrive
