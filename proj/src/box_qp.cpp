#include "langdrive/box_qp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace langdrive {

double BoxQp::kkt_residual(const Eigen::VectorXd& x) const {
  const Eigen::VectorXd grad = H * x + g;
  return (x - project(x - grad)).lpNorm<Eigen::Infinity>();
}

namespace {

// Cholesky of the free block, shifting the diagonal until it factors.
Eigen::LLT<Eigen::MatrixXd> factor(const Eigen::MatrixXd& m) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() == Eigen::Success) return llt;
  const double scale = 1.0 + m.diagonal().cwiseAbs().maxCoeff();
  for (double shift = 1e-12 * scale; shift < 1e6 * scale; shift *= 10.0) {
    llt.compute(m + shift * Eigen::MatrixXd::Identity(m.rows(), m.cols()));
    if (llt.info() == Eigen::Success) return llt;
  }
  throw std::runtime_error("solve_box_qp: Hessian block could not be regularized");
}

}  // namespace

BoxQpResult solve_box_qp(const BoxQp& in, const BoxQpOptions& options,
                         const Eigen::VectorXd* warm_start) {
  const Eigen::Index n = in.g.size();
  if (in.H.rows() != n || in.H.cols() != n || in.lb.size() != n || in.ub.size() != n)
    throw std::invalid_argument("solve_box_qp: dimension mismatch");
  if ((in.lb.array() > in.ub.array()).any())
    throw std::invalid_argument("solve_box_qp: lb > ub");

  BoxQp qp = in;
  qp.H = 0.5 * (in.H + in.H.transpose());

  BoxQpResult res;
  res.x = warm_start && warm_start->size() == n ? qp.project(*warm_start)
                                                : qp.project(Eigen::VectorXd::Zero(n));
  double f = qp.objective(res.x);
  if (options.record_trace) res.trace.push_back(f);

  constexpr double sigma = 1e-4;
  // Curvature bound for directions with no positive curvature (Gershgorin).
  const double lipschitz = std::max(qp.H.cwiseAbs().rowwise().sum().maxCoeff(), 1e-12);

  std::vector<Eigen::Index> free_idx;
  free_idx.reserve(static_cast<std::size_t>(n));
  Eigen::VectorXd grad(n), trial(n), step(n);

  // Objective change along p from small quantities; f(x + p) - f(x) would
  // cancel catastrophically near the optimum.
  auto change = [&](const Eigen::VectorXd& p) { return grad.dot(p) + 0.5 * p.dot(qp.H * p); };

  for (res.iterations = 0; res.iterations < options.max_iter; ++res.iterations) {
    grad = qp.H * res.x + qp.g;
    if ((res.x - qp.project(res.x - grad)).lpNorm<Eigen::Infinity>() <= options.tol) break;

    // Cauchy step: Armijo search along the projected-gradient arc, starting
    // from the exact minimizer along -grad.
    const double curv = grad.dot(qp.H * grad);
    double t = curv > 0.0 ? grad.squaredNorm() / curv : 1.0 / lipschitz;
    double df = 0.0;
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      trial = qp.project(res.x - t * grad);
      step = trial - res.x;
      df = change(step);
      if (df <= sigma * grad.dot(step)) {
        moved = step.lpNorm<Eigen::Infinity>() > 0.0;
        break;
      }
    }
    if (!moved) break;
    res.x = trial;
    f += df;

    // Newton step on the face the Cauchy point landed on.
    grad = qp.H * res.x + qp.g;
    free_idx.clear();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (res.x[i] > qp.lb[i] && res.x[i] < qp.ub[i]) free_idx.push_back(i);
    }
    const auto nf = static_cast<Eigen::Index>(free_idx.size());
    if (nf > 0) {
      Eigen::MatrixXd hff(nf, nf);
      Eigen::VectorXd gf(nf);
      for (Eigen::Index a = 0; a < nf; ++a) {
        gf[a] = grad[free_idx[static_cast<std::size_t>(a)]];
        for (Eigen::Index b = 0; b < nf; ++b)
          hff(a, b) = qp.H(free_idx[static_cast<std::size_t>(a)], free_idx[static_cast<std::size_t>(b)]);
      }
      const Eigen::VectorXd pf = -factor(hff).solve(gf);
      Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
      for (Eigen::Index a = 0; a < nf; ++a) d[free_idx[static_cast<std::size_t>(a)]] = pf[a];
      double alpha = 1.0;
      for (int ls = 0; ls < 40; ++ls, alpha *= 0.5) {
        trial = qp.project(res.x + alpha * d);
        step = trial - res.x;
        const double dn = change(step);
        if (dn <= sigma * grad.dot(step) && dn <= 0.0) {
          res.x = trial;
          f += dn;
          break;
        }
      }
    }
    if (options.record_trace) res.trace.push_back(f);
  }
  res.objective = qp.objective(res.x);
  res.kkt_residual = qp.kkt_residual(res.x);
  res.status = res.kkt_residual <= options.tol ? QpStatus::optimal : QpStatus::max_iter;
  return res;
}

}  // namespace langdrive
