#include <random>

#include "doctest.h"
#include "langdrive/box_qp.hpp"
#include "qp_grid_oracle.hpp"

using namespace langdrive;

TEST_SUITE("box_qp") {
  TEST_CASE("interior optimum") {
    BoxQp qp{Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2),
             Eigen::VectorXd::Constant(2, -1.0), Eigen::VectorXd::Constant(2, 1.0)};
    Eigen::VectorXd start(2);
    start << 0.7, -0.3;
    const BoxQpResult r = solve_box_qp(qp, {}, &start);
    CHECK(r.status == QpStatus::optimal);
    CHECK(r.x.norm() <= 1e-12);
  }

  TEST_CASE("clipped analytic optimum") {
    Eigen::VectorXd g(2), lb(2), ub(2);
    g << -4.0, 0.0;
    lb << -10.0, -10.0;
    ub << 1.0, 1.0;
    BoxQp qp{Eigen::MatrixXd::Identity(2, 2), g, lb, ub};
    const BoxQpResult r = solve_box_qp(qp);
    CHECK(r.status == QpStatus::optimal);
    CHECK(r.x[0] == doctest::Approx(1.0));
    CHECK(std::abs(r.x[1]) <= 1e-12);
  }

  TEST_CASE("singular Hessian goes to the bounds") {
    Eigen::VectorXd g(2);
    g << 1.0, -1.0;
    BoxQp qp{Eigen::MatrixXd::Zero(2, 2), g, Eigen::VectorXd::Constant(2, -1.0),
             Eigen::VectorXd::Constant(2, 1.0)};
    const BoxQpResult r = solve_box_qp(qp);
    CHECK(r.status == QpStatus::optimal);
    CHECK(r.x[0] == -1.0);
    CHECK(r.x[1] == 1.0);
  }

  TEST_CASE("fixed variables stay put") {
    Eigen::MatrixXd H(2, 2);
    H << 2.0, 0.5, 0.5, 1.0;
    Eigen::VectorXd g(2), lb(2), ub(2);
    g << 1.0, 1.0;
    lb << 0.3, -5.0;
    ub << 0.3, 5.0;
    const BoxQpResult r = solve_box_qp({H, g, lb, ub});
    CHECK(r.x[0] == 0.3);
    CHECK(r.x[1] == doctest::Approx(-(1.0 + 0.5 * 0.3) / 1.0));
  }

  TEST_CASE("iteration cap reports max_iter with a feasible iterate") {
    Eigen::VectorXd g = Eigen::VectorXd::Constant(3, -5.0);
    BoxQp qp{Eigen::MatrixXd::Identity(3, 3), g, Eigen::VectorXd::Zero(3),
             Eigen::VectorXd::Constant(3, 10.0)};
    BoxQpOptions o;
    o.max_iter = 0;
    const BoxQpResult r = solve_box_qp(qp, o);
    CHECK(r.status == QpStatus::max_iter);
    CHECK(r.iterations == 0);
    CHECK((r.x.array() >= 0.0).all());
  }

  TEST_CASE("warm start at the optimum needs no iterations") {
    Eigen::VectorXd g(2), lb(2), ub(2);
    g << -4.0, 0.0;
    lb << -10.0, -10.0;
    ub << 1.0, 1.0;
    BoxQp qp{Eigen::MatrixXd::Identity(2, 2), g, lb, ub};
    Eigen::VectorXd x(2);
    x << 1.0, 0.0;
    CHECK(solve_box_qp(qp, {}, &x).iterations == 0);
  }

  TEST_CASE("bad dimensions and crossed bounds are rejected") {
    BoxQp qp{Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(2),
             Eigen::VectorXd::Zero(2)};
    CHECK_THROWS_AS(solve_box_qp(qp), std::invalid_argument);
    BoxQp crossed{Eigen::MatrixXd::Identity(1, 1), Eigen::VectorXd::Zero(1),
                  Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Constant(1, 0.0)};
    CHECK_THROWS_AS(solve_box_qp(crossed), std::invalid_argument);
  }

  TEST_CASE("random 2-variable problems match the grid oracle") {
    std::mt19937_64 rng(2024);
    for (int c = 0; c < 60; ++c) {
      const auto p = qp_oracle::random_problem(rng);
      BoxQpOptions o;
      o.record_trace = true;
      const BoxQpResult r = solve_box_qp(p.qp, o);
      const Eigen::Vector2d grid = qp_oracle::grid_argmin(p);
      CHECK(r.status == QpStatus::optimal);
      CHECK(r.kkt_residual <= 1e-6);
      CHECK((r.x - grid).lpNorm<Eigen::Infinity>() <= 1e-3 + 1e-12);
      CHECK(p.qp.objective(r.x) <= p.qp.objective(grid) + 1e-12);
      for (std::size_t i = 1; i < r.trace.size(); ++i) CHECK(r.trace[i] <= r.trace[i - 1]);
    }
  }

  TEST_CASE("larger random problems converge monotonically") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd;
    for (int c = 0; c < 20; ++c) {
      const int n = 30;
      Eigen::MatrixXd A(n, n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) A(i, j) = nd(rng);
      BoxQp qp;
      qp.H = A.transpose() * A * 1e-2 + 1e3 * Eigen::VectorXd::Random(n).cwiseAbs().asDiagonal().toDenseMatrix();
      qp.g = 100.0 * Eigen::VectorXd::Random(n);
      qp.lb = -Eigen::VectorXd::Random(n).cwiseAbs();
      qp.ub = Eigen::VectorXd::Random(n).cwiseAbs();
      BoxQpOptions o;
      o.record_trace = true;
      const BoxQpResult r = solve_box_qp(qp, o);
      CHECK(r.status == QpStatus::optimal);
      for (std::size_t i = 1; i < r.trace.size(); ++i) CHECK(r.trace[i] <= r.trace[i - 1]);
    }
  }
}
