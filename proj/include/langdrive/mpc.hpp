#pragma once

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "langdrive/box_qp.hpp"
#include "langdrive/params.hpp"
#include "langdrive/track.hpp"
#include "langdrive/vehicle.hpp"

namespace langdrive {

struct HorizonConfig {
  int N = 20;
  double dt = 0.05;
  double v_ref = 3.5;  ///< V_target [m/s]
  /// Lateral acceleration for the curvature speed profile
  /// v_target(s) = min(v_ref, sqrt(a / |kappa(s)|)); 0 disables the profile.
  double profile_lat_accel = 2.0;
};

struct MpcConfig {
  HorizonConfig horizon;
  VehicleParams vehicle;
  double w_slack = 1e4;      ///< quadratic penalty on corridor excursions
  double w_rate = 1e6;       ///< quadratic penalty on input-limit excursions after the first step
  double v_eps = 0.3;        ///< speed floor in the lateral-acceleration steering bound
  double ddelta_max = 0.1;   ///< steering increment limit [rad per MPC step]
  int max_sqp = 3;
  double relinearize_threshold = 0.1;
  BoxQpOptions qp{100, 1e-9, false};
};

using StateVec = Eigen::Matrix<double, 5, 1>;  ///< [s n dphi delta v]
using InputVec = Eigen::Matrix<double, 2, 1>;  ///< [d_delta a]

StateVec to_vec(const VehicleState& x);
VehicleState from_vec(const StateVec& v, double t);

/// One prediction step: delta+ = delta + d_delta (no clamping), then RK4 of
/// (s, n, dphi, v) with delta+ held. s is not wrapped so a horizon stays monotone.
StateVec model_step(const StateVec& x, const InputVec& u, double dt, const TrackSpec& track,
                    const VehicleParams& vp);

/// x+ ~ A x + B u + c around (x_ref, u_ref).
struct Linearization {
  Eigen::Matrix<double, 5, 5> A;
  Eigen::Matrix<double, 5, 2> B;
  StateVec c;
};

/// Exact Jacobians of `model_step` by forward-mode automatic differentiation.
/// Throws IntegrationError when the reference is at the kinematic pole.
Linearization linearize(const VehicleState& x_ref, const ControlInput& u_ref,
                        const TrackSpec& track, double dt, const VehicleParams& vp = {});

/// Linearization trajectory plus the speed target at each stage.
struct RefTrajectory {
  std::vector<StateVec> states;  ///< N+1, states[0] is the current state
  std::vector<InputVec> inputs;  ///< N
  std::vector<double> v_target;  ///< N+1
};

/// Quadratic penalty w * (max(0, r - hi)^2 + max(0, lo - r)^2) on r = row . z + offset.
struct SoftBound {
  Eigen::VectorXd row;
  double offset = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double weight = 0.0;

  double value(const Eigen::VectorXd& z) const { return row.dot(z) + offset; }
  double excess(const Eigen::VectorXd& z) const;
};

/// The condensed horizon problem. Decision variables are the predicted
/// steering angles and speeds z = [delta_1 v_1 ... delta_N v_N]; inputs are
/// their differences, so speed, steering and first-step input limits are
/// plain boxes. Corridor and later input limits are soft rows.
struct MpcQp {
  BoxQp qp;
  double constant = 0.0;  ///< qp.objective(z) + constant is the tracking cost J
  Eigen::MatrixXd Sx;     ///< stacked states  X = Sx z + sx, 5(N+1) rows
  Eigen::VectorXd sx;
  Eigen::MatrixXd Su;     ///< stacked inputs  U = Su z + su, 2N rows
  Eigen::VectorXd su;
  std::vector<SoftBound> corridor;  ///< lateral bounds, stages 1..N
  std::vector<SoftBound> rates;     ///< input limits, steps 1..N-1
  std::vector<double> corridor_lo;  ///< stages 0..N
  std::vector<double> corridor_hi;

  double cost(const Eigen::VectorXd& z) const { return qp.objective(z) + constant; }
  double penalty(const Eigen::VectorXd& z) const;
};

/// Tracking cost, sum over stages 0..N of qn n^2 + qv (v - v_target)^2 +
/// qalpha dphi^2 plus sum over steps of qddelta d_delta^2 + qac a^2, on the
/// model linearized along `ref`.
MpcQp assemble_qp(const VehicleState& x0, const TrackSpec& track, const MpcParams& params,
                  const MpcConfig& config, const RefTrajectory& ref);

/// Speed target used for the velocity cost at arc position s.
double speed_target(const TrackSpec& track, const HorizonConfig& horizon, double s);

enum class MpcStatus { optimal, max_iter, infeasible_params };
std::string to_string(MpcStatus status);

struct MpcSolution {
  ControlInput first_input;
  std::vector<VehicleState> predicted_states;  ///< N+1, nonlinear rollout of predicted_inputs
  std::vector<ControlInput> predicted_inputs;  ///< N
  double cost = 0.0;        ///< tracking cost of the rollout
  double slack_max = 0.0;   ///< largest corridor excursion over stages 0..N [m]
  int iterations = 0;       ///< box-QP iterations summed over all solves
  int sqp_iterations = 0;
  double linearization_error = 0.0;
  MpcStatus status = MpcStatus::optimal;
};

/// One receding-horizon solve. `warm_inputs` (N entries) seed the
/// linearization; without them the current steering and speed are held.
MpcSolution solve_mpc(const VehicleState& x0, const TrackSpec& track, const MpcParams& params,
                      const MpcConfig& config = {},
                      const std::vector<ControlInput>* warm_inputs = nullptr);

/// Keeps the previous plan and warm-starts each solve from it, shifted by the
/// time elapsed since that plan was made.
class MpcController {
 public:
  explicit MpcController(std::shared_ptr<const TrackSpec> track, MpcConfig config = {});

  MpcSolution solve(const VehicleState& x0, const MpcParams& params);
  void reset() { previous_.reset(); }
  const MpcConfig& config() const { return config_; }

  /// The first planned input spread over one simulator tick: the steering
  /// increment is scaled by dt_sim / dt_mpc, acceleration passes through.
  ControlInput to_sim_input(const MpcSolution& solution, double dt_sim) const;

 private:
  struct Plan {
    double t = 0.0;
    std::vector<ControlInput> inputs;
  };

  std::shared_ptr<const TrackSpec> track_;
  MpcConfig config_;
  std::optional<Plan> previous_;
};

}  // namespace langdrive
