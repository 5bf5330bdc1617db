#pragma once

#include <array>
#include <cmath>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "langdrive/track.hpp"

namespace langdrive {

/// Platform constants for a 1:10-scale car.
struct VehicleParams {
  double wheelbase = 0.33;       ///< front-to-rear axle distance L [m]
  double delta_max = 0.4;        ///< steering hardware limit [rad]
  double singularity_eps = 1e-3;  ///< minimum admissible 1 - kappa * n
};

/// x = [s n dphi delta v] plus simulation time.
struct VehicleState {
  FrenetPose pose;
  double delta = 0.0;
  double v = 0.0;
  double t = 0.0;
};

/// u = [d_delta a]; d_delta is a per-step steering increment.
struct ControlInput {
  double d_delta = 0.0;
  double a = 0.0;
};

/// The kinematic model hit its pole (1 - kappa * n <= eps).
class IntegrationError : public std::runtime_error {
 public:
  IntegrationError(double s, double n);
  double s() const noexcept { return s_; }
  double n() const noexcept { return n_; }

 private:
  double s_;
  double n_;
};

namespace kinematics {

inline double value_of(double x) { return x; }
template <typename T>
double value_of(const T& x) {
  return x.value();
}

/// kappa_r(s) for any scalar type; derivative information flows through the
/// local slope of the piecewise-linear curvature.
template <typename T>
T curvature(const TrackSpec& track, const T& s) {
  if constexpr (std::is_same_v<T, double>) {
    return track.curvature_at(s);
  } else {
    const double s0 = value_of(s);
    const auto [k0, slope] = track.curvature_and_slope(s0);
    return T(k0) + slope * (s - s0);
  }
}

/// Time derivatives of (s, n, dphi, v) for steering angle `delta` and acceleration `a`.
template <typename T>
std::array<T, 4> rates(const TrackSpec& track, const VehicleParams& vp, const std::array<T, 4>& x,
                       const T& delta, const T& a) {
  using std::cos;
  using std::sin;
  using std::tan;
  const T kappa = curvature(track, x[0]);
  const T denom = 1.0 - kappa * x[1];
  if (!(value_of(denom) > vp.singularity_eps)) throw IntegrationError(value_of(x[0]), value_of(x[1]));
  const T s_dot = x[3] * cos(x[2]) / denom;
  const T n_dot = x[3] * sin(x[2]);
  const T phi_dot = x[3] * tan(delta) / vp.wheelbase - kappa * s_dot;
  return {s_dot, n_dot, phi_dot, a};
}

/// One RK4 step of (s, n, dphi, v) with constant steering over the step.
template <typename T>
std::array<T, 4> rk4(const TrackSpec& track, const VehicleParams& vp, const std::array<T, 4>& x,
                     const T& delta, const T& a, double dt) {
  auto axpy = [](const std::array<T, 4>& base, const std::array<T, 4>& k, double h) {
    return std::array<T, 4>{base[0] + h * k[0], base[1] + h * k[1], base[2] + h * k[2],
                            base[3] + h * k[3]};
  };
  const auto k1 = rates(track, vp, x, delta, a);
  const auto k2 = rates(track, vp, axpy(x, k1, 0.5 * dt), delta, a);
  const auto k3 = rates(track, vp, axpy(x, k2, 0.5 * dt), delta, a);
  const auto k4 = rates(track, vp, axpy(x, k3, dt), delta, a);
  std::array<T, 4> out;
  for (std::size_t i = 0; i < 4; ++i)
    out[i] = x[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  return out;
}

}  // namespace kinematics

/// Advances the state by `dt`: delta <- clamp(delta + d_delta), then one RK4
/// step of the Frenet kinematics. s and dphi come back wrapped.
VehicleState step(const VehicleState& state, const ControlInput& input, double dt,
                  const TrackSpec& track, const VehicleParams& vp = {});

struct CrashParams {
  double clear_dist = 0.2;  ///< [m]
  double clear_time = 1.0;  ///< [s]
};

struct CrashStatus {
  bool crashed = false;
  double since = 0.0;  ///< latch time while crashed
  /// Start of the current run of clearance above clear_dist (crashed only).
  std::optional<double> clear_since;
};

/// Latches on wall contact, clears after sustained clearance.
CrashStatus detect_crash(const TrackSpec& track, const VehicleState& state,
                         const CrashStatus& prior, const CrashParams& params = {});

struct SnapshotSample {
  double s = 0.0;
  double d = 0.0;
  double s_speed = 0.0;
  double d_speed = 0.0;
  double dist_left = 0.0;
  double dist_right = 0.0;
};

/// The sampled window handed to the decision stage.
struct StateSnapshot {
  double duration = 0.0;
  std::vector<SnapshotSample> samples;
  bool crashed = false;
};

struct LogRow {
  double t = 0.0;
  double s = 0.0;
  double n = 0.0;
  double dphi = 0.0;
  double delta = 0.0;
  double v = 0.0;
  double dleft = 0.0;
  double dright = 0.0;
  bool crashed = false;
};

class InsufficientHistoryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// `count` samples spaced duration/count apart, the last at the newest log row.
/// Speeds are finite differences on the dense log.
StateSnapshot sample_window(std::span<const LogRow> history, double duration, int count,
                            const TrackSpec& track);

void write_log_csv(std::ostream& out, std::span<const LogRow> rows);

struct SimConfig {
  double dt = 0.02;
  VehicleParams vehicle;
  CrashParams crash;
};

/// Single-owner fixed-step simulation with wall contact, crash latch and state log.
///
/// Contact: a step that would cross a wall ends with n on the wall. While
/// touching a wall and moving into it the pose is frozen (the drivetrain
/// state delta and v still integrate), so only motion away from the wall,
/// typically reversing, frees the car.
class Simulator {
 public:
  Simulator(std::shared_ptr<const TrackSpec> track, VehicleState initial, SimConfig config = {},
            std::optional<CrashStatus> initial_crash = std::nullopt);

  void tick(const ControlInput& input);

  const VehicleState& state() const { return state_; }
  const CrashStatus& crash() const { return crash_; }
  const std::vector<LogRow>& log() const { return log_; }
  const TrackSpec& track() const { return *track_; }
  std::shared_ptr<const TrackSpec> track_ptr() const { return track_; }
  const SimConfig& config() const { return config_; }
  /// True when the last tick was blocked by wall contact.
  bool blocked() const { return blocked_; }

  StateSnapshot sample_window(double duration, int count) const;

 private:
  void record();

  std::shared_ptr<const TrackSpec> track_;
  SimConfig config_;
  VehicleState state_;
  CrashStatus crash_;
  std::vector<LogRow> log_;
  bool blocked_ = false;
};

}  // namespace langdrive
