#include "langdrive/vehicle.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace langdrive {

namespace {

std::string describe_pole(double s, double n) {
  std::ostringstream os;
  os << "kinematic singularity at s=" << s << " n=" << n << " (1 - kappa*n below threshold)";
  return os.str();
}

}  // namespace

IntegrationError::IntegrationError(double s, double n)
    : std::runtime_error(describe_pole(s, n)), s_(s), n_(n) {}

VehicleState step(const VehicleState& state, const ControlInput& input, double dt,
                  const TrackSpec& track, const VehicleParams& vp) {
  if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be positive");
  VehicleState out = state;
  out.delta = std::clamp(state.delta + input.d_delta, -vp.delta_max, vp.delta_max);
  const std::array<double, 4> x{state.pose.s, state.pose.n, state.pose.delta_phi, state.v};
  const auto next = kinematics::rk4(track, vp, x, out.delta, input.a, dt);
  out.pose.s = track.wrap_s(next[0]);
  out.pose.n = next[1];
  out.pose.delta_phi = wrap_angle(next[2]);
  out.v = next[3];
  out.t = state.t + dt;
  return out;
}

CrashStatus detect_crash(const TrackSpec& track, const VehicleState& state,
                         const CrashStatus& prior, const CrashParams& params) {
  const WallDistances w = track.wall_distances(state.pose.s, state.pose.n);
  const double clearance = std::min(w.left, w.right);
  CrashStatus out = prior;
  if (clearance <= 0.0) {
    if (!prior.crashed) out.since = state.t;
    out.crashed = true;
    out.clear_since.reset();
    return out;
  }
  if (!prior.crashed) return out;
  if (clearance > params.clear_dist) {
    if (!out.clear_since) out.clear_since = state.t;
    if (state.t - *out.clear_since >= params.clear_time - 1e-9) {
      out.crashed = false;
      out.clear_since.reset();
    }
  } else {
    out.clear_since.reset();
  }
  return out;
}

StateSnapshot sample_window(std::span<const LogRow> history, double duration, int count,
                            const TrackSpec& track) {
  if (count < 2) throw std::invalid_argument("sample_window: count must be at least 2");
  if (!(duration > 0.0)) throw std::invalid_argument("sample_window: duration must be positive");
  if (history.empty()) throw InsufficientHistoryError("no state history available (0.0 s)");
  const double t_end = history.back().t;
  const double span = t_end - history.front().t;
  const double spacing = duration / count;
  // Samples sit at t_end - (count-1-j)*spacing, so the window needs (count-1)*spacing.
  const double needed = spacing * (count - 1);
  if (span + 1e-9 < needed) {
    std::ostringstream os;
    os << "insufficient history: need " << needed << " s, have " << span << " s";
    throw InsufficientHistoryError(os.str());
  }

  auto nearest = [&](double t) {
    auto it = std::lower_bound(history.begin(), history.end(), t,
                               [](const LogRow& r, double v) { return r.t < v; });
    if (it == history.end()) return history.size() - 1;
    std::size_t i = static_cast<std::size_t>(it - history.begin());
    if (i > 0 && std::abs(history[i - 1].t - t) <= std::abs(history[i].t - t)) --i;
    return i;
  };

  auto rate = [&](std::size_t i) {
    std::size_t a = i > 0 ? i - 1 : i;
    std::size_t b = i + 1 < history.size() ? i + 1 : i;
    const double dt = history[b].t - history[a].t;
    if (a == b || !(dt > 0.0)) return std::pair{0.0, 0.0};
    return std::pair{track.s_delta(history[a].s, history[b].s) / dt,
                     (history[b].n - history[a].n) / dt};
  };

  StateSnapshot snap;
  snap.duration = duration;
  snap.samples.reserve(static_cast<std::size_t>(count));
  for (int j = 0; j < count; ++j) {
    const double t = t_end - (count - 1 - j) * spacing;
    const std::size_t i = nearest(t);
    const LogRow& r = history[i];
    const auto [s_speed, d_speed] = rate(i);
    snap.samples.push_back({r.s, r.n, s_speed, d_speed, r.dleft, r.dright});
  }
  snap.crashed = history.back().crashed;
  return snap;
}

void write_log_csv(std::ostream& out, std::span<const LogRow> rows) {
  out << "t,s,n,dphi,delta,v,dleft,dright,crashed\n";
  const auto flags = out.flags();
  const auto prec = out.precision();
  out << std::setprecision(10);
  for (const LogRow& r : rows) {
    out << r.t << ',' << r.s << ',' << r.n << ',' << r.dphi << ',' << r.delta << ',' << r.v << ','
        << r.dleft << ',' << r.dright << ',' << (r.crashed ? 1 : 0) << '\n';
  }
  out.flags(flags);
  out.precision(prec);
}

Simulator::Simulator(std::shared_ptr<const TrackSpec> track, VehicleState initial,
                     SimConfig config, std::optional<CrashStatus> initial_crash)
    : track_(std::move(track)), config_(config), state_(initial) {
  if (!track_) throw std::invalid_argument("Simulator: null track");
  state_.pose.s = track_->wrap_s(state_.pose.s);
  state_.pose.delta_phi = wrap_angle(state_.pose.delta_phi);
  state_.delta = std::clamp(state_.delta, -config_.vehicle.delta_max, config_.vehicle.delta_max);
  crash_ = initial_crash ? *initial_crash
                         : detect_crash(*track_, state_, CrashStatus{}, config_.crash);
  record();
}

void Simulator::tick(const ControlInput& input) {
  const double dt = config_.dt;
  const VehicleParams& vp = config_.vehicle;
  const WallDistances w = track_->wall_distances(state_.pose.s, state_.pose.n);
  const double lateral = state_.v * std::sin(state_.pose.delta_phi);
  const bool pushing_left = w.left <= 0.0 && lateral > 0.0;
  const bool pushing_right = w.right <= 0.0 && lateral < 0.0;

  blocked_ = pushing_left || pushing_right;
  if (blocked_) {
    state_.delta = std::clamp(state_.delta + input.d_delta, -vp.delta_max, vp.delta_max);
    state_.v += input.a * dt;
    state_.t += dt;
  } else {
    VehicleState next = step(state_, input, dt, *track_, vp);
    const double wl = track_->width_left(next.pose.s);
    const double wr = track_->width_right(next.pose.s);
    if (next.pose.n > wl) {
      next.pose.n = wl;
      blocked_ = true;
    } else if (next.pose.n < -wr) {
      next.pose.n = -wr;
      blocked_ = true;
    }
    state_ = next;
  }
  crash_ = detect_crash(*track_, state_, crash_, config_.crash);
  record();
}

void Simulator::record() {
  const WallDistances w = track_->wall_distances(state_.pose.s, state_.pose.n);
  log_.push_back({state_.t, state_.pose.s, state_.pose.n, state_.pose.delta_phi, state_.delta,
                  state_.v, w.left, w.right, crash_.crashed});
}

StateSnapshot Simulator::sample_window(double duration, int count) const {
  return langdrive::sample_window(log_, duration, count, *track_);
}

}  // namespace langdrive
