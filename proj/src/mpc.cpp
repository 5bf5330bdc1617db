#include "langdrive/mpc.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <limits>
#include <tuple>
#include <unsupported/Eigen/AutoDiff>

namespace langdrive {

StateVec to_vec(const VehicleState& x) {
  StateVec v;
  v << x.pose.s, x.pose.n, x.pose.delta_phi, x.delta, x.v;
  return v;
}

VehicleState from_vec(const StateVec& v, double t) {
  VehicleState x;
  x.pose = {v[0], v[1], v[2]};
  x.delta = v[3];
  x.v = v[4];
  x.t = t;
  return x;
}

StateVec model_step(const StateVec& x, const InputVec& u, double dt, const TrackSpec& track,
                    const VehicleParams& vp) {
  const double delta = x[3] + u[0];
  const auto y = kinematics::rk4<double>(track, vp, {x[0], x[1], x[2], x[4]}, delta, u[1], dt);
  StateVec out;
  out << y[0], y[1], y[2], delta, y[3];
  return out;
}

Linearization linearize(const VehicleState& x_ref, const ControlInput& u_ref,
                        const TrackSpec& track, double dt, const VehicleParams& vp) {
  using Deriv = Eigen::Matrix<double, 7, 1>;
  using AD = Eigen::AutoDiffScalar<Deriv>;
  const double point[7] = {x_ref.pose.s, x_ref.pose.n, x_ref.pose.delta_phi, x_ref.delta,
                           x_ref.v,      u_ref.d_delta, u_ref.a};
  AD in[7];
  for (int i = 0; i < 7; ++i) in[i] = AD(point[i], 7, i);

  const AD delta = in[3] + in[5];
  const std::array<AD, 4> y = kinematics::rk4<AD>(track, vp, {in[0], in[1], in[2], in[4]}, delta,
                                                  in[6], dt);
  const AD out[5] = {y[0], y[1], y[2], delta, y[3]};

  Linearization lin;
  StateVec f;
  for (int r = 0; r < 5; ++r) {
    f[r] = out[r].value();
    const Deriv& d = out[r].derivatives().size() == 7 ? out[r].derivatives() : Deriv::Zero();
    for (int c = 0; c < 5; ++c) lin.A(r, c) = d[c];
    lin.B(r, 0) = d[5];
    lin.B(r, 1) = d[6];
  }
  StateVec x;
  x << point[0], point[1], point[2], point[3], point[4];
  InputVec u;
  u << point[5], point[6];
  lin.c = f - lin.A * x - lin.B * u;
  return lin;
}

double SoftBound::excess(const Eigen::VectorXd& z) const {
  const double r = value(z);
  return std::max({0.0, r - hi, lo - r});
}

double MpcQp::penalty(const Eigen::VectorXd& z) const {
  double p = 0.0;
  for (const auto* rows : {&corridor, &rates}) {
    for (const SoftBound& b : *rows) {
      const double e = b.excess(z);
      p += b.weight * e * e;
    }
  }
  return p;
}

double speed_target(const TrackSpec& track, const HorizonConfig& horizon, double s) {
  if (!(horizon.profile_lat_accel > 0.0)) return horizon.v_ref;
  const double k = std::abs(track.curvature_at(s));
  if (k < 1e-9) return horizon.v_ref;
  return std::min(horizon.v_ref, std::sqrt(horizon.profile_lat_accel / k));
}

namespace {

// [lo, hi] intersected with [blo, bhi]; if disjoint, the point of [lo, hi] nearest the box.
std::pair<double, double> intersect_or_nearest(double lo, double hi, double blo, double bhi) {
  const double a = std::max(lo, blo);
  const double b = std::min(hi, bhi);
  if (a <= b) return {a, b};
  const double p = hi < blo ? hi : lo;
  return {p, p};
}

double steering_bound(const MpcParams& p, const MpcConfig& cfg, double v_ref_stage) {
  const double v2 = std::max(v_ref_stage * v_ref_stage, cfg.v_eps * cfg.v_eps);
  const double lat = std::atan(p.alat_max * cfg.vehicle.wheelbase / v2);
  return std::min(cfg.vehicle.delta_max, lat);
}

struct QuadAccumulator {
  Eigen::MatrixXd& H;
  Eigen::VectorXd& g;
  double& constant;

  // w * (row . z + e)^2
  template <typename Row>
  void add(double w, const Row& row, double e) {
    if (w == 0.0) return;
    H.noalias() += (2.0 * w) * row.transpose() * row;
    g.noalias() += (2.0 * w * e) * row.transpose();
    constant += w * e * e;
  }
};

}  // namespace

MpcQp assemble_qp(const VehicleState& x0, const TrackSpec& track, const MpcParams& params,
                  const MpcConfig& config, const RefTrajectory& ref) {
  const int N = config.horizon.N;
  const double dt = config.horizon.dt;
  if (N < 2) throw std::invalid_argument("assemble_qp: horizon must have N >= 2");
  if (!(dt > 0.0)) throw std::invalid_argument("assemble_qp: dt must be positive");
  if (static_cast<int>(ref.states.size()) != N + 1 || static_cast<int>(ref.inputs.size()) != N ||
      static_cast<int>(ref.v_target.size()) != N + 1)
    throw std::invalid_argument("assemble_qp: reference trajectory has the wrong length");

  const Eigen::Index nz = 2 * N;
  MpcQp m;
  m.Sx = Eigen::MatrixXd::Zero(5 * (N + 1), nz);
  m.sx = Eigen::VectorXd::Zero(5 * (N + 1));
  m.Su = Eigen::MatrixXd::Zero(2 * N, nz);
  m.su = Eigen::VectorXd::Zero(2 * N);

  StateVec xv = to_vec(x0);
  xv[0] = ref.states[0][0];
  const double delta0 = xv[3];
  const double v0 = xv[4];

  // Inputs as differences of consecutive predicted steering/speed values.
  m.Su(0, 0) = 1.0;
  m.su[0] = -delta0;
  m.Su(1, 1) = 1.0 / dt;
  m.su[1] = -v0 / dt;
  for (int k = 1; k < N; ++k) {
    m.Su(2 * k, 2 * k) = 1.0;
    m.Su(2 * k, 2 * (k - 1)) = -1.0;
    m.Su(2 * k + 1, 2 * k + 1) = 1.0 / dt;
    m.Su(2 * k + 1, 2 * k - 1) = -1.0 / dt;
  }

  // Condensed prediction along the linearized model.
  m.sx.segment<5>(0) = xv;
  for (int k = 0; k < N; ++k) {
    const Linearization lin =
        linearize(from_vec(ref.states[static_cast<std::size_t>(k)], 0.0),
                  {ref.inputs[static_cast<std::size_t>(k)][0], ref.inputs[static_cast<std::size_t>(k)][1]},
                  track, dt, config.vehicle);
    m.Sx.middleRows<5>(5 * (k + 1)) =
        lin.A * m.Sx.middleRows<5>(5 * k) + lin.B * m.Su.middleRows<2>(2 * k);
    m.sx.segment<5>(5 * (k + 1)) =
        lin.A * m.sx.segment<5>(5 * k) + lin.B * m.su.segment<2>(2 * k) + lin.c;
  }

  m.qp.H = Eigen::MatrixXd::Zero(nz, nz);
  m.qp.g = Eigen::VectorXd::Zero(nz);
  QuadAccumulator acc{m.qp.H, m.qp.g, m.constant};
  for (int k = 0; k <= N; ++k) {
    const int r = 5 * k;
    acc.add(params.qn, m.Sx.row(r + 1), m.sx[r + 1]);
    acc.add(params.qalpha, m.Sx.row(r + 2), m.sx[r + 2]);
    acc.add(params.qv, m.Sx.row(r + 4), m.sx[r + 4] - ref.v_target[static_cast<std::size_t>(k)]);
  }
  for (int k = 0; k < N; ++k) {
    acc.add(params.qddelta, m.Su.row(2 * k), m.su[2 * k]);
    acc.add(params.qac, m.Su.row(2 * k + 1), m.su[2 * k + 1]);
  }

  // Hard boxes: speed and steering limits intersected with what the exact
  // first-step input limits (and their extrapolation) can reach.
  m.qp.lb.resize(nz);
  m.qp.ub.resize(nz);
  const double hw = config.vehicle.delta_max;
  for (int k = 1; k <= N; ++k) {
    const double reach_d = k * config.ddelta_max;
    auto [dlo, dhi] = intersect_or_nearest(delta0 - reach_d, delta0 + reach_d, -hw, hw);
    const double b = steering_bound(params, config, ref.states[static_cast<std::size_t>(k)][4]);
    std::tie(dlo, dhi) = intersect_or_nearest(dlo, dhi, -b, b);
    m.qp.lb[2 * (k - 1)] = dlo;
    m.qp.ub[2 * (k - 1)] = dhi;

    const auto [vlo, vhi] = intersect_or_nearest(v0 + k * dt * params.a_min,
                                                 v0 + k * dt * params.a_max, params.v_min,
                                                 params.v_max);
    m.qp.lb[2 * (k - 1) + 1] = vlo;
    m.qp.ub[2 * (k - 1) + 1] = vhi;
  }

  // Corridor |n| within the inflated track boundary, soft.
  m.corridor_lo.resize(static_cast<std::size_t>(N + 1));
  m.corridor_hi.resize(static_cast<std::size_t>(N + 1));
  for (int k = 0; k <= N; ++k) {
    const double s = ref.states[static_cast<std::size_t>(k)][0];
    double hi = track.width_left(s) - params.track_safety_margin;
    double lo = -(track.width_right(s) - params.track_safety_margin);
    if (lo > hi) lo = hi = 0.5 * (lo + hi);
    m.corridor_lo[static_cast<std::size_t>(k)] = lo;
    m.corridor_hi[static_cast<std::size_t>(k)] = hi;
    if (k == 0) continue;
    m.corridor.push_back({m.Sx.row(5 * k + 1).transpose(), m.sx[5 * k + 1], lo, hi, config.w_slack});
  }
  for (int k = 1; k < N; ++k) {
    m.rates.push_back({m.Su.row(2 * k).transpose(), m.su[2 * k], -config.ddelta_max,
                       config.ddelta_max, config.w_rate});
    m.rates.push_back({m.Su.row(2 * k + 1).transpose(), m.su[2 * k + 1], params.a_min,
                       params.a_max, config.w_rate});
  }
  return m;
}

std::string to_string(MpcStatus status) {
  switch (status) {
    case MpcStatus::optimal: return "optimal";
    case MpcStatus::max_iter: return "max_iter";
    case MpcStatus::infeasible_params: return "infeasible_params";
  }
  return "unknown";
}

namespace {

struct InnerResult {
  Eigen::VectorXd z;
  int iterations = 0;
  bool converged = false;
};

// Minimizes cost + soft penalties as one box QP. Each soft row gets an
// auxiliary variable y boxed to [lo, hi] and the term w (row . z + offset - y)^2,
// whose minimum over y is exactly w * dist(row . z + offset, [lo, hi])^2.
InnerResult solve_soft(const MpcQp& m, const Eigen::VectorXd& z_init, const MpcConfig& cfg) {
  std::vector<const SoftBound*> rows;
  for (const auto& b : m.corridor) rows.push_back(&b);
  for (const auto& b : m.rates) rows.push_back(&b);
  const Eigen::Index nz = m.qp.g.size();
  const auto ny = static_cast<Eigen::Index>(rows.size());

  BoxQp aug;
  aug.H = Eigen::MatrixXd::Zero(nz + ny, nz + ny);
  aug.g = Eigen::VectorXd::Zero(nz + ny);
  aug.lb.resize(nz + ny);
  aug.ub.resize(nz + ny);
  aug.H.topLeftCorner(nz, nz) = m.qp.H;
  aug.g.head(nz) = m.qp.g;
  aug.lb.head(nz) = m.qp.lb;
  aug.ub.head(nz) = m.qp.ub;
  Eigen::VectorXd x0(nz + ny);
  x0.head(nz) = m.qp.project(z_init);
  for (Eigen::Index i = 0; i < ny; ++i) {
    const SoftBound& b = *rows[static_cast<std::size_t>(i)];
    const Eigen::Index j = nz + i;
    const double w2 = 2.0 * b.weight;
    aug.H.topLeftCorner(nz, nz).noalias() += w2 * b.row * b.row.transpose();
    aug.H.block(0, j, nz, 1) = -w2 * b.row;
    aug.H.block(j, 0, 1, nz) = -w2 * b.row.transpose();
    aug.H(j, j) = w2;
    aug.g.head(nz).noalias() += w2 * b.offset * b.row;
    aug.g[j] = -w2 * b.offset;
    aug.lb[j] = b.lo;
    aug.ub[j] = b.hi;
    x0[j] = std::clamp(b.value(x0.head(nz)), b.lo, b.hi);
  }

  BoxQpOptions opts = cfg.qp;
  // Residuals cannot drop below the rounding noise of H x + g.
  const double noise = 100.0 * std::numeric_limits<double>::epsilon() *
                       (aug.H.cwiseAbs().maxCoeff() * (1.0 + x0.lpNorm<Eigen::Infinity>()) +
                        aug.g.lpNorm<Eigen::Infinity>());
  opts.tol = std::max(cfg.qp.tol, noise);
  const BoxQpResult r = solve_box_qp(aug, opts, &x0);

  InnerResult out;
  out.z = r.x.head(nz);
  out.iterations = r.iterations;
  out.converged = r.status == QpStatus::optimal;
  return out;
}

// Forward pass that enforces every input limit exactly on the plan.
void repair(Eigen::VectorXd& z, const MpcQp& m, const MpcParams& p, const MpcConfig& cfg,
            double delta0, double v0) {
  const int N = cfg.horizon.N;
  const double dt = cfg.horizon.dt;
  double prev_d = delta0;
  double prev_v = v0;
  for (int k = 1; k <= N; ++k) {
    const Eigen::Index id = 2 * (k - 1);
    auto [dlo, dhi] = intersect_or_nearest(prev_d - cfg.ddelta_max, prev_d + cfg.ddelta_max,
                                           m.qp.lb[id], m.qp.ub[id]);
    z[id] = std::clamp(z[id], dlo, dhi);
    prev_d = z[id];
    auto [vlo, vhi] = intersect_or_nearest(prev_v + dt * p.a_min, prev_v + dt * p.a_max,
                                           m.qp.lb[id + 1], m.qp.ub[id + 1]);
    z[id + 1] = std::clamp(z[id + 1], vlo, vhi);
    prev_v = z[id + 1];
  }
}

double tracking_cost(const std::vector<StateVec>& xs, const std::vector<InputVec>& us,
                     const std::vector<double>& vt, const MpcParams& p) {
  double j = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const double dv = xs[k][4] - vt[k];
    j += p.qn * xs[k][1] * xs[k][1] + p.qalpha * xs[k][2] * xs[k][2] + p.qv * dv * dv;
  }
  for (const InputVec& u : us) j += p.qddelta * u[0] * u[0] + p.qac * u[1] * u[1];
  return j;
}

MpcSolution hold_solution(const VehicleState& x0, const MpcParams& p, const MpcConfig& cfg,
                          MpcStatus status) {
  MpcSolution sol;
  sol.status = status;
  const double dt = cfg.horizon.dt;
  const double decel = std::abs(p.a_min);
  double a = 0.0;
  if (x0.v > 0.0) a = -std::min(decel, x0.v / dt);
  if (x0.v < 0.0) a = std::min(decel, -x0.v / dt);
  sol.first_input = {0.0, a};
  sol.predicted_inputs.assign(static_cast<std::size_t>(cfg.horizon.N), sol.first_input);
  sol.predicted_states.assign(static_cast<std::size_t>(cfg.horizon.N + 1), x0);
  return sol;
}

}  // namespace

MpcSolution solve_mpc(const VehicleState& x0, const TrackSpec& track, const MpcParams& params,
                      const MpcConfig& config, const std::vector<ControlInput>* warm_inputs) {
  if (params.v_min > params.v_max || params.a_min > params.a_max)
    return hold_solution(x0, params, config, MpcStatus::infeasible_params);

  const int N = config.horizon.N;
  const double dt = config.horizon.dt;
  const auto uN = static_cast<std::size_t>(N);

  std::vector<InputVec> inputs(uN, InputVec::Zero());
  if (warm_inputs && warm_inputs->size() == uN) {
    for (std::size_t k = 0; k < uN; ++k) inputs[k] << (*warm_inputs)[k].d_delta, (*warm_inputs)[k].a;
  }

  StateVec xv = to_vec(x0);
  auto rollout = [&](const std::vector<InputVec>& us) {
    std::vector<StateVec> xs{xv};
    for (std::size_t k = 0; k < uN; ++k)
      xs.push_back(model_step(xs.back(), us[k], dt, track, config.vehicle));
    return xs;
  };

  RefTrajectory ref;
  ref.inputs = inputs;
  ref.states = rollout(inputs);

  MpcSolution sol;
  Eigen::VectorXd z(2 * N);
  bool converged = false;
  for (int it = 0; it < config.max_sqp; ++it) {
    ref.v_target.clear();
    for (const StateVec& s : ref.states) ref.v_target.push_back(speed_target(track, config.horizon, s[0]));
    const MpcQp m = assemble_qp(x0, track, params, config, ref);

    for (int k = 1; k <= N; ++k) {
      z[2 * (k - 1)] = ref.states[static_cast<std::size_t>(k)][3];
      z[2 * (k - 1) + 1] = ref.states[static_cast<std::size_t>(k)][4];
    }
    InnerResult inner = solve_soft(m, z, config);
    sol.iterations += inner.iterations;
    sol.sqp_iterations = it + 1;
    converged = inner.converged;
    z = inner.z;
    repair(z, m, params, config, xv[3], xv[4]);

    const Eigen::VectorXd U = m.Su * z + m.su;
    const Eigen::VectorXd X = m.Sx * z + m.sx;
    std::vector<InputVec> us(uN);
    for (std::size_t k = 0; k < uN; ++k) us[k] = U.segment<2>(static_cast<Eigen::Index>(2 * k));
    const std::vector<StateVec> xs = rollout(us);

    double err = 0.0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      for (int c : {0, 1, 2})
        err = std::max(err, std::abs(xs[k][c] - X[static_cast<Eigen::Index>(5 * k) + c]));
    }
    sol.linearization_error = err;
    ref.states = xs;
    ref.inputs = us;
    if (err <= config.relinearize_threshold) break;
  }

  ref.v_target.clear();
  for (const StateVec& s : ref.states) ref.v_target.push_back(speed_target(track, config.horizon, s[0]));
  sol.cost = tracking_cost(ref.states, ref.inputs, ref.v_target, params);
  sol.status = converged ? MpcStatus::optimal : MpcStatus::max_iter;

  for (std::size_t k = 0; k <= uN; ++k) {
    const StateVec& s = ref.states[k];
    VehicleState st = from_vec(s, x0.t + static_cast<double>(k) * dt);
    st.pose.s = track.wrap_s(st.pose.s);
    st.pose.delta_phi = wrap_angle(st.pose.delta_phi);
    sol.predicted_states.push_back(st);
    const double hi = track.width_left(s[0]) - params.track_safety_margin;
    const double lo = -(track.width_right(s[0]) - params.track_safety_margin);
    sol.slack_max = std::max({sol.slack_max, s[1] - hi, lo - s[1]});
  }
  for (const InputVec& u : ref.inputs) sol.predicted_inputs.push_back({u[0], u[1]});
  sol.first_input = sol.predicted_inputs.front();
  return sol;
}

MpcController::MpcController(std::shared_ptr<const TrackSpec> track, MpcConfig config)
    : track_(std::move(track)), config_(config) {
  if (!track_) throw std::invalid_argument("MpcController: null track");
}

MpcSolution MpcController::solve(const VehicleState& x0, const MpcParams& params) {
  const auto N = static_cast<std::size_t>(config_.horizon.N);
  std::vector<ControlInput> warm;
  if (previous_ && previous_->inputs.size() == N) {
    const double shift = std::max(0.0, (x0.t - previous_->t) / config_.horizon.dt);
    for (std::size_t k = 0; k < N; ++k) {
      const double pos = std::min(static_cast<double>(k) + shift, static_cast<double>(N - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(pos));
      const std::size_t i1 = std::min(i0 + 1, N - 1);
      const double f = pos - static_cast<double>(i0);
      const ControlInput& a = previous_->inputs[i0];
      const ControlInput& b = previous_->inputs[i1];
      warm.push_back({a.d_delta + f * (b.d_delta - a.d_delta), a.a + f * (b.a - a.a)});
    }
  }
  MpcSolution sol;
  try {
    sol = solve_mpc(x0, *track_, params, config_, warm.empty() ? nullptr : &warm);
  } catch (const IntegrationError&) {
    previous_.reset();
    sol = hold_solution(x0, params, config_, MpcStatus::max_iter);
    sol.first_input.a = std::clamp(sol.first_input.a, params.a_min, params.a_max);
    return sol;
  }
  if (sol.status == MpcStatus::infeasible_params) {
    previous_.reset();
  } else {
    previous_ = Plan{x0.t, sol.predicted_inputs};
  }
  return sol;
}

ControlInput MpcController::to_sim_input(const MpcSolution& solution, double dt_sim) const {
  return {solution.first_input.d_delta * dt_sim / config_.horizon.dt, solution.first_input.a};
}

}  // namespace langdrive
