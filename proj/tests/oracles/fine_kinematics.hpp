#pragma once

// Independent restatement of the Frenet kinematics, integrated with many
// explicit midpoint sub-steps. State order: s, n, delta_phi, v.

#include <array>
#include <cmath>

#include "langdrive/track.hpp"

namespace fine_oracle {

inline std::array<double, 4> integrate(const langdrive::TrackSpec& t, std::array<double, 4> x, double delta,
                                       double a, double dt, int substeps, double wheelbase = 0.33) {
  auto f = [&](const std::array<double, 4>& y) {
    const double k = t.curvature_at(y[0]);
    const double sd = y[3] * std::cos(y[2]) / (1.0 - k * y[1]);
    return std::array<double, 4>{sd, y[3] * std::sin(y[2]), y[3] * std::tan(delta) / wheelbase - k * sd, a};
  };
  const double h = dt / substeps;
  for (int i = 0; i < substeps; ++i) {
    const auto k1 = f(x);
    std::array<double, 4> mid;
    for (int j = 0; j < 4; ++j) mid[j] = x[j] + 0.5 * h * k1[j];
    const auto k2 = f(mid);
    for (int j = 0; j < 4; ++j) x[j] += h * k2[j];
  }
  return x;
}

}  // namespace fine_oracle
