#pragma once

// Dynamic programming reference for lateral recovery on a straight road at
// constant speed. State (n, heading error), control steering angle; value
// function on a lattice with bilinear interpolation, one backward sweep per
// stage, then a greedy forward pass from the initial state.

#include <algorithm>
#include <cmath>
#include <tuple>
#include <utility>
#include <vector>

namespace dp_oracle {

struct LateralProblem {
  double v = 1.0;
  double dt = 0.05;
  int N = 20;
  double wheelbase = 0.33;
  double delta_max = 0.4;
  double qn = 20.0;
  double qalpha = 7.0;
  double n_span = 1.0;
  double phi_span = 0.6;
  int n_cells = 80;
  int phi_cells = 60;
  int delta_cells = 40;
};

class LateralDp {
 public:
  explicit LateralDp(LateralProblem p) : p_(p) {
    const std::size_t cells = static_cast<std::size_t>((p_.n_cells + 1) * (p_.phi_cells + 1));
    std::vector<double> next(cells), cur(cells);
    for (int i = 0; i <= p_.n_cells; ++i)
      for (int j = 0; j <= p_.phi_cells; ++j) next[idx(i, j)] = stage(n_at(i), phi_at(j));
    values_.assign(static_cast<std::size_t>(p_.N + 1), {});
    values_[static_cast<std::size_t>(p_.N)] = next;
    for (int k = p_.N - 1; k >= 0; --k) {
      for (int i = 0; i <= p_.n_cells; ++i) {
        for (int j = 0; j <= p_.phi_cells; ++j) {
          double best = 1e300;
          for (int d = 0; d <= p_.delta_cells; ++d) {
            const auto [n1, f1] = advance(n_at(i), phi_at(j), delta_at(d));
            best = std::min(best, lookup(next, n1, f1));
          }
          cur[idx(i, j)] = stage(n_at(i), phi_at(j)) + best;
        }
      }
      next = cur;
      values_[static_cast<std::size_t>(k)] = cur;
    }
  }

  /// Lateral offsets n_0..n_N along the DP policy.
  std::vector<double> trajectory(double n0, double phi0) const {
    std::vector<double> ns{n0};
    double n = n0, phi = phi0;
    for (int k = 0; k < p_.N; ++k) {
      double best = 1e300;
      std::pair<double, double> arg{n, phi};
      for (int d = 0; d <= p_.delta_cells; ++d) {
        const auto nf = advance(n, phi, delta_at(d));
        const double c = lookup(values_[static_cast<std::size_t>(k + 1)], nf.first, nf.second);
        if (c < best) {
          best = c;
          arg = nf;
        }
      }
      std::tie(n, phi) = arg;
      ns.push_back(n);
    }
    return ns;
  }

 private:
  std::size_t idx(int i, int j) const { return static_cast<std::size_t>(i * (p_.phi_cells + 1) + j); }
  double n_at(int i) const { return -p_.n_span + 2.0 * p_.n_span * i / p_.n_cells; }
  double phi_at(int j) const { return -p_.phi_span + 2.0 * p_.phi_span * j / p_.phi_cells; }
  double delta_at(int d) const { return -p_.delta_max + 2.0 * p_.delta_max * d / p_.delta_cells; }
  double stage(double n, double phi) const { return p_.qn * n * n + p_.qalpha * phi * phi; }

  // Exact solution of n' = v sin(phi), phi' = v tan(delta) / L over dt.
  std::pair<double, double> advance(double n, double phi, double delta) const {
    const double w = p_.v * std::tan(delta) / p_.wheelbase;
    const double phi1 = phi + w * p_.dt;
    if (std::abs(w) < 1e-12) return {n + p_.v * std::sin(phi) * p_.dt, phi1};
    return {n + p_.v / w * (std::cos(phi) - std::cos(phi1)), phi1};
  }

  double lookup(const std::vector<double>& val, double n, double phi) const {
    const double x = std::clamp((n + p_.n_span) / (2.0 * p_.n_span) * p_.n_cells, 0.0,
                                static_cast<double>(p_.n_cells));
    const double y = std::clamp((phi + p_.phi_span) / (2.0 * p_.phi_span) * p_.phi_cells, 0.0,
                                static_cast<double>(p_.phi_cells));
    const int i = std::min(static_cast<int>(x), p_.n_cells - 1);
    const int j = std::min(static_cast<int>(y), p_.phi_cells - 1);
    const double fx = x - i, fy = y - j;
    const double v00 = val[idx(i, j)], v10 = val[idx(i + 1, j)];
    const double v01 = val[idx(i, j + 1)], v11 = val[idx(i + 1, j + 1)];
    // Off-lattice states are penalized by the stage cost beyond the edge.
    const double extra = stage(n, phi) - stage(std::clamp(n, -p_.n_span, p_.n_span),
                                               std::clamp(phi, -p_.phi_span, p_.phi_span));
    return (1 - fx) * (1 - fy) * v00 + fx * (1 - fy) * v10 + (1 - fx) * fy * v01 + fx * fy * v11 +
           extra;
  }

  LateralProblem p_;
  std::vector<std::vector<double>> values_;
};

}  // namespace dp_oracle
