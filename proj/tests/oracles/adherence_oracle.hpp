#pragma once

// Second, independently written adherence rule set, keyed on command ids.
// Thresholds: racing line |d| <= 0.3 m, weave peak-to-peak > 0.6 m crossing
// the centerline, close to a wall < 0.4 m, stopped |s-speed| < 0.1 m/s.

#include <algorithm>
#include <string>
#include <vector>

#include "langdrive/vehicle.hpp"

namespace adherence_oracle {

inline bool adheres(const std::string& id, const std::vector<langdrive::SnapshotSample>& xs,
                    double speed_threshold = 3.0) {
  if (xs.empty()) return false;
  auto all = [&](auto pred) { return std::all_of(xs.begin(), xs.end(), pred); };
  auto any = [&](auto pred) { return std::any_of(xs.begin(), xs.end(), pred); };
  auto near_wall = [](const langdrive::SnapshotSample& x) { return x.dist_left < 0.4 || x.dist_right < 0.4; };
  auto on_line = [](const langdrive::SnapshotSample& x) { return -0.3 <= x.d && x.d <= 0.3; };
  if (id == "reversed") return all([](const auto& x) { return x.s_speed < 0.0; });
  if (id == "forward") return all([](const auto& x) { return x.s_speed > 0.0; });
  if (id == "stop") return all([](const auto& x) { return x.s_speed > -0.1 && x.s_speed < 0.1; });
  if (id == "speed") {
    long double sum = 0.0L;
    for (const auto& x : xs) sum += x.s_speed;
    return sum / static_cast<long double>(xs.size()) > speed_threshold;
  }
  if (id == "racingline") return all(on_line);
  if (id == "close_wall") return any(near_wall);
  if (id == "centerline") return all(on_line) && !any(near_wall);
  if (id == "oscillating") {
    const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end(),
                                              [](const auto& a, const auto& b) { return a.d < b.d; });
    return lo->d < 0.0 && hi->d > 0.0 && hi->d - lo->d > 0.6;
  }
  return false;
}

}  // namespace adherence_oracle
