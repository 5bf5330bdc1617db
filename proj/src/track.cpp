#include "langdrive/track.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

namespace langdrive {
namespace {

double cross(Point2 a, Point2 b) { return a.x * b.y - a.y * b.x; }
double dot(Point2 a, Point2 b) { return a.x * b.x + a.y * b.y; }
Point2 sub(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
double norm(Point2 a) { return std::hypot(a.x, a.y); }

// Signed curvature of the circle through a, b, c (positive for a left turn).
double circumcurvature(Point2 a, Point2 b, Point2 c) {
  const double ab = norm(sub(b, a));
  const double bc = norm(sub(c, b));
  const double ca = norm(sub(a, c));
  const double denom = ab * bc * ca;
  if (denom <= 0.0) return 0.0;
  return 2.0 * cross(sub(b, a), sub(c, b)) / denom;
}

// Real roots of c2 t^2 + c1 t + c0 = 0.
std::vector<double> solve_quadratic(double c2, double c1, double c0) {
  const double scale = std::max({std::abs(c2), std::abs(c1), std::abs(c0)});
  if (scale == 0.0) return {0.0};
  if (std::abs(c2) <= 1e-14 * scale) {
    if (std::abs(c1) <= 1e-14 * scale) return {};
    return {-c0 / c1};
  }
  const double disc = c1 * c1 - 4.0 * c2 * c0;
  if (disc < 0.0) return {};
  const double sq = std::sqrt(disc);
  const double q = -0.5 * (c1 + std::copysign(sq, c1));
  std::vector<double> roots;
  if (q != 0.0) roots.push_back(c0 / q);
  roots.push_back(q / c2);
  return roots;
}

}  // namespace

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

TrackSpec::TrackSpec(std::vector<Point2> centerline, std::vector<double> width_left,
                     std::vector<double> width_right, bool closed, int curvature_window)
    : points_(std::move(centerline)),
      wl_(std::move(width_left)),
      wr_(std::move(width_right)),
      closed_(closed) {
  const std::size_t n = points_.size();
  if (n < 3) throw TrackLoadError("track needs at least 3 centerline points", 0);
  if (wl_.size() != n || wr_.size() != n)
    throw TrackLoadError("width arrays must match the number of centerline points", 0);
  if (curvature_window < 1) throw std::invalid_argument("curvature window must be >= 1");
  for (std::size_t i = 0; i < n; ++i) {
    if (!(wl_[i] > 0.0) || !(wr_[i] > 0.0))
      throw TrackLoadError("non-positive track width at row " + std::to_string(i + 1), i + 1);
  }

  s_.assign(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) {
    const double len = norm(sub(points_[i], points_[i - 1]));
    if (!(len > 0.0))
      throw TrackLoadError("duplicate consecutive centerline point at row " + std::to_string(i + 1),
                           i + 1);
    s_[i] = s_[i - 1] + len;
  }
  total_length_ = s_.back();
  if (closed_) {
    const double len = norm(sub(points_.front(), points_.back()));
    if (!(len > 0.0))
      throw TrackLoadError("closed track repeats its first point at the end", n);
    total_length_ += len;
  }

  // Vertex curvature.
  const auto w = static_cast<std::ptrdiff_t>(curvature_window);
  const auto count = static_cast<std::ptrdiff_t>(n);
  kappa_.assign(n, 0.0);
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    std::ptrdiff_t a = i - w;
    std::ptrdiff_t c = i + w;
    if (closed_) {
      a = ((a % count) + count) % count;
      c = c % count;
    } else {
      a = std::max<std::ptrdiff_t>(a, 0);
      c = std::min<std::ptrdiff_t>(c, count - 1);
      if (a == i || c == i) continue;
    }
    kappa_[static_cast<std::size_t>(i)] =
        circumcurvature(points_[static_cast<std::size_t>(a)], points_[static_cast<std::size_t>(i)],
                        points_[static_cast<std::size_t>(c)]);
  }
  if (!closed_) {
    // Ends inherit the nearest interior estimate.
    const std::size_t first = std::min<std::size_t>(static_cast<std::size_t>(w), n - 2);
    const std::size_t last = n - 1 - first;
    for (std::size_t i = 0; i < first; ++i) kappa_[i] = kappa_[first];
    for (std::size_t i = last + 1; i < n; ++i) kappa_[i] = kappa_[last];
  }

  const double mean_spacing = total_length_ / static_cast<double>(segment_count());
  kernel_radius_ = 4.0 * (curvature_window + 1) * mean_spacing;

  // Vertex normals: normalized sum of the adjacent segments' left normals.
  normals_.assign(n, Point2{});
  auto seg_normal = [&](std::size_t seg) {
    const Point2 d = sub(points_[next(seg)], points_[seg]);
    const double len = norm(d);
    return Point2{-d.y / len, d.x / len};
  };
  for (std::size_t i = 0; i < n; ++i) {
    Point2 acc{};
    if (closed_ || i + 1 < n) {
      const Point2 a = seg_normal(i);
      acc = {acc.x + a.x, acc.y + a.y};
    }
    if (closed_ || i > 0) {
      const Point2 b = seg_normal((i + n - 1) % n);
      acc = {acc.x + b.x, acc.y + b.y};
    }
    const double len = norm(acc);
    if (!(len > 1e-9))
      throw TrackLoadError("centerline reverses direction at row " + std::to_string(i + 1), i + 1);
    normals_[i] = {acc.x / len, acc.y / len};
  }
}

double TrackSpec::wrap_s(double s) const {
  if (closed_) {
    double r = std::fmod(s, total_length_);
    if (r < 0.0) r += total_length_;
    if (r >= total_length_) r = 0.0;
    return r;
  }
  return std::clamp(s, 0.0, total_length_);
}

double TrackSpec::s_delta(double a, double b) const {
  double d = b - a;
  if (closed_) {
    d = std::fmod(d, total_length_);
    if (d > 0.5 * total_length_) d -= total_length_;
    if (d < -0.5 * total_length_) d += total_length_;
  }
  return d;
}

double TrackSpec::segment_length(std::size_t seg) const {
  if (seg + 1 < points_.size()) return s_[seg + 1] - s_[seg];
  return total_length_ - s_[seg];
}

TrackSpec::Location TrackSpec::locate(double s) const {
  s = wrap_s(s);
  auto it = std::upper_bound(s_.begin(), s_.end(), s);
  std::size_t seg = static_cast<std::size_t>(std::distance(s_.begin(), it));
  seg = seg == 0 ? 0 : seg - 1;
  if (!closed_ && seg >= points_.size() - 1) seg = points_.size() - 2;
  const double t = std::clamp((s - s_[seg]) / segment_length(seg), 0.0, 1.0);
  return {seg, t};
}

double TrackSpec::interp(const std::vector<double>& values, double s) const {
  const Location loc = locate(s);
  const double v0 = values[loc.seg];
  return v0 + loc.t * (values[next(loc.seg)] - v0);
}

// Vertex estimates blended with a compactly supported C-infinity bump, so the
// curvature seen by the integrators is smooth even where the samples kink.
std::pair<double, double> TrackSpec::curvature_and_slope(double s) const {
  s = wrap_s(s);
  const std::size_t n = points_.size();
  const Location loc = locate(s);
  double w_sum = 0.0, wk_sum = 0.0, dw_sum = 0.0, dwk_sum = 0.0;
  auto add = [&](std::size_t i, double offset) {
    const double r = offset / kernel_radius_;
    if (std::abs(r) >= 1.0) return false;
    const double q = 1.0 - r * r;
    const double w = std::exp(1.0 - 1.0 / q);
    const double dw = w * (-2.0 * r / (q * q)) / kernel_radius_;  // d w / d s
    w_sum += w;
    wk_sum += w * kappa_[i];
    dw_sum += dw;
    dwk_sum += dw * kappa_[i];
    return true;
  };
  // Forward from the segment start, then backward; each vertex visited at most once.
  std::size_t visited = 0;
  double lap = 0.0;
  for (std::size_t i = loc.seg; visited < n; ++visited) {
    if (!add(i, s - (s_[i] + lap))) break;
    if (i + 1 == n) {
      if (!closed_) {
        ++visited;
        break;
      }
      lap += total_length_;
    }
    i = (i + 1) % n;
  }
  lap = 0.0;
  for (std::size_t i = loc.seg; visited < n; ++visited) {
    if (i == 0) {
      if (!closed_) break;
      lap -= total_length_;
      i = n - 1;
    } else {
      --i;
    }
    if (!add(i, s - (s_[i] + lap))) break;
  }
  if (!(w_sum > 0.0)) {
    const double k0 = kappa_[loc.seg];
    const double k1 = kappa_[next(loc.seg)];
    return {(1.0 - loc.t) * k0 + loc.t * k1, (k1 - k0) / segment_length(loc.seg)};
  }
  const double kappa = wk_sum / w_sum;
  const double slope = (dwk_sum * w_sum - wk_sum * dw_sum) / (w_sum * w_sum);
  return {kappa, slope};
}

double TrackSpec::curvature_at(double s) const { return curvature_and_slope(s).first; }

double TrackSpec::width_left(double s) const { return interp(wl_, s); }
double TrackSpec::width_right(double s) const { return interp(wr_, s); }

bool TrackSpec::in_tube(double s, double n) const {
  return std::abs(curvature_at(s) * n) < 1.0;
}

WallDistances TrackSpec::wall_distances(double s, double n) const {
  return {width_left(s) - n, width_right(s) + n};
}

CartesianPose TrackSpec::frenet_to_cartesian(const FrenetPose& pose) const {
  if (!std::isfinite(pose.s) || !std::isfinite(pose.n) || !std::isfinite(pose.delta_phi))
    throw FrenetDomainError("non-finite Frenet pose");
  if (!in_tube(pose.s, pose.n)) {
    std::ostringstream msg;
    msg << "Frenet pose outside the valid tube: s=" << pose.s << " n=" << pose.n
        << " kappa=" << curvature_at(pose.s);
    throw FrenetDomainError(msg.str());
  }
  const Location loc = locate(pose.s);
  const Point2 a = points_[loc.seg];
  const Point2 b = points_[next(loc.seg)];
  const Point2 n0 = normals_[loc.seg];
  const Point2 n1 = normals_[next(loc.seg)];
  Point2 nrm{(1.0 - loc.t) * n0.x + loc.t * n1.x, (1.0 - loc.t) * n0.y + loc.t * n1.y};
  const double len = norm(nrm);
  nrm = {nrm.x / len, nrm.y / len};
  const Point2 p{a.x + loc.t * (b.x - a.x), a.y + loc.t * (b.y - a.y)};
  const double tangent = std::atan2(-nrm.x, nrm.y);
  return {p.x + pose.n * nrm.x, p.y + pose.n * nrm.y, wrap_angle(tangent + pose.delta_phi)};
}

FrenetPose TrackSpec::cartesian_to_frenet(double x, double y, double heading) const {
  constexpr double kTieTol = 1e-9;
  const Point2 q{x, y};
  bool found = false;
  FrenetPose best{};
  double best_tangent = 0.0;

  for (std::size_t seg = 0; seg < segment_count(); ++seg) {
    const Point2 a = points_[seg];
    const Point2 d = sub(points_[next(seg)], a);
    const Point2 n0 = normals_[seg];
    const Point2 m = sub(normals_[next(seg)], n0);
    const Point2 r = sub(q, a);
    const double c0 = cross(r, n0);
    const double c1 = cross(r, m) - cross(d, n0);
    const double c2 = -cross(d, m);
    for (double t : solve_quadratic(c2, c1, c0)) {
      if (t < -1e-12 || t > 1.0 + 1e-12) continue;
      t = std::clamp(t, 0.0, 1.0);
      Point2 nrm{n0.x + t * m.x, n0.y + t * m.y};
      const double len = norm(nrm);
      if (!(len > 0.0)) continue;
      nrm = {nrm.x / len, nrm.y / len};
      const Point2 p{a.x + t * d.x, a.y + t * d.y};
      const double n = dot(sub(q, p), nrm);
      const double s = wrap_s(s_[seg] + t * segment_length(seg));
      if (!in_tube(s, n)) continue;
      const bool better =
          !found || std::abs(n) < std::abs(best.n) - kTieTol ||
          (std::abs(std::abs(n) - std::abs(best.n)) <= kTieTol && s < best.s);
      if (better) {
        found = true;
        best = {s, n, 0.0};
        best_tangent = std::atan2(-nrm.x, nrm.y);
      }
    }
  }
  if (!found) {
    std::ostringstream msg;
    msg << "point (" << x << ", " << y << ") has no projection inside the track tube";
    throw FrenetDomainError(msg.str());
  }
  best.delta_phi = wrap_angle(heading - best_tangent);
  return best;
}

TrackSpec load_track(const std::filesystem::path& path, bool closed, int curvature_window) {
  std::ifstream in(path);
  if (!in) throw TrackLoadError("cannot open track file: " + path.string(), 0);

  std::vector<Point2> pts;
  std::vector<double> wl;
  std::vector<double> wr;
  std::string line;
  bool header_seen = false;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    if (!header_seen) {
      std::string header = line.substr(first);
      header.erase(std::remove_if(header.begin(), header.end(),
                                  [](char c) { return c == ' ' || c == '\t'; }),
                   header.end());
      if (header != "x_m,y_m,w_tr_left_m,w_tr_right_m")
        throw TrackLoadError("unexpected track header: " + line, 0);
      header_seen = true;
      continue;
    }
    ++row;
    std::array<double, 4> v{};
    std::stringstream ss(line);
    std::string field;
    std::size_t k = 0;
    while (std::getline(ss, field, ',')) {
      if (k >= v.size())
        throw TrackLoadError("row " + std::to_string(row) + ": too many fields", row);
      std::size_t used = 0;
      try {
        v[k] = std::stod(field, &used);
      } catch (const std::exception&) {
        throw TrackLoadError("row " + std::to_string(row) + ": malformed number '" + field + "'",
                             row);
      }
      if (field.find_first_not_of(" \t", used) != std::string::npos || !std::isfinite(v[k]))
        throw TrackLoadError("row " + std::to_string(row) + ": malformed number '" + field + "'",
                             row);
      ++k;
    }
    if (k != v.size())
      throw TrackLoadError("row " + std::to_string(row) + ": expected 4 fields", row);
    if (!(v[2] > 0.0) || !(v[3] > 0.0))
      throw TrackLoadError("row " + std::to_string(row) + ": track width must be positive", row);
    pts.push_back({v[0], v[1]});
    wl.push_back(v[2]);
    wr.push_back(v[3]);
  }
  if (!header_seen) throw TrackLoadError("track file has no header: " + path.string(), 0);
  return TrackSpec(std::move(pts), std::move(wl), std::move(wr), closed, curvature_window);
}

}  // namespace langdrive
