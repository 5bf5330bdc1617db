#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace langdrive {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Track-relative pose. `n` is positive toward the left wall.
struct FrenetPose {
  double s = 0.0;
  double n = 0.0;
  double delta_phi = 0.0;
};

struct CartesianPose {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
};

struct WallDistances {
  double left = 0.0;
  double right = 0.0;
};

/// Malformed track input. `row()` is the 1-based data row (0 when not row specific).
class TrackLoadError : public std::runtime_error {
 public:
  TrackLoadError(const std::string& what, std::size_t row)
      : std::runtime_error(what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

/// A pose or point lies outside the region where the Frenet map is one-to-one.
class FrenetDomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

/// Piecewise-linear centerline with per-vertex widths, parameterized by arc length.
///
/// Curvature comes from a signed circumcircle through vertices i-w, i, i+w
/// (w = curvature window), smoothed along s with a bump kernel of radius
/// 4 (w + 1) times the mean vertex spacing, so it is smooth along the track. Lateral offsets are measured along a normal
/// field that is the per-vertex average of adjacent segment normals,
/// interpolated along each segment; this keeps the Frenet map smooth and
/// exactly invertible across vertices.
///
/// Immutable after construction.
class TrackSpec {
 public:
  TrackSpec(std::vector<Point2> centerline, std::vector<double> width_left,
            std::vector<double> width_right, bool closed = true,
            int curvature_window = 2);

  std::size_t size() const { return points_.size(); }
  bool closed() const { return closed_; }
  double total_length() const { return total_length_; }
  const std::vector<Point2>& centerline() const { return points_; }
  /// Arc length at each vertex; front() == 0.
  const std::vector<double>& vertex_s() const { return s_; }

  /// Wraps onto [0, total_length) for closed tracks, clamps for open ones.
  double wrap_s(double s) const;
  /// Signed difference b - a along the track, shortest way round on closed tracks.
  double s_delta(double a, double b) const;

  double curvature_at(double s) const;
  /// Curvature and its derivative with respect to s at `s`.
  std::pair<double, double> curvature_and_slope(double s) const;
  double width_left(double s) const;
  double width_right(double s) const;

  CartesianPose frenet_to_cartesian(const FrenetPose& pose) const;
  FrenetPose cartesian_to_frenet(double x, double y, double heading) const;
  WallDistances wall_distances(double s, double n) const;

  /// True when |kappa(s) * n| < 1, the local tube where the map is valid.
  bool in_tube(double s, double n) const;

 private:
  struct Location {
    std::size_t seg = 0;
    double t = 0.0;
  };

  Location locate(double s) const;
  std::size_t next(std::size_t i) const { return (i + 1) % points_.size(); }
  std::size_t segment_count() const { return closed_ ? points_.size() : points_.size() - 1; }
  double segment_length(std::size_t seg) const;
  double interp(const std::vector<double>& values, double s) const;

  std::vector<Point2> points_;
  std::vector<double> wl_;
  std::vector<double> wr_;
  bool closed_;
  std::vector<double> s_;
  std::vector<double> kappa_;
  std::vector<Point2> normals_;
  double total_length_ = 0.0;
  double kernel_radius_ = 0.0;
};

/// Reads a track CSV with header `x_m,y_m,w_tr_left_m,w_tr_right_m`;
/// `#` lines are comments.
TrackSpec load_track(const std::filesystem::path& path, bool closed = true,
                     int curvature_window = 2);

}  // namespace langdrive
