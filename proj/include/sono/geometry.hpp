#pragma once

// Range-based point localization in a fixed triangle frame, algebraic circle
// fitting, and the rotating-platform localization accuracy experiment.

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace sono::geo {

// Equilateral anchor triangle.  C sits at the origin, the B->A direction is
// the x-axis, vertical is z; A and B lie at height side*sqrt(3)/2.
struct TriangleFrame {
  double side = 0.06;

  Eigen::Vector3d vertex_a() const { return {side / 2.0, side * std::sqrt(3.0) / 2.0, 0.0}; }
  Eigen::Vector3d vertex_b() const { return {-side / 2.0, side * std::sqrt(3.0) / 2.0, 0.0}; }
  Eigen::Vector3d vertex_c() const { return {0.0, 0.0, 0.0}; }
};

// Recovers the point from its ranges to the three anchors; the non-negative
// z root is taken.  Range triples that miss the frame by more than eps in z
// raise std::domain_error.
Eigen::Vector3d trilaterate(const TriangleFrame& frame, double da, double db, double dc,
                            double eps = 1e-3);

struct CircleFit {
  Eigen::Vector2d center;
  double radius = 0.0;
  Eigen::VectorXd residuals;  // per-point radial distance to the fitted circle

  double mean_residual() const { return residuals.size() ? residuals.mean() : 0.0; }
};

// Algebraic (Kasa) least-squares circle through >= 3 non-collinear points.
CircleFit fit_circle(const std::vector<Eigen::Vector2d>& points);

struct PlatformResult {
  std::vector<Eigen::Vector3d> points;  // localized positions, platform frame
  CircleFit fit;                        // on the X-Y projection
  double mean_error = 0.0;              // meters
  std::vector<int> histogram;           // residual counts, kHistBin-wide bins
};

constexpr double kHistBin = 1e-4;  // 0.1 mm

// Fixed external point seen from a rotating anchor triangle: at each step the
// true ranges get Gaussian noise, the point is localized and projected to the
// X-Y plane, and a circle is fitted to the trace.
PlatformResult platform_experiment(const TriangleFrame& frame, const Eigen::Vector3d& d_true,
                                   int steps, double noise_sigma, std::uint64_t seed);

// CSV outputs for plotting: per-point "x,y,residual" and the histogram.
void write_platform_csv(const PlatformResult& result, const std::string& points_path,
                        const std::string& hist_path);

}  // namespace sono::geo
