#include "sono/geometry.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "sono/common.hpp"

namespace sono::geo {

Eigen::Vector3d trilaterate(const TriangleFrame& frame, double da, double db, double dc,
                            double eps) {
  if (!(frame.side > 0.0)) throw std::invalid_argument("triangle side must be positive");
  if (!(da > 0.0 && db > 0.0 && dc > 0.0)) throw std::invalid_argument("ranges must be positive");
  const double s = frame.side;
  // Differences of the three sphere equations; anchors as in TriangleFrame.
  double x = (db * db - da * da) / (2.0 * s);
  double y = (dc * dc - da * da + s * s - s * x) / (s * std::sqrt(3.0));
  double z2 = dc * dc - x * x - y * y;
  if (z2 < -eps * eps) throw std::domain_error("inconsistent ranges: no real intersection");
  double z = z2 > 0.0 ? std::sqrt(z2) : 0.0;
  return {x, y, z};
}

CircleFit fit_circle(const std::vector<Eigen::Vector2d>& points) {
  const int n = static_cast<int>(points.size());
  if (n < 3) throw std::invalid_argument("circle fit needs at least 3 points");
  // Kasa: ||p||^2 = 2 p . c + (r^2 - ||c||^2), linear in (cx, cy, k).
  Eigen::MatrixXd a(n, 3);
  Eigen::VectorXd b(n);
  for (int i = 0; i < n; ++i) {
    a(i, 0) = 2.0 * points[i].x();
    a(i, 1) = 2.0 * points[i].y();
    a(i, 2) = 1.0;
    b(i) = points[i].squaredNorm();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (sv(2) < 1e-10 * sv(0)) throw std::domain_error("circle fit is degenerate (collinear points)");
  Eigen::Vector3d sol = svd.solve(b);
  CircleFit fit;
  fit.center = sol.head<2>();
  double r2 = sol(2) + fit.center.squaredNorm();
  if (!(r2 > 0.0)) throw std::domain_error("circle fit produced non-positive radius");
  fit.radius = std::sqrt(r2);
  fit.residuals.resize(n);
  for (int i = 0; i < n; ++i)
    fit.residuals(i) = std::abs((points[i] - fit.center).norm() - fit.radius);
  return fit;
}

PlatformResult platform_experiment(const TriangleFrame& frame, const Eigen::Vector3d& d_true,
                                   int steps, double noise_sigma, std::uint64_t seed) {
  if (steps < 8) throw std::invalid_argument("platform experiment needs at least 8 steps");
  if (noise_sigma < 0.0) throw std::invalid_argument("noise sigma must be >= 0");
  const Eigen::Vector3d a = frame.vertex_a();
  const Eigen::Vector3d b = frame.vertex_b();
  const Eigen::Vector3d c = frame.vertex_c();
  // Rotation axis: vertical through the triangle centroid.
  const Eigen::Vector3d centroid = (a + b + c) / 3.0;
  Rng rng(derive_seed(seed, "geo.platform"));
  PlatformResult result;
  result.points.reserve(steps);
  std::vector<Eigen::Vector2d> proj;
  proj.reserve(steps);
  for (int k = 0; k < steps; ++k) {
    double phi = -2.0 * M_PI * k / steps;  // platform frame sees D rotate backwards
    Eigen::Vector3d rel = d_true - centroid;
    Eigen::Vector3d d(centroid.x() + std::cos(phi) * rel.x() - std::sin(phi) * rel.y(),
                      centroid.y() + std::sin(phi) * rel.x() + std::cos(phi) * rel.y(),
                      d_true.z());
    double da = (d - a).norm() + rng.gaussian(noise_sigma);
    double db = (d - b).norm() + rng.gaussian(noise_sigma);
    double dc = (d - c).norm() + rng.gaussian(noise_sigma);
    Eigen::Vector3d p = trilaterate(frame, da, db, dc);
    result.points.push_back(p);
    proj.emplace_back(p.x(), p.y());
  }
  result.fit = fit_circle(proj);
  result.mean_error = result.fit.mean_residual();
  int bins = static_cast<int>(result.fit.residuals.maxCoeff() / kHistBin) + 1;
  result.histogram.assign(bins, 0);
  for (int i = 0; i < result.fit.residuals.size(); ++i)
    ++result.histogram[static_cast<int>(result.fit.residuals(i) / kHistBin)];
  return result;
}

void write_platform_csv(const PlatformResult& result, const std::string& points_path,
                        const std::string& hist_path) {
  std::ofstream pts(points_path);
  if (!pts) throw std::runtime_error("cannot write " + points_path);
  pts << "x,y,residual\n";
  char buf[96];
  for (std::size_t i = 0; i < result.points.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.9f,%.9f,%.9f\n", result.points[i].x(),
                  result.points[i].y(), result.fit.residuals(static_cast<int>(i)));
    pts << buf;
  }
  std::ofstream hist(hist_path);
  if (!hist) throw std::runtime_error("cannot write " + hist_path);
  hist << "bin_lo_m,bin_hi_m,count\n";
  for (std::size_t i = 0; i < result.histogram.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.4f,%.4f,%d\n", i * kHistBin, (i + 1) * kHistBin,
                  result.histogram[i]);
    hist << buf;
  }
}

}  // namespace sono::geo
