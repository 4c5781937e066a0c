#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lddmm/errors.hpp"
#include "lddmm/point_cloud.hpp"

namespace lddmm {

/// x_normalized = (x − shift) / scale.
struct AffineRecord {
  Eigen::RowVectorXd shift;
  double scale = 1.0;

  Points apply(const Points& p) const { return (p.rowwise() - shift) / scale; }
  Points invert(const Points& p) const { return (p * scale).rowwise() + shift; }
};

struct NormalizedCloud {
  PointCloud cloud;
  AffineRecord transform;
  bool degenerate = false;  // all points coincide; scale left at 1
};

/// Centers the cloud at the origin and scales it so that the farthest point has norm 1.
inline NormalizedCloud normalize(const PointCloud& cloud) {
  const Points& p = cloud.points();
  AffineRecord tr;
  tr.shift = p.colwise().mean();
  Points centered = p.rowwise() - tr.shift;
  const double radius = centered.rowwise().norm().maxCoeff();
  NormalizedCloud out;
  if (radius > 0.0) {
    tr.scale = radius;
    centered /= radius;
    // Re-center: removes the O(ulp) mean left by the division.
    centered.rowwise() -= centered.colwise().mean();
  } else {
    out.degenerate = true;
  }
  out.cloud = PointCloud(std::move(centered));
  out.transform = std::move(tr);
  return out;
}

enum class BlobSide { source, target };

inline BlobSide parse_blob_side(const std::string& s) {
  if (s == "source") return BlobSide::source;
  if (s == "target") return BlobSide::target;
  throw ConfigError("blob side must be 'source' or 'target', got '" + s + "'");
}

namespace blobs {

// Mixture components of the 2-D blob dataset, in raw (pre-normalization) units.
// Gaussian components are truncated at kTruncation standard deviations so both
// measures have compact support.
struct Component {
  double weight;
  double cx, cy;
  double spread;   // Gaussian std, or ring width for annuli
  double radius;   // 0 for Gaussians, ring radius for annuli
};

inline constexpr double kTruncation = 2.5;

inline constexpr std::array<Component, 2> kSource{{
    {0.55, -0.45, 0.10, 0.17, 0.0},
    {0.45, 0.40, -0.20, 0.20, 0.0},
}};

inline constexpr std::array<Component, 3> kTarget{{
    {0.45, 0.25, 0.30, 0.045, 0.30},  // annulus ("hole")
    {0.35, -0.40, -0.30, 0.12, 0.0},
    {0.20, 0.60, -0.45, 0.06, 0.0},   // small tail blob
}};

template <std::size_t N>
Points sample(const std::array<Component, N>& mix, Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Points out(n, 2);
  for (Index i = 0; i < n; ++i) {
    double u = unif(rng);
    std::size_t c = 0;
    while (c + 1 < N && u >= mix[c].weight) {
      u -= mix[c].weight;
      ++c;
    }
    const Component& comp = mix[c];
    if (comp.radius > 0.0) {
      const double angle = 2.0 * std::numbers::pi * unif(rng);
      double w;
      do {
        w = normal(rng);
      } while (std::abs(w) > kTruncation);
      const double r = comp.radius + comp.spread * w;
      out(i, 0) = comp.cx + r * std::cos(angle);
      out(i, 1) = comp.cy + r * std::sin(angle);
    } else {
      double gx;
      double gy;
      do {
        gx = normal(rng);
        gy = normal(rng);
      } while (gx * gx + gy * gy > kTruncation * kTruncation);
      out(i, 0) = comp.cx + comp.spread * gx;
      out(i, 1) = comp.cy + comp.spread * gy;
    }
  }
  return out;
}

}  // namespace blobs

/// Raw draws from the 2-D blob population (fixed mixture, no normalization).
inline PointCloud sample_blobs_2d_raw(Index n, BlobSide side, std::uint64_t seed) {
  if (n < 1) throw ConfigError("sample_blobs_2d: n must be at least 1");
  return PointCloud(side == BlobSide::source ? blobs::sample(blobs::kSource, n, seed)
                                             : blobs::sample(blobs::kTarget, n, seed));
}

/// Normalized 2-D blob cloud: source is a two-Gaussian mixture, target mixes an
/// annulus with two Gaussians.
inline PointCloud sample_blobs_2d(Index n, BlobSide side, std::uint64_t seed) {
  return normalize(sample_blobs_2d_raw(n, side, seed)).cloud;
}

/// n points uniform on the unit sphere S² (normalized Gaussian draws).
inline PointCloud sample_sphere(Index n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("sample_sphere: n must be at least 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Points out(n, 3);
  for (Index i = 0; i < n; ++i) {
    Eigen::Vector3d v;
    double norm = 0.0;
    do {
      v = Eigen::Vector3d(normal(rng), normal(rng), normal(rng));
      norm = v.norm();
    } while (norm < 1e-12);
    out.row(i) = (v / norm).transpose();
  }
  return PointCloud(std::move(out));
}

/// Area-uniform samples on a triangle mesh: a face is picked with probability
/// proportional to its area, then a uniform point inside it.
inline PointCloud sample_mesh_surface(const TriangleMesh& mesh, Index n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("sample_mesh_surface: n must be at least 1");
  const auto& faces = mesh.faces();
  if (faces.empty()) throw ConfigError("sample_mesh_surface: mesh has no non-degenerate face");
  std::vector<double> cumulative(faces.size());
  double total = 0.0;
  for (std::size_t f = 0; f < faces.size(); ++f) {
    total += mesh.triangle_area(faces[f]);
    cumulative[f] = total;
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const Points& v = mesh.vertices();
  Points out(n, 3);
  for (Index i = 0; i < n; ++i) {
    const double pick = unif(rng) * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    if (it == cumulative.end()) --it;
    const auto& face = faces[static_cast<std::size_t>(it - cumulative.begin())];
    const double s = std::sqrt(unif(rng));
    const double r = unif(rng);
    out.row(i) = (1.0 - s) * v.row(static_cast<Index>(face[0])) +
                 s * (1.0 - r) * v.row(static_cast<Index>(face[1])) + s * r * v.row(static_cast<Index>(face[2]));
  }
  return PointCloud(std::move(out));
}

}  // namespace lddmm
