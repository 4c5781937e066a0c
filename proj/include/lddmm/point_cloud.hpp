#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "lddmm/errors.hpp"

namespace lddmm {

using Index = Eigen::Index;

/// n×d array of coordinates, one point per row.
using Points = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline bool all_finite(const Points& p) { return p.allFinite(); }

/// Uniform empirical measure n⁻¹ Σ δ_{x_i}. Weights are implicit and never stored.
class PointCloud {
 public:
  PointCloud() = default;

  explicit PointCloud(Points points) : points_(std::move(points)) {
    if (points_.rows() < 1) throw ConfigError("point cloud must contain at least one point");
    if (points_.cols() < 1) throw ConfigError("point cloud dimension must be at least 1");
    if (!all_finite(points_)) throw NumericError("point cloud contains non-finite coordinates");
  }

  const Points& points() const noexcept { return points_; }
  Index size() const noexcept { return points_.rows(); }
  Index dim() const noexcept { return points_.cols(); }
  double weight() const noexcept { return 1.0 / static_cast<double>(points_.rows()); }

  bool operator==(const PointCloud& other) const {
    return points_.rows() == other.points_.rows() && points_.cols() == other.points_.cols() &&
           points_ == other.points_;
  }

 private:
  Points points_;
};

/// Triangle surface. Faces with (numerically) zero area are dropped on construction.
class TriangleMesh {
 public:
  using Face = std::array<std::size_t, 3>;

  TriangleMesh() = default;

  TriangleMesh(Points vertices, const std::vector<Face>& faces) : vertices_(std::move(vertices)) {
    if (vertices_.cols() != 3) throw ConfigError("mesh vertices must be 3-D");
    const auto nv = static_cast<std::size_t>(vertices_.rows());
    faces_.reserve(faces.size());
    for (std::size_t f = 0; f < faces.size(); ++f) {
      const Face& face = faces[f];
      for (std::size_t v : face) {
        if (v >= nv) {
          throw ParseError("face " + std::to_string(f) + " references vertex " + std::to_string(v) +
                           " but mesh has " + std::to_string(nv) + " vertices");
        }
      }
      if (triangle_area(face) > 0.0) faces_.push_back(face);
    }
  }

  const Points& vertices() const noexcept { return vertices_; }
  const std::vector<Face>& faces() const noexcept { return faces_; }

  double triangle_area(const Face& face) const {
    const Eigen::Vector3d a = vertices_.row(static_cast<Index>(face[0])).transpose();
    const Eigen::Vector3d b = vertices_.row(static_cast<Index>(face[1])).transpose();
    const Eigen::Vector3d c = vertices_.row(static_cast<Index>(face[2])).transpose();
    const double area = 0.5 * (b - a).cross(c - a).norm();
    return std::isfinite(area) ? area : 0.0;
  }

 private:
  Points vertices_;
  std::vector<Face> faces_;
};

}  // namespace lddmm
