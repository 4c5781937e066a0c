#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "lddmm/point_cloud.hpp"

// Dense row-wise building blocks for the O(n·m) reductions. Each row is built
// into a scratch array and reduced with Eigen's vectorized exp.

namespace lddmm::detail {

// Coordinates stored one column per dimension so that the inner loop over
// points is contiguous.
using ColumnPoints = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;

inline ColumnPoints to_columns(const Points& p) { return ColumnPoints(p); }

// out[j] = ‖x − y_j‖²
inline void squared_distances(const double* x, const ColumnPoints& y, Eigen::ArrayXd& out) {
  const Index d = y.cols();
  out = (y.col(0).array() - x[0]).square();
  for (Index k = 1; k < d; ++k) out += (y.col(k).array() - x[k]).square();
}

// exp(e) with arguments clamped at −700: below that the result would be a
// subnormal (or zero), which is both negligible and very slow to produce.
inline constexpr double kExpFloor = -700.0;

template <class Expr>
auto clamped_exp(const Expr& e) {
  return e.max(kExpFloor).exp();
}

// log Σ_j exp(e_j), overwriting e with exp(e_j − max).
inline double log_sum_exp_inplace(Eigen::ArrayXd& e) {
  const double top = e.maxCoeff();
  if (!std::isfinite(top)) return top;
  e = clamped_exp(e - top);
  return top + std::log(e.sum());
}

// row[j] = scale · exp(−‖x − c_j‖² · inv_two_sigma_sq)
inline void gaussian_row(const double* x, const ColumnPoints& centers, double inv_two_sigma_sq, double scale,
                         Eigen::ArrayXd& row) {
  squared_distances(x, centers, row);
  row = clamped_exp(row * -inv_two_sigma_sq);
  if (scale != 1.0) row *= scale;
}

}  // namespace lddmm::detail
