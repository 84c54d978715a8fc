#pragma once

#include <array>
#include <vector>

#include "tetmf/geometry.hpp"

namespace tetmf {

// Quadrature rule on the reference tetrahedron. Weights sum to the reference
// volume 1/6, so integrals are computed as sum_q w_q * f(x_q) without an
// extra volume factor.
struct QuadratureRule {
  int degree = 0;                            // guaranteed exactness
  std::vector<Vec3> points;                  // cartesian coordinates on the reference tet
  std::vector<std::array<double, 4>> bary;   // barycentric coordinates of the same points
  std::vector<double> weights;

  int num_points() const { return static_cast<int>(points.size()); }
};

// Returns a rule exact for all polynomials of total degree <= degree.
// Supported degrees: 1..6. Point counts for degree 1 (1), 2 (4) and 4 (11)
// are fixed; the remaining degrees use conical-product rules.
QuadratureRule quadrature(int degree);

} // namespace tetmf
