#pragma once

#include <Eigen/Dense>

namespace tetmf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Reference tetrahedron: vertices (0,0,0), (1,0,0), (0,1,0), (0,0,1).
// All basis tables and quadrature rules are expressed on it.
inline constexpr double kRefVolume = 1.0 / 6.0;

} // namespace tetmf
