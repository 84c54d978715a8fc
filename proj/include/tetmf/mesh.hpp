#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "tetmf/geometry.hpp"

namespace tetmf {

// The six translation-invariant micro-tetrahedron shapes that tile a
// uniformly refined macro tetrahedron.
enum class Orientation : std::uint8_t { WU = 0, WD, BU, BD, GU, GD };

inline constexpr std::array<Orientation, 6> kAllOrientations = {
    Orientation::WU, Orientation::WD, Orientation::BU,
    Orientation::BD, Orientation::GU, Orientation::GD};

const char* to_string(Orientation o);

using LatticePoint = std::array<int, 3>;

// Lattice offsets of the four vertices of a micro element relative to its
// anchor (x,y,z). The local vertex order fixed here is the reference for all
// basis and DoF conventions.
const std::array<LatticePoint, 4>& orientation_offsets(Orientation o);

// Determinant of the offset edge matrix (always +-1; index-space volume 1/6).
int orientation_det(Orientation o);

// Iteration count of one loop axis for the given orientation; ranges are
// half-open [0, B).
int loop_bound(Orientation o, int n);

struct MacroMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 4>> tets;

  int num_tets() const { return static_cast<int>(tets.size()); }

  // Throws std::invalid_argument on out-of-range ids, non-positive tet
  // volumes, or faces shared by more than two tets.
  void validate() const;

  // Sorted vertex-id triples of faces that belong to exactly one tet.
  std::vector<std::array<int, 3>> boundary_faces() const;

  static MacroMesh single_tet();
  static MacroMesh cube6();

  // Plain text format: lines "v x y z" and "t i0 i1 i2 i3".
  static MacroMesh load(std::istream& in);
  static MacroMesh load_file(const std::string& path);
};

// Returns the built-in mesh for "single-tet" or "cube6", or loads a file.
MacroMesh mesh_by_name(const std::string& name);

struct MicroElement {
  Orientation orientation = Orientation::WU;
  int x = 0, y = 0, z = 0;
  int level = 0;
  int macroId = 0;

  bool operator==(const MicroElement&) const = default;
};

// The four lattice vertices (anchor + offsets). Throws if any vertex leaves
// the macro simplex lattice i+j+k <= 2^level.
std::array<LatticePoint, 4> micro_vertices(const MicroElement& e);

enum class Strategy { sawtooth, cubes };

const char* to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

struct TraversalOrder {
  Strategy strategy = Strategy::sawtooth;
  std::vector<MicroElement> elements;
};

// Full traversal of one refined macro. For the cubes strategy, level >= 1;
// level 0 degenerates to the single WU element under sawtooth.
TraversalOrder enumerate_elements(Strategy strategy, int macroId, int level);

// Affine map data of one micro element: world = origin + J * xhat with xhat
// on the reference tet. J and det are constant per (macro, level,
// orientation).
struct ElementMap {
  Mat3 J;
  double det = 0.0;
};

ElementMap micro_jacobian(const MacroMesh& mesh, int macroId, int level, Orientation o);

// World coordinates of a lattice point of the given macro at level
// (2^level lattice steps per macro edge).
Vec3 lattice_to_world(const MacroMesh& mesh, int macroId, int level, const LatticePoint& p);

inline int lattice_extent(int level) { return 1 << level; }

} // namespace tetmf
