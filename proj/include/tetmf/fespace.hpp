#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tetmf/geometry.hpp"
#include "tetmf/mesh.hpp"

namespace tetmf {

enum class Space : std::uint8_t { P1, P2, ND1 };

const char* to_string(Space s);

int local_dof_count(Space s);   // 4 / 10 / 6
int value_arity(Space s);       // 1 / 1 / 3
int space_degree(Space s);      // polynomial degree: 1 / 2 / 1
bool has_vertex_dofs(Space s);
bool has_edge_dofs(Space s);

// Local edges as pairs of local vertex indices; shared by P2 edge bubbles and
// ND1 edge functions.
inline constexpr std::array<std::array<int, 2>, 6> kLocalEdges = {
    {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}};

// The seven lattice directions micro-element edges can take (sign-normalized
// so the first nonzero component of (x,y,z) is positive).
inline constexpr std::array<LatticePoint, 7> kEdgeDirs = {
    {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, -1, 0}, {1, 0, -1}, {0, 1, -1}, {1, 1, -1}}};

// Maps an arbitrary lattice direction to (class, flipped); throws if the
// direction is not one of the seven classes.
std::pair<int, bool> edge_class(const LatticePoint& dir);

// --- reference-element bases --------------------------------------------

// P1 / P2 scalar bases on the reference tet. P2 ordering: 4 vertex functions
// followed by the 6 edge bubbles in kLocalEdges order.
double eval_basis(Space s, int i, const Vec3& x);
Vec3 eval_grad(Space s, int i, const Vec3& x);

// First-order Nedelec basis for local edge i = (a,b):
//   phi = lambda_a grad(lambda_b) - lambda_b grad(lambda_a),
// with constant curl 2 grad(lambda_a) x grad(lambda_b).
Vec3 eval_basis_nd1(int i, const Vec3& x);
Vec3 eval_curl_nd1(int i);

// --- global degrees of freedom -------------------------------------------

// Mesh-global key of one unknown: integer barycentric weights on macro
// vertices (zero weights dropped) for vertex DoFs; a sorted pair of vertex
// keys for edge DoFs.
struct DoFKey {
  enum class Kind : std::uint8_t { vertex, edge };
  Kind kind = Kind::vertex;
  // (macro vertex id, weight) pairs sorted by id; for edges both endpoint
  // keys concatenated in canonical (lexicographically sorted) order with a
  // (-1,-1) separator.
  std::vector<std::pair<int, int>> entries;

  bool operator==(const DoFKey&) const = default;
  bool operator<(const DoFKey& other) const;
};

struct FieldVector {
  Space space = Space::P1;
  int level = 0;
  std::vector<double> data;

  std::size_t size() const { return data.size(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
};

// Deterministic global numbering of all unknowns of a space on a refined
// mesh, plus the per-macro lattice lookup tables used by kernels.
//
// Numbering: records sorted by (owner macro, z, y, x, carrier kind/class)
// where "owner" is the lowest macro id containing the carrier. This keeps
// ids of spatially neighboring unknowns close, which the memory models rely
// on.
class DoFIndexer {
public:
  DoFIndexer(Space space, const MacroMesh& mesh, int level);

  Space space() const { return space_; }
  int level() const { return level_; }
  const MacroMesh& mesh() const { return *mesh_; }
  std::int64_t num_dofs() const { return numDofs_; }

  // 1 for unknowns not touching the domain boundary.
  const std::vector<std::uint8_t>& interior() const { return interior_; }

  // Flat lattice-slot table of one macro: slot -> +-(dof id + 1), 0 if the
  // slot does not carry an unknown. Vertex slots occupy [0, V), edge slots
  // of class c occupy [(c + vertexBlocks) * V, ...), V = (n+1)^3. The sign
  // carries the ND1 tangential orientation; it is +1 for P1/P2.
  const std::vector<std::int32_t>& macro_map(int macroId) const;

  int vertex_blocks() const { return has_vertex_dofs(space_) ? 1 : 0; }
  int edge_blocks() const { return has_edge_dofs(space_) ? 7 : 0; }
  int blocks() const { return vertex_blocks() + edge_blocks(); }
  std::int64_t block_volume() const { return blockVolume_; }
  std::int64_t map_size() const { return blocks() * blockVolume_; }

  int vertex_slot(const LatticePoint& p) const;
  int edge_slot(int edgeClass, const LatticePoint& base) const;

  // Gathers the local unknowns of a micro element in local DoF order.
  struct LocalDofs {
    std::array<std::int64_t, 10> ids;
    std::array<double, 10> signs;
    int count = 0;
  };
  LocalDofs local_dofs(const MicroElement& e) const;

  // Geometry of one unknown, used for interpolation and error norms.
  struct DofGeometry {
    DoFKey::Kind kind;
    Vec3 a;      // vertex position, or first endpoint of the oriented edge
    Vec3 b;      // second endpoint (edges only)
  };
  DofGeometry dof_geometry(std::int64_t id) const;

  DoFKey dof_key(std::int64_t id) const;

  void drop_map_cache() const;

private:
  struct Record {
    std::int32_t owner;
    std::int16_t x, y, z;
    std::uint8_t kindClass; // 0 = vertex, 1 + c = edge of class c
    std::uint8_t flags;     // bit0 boundary, bit1 canonical dir is key-ascending
  };

  void build();
  void fill_map(int macroId, std::vector<std::int32_t>& map) const;
  DoFKey make_vertex_key(int macroId, const LatticePoint& p) const;

  Space space_;
  const MacroMesh* mesh_;
  int level_;
  int n_;
  std::int64_t blockVolume_ = 0;
  std::int64_t numDofs_ = 0;

  std::vector<Record> records_;            // sorted by global id
  std::vector<std::uint8_t> interior_;     // per dof: 1 if away from the boundary
  std::vector<std::uint32_t> rank_;        // creation index -> global id
  std::vector<std::int64_t> privateStart_; // first creation index per macro
  // canonical key -> creation index, for carriers on macro interfaces
  struct KeyMap;
  std::shared_ptr<KeyMap> keyMap_;
  std::vector<std::array<bool, 4>> boundaryFace_; // [macro][opposite local vertex]

  mutable std::vector<std::pair<int, std::vector<std::int32_t>>> mapCache_;
};

std::int64_t num_dofs(Space space, const MacroMesh& mesh, int level);

// Ordered local keys of one element: 4 vertex keys (P1), 4 + 6 (P2), or 6
// edge keys (ND1).
std::vector<DoFKey> dof_keys(Space space, const MacroMesh& mesh, const MicroElement& e);

using ScalarFn = std::function<double(const Vec3&)>;
using VectorFn = std::function<Vec3(const Vec3&)>;

// Nodal interpolation for P1/P2 (vertex and edge-midpoint values).
FieldVector interpolate(const DoFIndexer& indexer, const ScalarFn& f);

// ND1 edge interpolation: integral of f . t along the oriented edge,
// approximated with 2-point Gauss.
FieldVector interpolate(const DoFIndexer& indexer, const VectorFn& f);

} // namespace tetmf
