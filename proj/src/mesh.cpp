#include "tetmf/mesh.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace tetmf {

namespace {

constexpr LatticePoint kO = {0, 0, 0};
constexpr LatticePoint kE1 = {1, 0, 0};
constexpr LatticePoint kE2 = {0, 1, 0};
constexpr LatticePoint kE3 = {0, 0, 1};
constexpr LatticePoint kE12 = {1, 1, 0};
constexpr LatticePoint kE23 = {0, 1, 1};
constexpr LatticePoint kE13 = {1, 0, 1};
constexpr LatticePoint kE123 = {1, 1, 1};

const std::array<std::array<LatticePoint, 4>, 6> kOffsets = {{
    {kO, kE1, kE2, kE3},      // WU
    {kE12, kE23, kE13, kE123},// WD
    {kE1, kE2, kE3, kE12},    // BU
    {kE2, kE3, kE12, kE23},   // BD
    {kE1, kE3, kE12, kE13},   // GU
    {kE3, kE12, kE23, kE13},  // GD
}};

int offsets_det(const std::array<LatticePoint, 4>& v) {
  int a[3][3];
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 3; ++r) a[r][c] = v[c + 1][r] - v[0][r];
  return a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) -
         a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
         a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
}

double tet_volume6(const MacroMesh& m, const std::array<int, 4>& t) {
  Mat3 a;
  for (int c = 0; c < 3; ++c) a.col(c) = m.vertices[t[c + 1]] - m.vertices[t[0]];
  return a.determinant();
}

} // namespace

const char* to_string(Orientation o) {
  switch (o) {
    case Orientation::WU: return "WU";
    case Orientation::WD: return "WD";
    case Orientation::BU: return "BU";
    case Orientation::BD: return "BD";
    case Orientation::GU: return "GU";
    case Orientation::GD: return "GD";
  }
  return "?";
}

const std::array<LatticePoint, 4>& orientation_offsets(Orientation o) {
  return kOffsets[static_cast<int>(o)];
}

int orientation_det(Orientation o) { return offsets_det(kOffsets[static_cast<int>(o)]); }

int loop_bound(Orientation o, int n) {
  int b = 0;
  switch (o) {
    case Orientation::WU: b = n; break;
    case Orientation::WD: b = n - 2; break;
    default: b = n - 1; break;
  }
  return std::max(b, 0);
}

void MacroMesh::validate() const {
  const int nv = static_cast<int>(vertices.size());
  std::map<std::array<int, 3>, int> faceCount;
  for (const auto& t : tets) {
    for (int i : t)
      if (i < 0 || i >= nv) throw std::invalid_argument("mesh: vertex id out of range");
    if (tet_volume6(*this, t) <= 0.0)
      throw std::invalid_argument("mesh: tet with non-positive volume");
    for (int f = 0; f < 4; ++f) {
      std::array<int, 3> face;
      int k = 0;
      for (int i = 0; i < 4; ++i)
        if (i != f) face[k++] = t[i];
      std::sort(face.begin(), face.end());
      if (++faceCount[face] > 2)
        throw std::invalid_argument("mesh: face shared by more than two tets");
    }
  }
}

std::vector<std::array<int, 3>> MacroMesh::boundary_faces() const {
  std::map<std::array<int, 3>, int> faceCount;
  for (const auto& t : tets) {
    for (int f = 0; f < 4; ++f) {
      std::array<int, 3> face;
      int k = 0;
      for (int i = 0; i < 4; ++i)
        if (i != f) face[k++] = t[i];
      std::sort(face.begin(), face.end());
      ++faceCount[face];
    }
  }
  std::vector<std::array<int, 3>> out;
  for (const auto& [face, count] : faceCount)
    if (count == 1) out.push_back(face);
  return out;
}

MacroMesh MacroMesh::single_tet() {
  MacroMesh m;
  m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
  m.tets = {{0, 1, 2, 3}};
  m.validate();
  return m;
}

MacroMesh MacroMesh::cube6() {
  MacroMesh m;
  for (int z = 0; z <= 1; ++z)
    for (int y = 0; y <= 1; ++y)
      for (int x = 0; x <= 1; ++x) m.vertices.emplace_back(x, y, z);
  auto id = [](int x, int y, int z) { return x + 2 * y + 4 * z; };
  // Kuhn split: six tets around the main diagonal (0,0,0)-(1,1,1).
  const int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  for (const auto& p : perms) {
    int a[3] = {0, 0, 0};
    a[p[0]] = 1;
    int b[3] = {a[0], a[1], a[2]};
    b[p[1]] = 1;
    std::array<int, 4> t = {id(0, 0, 0), id(a[0], a[1], a[2]), id(b[0], b[1], b[2]), id(1, 1, 1)};
    if (tet_volume6(m, t) < 0.0) std::swap(t[2], t[3]);
    m.tets.push_back(t);
  }
  m.validate();
  return m;
}

MacroMesh MacroMesh::load(std::istream& in) {
  MacroMesh m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      double x, y, z;
      if (!(ls >> x >> y >> z))
        throw std::invalid_argument("mesh file: bad vertex at line " + std::to_string(lineno));
      m.vertices.emplace_back(x, y, z);
    } else if (tag == "t") {
      std::array<int, 4> t;
      if (!(ls >> t[0] >> t[1] >> t[2] >> t[3]))
        throw std::invalid_argument("mesh file: bad tet at line " + std::to_string(lineno));
      m.tets.push_back(t);
    } else {
      throw std::invalid_argument("mesh file: unknown tag '" + tag + "' at line " +
                                  std::to_string(lineno));
    }
  }
  m.validate();
  return m;
}

MacroMesh MacroMesh::load_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("mesh file: cannot open " + path);
  return load(f);
}

MacroMesh mesh_by_name(const std::string& name) {
  if (name == "single-tet") return MacroMesh::single_tet();
  if (name == "cube6") return MacroMesh::cube6();
  return MacroMesh::load_file(name);
}

std::array<LatticePoint, 4> micro_vertices(const MicroElement& e) {
  const int n = lattice_extent(e.level);
  const auto& offs = orientation_offsets(e.orientation);
  std::array<LatticePoint, 4> out;
  for (int i = 0; i < 4; ++i) {
    out[i] = {e.x + offs[i][0], e.y + offs[i][1], e.z + offs[i][2]};
    const auto& p = out[i];
    if (p[0] < 0 || p[1] < 0 || p[2] < 0 || p[0] + p[1] + p[2] > n)
      throw std::invalid_argument("micro_vertices: element outside the macro lattice");
  }
  return out;
}

const char* to_string(Strategy s) { return s == Strategy::sawtooth ? "sawtooth" : "cubes"; }

Strategy strategy_from_string(const std::string& s) {
  if (s == "sawtooth") return Strategy::sawtooth;
  if (s == "cubes") return Strategy::cubes;
  throw std::invalid_argument("unknown loop strategy '" + s + "'");
}

TraversalOrder enumerate_elements(Strategy strategy, int macroId, int level) {
  const int n = lattice_extent(level);
  TraversalOrder order;
  order.strategy = strategy;
  order.elements.reserve(static_cast<size_t>(n) * n * n);

  auto emit = [&](Orientation o, int x, int y, int z) {
    order.elements.push_back({o, x, y, z, level, macroId});
  };

  if (strategy == Strategy::sawtooth) {
    for (Orientation o : kAllOrientations)
      for (int z = 0; z < loop_bound(o, n); ++z)
        for (int y = 0; y < loop_bound(o, n - z); ++y)
          for (int x = 0; x < loop_bound(o, n - z - y); ++x) emit(o, x, y, z);
    return order;
  }

  if (level < 1)
    throw std::invalid_argument("enumerate: cubes strategy requires level >= 1");

  // Fused sweep: rows of complete 6-element cubes, then the two incomplete
  // iterations (five orientations, then the last WU) at the row end. Rows of
  // length one carry only the final WU element.
  for (int z = 0; z < n; ++z) {
    for (int y = 0; y < n - z - 1; ++y) {
      const int m = n - z - y;
      for (int x = 0; x < m - 2; ++x)
        for (Orientation o : kAllOrientations) emit(o, x, y, z);
      for (Orientation o : {Orientation::WU, Orientation::GU, Orientation::GD,
                            Orientation::BU, Orientation::BD})
        emit(o, m - 2, y, z);
      emit(Orientation::WU, m - 1, y, z);
    }
    emit(Orientation::WU, 0, n - z - 1, z);
  }
  return order;
}

ElementMap micro_jacobian(const MacroMesh& mesh, int macroId, int level, Orientation o) {
  if (macroId < 0 || macroId >= mesh.num_tets())
    throw std::invalid_argument("micro_jacobian: macro id out of range");
  const auto& t = mesh.tets[macroId];
  Mat3 a;
  for (int c = 0; c < 3; ++c) a.col(c) = mesh.vertices[t[c + 1]] - mesh.vertices[t[0]];
  const double detA = a.determinant();
  if (detA <= 0.0) throw std::invalid_argument("micro_jacobian: degenerate macro");

  const auto& offs = orientation_offsets(o);
  Mat3 d;
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 3; ++r) d(r, c) = static_cast<double>(offs[c + 1][r] - offs[0][r]);

  const double h = 1.0 / static_cast<double>(lattice_extent(level));
  ElementMap map;
  map.J = a * d * h;
  map.det = detA * static_cast<double>(orientation_det(o)) * h * h * h;
  return map;
}

Vec3 lattice_to_world(const MacroMesh& mesh, int macroId, int level, const LatticePoint& p) {
  const auto& t = mesh.tets[macroId];
  const double h = 1.0 / static_cast<double>(lattice_extent(level));
  const Vec3& p0 = mesh.vertices[t[0]];
  return p0 + h * (static_cast<double>(p[0]) * (mesh.vertices[t[1]] - p0) +
                   static_cast<double>(p[1]) * (mesh.vertices[t[2]] - p0) +
                   static_cast<double>(p[2]) * (mesh.vertices[t[3]] - p0));
}

} // namespace tetmf
