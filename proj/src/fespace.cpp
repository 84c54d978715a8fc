#include "tetmf/fespace.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <unordered_map>

namespace tetmf {

namespace {

// barycentric coordinates and their (constant) gradients
inline std::array<double, 4> lambda(const Vec3& x) {
  return {1.0 - x[0] - x[1] - x[2], x[0], x[1], x[2]};
}

const std::array<Vec3, 4> kGradLambda = {Vec3(-1, -1, -1), Vec3(1, 0, 0), Vec3(0, 1, 0),
                                         Vec3(0, 0, 1)};

inline std::array<int, 4> weights_of(int n, const LatticePoint& p) {
  return {n - p[0] - p[1] - p[2], p[0], p[1], p[2]};
}

inline bool in_lattice(int n, const LatticePoint& p) {
  return p[0] >= 0 && p[1] >= 0 && p[2] >= 0 && p[0] + p[1] + p[2] <= n;
}

inline LatticePoint add(const LatticePoint& a, const LatticePoint& b) {
  return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}

} // namespace

const char* to_string(Space s) {
  switch (s) {
    case Space::P1: return "P1";
    case Space::P2: return "P2";
    case Space::ND1: return "ND1";
  }
  return "?";
}

int local_dof_count(Space s) {
  switch (s) {
    case Space::P1: return 4;
    case Space::P2: return 10;
    case Space::ND1: return 6;
  }
  return 0;
}

int value_arity(Space s) { return s == Space::ND1 ? 3 : 1; }

int space_degree(Space s) { return s == Space::P2 ? 2 : 1; }

bool has_vertex_dofs(Space s) { return s != Space::ND1; }
bool has_edge_dofs(Space s) { return s != Space::P1; }

std::pair<int, bool> edge_class(const LatticePoint& dir) {
  LatticePoint d = dir;
  bool flipped = false;
  if (d[0] < 0 || (d[0] == 0 && d[1] < 0) || (d[0] == 0 && d[1] == 0 && d[2] < 0)) {
    d = {-d[0], -d[1], -d[2]};
    flipped = true;
  }
  for (int c = 0; c < 7; ++c)
    if (d == kEdgeDirs[c]) return {c, flipped};
  throw std::invalid_argument("edge_class: not a lattice edge direction");
}

double eval_basis(Space s, int i, const Vec3& x) {
  const auto l = lambda(x);
  if (s == Space::P1) {
    if (i < 0 || i >= 4) throw std::out_of_range("eval_basis: P1 index");
    return l[i];
  }
  if (s == Space::P2) {
    if (i < 0 || i >= 10) throw std::out_of_range("eval_basis: P2 index");
    if (i < 4) return l[i] * (2.0 * l[i] - 1.0);
    const auto [a, b] = std::pair(kLocalEdges[i - 4][0], kLocalEdges[i - 4][1]);
    return 4.0 * l[a] * l[b];
  }
  throw std::invalid_argument("eval_basis: vector-valued space, use eval_basis_nd1");
}

Vec3 eval_grad(Space s, int i, const Vec3& x) {
  const auto l = lambda(x);
  if (s == Space::P1) {
    if (i < 0 || i >= 4) throw std::out_of_range("eval_grad: P1 index");
    return kGradLambda[i];
  }
  if (s == Space::P2) {
    if (i < 0 || i >= 10) throw std::out_of_range("eval_grad: P2 index");
    if (i < 4) return (4.0 * l[i] - 1.0) * kGradLambda[i];
    const auto [a, b] = std::pair(kLocalEdges[i - 4][0], kLocalEdges[i - 4][1]);
    return 4.0 * (l[a] * kGradLambda[b] + l[b] * kGradLambda[a]);
  }
  throw std::invalid_argument("eval_grad: not a scalar space");
}

Vec3 eval_basis_nd1(int i, const Vec3& x) {
  if (i < 0 || i >= 6) throw std::out_of_range("eval_basis_nd1: index");
  const auto l = lambda(x);
  const auto [a, b] = std::pair(kLocalEdges[i][0], kLocalEdges[i][1]);
  return l[a] * kGradLambda[b] - l[b] * kGradLambda[a];
}

Vec3 eval_curl_nd1(int i) {
  if (i < 0 || i >= 6) throw std::out_of_range("eval_curl_nd1: index");
  const auto [a, b] = std::pair(kLocalEdges[i][0], kLocalEdges[i][1]);
  return 2.0 * kGradLambda[a].cross(kGradLambda[b]);
}

bool DoFKey::operator<(const DoFKey& other) const {
  if (kind != other.kind) return kind < other.kind;
  return entries < other.entries;
}

// --- DoFIndexer ------------------------------------------------------------

struct DoFIndexer::KeyMap {
  // canonical packed key -> creation index
  std::unordered_map<std::string, std::uint32_t> map;
};

namespace {

// Packs the nonzero (global vertex id, weight) pairs of a lattice point,
// sorted by id, into a byte string. Identical for coinciding points seen
// from different macros.
void pack_vertex_key(const MacroMesh& mesh, int macroId, int n, const LatticePoint& p,
                     std::string& out) {
  const auto& t = mesh.tets[macroId];
  const auto w = weights_of(n, p);
  std::array<std::pair<int, int>, 4> pairs;
  int k = 0;
  for (int v = 0; v < 4; ++v)
    if (w[v] > 0) pairs[k++] = {t[v], w[v]};
  std::sort(pairs.begin(), pairs.begin() + k);
  for (int i = 0; i < k; ++i) {
    const std::uint64_t packed =
        (static_cast<std::uint64_t>(static_cast<std::uint32_t>(pairs[i].first)) << 32) |
        static_cast<std::uint32_t>(pairs[i].second);
    out.append(reinterpret_cast<const char*>(&packed), sizeof(packed));
  }
}

// key-lexicographic order of two lattice points of the same macro, without
// materializing the keys
bool vertex_key_less(const MacroMesh& mesh, int macroId, int n, const LatticePoint& p,
                     const LatticePoint& q) {
  const auto& t = mesh.tets[macroId];
  std::array<int, 4> order = {0, 1, 2, 3};
  std::sort(order.begin(), order.end(), [&](int a, int b) { return t[a] < t[b]; });
  const auto wp = weights_of(n, p);
  const auto wq = weights_of(n, q);
  for (int v : order) {
    const int a = wp[v], b = wq[v];
    if (a > 0 && b > 0) {
      if (a != b) return a < b;
    } else if (a > 0) {
      return true; // q's key skips this id, so its entry has a larger id
    } else if (b > 0) {
      return false;
    }
  }
  return false;
}

} // namespace

DoFIndexer::DoFIndexer(Space space, const MacroMesh& mesh, int level)
    : space_(space), mesh_(&mesh), level_(level), n_(lattice_extent(level)) {
  if (level < 0) throw std::invalid_argument("DoFIndexer: negative level");
  mesh.validate();
  const std::int64_t np = n_ + 1;
  blockVolume_ = np * np * np;
  build();
}

void DoFIndexer::build() {
  const int n = n_;
  const int numMacros = mesh_->num_tets();
  keyMap_ = std::make_shared<KeyMap>();

  // boundary classification of the four faces of each macro
  const auto bfaces = mesh_->boundary_faces();
  std::set<std::array<int, 3>> bset(bfaces.begin(), bfaces.end());
  boundaryFace_.assign(numMacros, {false, false, false, false});
  for (int m = 0; m < numMacros; ++m) {
    const auto& t = mesh_->tets[m];
    for (int f = 0; f < 4; ++f) {
      std::array<int, 3> face;
      int k = 0;
      for (int i = 0; i < 4; ++i)
        if (i != f) face[k++] = t[i];
      std::sort(face.begin(), face.end());
      boundaryFace_[m][f] = bset.count(face) > 0;
    }
  }

  privateStart_.assign(numMacros + 1, 0);
  records_.clear();
  std::string keyBuf;

  auto boundary_bit = [&](int m, const std::array<int, 4>& wz, const std::array<int, 4>* wz2) {
    // boundary when the carrier lies in a boundary face plane of macro m
    for (int v = 0; v < 4; ++v) {
      if (!boundaryFace_[m][v]) continue;
      if (wz[v] == 0 && (!wz2 || (*wz2)[v] == 0)) return true;
    }
    return false;
  };

  auto merge_or_create = [&](int m, bool interfaceCarrier, const Record& rec,
                             const std::string& key) {
    if (!interfaceCarrier) {
      records_.push_back(rec);
      return;
    }
    auto [it, inserted] = keyMap_->map.try_emplace(key, static_cast<std::uint32_t>(records_.size()));
    if (inserted) {
      records_.push_back(rec);
    } else {
      records_[it->second].flags |= (rec.flags & 1u);
    }
  };

  for (int m = 0; m < numMacros; ++m) {
    privateStart_[m] = static_cast<std::int64_t>(records_.size());

    if (has_vertex_dofs(space_)) {
      for (int z = 0; z <= n; ++z)
        for (int y = 0; y <= n - z; ++y)
          for (int x = 0; x <= n - z - y; ++x) {
            const LatticePoint p = {x, y, z};
            const auto w = weights_of(n, p);
            const bool iface = (w[0] == 0 || w[1] == 0 || w[2] == 0 || w[3] == 0);
            Record rec{m, static_cast<std::int16_t>(x), static_cast<std::int16_t>(y),
                       static_cast<std::int16_t>(z), 0, 0};
            if (boundary_bit(m, w, nullptr)) rec.flags |= 1u;
            keyBuf.clear();
            if (iface) pack_vertex_key(*mesh_, m, n, p, keyBuf);
            merge_or_create(m, iface, rec, keyBuf);
          }
    }

    if (has_edge_dofs(space_)) {
      for (int c = 0; c < 7; ++c) {
        const LatticePoint d = kEdgeDirs[c];
        for (int z = 0; z <= n; ++z)
          for (int y = 0; y <= n - z; ++y)
            for (int x = 0; x <= n - z - y; ++x) {
              const LatticePoint p = {x, y, z};
              const LatticePoint q = add(p, d);
              if (!in_lattice(n, q)) continue;
              const auto wp = weights_of(n, p);
              const auto wq = weights_of(n, q);
              // the edge can coincide with another macro's edge only if it
              // lies inside a shared face plane
              bool iface = false;
              for (int v = 0; v < 4 && !iface; ++v) iface = (wp[v] == 0 && wq[v] == 0);
              Record rec{m, static_cast<std::int16_t>(x), static_cast<std::int16_t>(y),
                         static_cast<std::int16_t>(z), static_cast<std::uint8_t>(1 + c), 0};
              if (boundary_bit(m, wp, &wq)) rec.flags |= 1u;
              if (vertex_key_less(*mesh_, m, n, p, q)) rec.flags |= 2u;
              keyBuf.clear();
              if (iface) {
                std::string ka, kb;
                pack_vertex_key(*mesh_, m, n, p, ka);
                pack_vertex_key(*mesh_, m, n, q, kb);
                if (kb < ka) std::swap(ka, kb);
                keyBuf = ka + std::string(1, '\0') + kb;
              }
              merge_or_create(m, iface, rec, keyBuf);
            }
      }
    }
  }
  privateStart_[numMacros] = static_cast<std::int64_t>(records_.size());

  // global numbering: sort by (owner, z, y, x, kind/class)
  const std::size_t count = records_.size();
  std::vector<std::uint32_t> order(count);
  for (std::uint32_t i = 0; i < count; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    const Record& ra = records_[a];
    const Record& rb = records_[b];
    if (ra.owner != rb.owner) return ra.owner < rb.owner;
    if (ra.z != rb.z) return ra.z < rb.z;
    if (ra.y != rb.y) return ra.y < rb.y;
    if (ra.x != rb.x) return ra.x < rb.x;
    return ra.kindClass < rb.kindClass;
  });
  rank_.assign(count, 0);
  for (std::uint32_t id = 0; id < count; ++id) rank_[order[id]] = id;

  std::vector<Record> sorted(count);
  for (std::uint32_t id = 0; id < count; ++id) sorted[id] = records_[order[id]];
  records_.swap(sorted);
  numDofs_ = static_cast<std::int64_t>(count);

  interior_.assign(count, 1);
  for (std::size_t id = 0; id < count; ++id)
    if (records_[id].flags & 1u) interior_[id] = 0;
}

int DoFIndexer::vertex_slot(const LatticePoint& p) const {
  const std::int64_t np = n_ + 1;
  return static_cast<int>((p[2] * np + p[1]) * np + p[0]);
}

int DoFIndexer::edge_slot(int edgeClass, const LatticePoint& base) const {
  const std::int64_t np = n_ + 1;
  const std::int64_t flat = (base[2] * np + base[1]) * np + base[0];
  return static_cast<int>((vertex_blocks() + edgeClass) * blockVolume_ + flat);
}

void DoFIndexer::fill_map(int m, std::vector<std::int32_t>& map) const {
  const int n = n_;
  map.assign(static_cast<std::size_t>(map_size()), 0);
  std::int64_t privateCursor = privateStart_[m];
  std::string keyBuf;

  auto resolve = [&](bool iface, const std::string& key) -> std::int64_t {
    if (!iface) return rank_[privateCursor++];
    auto it = keyMap_->map.find(key);
    if (it == keyMap_->map.end())
      throw std::logic_error("DoFIndexer: interface key not found");
    return rank_[it->second];
  };

  if (has_vertex_dofs(space_)) {
    for (int z = 0; z <= n; ++z)
      for (int y = 0; y <= n - z; ++y)
        for (int x = 0; x <= n - z - y; ++x) {
          const LatticePoint p = {x, y, z};
          const auto w = weights_of(n, p);
          const bool iface = (w[0] == 0 || w[1] == 0 || w[2] == 0 || w[3] == 0);
          keyBuf.clear();
          if (iface) pack_vertex_key(*mesh_, m, n, p, keyBuf);
          const std::int64_t id = resolve(iface, keyBuf);
          map[vertex_slot(p)] = static_cast<std::int32_t>(id + 1);
        }
  }

  if (has_edge_dofs(space_)) {
    for (int c = 0; c < 7; ++c) {
      const LatticePoint d = kEdgeDirs[c];
      for (int z = 0; z <= n; ++z)
        for (int y = 0; y <= n - z; ++y)
          for (int x = 0; x <= n - z - y; ++x) {
            const LatticePoint p = {x, y, z};
            const LatticePoint q = add(p, d);
            if (!in_lattice(n, q)) continue;
            const auto wp = weights_of(n, p);
            const auto wq = weights_of(n, q);
            bool iface = false;
            for (int v = 0; v < 4 && !iface; ++v) iface = (wp[v] == 0 && wq[v] == 0);
            keyBuf.clear();
            if (iface) {
              std::string ka, kb;
              pack_vertex_key(*mesh_, m, n, p, ka);
              pack_vertex_key(*mesh_, m, n, q, kb);
              if (kb < ka) std::swap(ka, kb);
              keyBuf = ka + std::string(1, '\0') + kb;
            }
            const std::int64_t id = resolve(iface, keyBuf);
            // sign: +1 when the canonical direction p -> q ascends in key order
            const bool ascending = vertex_key_less(*mesh_, m, n, p, q);
            map[edge_slot(c, p)] = static_cast<std::int32_t>(ascending ? id + 1 : -(id + 1));
          }
    }
  }
}

const std::vector<std::int32_t>& DoFIndexer::macro_map(int macroId) const {
  if (macroId < 0 || macroId >= mesh_->num_tets())
    throw std::invalid_argument("macro_map: macro id out of range");
  for (auto& [m, map] : mapCache_)
    if (m == macroId) return map;
  // keep at most a handful of maps resident; high levels are large
  const std::size_t maxCached = map_size() > (80 << 20) ? 2 : 8;
  if (mapCache_.size() >= maxCached) mapCache_.erase(mapCache_.begin());
  mapCache_.emplace_back(macroId, std::vector<std::int32_t>());
  fill_map(macroId, mapCache_.back().second);
  return mapCache_.back().second;
}

void DoFIndexer::drop_map_cache() const { mapCache_.clear(); }

DoFIndexer::LocalDofs DoFIndexer::local_dofs(const MicroElement& e) const {
  LocalDofs out;
  const auto verts = micro_vertices(e);
  const auto& map = macro_map(e.macroId);

  auto decode = [&](int slot) {
    const std::int32_t v = map[slot];
    if (v == 0) throw std::logic_error("local_dofs: empty slot");
    out.ids[out.count] = std::abs(v) - 1;
    out.signs[out.count] = 1.0;
    return v;
  };

  if (has_vertex_dofs(space_)) {
    for (int i = 0; i < 4; ++i) {
      decode(vertex_slot(verts[i]));
      ++out.count;
    }
  }
  if (has_edge_dofs(space_)) {
    for (int le = 0; le < 6; ++le) {
      const LatticePoint& pa = verts[kLocalEdges[le][0]];
      const LatticePoint& pb = verts[kLocalEdges[le][1]];
      const LatticePoint dir = {pb[0] - pa[0], pb[1] - pa[1], pb[2] - pa[2]};
      const auto [cls, flipped] = edge_class(dir);
      const LatticePoint base = flipped ? pb : pa;
      const std::int32_t v = decode(edge_slot(cls, base));
      if (space_ == Space::ND1) {
        // sign of the local (a,b) direction relative to the global key order
        double s = v > 0 ? 1.0 : -1.0; // canonical dir vs global order
        if (flipped) s = -s;           // local dir vs canonical dir
        out.signs[out.count] = s;
      }
      ++out.count;
    }
  }
  return out;
}

DoFIndexer::DofGeometry DoFIndexer::dof_geometry(std::int64_t id) const {
  if (id < 0 || id >= numDofs_) throw std::out_of_range("dof_geometry: id");
  const Record& r = records_[id];
  DofGeometry g;
  const LatticePoint base = {r.x, r.y, r.z};
  if (r.kindClass == 0) {
    g.kind = DoFKey::Kind::vertex;
    g.a = lattice_to_world(*mesh_, r.owner, level_, base);
    g.b = g.a;
    return g;
  }
  g.kind = DoFKey::Kind::edge;
  const LatticePoint tip = add(base, kEdgeDirs[r.kindClass - 1]);
  Vec3 a = lattice_to_world(*mesh_, r.owner, level_, base);
  Vec3 b = lattice_to_world(*mesh_, r.owner, level_, tip);
  if (!(r.flags & 2u)) std::swap(a, b); // orient along ascending key order
  g.a = a;
  g.b = b;
  return g;
}

DoFKey DoFIndexer::make_vertex_key(int macroId, const LatticePoint& p) const {
  const auto& t = mesh_->tets[macroId];
  const auto w = weights_of(n_, p);
  DoFKey key;
  key.kind = DoFKey::Kind::vertex;
  for (int v = 0; v < 4; ++v)
    if (w[v] > 0) key.entries.emplace_back(t[v], w[v]);
  std::sort(key.entries.begin(), key.entries.end());
  return key;
}

DoFKey DoFIndexer::dof_key(std::int64_t id) const {
  if (id < 0 || id >= numDofs_) throw std::out_of_range("dof_key: id");
  const Record& r = records_[id];
  const LatticePoint base = {r.x, r.y, r.z};
  if (r.kindClass == 0) return make_vertex_key(r.owner, base);
  const LatticePoint tip = add(base, kEdgeDirs[r.kindClass - 1]);
  DoFKey a = make_vertex_key(r.owner, base);
  DoFKey b = make_vertex_key(r.owner, tip);
  if (b.entries < a.entries) std::swap(a, b);
  DoFKey key;
  key.kind = DoFKey::Kind::edge;
  key.entries = a.entries;
  key.entries.emplace_back(-1, -1);
  key.entries.insert(key.entries.end(), b.entries.begin(), b.entries.end());
  return key;
}

std::int64_t num_dofs(Space space, const MacroMesh& mesh, int level) {
  return DoFIndexer(space, mesh, level).num_dofs();
}

std::vector<DoFKey> dof_keys(Space space, const MacroMesh& mesh, const MicroElement& e) {
  DoFIndexer indexer(space, mesh, e.level);
  const auto dofs = indexer.local_dofs(e);
  std::vector<DoFKey> keys;
  keys.reserve(dofs.count);
  for (int i = 0; i < dofs.count; ++i) keys.push_back(indexer.dof_key(dofs.ids[i]));
  return keys;
}

FieldVector interpolate(const DoFIndexer& indexer, const ScalarFn& f) {
  if (value_arity(indexer.space()) != 1)
    throw std::invalid_argument("interpolate: scalar function for vector space");
  FieldVector out{indexer.space(), indexer.level(), std::vector<double>(indexer.num_dofs(), 0.0)};
  for (std::int64_t id = 0; id < indexer.num_dofs(); ++id) {
    const auto g = indexer.dof_geometry(id);
    if (g.kind == DoFKey::Kind::vertex)
      out.data[id] = f(g.a);
    else
      out.data[id] = f(0.5 * (g.a + g.b)); // P2 edge bubble is nodal at the midpoint
  }
  return out;
}

FieldVector interpolate(const DoFIndexer& indexer, const VectorFn& f) {
  if (indexer.space() != Space::ND1)
    throw std::invalid_argument("interpolate: vector function requires ND1");
  FieldVector out{indexer.space(), indexer.level(), std::vector<double>(indexer.num_dofs(), 0.0)};
  // 2-point Gauss on [0,1]
  const double t0 = 0.5 - 0.5 / std::sqrt(3.0);
  const double t1 = 0.5 + 0.5 / std::sqrt(3.0);
  for (std::int64_t id = 0; id < indexer.num_dofs(); ++id) {
    const auto g = indexer.dof_geometry(id);
    const Vec3 d = g.b - g.a;
    out.data[id] = 0.5 * (f(g.a + t0 * d).dot(d) + f(g.a + t1 * d).dot(d));
  }
  return out;
}

} // namespace tetmf
