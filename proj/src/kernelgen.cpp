#include "tetmf/kernelgen.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

#include "tetmf/fespace.hpp"
#include "tetmf/loops.hpp"

namespace tetmf {

namespace {

struct GeoExprs {
  std::array<std::array<ExprId, 3>, 3> J;
  std::array<std::array<ExprId, 3>, 3> JinvT;
  ExprId det = kNoExpr;
  ExprId invdet = kNoExpr;
  ExprId absdet = kNoExpr;
};

// Element position as expressions: loop counters or fixed row positions for
// the cubes tail bodies.
struct Position {
  ExprId x, y, z;
};

class Builder {
public:
  Builder(Form form, Strategy strategy, const QuadratureRule& rule, const OptimizationSet& opts,
          int level)
      : wf_(weak_form(form)), strategy_(strategy), rule_(rule), opts_(opts), level_(level) {
    n_ = lattice_extent(level);
    np_ = n_ + 1;
    nloc_ = local_dof_count(wf_.trial);
    nq_ = rule.num_points();

    k_.form = form;
    k_.strategy = strategy;
    k_.level = level;
    k_.opts = opts;
    k_.rule = rule;

    // computed entries: lower set j <= i when exploiting symmetry
    for (int j = 0; j < nloc_; ++j)
      for (int i = 0; i < nloc_; ++i)
        if (!opts.S || j <= i) entries_.emplace_back(j, i);
    k_.computedEntries = static_cast<int>(entries_.size());
  }

  Kernel build() {
    if (opts_.fQ) make_builtin_tables();
    if (opts_.T) make_tabulation_tables();

    const LoopNest nest = build_nest(strategy_, level_);
    ExprPool& p = k_.pool;
    const ExprId zc = p.counter(kZ);
    const ExprId yc = p.counter(kY);
    const ExprId xc = p.counter(kX);

    for (const LoopNest::Sweep& sweep : nest.sweeps) {
      Stmt zLoop;
      zLoop.kind = Stmt::Kind::Loop;
      zLoop.counter = kZ;
      zLoop.extent = p.int_constant(n_ - sweep.zCut);

      Stmt yLoop;
      yLoop.kind = Stmt::Kind::Loop;
      yLoop.counter = kY;
      yLoop.extent = p.sub(p.int_constant(n_ - sweep.yCut), zc);

      Stmt xLoop;
      xLoop.kind = Stmt::Kind::Loop;
      xLoop.counter = kX;
      xLoop.extent = p.sub(p.sub(p.int_constant(n_ - sweep.xCut), zc), yc);
      xLoop.batchable = true;

      for (const auto& b : sweep.loopBodies)
        element_body(b.orientation, {xc, yc, zc}, xLoop.body);

      yLoop.body.push_back(std::move(xLoop));
      for (const auto& b : sweep.tails) {
        const ExprId xe = p.sub(p.sub(p.int_constant(n_ - b.tailOffset), zc), yc);
        element_body(b.orientation, {xe, yc, zc}, yLoop.body);
      }

      zLoop.body.push_back(std::move(yLoop));
      if (sweep.shortRowWU) {
        const ExprId ye = p.sub(p.int_constant(n_ - 1), zc);
        element_body(Orientation::WU, {p.int_constant(0), ye, zc}, zLoop.body);
      }
      k_.body.push_back(std::move(zLoop));
    }
    return std::move(k_);
  }

  // precompute variants share the entry construction
  Kernel build_precompute_setup() {
    const LoopNest nest = build_nest(Strategy::sawtooth, level_);
    ExprPool& p = k_.pool;
    const ExprId zc = p.counter(kZ);
    const ExprId yc = p.counter(kY);
    const ExprId xc = p.counter(kX);
    for (const LoopNest::Sweep& sweep : nest.sweeps) {
      Stmt zLoop, yLoop, xLoop;
      zLoop.kind = yLoop.kind = xLoop.kind = Stmt::Kind::Loop;
      zLoop.counter = kZ;
      yLoop.counter = kY;
      xLoop.counter = kX;
      zLoop.extent = p.int_constant(n_ - sweep.zCut);
      yLoop.extent = p.sub(p.int_constant(n_ - sweep.yCut), zc);
      xLoop.extent = p.sub(p.sub(p.int_constant(n_ - sweep.xCut), zc), yc);
      xLoop.batchable = true;
      for (const auto& b : sweep.loopBodies) setup_body(b.orientation, {xc, yc, zc}, xLoop.body);
      yLoop.body.push_back(std::move(xLoop));
      zLoop.body.push_back(std::move(yLoop));
      k_.body.push_back(std::move(zLoop));
    }
    k_.storedEntriesPerElement = nloc_ * nloc_;
    return std::move(k_);
  }

  Kernel build_precompute_apply() {
    const LoopNest nest = build_nest(Strategy::sawtooth, level_);
    ExprPool& p = k_.pool;
    const ExprId zc = p.counter(kZ);
    const ExprId yc = p.counter(kY);
    const ExprId xc = p.counter(kX);
    for (const LoopNest::Sweep& sweep : nest.sweeps) {
      Stmt zLoop, yLoop, xLoop;
      zLoop.kind = yLoop.kind = xLoop.kind = Stmt::Kind::Loop;
      zLoop.counter = kZ;
      yLoop.counter = kY;
      xLoop.counter = kX;
      zLoop.extent = p.int_constant(n_ - sweep.zCut);
      yLoop.extent = p.sub(p.int_constant(n_ - sweep.yCut), zc);
      xLoop.extent = p.sub(p.sub(p.int_constant(n_ - sweep.xCut), zc), yc);
      xLoop.batchable = true;
      for (const auto& b : sweep.loopBodies) apply_body(b.orientation, {xc, yc, zc}, xLoop.body);
      yLoop.body.push_back(std::move(xLoop));
      zLoop.body.push_back(std::move(yLoop));
      k_.body.push_back(std::move(zLoop));
    }
    k_.storedEntriesPerElement = nloc_ * nloc_;
    return std::move(k_);
  }

private:
  ExprPool& pool() { return k_.pool; }

  int new_temp() { return k_.numTemps++; }

  void make_builtin_tables() {
    auto make = [&](const std::string& name, auto get) {
      TableSpec t;
      t.name = name;
      t.builtin = true;
      t.dims = {nq_};
      for (int q = 0; q < nq_; ++q) t.values.push_back(get(q));
      k_.tables.push_back(std::move(t));
    };
    tabQW_ = static_cast<int>(k_.tables.size());
    make("qw", [&](int q) { return rule_.weights[q]; });
    tabQX_ = static_cast<int>(k_.tables.size());
    make("qx", [&](int q) { return rule_.points[q][0]; });
    tabQY_ = static_cast<int>(k_.tables.size());
    make("qy", [&](int q) { return rule_.points[q][1]; });
    tabQZ_ = static_cast<int>(k_.tables.size());
    make("qz", [&](int q) { return rule_.points[q][2]; });
  }

  void make_tabulation_tables() {
    const int ne = static_cast<int>(entries_.size());
    const bool hasCoeff = !wf_.coeffSpaces.empty();
    auto shell = [&](const std::string& name) {
      TableSpec t;
      t.name = name;
      t.tabulated = true;
      if (hasCoeff)
        t.dims = {6, nq_, ne};
      else
        t.dims = {6, ne};
      t.fill.assign(t.size(), kNoExpr);
      return static_cast<int>((k_.tables.push_back(std::move(t)), k_.tables.size() - 1));
    };
    tabStarA_ = shell(wf_.id == Form::N1CurlCurlMass ? "star_curl" : "star");
    if (wf_.id == Form::N1CurlCurlMass) tabStarB_ = shell("star_mass");
  }

  GeoExprs geometry(Orientation o) {
    const int oi = static_cast<int>(o);
    if (geoBuilt_[oi]) return geo_[oi];
    ExprPool& p = pool();
    GeoExprs g;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) g.J[r][c] = p.param(oi * 9 + r * 3 + c);
    std::array<std::array<ExprId, 3>, 3> cof;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        const int r1 = (r + 1) % 3, r2 = (r + 2) % 3;
        const int c1 = (c + 1) % 3, c2 = (c + 2) % 3;
        cof[r][c] = p.sub(p.mul(g.J[r1][c1], g.J[r2][c2]), p.mul(g.J[r1][c2], g.J[r2][c1]));
      }
    g.det = p.add(p.add(p.mul(g.J[0][0], cof[0][0]), p.mul(g.J[0][1], cof[0][1])),
                  p.mul(g.J[0][2], cof[0][2]));
    g.invdet = p.div(p.constant(1.0), g.det);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) g.JinvT[r][c] = p.mul(cof[r][c], g.invdet);
    // macro volumes are positive, so the sign of det J is the offset-table sign
    g.absdet = orientation_det(o) > 0 ? g.det : p.neg(g.det);
    geo_[oi] = g;
    geoBuilt_[oi] = true;
    return g;
  }

  // reference coordinates of quadrature point q, symbolic when fused
  struct XHat {
    std::array<ExprId, 4> lam;
    Vec3 numeric;    // valid when !symbolic
    bool symbolic = false;
  };

  XHat xhat(int q, ExprId qCounter, bool symbolic) {
    ExprPool& p = pool();
    XHat x;
    if (!symbolic) {
      x.numeric = rule_.points[q];
      x.symbolic = false;
      const auto& b = rule_.bary[q];
      for (int i = 0; i < 4; ++i) x.lam[i] = p.constant(b[i]);
      return x;
    }
    x.symbolic = true;
    const ExprId xe = p.table_load(tabQX_, qCounter);
    const ExprId ye = p.table_load(tabQY_, qCounter);
    const ExprId ze = p.table_load(tabQZ_, qCounter);
    x.lam[0] = p.sub(p.sub(p.sub(p.constant(1.0), xe), ye), ze);
    x.lam[1] = xe;
    x.lam[2] = ye;
    x.lam[3] = ze;
    return x;
  }

  ExprId quad_weight(int q, ExprId qCounter, bool symbolic) {
    if (!symbolic) return pool().constant(rule_.weights[q]);
    return pool().table_load(tabQW_, qCounter);
  }

  // scalar basis value of the coefficient space (P1 or P2)
  ExprId coeff_basis_value(Space s, int m, const XHat& x) {
    ExprPool& p = pool();
    if (!x.symbolic) return p.constant(eval_basis(s, m, x.numeric));
    if (s == Space::P1) return x.lam[m];
    if (m < 4)
      return p.mul(x.lam[m], p.sub(p.mul(p.constant(2.0), x.lam[m]), p.constant(1.0)));
    const auto [a, b] = std::pair(kLocalEdges[m - 4][0], kLocalEdges[m - 4][1]);
    return p.mul(p.constant(4.0), p.mul(x.lam[a], x.lam[b]));
  }

  // reference gradient (P1/P2) as three expressions
  std::array<ExprId, 3> ref_grad(Space s, int i, const XHat& x) {
    ExprPool& p = pool();
    std::array<ExprId, 3> g;
    if (!x.symbolic) {
      const Vec3 v = eval_grad(s, i, x.numeric);
      for (int r = 0; r < 3; ++r) g[r] = p.constant(v[r]);
      return g;
    }
    const auto gl = [&](int v, int r) { return p.constant(kGradLambdaTable[v][r]); };
    if (s == Space::P1) {
      for (int r = 0; r < 3; ++r) g[r] = gl(i, r);
      return g;
    }
    if (i < 4) {
      const ExprId f = p.sub(p.mul(p.constant(4.0), x.lam[i]), p.constant(1.0));
      for (int r = 0; r < 3; ++r) g[r] = p.mul(f, gl(i, r));
      return g;
    }
    const auto [a, b] = std::pair(kLocalEdges[i - 4][0], kLocalEdges[i - 4][1]);
    for (int r = 0; r < 3; ++r)
      g[r] = p.mul(p.constant(4.0),
                   p.add(p.mul(x.lam[a], gl(b, r)), p.mul(x.lam[b], gl(a, r))));
    return g;
  }

  std::array<ExprId, 3> ref_nd1_value(int i, const XHat& x) {
    ExprPool& p = pool();
    std::array<ExprId, 3> v;
    if (!x.symbolic) {
      const Vec3 val = eval_basis_nd1(i, x.numeric);
      for (int r = 0; r < 3; ++r) v[r] = p.constant(val[r]);
      return v;
    }
    const auto [a, b] = std::pair(kLocalEdges[i][0], kLocalEdges[i][1]);
    for (int r = 0; r < 3; ++r)
      v[r] = p.sub(p.mul(x.lam[a], p.constant(kGradLambdaTable[b][r])),
                   p.mul(x.lam[b], p.constant(kGradLambdaTable[a][r])));
    return v;
  }

  std::array<ExprId, 3> pull_grad(const GeoExprs& g, const std::array<ExprId, 3>& ref) {
    ExprPool& p = pool();
    std::array<ExprId, 3> out;
    for (int r = 0; r < 3; ++r) {
      ExprId acc = p.mul(g.JinvT[r][0], ref[0]);
      acc = p.add(acc, p.mul(g.JinvT[r][1], ref[1]));
      acc = p.add(acc, p.mul(g.JinvT[r][2], ref[2]));
      out[r] = acc;
    }
    return out;
  }

  std::array<ExprId, 3> pull_curl(const GeoExprs& g, int i) {
    ExprPool& p = pool();
    const Vec3 c = eval_curl_nd1(i);
    std::array<ExprId, 3> out;
    for (int r = 0; r < 3; ++r) {
      ExprId acc = p.mul(g.J[r][0], p.constant(c[0]));
      acc = p.add(acc, p.mul(g.J[r][1], p.constant(c[1])));
      acc = p.add(acc, p.mul(g.J[r][2], p.constant(c[2])));
      out[r] = p.mul(acc, g.invdet);
    }
    return out;
  }

  ExprId dot(const std::array<ExprId, 3>& a, const std::array<ExprId, 3>& b) {
    ExprPool& p = pool();
    return p.add(p.add(p.mul(a[0], b[0]), p.mul(a[1], b[1])), p.mul(a[2], b[2]));
  }

  // flat lattice slot expressions ------------------------------------------

  ExprId lattice_flat(const Position& pos, const LatticePoint& off) {
    ExprPool& p = pool();
    ExprId e = p.mul(pos.z, p.int_constant(static_cast<std::int64_t>(np_) * np_));
    e = p.add(e, p.mul(pos.y, p.int_constant(np_)));
    e = p.add(e, pos.x);
    const std::int64_t c = (static_cast<std::int64_t>(off[2]) * np_ + off[1]) * np_ + off[0];
    return p.add(e, p.int_constant(c));
  }

  // slot of local dof `i` of space `s` anchored at `pos` for orientation `o`;
  // also returns the generation-time sign factor (ND1 local vs. canonical)
  std::pair<ExprId, int> local_slot(Space s, Orientation o, int i, const Position& pos) {
    const auto& offs = orientation_offsets(o);
    const std::int64_t V = static_cast<std::int64_t>(np_) * np_ * np_;
    if (has_vertex_dofs(s) && i < 4) return {lattice_flat(pos, offs[i]), 1};
    const int le = has_vertex_dofs(s) ? i - 4 : i;
    const auto [a, b] = std::pair(kLocalEdges[le][0], kLocalEdges[le][1]);
    const LatticePoint pa = offs[a], pb = offs[b];
    const LatticePoint dir = {pb[0] - pa[0], pb[1] - pa[1], pb[2] - pa[2]};
    const auto [cls, flipped] = edge_class(dir);
    const LatticePoint base = flipped ? pb : pa;
    const int vertexBlocks = has_vertex_dofs(s) ? 1 : 0;
    ExprId e = lattice_flat(pos, base);
    e = pool().add(e, pool().int_constant((vertexBlocks + cls) * V));
    return {e, flipped ? -1 : 1};
  }

  // matrix-field index of entry `e` of the element at `pos` (dense lattice
  // layout per orientation)
  ExprId matrix_index(Orientation o, const Position& pos, int entry) {
    ExprPool& p = pool();
    const std::int64_t V = static_cast<std::int64_t>(np_) * np_ * np_;
    const std::int64_t stride = nloc_ * nloc_;
    ExprId flat = lattice_flat(pos, {0, 0, 0});
    flat = p.add(flat, p.int_constant(static_cast<int>(o) * V));
    return p.add(p.mul(flat, p.int_constant(stride)), p.int_constant(entry));
  }

  // gathered trial values including ND1 sign handling
  std::vector<ExprId> gather(Space s, Orientation o, const Position& pos, int fieldSlot,
                             int mapSlot) {
    const int count = local_dof_count(s);
    std::vector<ExprId> loads(count);
    for (int i = 0; i < count; ++i) {
      const auto [slot, sgn] = local_slot(s, o, i, pos);
      ExprId l = pool().field_load(fieldSlot, mapSlot, slot);
      if (sgn < 0) l = pool().neg(l);
      loads[i] = l;
    }
    return loads;
  }

  int coeff_map_slot() const {
    return wf_.coeffSpaces[0] == wf_.trial ? kMapPrimary : kMapCoeff;
  }

  // coefficient value sum_m c_m phihat_m(x_q)
  ExprId coeff_value(int fieldSlot, Orientation o, const Position& pos, const XHat& x) {
    ExprPool& p = pool();
    const Space ks = wf_.coeffSpaces[0];
    const int nk = local_dof_count(ks);
    ExprId acc = kNoExpr;
    for (int m = 0; m < nk; ++m) {
      const auto [slot, sgn] = local_slot(ks, o, m, pos);
      (void)sgn; // scalar coefficient spaces
      const ExprId term = p.mul(coeff_basis_value(ks, m, x), p.field_load(fieldSlot, coeff_map_slot(), slot));
      acc = acc == kNoExpr ? term : p.add(acc, term);
    }
    return acc;
  }

  // the micro-invariant factor(s) of entry (j,i) at quadrature point q
  struct EntryTerm {
    ExprId coeff; // kNoExpr when the form has no coefficient
    ExprId star;
  };

  std::vector<EntryTerm> entry_terms(Orientation o, const Position& pos, int q, ExprId qc,
                                     int j, int i, bool symbolic, bool wantCoeff) {
    ExprPool& p = pool();
    const GeoExprs g = geometry(o);
    const XHat x = xhat(q, qc, symbolic);
    const ExprId wdet = p.mul(quad_weight(q, qc, symbolic), g.absdet);
    std::vector<EntryTerm> terms;
    if (wf_.id == Form::N1CurlCurlMass) {
      const auto ci = pull_curl(g, i);
      const auto cj = pull_curl(g, j);
      const auto vi = pull_grad(g, ref_nd1_value(i, x)); // covariant map J^-T
      const auto vj = pull_grad(g, ref_nd1_value(j, x));
      const ExprId a = wantCoeff ? coeff_value(kFieldC0, o, pos, x) : kNoExpr;
      const ExprId b = wantCoeff ? coeff_value(kFieldC1, o, pos, x) : kNoExpr;
      terms.push_back({a, p.mul(wdet, dot(ci, cj))});
      terms.push_back({b, p.mul(wdet, dot(vi, vj))});
      return terms;
    }
    const auto gi = pull_grad(g, ref_grad(wf_.trial, i, x));
    const auto gj = pull_grad(g, ref_grad(wf_.trial, j, x));
    const ExprId star = p.mul(wdet, dot(gi, gj));
    const ExprId c = (wf_.coeffSpaces.empty() || !wantCoeff)
                         ? kNoExpr
                         : coeff_value(kFieldC0, o, pos, x);
    terms.push_back({c, star});
    return terms;
  }

  // tabulation: route the star factor of (o, q, entry, term) through a table
  ExprId tabulated_star(Orientation o, int q, int entryIdx, int termIdx, ExprId star,
                        ExprId qc) {
    const int tableId = termIdx == 0 ? tabStarA_ : tabStarB_;
    TableSpec& t = k_.tables[tableId];
    const int ne = static_cast<int>(entries_.size());
    const bool hasCoeff = !wf_.coeffSpaces.empty();
    ExprPool& p = pool();
    if (!hasCoeff) {
      // whole entry sum handled by tabulate_entry_sum
      throw std::logic_error("tabulated_star: constant-coefficient form");
    }
    const std::size_t fillIdx =
        (static_cast<std::size_t>(o) * nq_ + q) * ne + entryIdx;
    if (t.fill[fillIdx] == kNoExpr)
      t.fill[fillIdx] = star;
    ExprId idx;
    if (opts_.fQ) {
      idx = p.add(p.mul(p.add(p.int_constant(static_cast<int>(o) * nq_), qc), p.int_constant(ne)),
                  p.int_constant(entryIdx));
    } else {
      idx = p.int_constant((static_cast<std::int64_t>(o) * nq_ + q) * ne + entryIdx);
    }
    return p.table_load(tableId, idx);
  }

  ExprId tabulate_entry_sum(Orientation o, int entryIdx, ExprId sum) {
    TableSpec& t = k_.tables[tabStarA_];
    const int ne = static_cast<int>(entries_.size());
    const std::size_t fillIdx = static_cast<std::size_t>(o) * ne + entryIdx;
    if (t.fill[fillIdx] == kNoExpr) t.fill[fillIdx] = sum;
    return pool().table_load(tabStarA_, pool().int_constant(static_cast<int>(o) * ne + entryIdx));
  }

  // --- bodies ------------------------------------------------------------

  void element_body(Orientation o, const Position& pos, std::vector<Stmt>& out) {
    // constant-coefficient tabulation absorbs the quadrature sum entirely,
    // so there is no loop left to fuse
    const bool wholeSumTabulated = opts_.T && wf_.coeffSpaces.empty();
    if (opts_.fQ && !wholeSumTabulated)
      element_body_fused(o, pos, out);
    else
      element_body_unrolled(o, pos, out);
  }

  void element_body_unrolled(Orientation o, const Position& pos, std::vector<Stmt>& out) {
    ExprPool& p = pool();
    const int tag = static_cast<int>(o);
    const int ne = static_cast<int>(entries_.size());
    const bool constantCoeff = wf_.coeffSpaces.empty();

    // entry temps in computed order
    std::vector<int> entryTemp(static_cast<std::size_t>(nloc_) * nloc_, -1);
    for (int e = 0; e < ne; ++e) {
      const auto [j, i] = entries_[e];
      ExprId sum = kNoExpr;
      for (int q = 0; q < nq_; ++q) {
        auto terms = entry_terms(o, pos, q, kNoExpr, j, i, /*symbolic=*/false,
                                 /*wantCoeff=*/true);
        for (std::size_t ti = 0; ti < terms.size(); ++ti) {
          ExprId star = terms[ti].star;
          if (opts_.T && !constantCoeff)
            star = tabulated_star(o, q, e, static_cast<int>(ti), star, kNoExpr);
          const ExprId term = terms[ti].coeff == kNoExpr ? star : p.mul(terms[ti].coeff, star);
          sum = sum == kNoExpr ? term : p.add(sum, term);
        }
      }
      if (opts_.T && constantCoeff) sum = tabulate_entry_sum(o, e, sum);

      const int t = new_temp();
      Stmt def;
      def.kind = Stmt::Kind::TempAssign;
      def.temp = t;
      def.value = sum;
      def.orientTag = tag;
      out.push_back(std::move(def));
      entryTemp[static_cast<std::size_t>(j) * nloc_ + i] = t;
      if (opts_.S && j != i) entryTemp[static_cast<std::size_t>(i) * nloc_ + j] = t;
    }

    const auto vloads = gather(wf_.trial, o, pos, kFieldV, kMapPrimary);
    for (int j = 0; j < nloc_; ++j) {
      ExprId acc = kNoExpr;
      for (int i = 0; i < nloc_; ++i) {
        const int t = entryTemp[static_cast<std::size_t>(j) * nloc_ + i];
        const ExprId term = p.mul(p.temp_ref(t), vloads[i]);
        acc = acc == kNoExpr ? term : p.add(acc, term);
      }
      const auto [slot, sgn] = local_slot(wf_.test, o, j, pos);
      Stmt st;
      st.kind = Stmt::Kind::Accumulate;
      st.fieldSlot = kFieldW;
      st.mapSlot = kMapPrimary;
      st.index = slot;
      st.value = acc;
      st.sign = static_cast<std::int8_t>(sgn);
      st.orientTag = tag;
      out.push_back(std::move(st));
    }
  }

  void element_body_fused(Orientation o, const Position& pos, std::vector<Stmt>& out) {
    ExprPool& p = pool();
    const int tag = static_cast<int>(o);
    const bool constantCoeff = wf_.coeffSpaces.empty();
    const ExprId qc = p.counter(kQ);

    Stmt qLoop;
    qLoop.kind = Stmt::Kind::Loop;
    qLoop.counter = kQ;
    qLoop.extent = p.int_constant(nq_);
    qLoop.orientTag = tag;

    const auto vloads = gather(wf_.trial, o, pos, kFieldV, kMapPrimary);

    std::vector<int> entryTemp(static_cast<std::size_t>(nloc_) * nloc_, -1);
    for (std::size_t e = 0; e < entries_.size(); ++e) {
      const auto [j, i] = entries_[e];
      if (opts_.T && !constantCoeff) {
        // table fills are evaluated outside the kernel: build them with
        // numeric quadrature points
        for (int q = 0; q < nq_; ++q) {
          auto numeric = entry_terms(o, pos, q, kNoExpr, j, i, /*symbolic=*/false,
                                     /*wantCoeff=*/false);
          for (std::size_t ti = 0; ti < numeric.size(); ++ti)
            fill_star(o, q, static_cast<int>(e), static_cast<int>(ti), numeric[ti].star);
        }
      }
      auto terms = entry_terms(o, pos, /*q=*/0, qc, j, i, /*symbolic=*/true, /*wantCoeff=*/true);
      ExprId sum = kNoExpr;
      for (std::size_t ti = 0; ti < terms.size(); ++ti) {
        ExprId star = terms[ti].star;
        if (opts_.T && !constantCoeff)
          star = tabulated_star(o, /*q=*/0, static_cast<int>(e), static_cast<int>(ti), star, qc);
        const ExprId term = terms[ti].coeff == kNoExpr ? star : p.mul(terms[ti].coeff, star);
        sum = sum == kNoExpr ? term : p.add(sum, term);
      }
      const int t = new_temp();
      Stmt def;
      def.kind = Stmt::Kind::TempAssign;
      def.temp = t;
      def.value = sum;
      def.orientTag = tag;
      qLoop.body.push_back(std::move(def));
      entryTemp[static_cast<std::size_t>(j) * nloc_ + i] = t;
      if (opts_.S && j != i) entryTemp[static_cast<std::size_t>(i) * nloc_ + j] = t;
    }

    for (int j = 0; j < nloc_; ++j) {
      ExprId acc = kNoExpr;
      for (int i = 0; i < nloc_; ++i) {
        const int t = entryTemp[static_cast<std::size_t>(j) * nloc_ + i];
        const ExprId term = p.mul(p.temp_ref(t), vloads[i]);
        acc = acc == kNoExpr ? term : p.add(acc, term);
      }
      const auto [slot, sgn] = local_slot(wf_.test, o, j, pos);
      Stmt st;
      st.kind = Stmt::Kind::Accumulate;
      st.fieldSlot = kFieldW;
      st.mapSlot = kMapPrimary;
      st.index = slot;
      st.value = acc;
      st.sign = static_cast<std::int8_t>(sgn);
      st.orientTag = tag;
      qLoop.body.push_back(std::move(st));
    }
    out.push_back(std::move(qLoop));
  }

  void setup_body(Orientation o, const Position& pos, std::vector<Stmt>& out) {
    ExprPool& p = pool();
    const int tag = static_cast<int>(o);
    for (std::size_t e = 0; e < entries_.size(); ++e) {
      const auto [j, i] = entries_[e];
      ExprId sum = kNoExpr;
      for (int q = 0; q < nq_; ++q) {
        auto terms = entry_terms(o, pos, q, kNoExpr, j, i);
        for (const auto& term : terms) {
          const ExprId v = term.coeff == kNoExpr ? term.star : p.mul(term.coeff, term.star);
          sum = sum == kNoExpr ? v : p.add(sum, v);
        }
      }
      Stmt st;
      st.kind = Stmt::Kind::Accumulate;
      st.fieldSlot = kFieldMat;
      st.mapSlot = -1;
      st.index = matrix_index(o, pos, static_cast<int>(e));
      st.value = sum;
      st.orientTag = tag;
      out.push_back(std::move(st));
    }
  }

  void apply_body(Orientation o, const Position& pos, std::vector<Stmt>& out) {
    ExprPool& p = pool();
    const int tag = static_cast<int>(o);
    const auto vloads = gather(wf_.trial, o, pos, kFieldV, kMapPrimary);
    for (int j = 0; j < nloc_; ++j) {
      ExprId acc = kNoExpr;
      for (int i = 0; i < nloc_; ++i) {
        const ExprId m =
            p.field_load(kFieldMat, -1, matrix_index(o, pos, j * nloc_ + i));
        const ExprId term = p.mul(m, vloads[i]);
        acc = acc == kNoExpr ? term : p.add(acc, term);
      }
      const auto [slot, sgn] = local_slot(wf_.test, o, j, pos);
      Stmt st;
      st.kind = Stmt::Kind::Accumulate;
      st.fieldSlot = kFieldW;
      st.mapSlot = kMapPrimary;
      st.index = slot;
      st.value = acc;
      st.sign = static_cast<std::int8_t>(sgn);
      st.orientTag = tag;
      out.push_back(std::move(st));
    }
  }

  // reference gradients of the barycentric coordinates
  static constexpr double kGradLambdaTable[4][3] = {
      {-1, -1, -1}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};

  WeakForm wf_;
  Strategy strategy_;
  QuadratureRule rule_;
  OptimizationSet opts_;
  int level_, n_, np_, nloc_, nq_;
  Kernel k_;
  std::vector<std::pair<int, int>> entries_;
  std::array<GeoExprs, 6> geo_{};
  std::array<bool, 6> geoBuilt_{};
  int tabQW_ = -1, tabQX_ = -1, tabQY_ = -1, tabQZ_ = -1;
  int tabStarA_ = -1, tabStarB_ = -1;
};

Kernel run_pipeline(Kernel raw, const OptimizationSet& opts) {
  Kernel k = cse(raw);
  if (opts.I) k = hoist_invariants(k);
  if (opts.V) k = vectorize(k, opts.W);
  k.opts = opts;
  return k;
}

} // namespace

Kernel build_kernel(Form form, Strategy strategy, const QuadratureRule& rule,
                    const OptimizationSet& opts, int level) {
  if (level < 1) throw std::invalid_argument("build_kernel: level >= 1 required");
  if (opts.S && !weak_form(form).symmetric)
    throw std::invalid_argument("symmetry requires a symmetric form");
  Builder b(form, strategy, rule, opts, level);
  return b.build();
}

Kernel generate_kernel(Form form, const OptimizationSet& opts, int level) {
  opts.validate(form);
  if (opts.P) return precompute_variant(form, level).apply;
  const WeakForm& wf = weak_form(form);
  const QuadratureRule rule =
      quadrature(opts.U ? wf.underIntegrateDegree : wf.defaultDegree);
  Kernel raw = build_kernel(form, opts.strategy(), rule, opts, level);
  return run_pipeline(std::move(raw), opts);
}

Kernel exploit_symmetry(const Kernel& k) {
  const WeakForm& wf = weak_form(k.form);
  if (!wf.symmetric || wf.trial != wf.test)
    throw std::invalid_argument("exploit_symmetry: form not symmetric");
  OptimizationSet opts = k.opts;
  opts.S = true;
  Kernel raw = build_kernel(k.form, k.strategy, k.rule, opts, k.level);
  if (!k.cseApplied) {
    raw.opts = opts;
    return raw;
  }
  return run_pipeline(std::move(raw), opts);
}

Kernel set_quadrature_mode(const Kernel& k, QuadMode mode) {
  OptimizationSet opts = k.opts;
  opts.fQ = (mode == QuadMode::fused);
  Kernel raw = build_kernel(k.form, k.strategy, k.rule, opts, k.level);
  if (!k.cseApplied) {
    raw.opts = opts;
    return raw;
  }
  return run_pipeline(std::move(raw), opts);
}

Kernel under_integrate(const Kernel& k) {
  const WeakForm& wf = weak_form(k.form);
  if (wf.underIntegrateDegree < 0)
    throw std::invalid_argument("under_integrate: no degree reduction available for " + wf.name);
  OptimizationSet opts = k.opts;
  opts.U = true;
  Kernel raw = build_kernel(k.form, k.strategy, quadrature(wf.underIntegrateDegree), opts, k.level);
  if (!k.cseApplied) {
    raw.opts = opts;
    return raw;
  }
  return run_pipeline(std::move(raw), opts);
}

Kernel tabulate(const Kernel& k) {
  OptimizationSet opts = k.opts;
  opts.T = true;
  Kernel raw = build_kernel(k.form, k.strategy, k.rule, opts, k.level);
  if (!k.cseApplied) {
    raw.opts = opts;
    return raw;
  }
  return run_pipeline(std::move(raw), opts);
}

PrecomputePair precompute_variant(Form form, int level) {
  if (level < 1) throw std::invalid_argument("precompute_variant: level >= 1 required");
  const WeakForm& wf = weak_form(form);
  const QuadratureRule rule = quadrature(wf.defaultDegree);
  OptimizationSet opts;
  opts.P = true;

  PrecomputePair pair;
  {
    Builder b(form, Strategy::sawtooth, rule, OptimizationSet{}, level);
    Kernel raw = b.build_precompute_setup();
    raw.opts = opts;
    pair.setup = cse(raw);
    pair.setup.opts = opts;
  }
  {
    Builder b(form, Strategy::sawtooth, rule, OptimizationSet{}, level);
    Kernel raw = b.build_precompute_apply();
    raw.opts = opts;
    pair.apply = cse(raw);
    pair.apply.opts = opts;
  }
  return pair;
}

} // namespace tetmf
