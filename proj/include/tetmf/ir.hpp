#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "tetmf/forms.hpp"
#include "tetmf/mesh.hpp"
#include "tetmf/quadrature.hpp"

namespace tetmf {

// --- expressions -----------------------------------------------------------

enum class ExprKind : std::uint8_t {
  Const,
  Counter,    // aux: counter id (kZ, kY, kX, kQ)
  Param,      // aux: parameter slot (per-orientation Jacobian entries)
  FieldLoad,  // a: index expr; aux: field slot; aux2: map slot (-1 = direct)
  TableLoad,  // a: index expr; aux: table id
  TempRef,    // aux: temp id
  Add,
  Sub,
  Mul,
  Div,
  Neg,
};

using ExprId = std::int32_t;
inline constexpr ExprId kNoExpr = -1;

inline constexpr int kZ = 0, kY = 1, kX = 2, kQ = 3;

struct ExprNode {
  ExprKind kind;
  std::uint8_t flags = 0; // bit0 integer-valued, bit1 has counter, bit2 has field load,
                          // bit3 has param, bit4 has table load
  ExprId a = kNoExpr, b = kNoExpr;
  std::int32_t aux = 0, aux2 = 0;
  double value = 0.0;

  bool is_integer() const { return flags & 1u; }
  bool has_counter() const { return flags & 2u; }
  bool has_field_load() const { return flags & 4u; }
  bool has_param() const { return flags & 8u; }
  bool has_table_load() const { return flags & 16u; }
};

// Hash-consed expression arena: structurally identical subtrees share one
// node. Constructors fold constants and drop multiplicative/additive
// identities, so generated kernels never carry *1 or +0 operations.
class ExprPool {
public:
  ExprId constant(double v);
  ExprId int_constant(std::int64_t v);
  ExprId counter(int id);
  ExprId param(int slot);
  ExprId field_load(int fieldSlot, int mapSlot, ExprId index);
  ExprId table_load(int tableId, ExprId index);
  ExprId temp_ref(int tempId);
  ExprId add(ExprId x, ExprId y);
  ExprId sub(ExprId x, ExprId y);
  ExprId mul(ExprId x, ExprId y);
  ExprId div(ExprId x, ExprId y);
  ExprId neg(ExprId x);

  const ExprNode& node(ExprId id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  // counter id -> does `id` depend on it (directly, not through temps)
  bool depends_on_counter(ExprId id, int counterId) const;

private:
  ExprId intern(ExprNode n);

  struct KeyHash {
    std::size_t operator()(const std::array<std::uint64_t, 3>& k) const;
  };
  std::vector<ExprNode> nodes_;
  std::unordered_map<std::array<std::uint64_t, 3>, ExprId, KeyHash> interned_;
};

// --- statements ------------------------------------------------------------

struct Stmt {
  enum class Kind : std::uint8_t { TempAssign, Accumulate, Loop, Batch };

  Kind kind = Kind::TempAssign;
  int orientTag = -1; // orientation the statement was generated for, -1 none

  // TempAssign / Accumulate
  std::int32_t temp = -1;
  ExprId value = kNoExpr;
  std::int32_t fieldSlot = 0;
  std::int32_t mapSlot = -1;
  ExprId index = kNoExpr;
  std::int8_t sign = 1; // generation-time sign factor of the scatter

  // Loop / Batch
  std::int32_t counter = -1;
  ExprId extent = kNoExpr;
  std::int32_t width = 0; // batch width
  bool batchable = false;
  std::vector<Stmt> body;
};

// field slots
inline constexpr int kFieldV = 0, kFieldW = 1, kFieldC0 = 2, kFieldC1 = 3, kFieldMat = 4;
// map slots
inline constexpr int kMapPrimary = 0, kMapCoeff = 1;

// --- optimization flags ----------------------------------------------------

struct OptimizationSet {
  bool S = false;  // symmetry
  bool V = false;  // inter-element batching
  bool I = false;  // loop-invariant motion
  bool C = false;  // cubes loop strategy
  bool U = false;  // under-integration (P2V only)
  bool fQ = false; // fused quadrature loop (default is unrolled)
  bool T = false;  // tabulation
  bool P = false;  // precomputed element matrices (standalone)
  int W = 4;       // batch width

  std::string to_string() const;
  static OptimizationSet parse(const std::string& s);
  void validate(Form f) const;
  Strategy strategy() const { return C ? Strategy::cubes : Strategy::sawtooth; }
};

// --- tables ------------------------------------------------------------

struct TableSpec {
  std::string name;
  bool builtin = false;     // quadrature weights/points, filled from the rule
  bool tabulated = false;   // produced by the tabulation transformation
  std::vector<int> dims;
  std::vector<ExprId> fill;    // per entry, expr over Jacobian params (runtime fill)
  std::vector<double> values;  // builtin tables

  std::int64_t size() const {
    std::int64_t s = 1;
    for (int d : dims) s *= d;
    return s;
  }
};

// --- kernel ------------------------------------------------------------

struct Kernel {
  Form form = Form::P1Diffusion;
  Strategy strategy = Strategy::sawtooth;
  int level = 0;
  OptimizationSet opts;
  QuadratureRule rule;

  ExprPool pool;
  std::vector<Stmt> body; // macro-scope statements and the loop nest
  std::vector<TableSpec> tables;
  int numTemps = 0;
  bool cseApplied = false;

  // element-matrix entries evaluated per element (after symmetry)
  int computedEntries = 0;
  // precompute variants: stored scalars per element
  int storedEntriesPerElement = 0;

  int num_param_slots() const { return 6 * 9; }
  std::int64_t tabulated_scalar_count() const;
  std::int64_t table_bytes() const;
};

// --- transformations ---------------------------------------------------

// Tree-based common subexpression elimination, per statement scope: every
// float-valued subexpression referenced at least twice becomes a temp,
// emitted in first-occurrence (left-to-right post-order) order. Output is
// bit-identical to the input kernel's.
Kernel cse(const Kernel& k);

// Moves temps (and maximal loop-invariant subexpressions) to the outermost
// scope whose counters they do not reference. Requires cse to have run.
Kernel hoist_invariants(const Kernel& k);

// Splits batchable x loops into width-W batch blocks plus a scalar
// remainder; per-lane semantics equal scalar semantics.
Kernel vectorize(const Kernel& k, int W);

// --- accounting ----------------------------------------------------------

struct FlopCount {
  std::array<double, 6> perElement{}; // scalar flops of one element body, by orientation
  double total = 0.0;                 // one full application on the given mesh
  double batchOps = 0.0;              // like total, but a batch body counts once per block
};

// Counts +,-,*,/ (and negations) of float-valued expressions; integer index
// arithmetic is excluded. `total` covers all statement instances of a full
// application, including per-macro preambles.
FlopCount count_flops(const Kernel& k, int numMacros = 1);

// Static statement count (assignments, accumulations, loop headers).
long count_statements(const Kernel& k);

// Multiplications inside loop bodies whose operands reach a Jacobian
// parameter; zero once geometry has been fully tabulated.
long count_inner_geometry_muls(const Kernel& k);

// Deterministic C-syntax rendering; informational artifact, never compiled.
std::string emit_source(const Kernel& k);

} // namespace tetmf
