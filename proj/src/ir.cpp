#include "tetmf/ir.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace tetmf {

namespace {

constexpr std::uint8_t kFlagInt = 1, kFlagCounter = 2, kFlagField = 4, kFlagParam = 8,
                       kFlagTable = 16;

bool is_const(const ExprNode& n, double v) { return n.kind == ExprKind::Const && n.value == v; }

bool integral(double v) {
  return std::floor(v) == v && std::abs(v) <= 9007199254740992.0; // 2^53
}

} // namespace

std::size_t ExprPool::KeyHash::operator()(const std::array<std::uint64_t, 3>& k) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint64_t v : k) {
    h ^= v;
    h *= 0x100000001b3ULL;
    h ^= h >> 29;
  }
  return static_cast<std::size_t>(h);
}

ExprId ExprPool::intern(ExprNode n) {
  // propagate flags from children
  auto inherit = [&](ExprId c) {
    if (c != kNoExpr) n.flags |= nodes_[c].flags & (kFlagCounter | kFlagField | kFlagParam | kFlagTable);
  };
  if (n.kind != ExprKind::TempRef) {
    inherit(n.a);
    inherit(n.b);
  }

  std::array<std::uint64_t, 3> key;
  key[0] = (static_cast<std::uint64_t>(static_cast<std::uint8_t>(n.kind)) << 32) |
           static_cast<std::uint32_t>(n.a);
  key[1] = static_cast<std::uint64_t>(static_cast<std::uint32_t>(n.b)) << 32;
  if (n.kind == ExprKind::Const) {
    std::uint64_t bits;
    std::memcpy(&bits, &n.value, sizeof(bits));
    key[2] = bits;
    key[1] |= n.flags & kFlagInt; // integer and float constants stay distinct
  } else {
    key[2] = (static_cast<std::uint64_t>(static_cast<std::uint32_t>(n.aux)) << 32) |
             static_cast<std::uint32_t>(n.aux2);
  }

  auto it = interned_.find(key);
  if (it != interned_.end()) return it->second;
  const ExprId id = static_cast<ExprId>(nodes_.size());
  nodes_.push_back(n);
  interned_.emplace(key, id);
  return id;
}

ExprId ExprPool::constant(double v) {
  if (v == 0.0) v = 0.0; // normalize -0
  ExprNode n{ExprKind::Const};
  n.value = v;
  if (integral(v)) n.flags |= kFlagInt;
  return intern(n);
}

ExprId ExprPool::int_constant(std::int64_t v) { return constant(static_cast<double>(v)); }

ExprId ExprPool::counter(int id) {
  ExprNode n{ExprKind::Counter};
  n.aux = id;
  n.flags = kFlagInt | kFlagCounter;
  return intern(n);
}

ExprId ExprPool::param(int slot) {
  ExprNode n{ExprKind::Param};
  n.aux = slot;
  n.flags = kFlagParam;
  return intern(n);
}

ExprId ExprPool::field_load(int fieldSlot, int mapSlot, ExprId index) {
  ExprNode n{ExprKind::FieldLoad};
  n.a = index;
  n.aux = fieldSlot;
  n.aux2 = mapSlot;
  n.flags = kFlagField;
  return intern(n);
}

ExprId ExprPool::table_load(int tableId, ExprId index) {
  ExprNode n{ExprKind::TableLoad};
  n.a = index;
  n.aux = tableId;
  n.flags = kFlagTable;
  return intern(n);
}

ExprId ExprPool::temp_ref(int tempId) {
  ExprNode n{ExprKind::TempRef};
  n.aux = tempId;
  return intern(n);
}

ExprId ExprPool::add(ExprId x, ExprId y) {
  const ExprNode& nx = nodes_[x];
  const ExprNode& ny = nodes_[y];
  if (nx.kind == ExprKind::Const && ny.kind == ExprKind::Const) {
    ExprId r = constant(nx.value + ny.value);
    if (!(nx.is_integer() && ny.is_integer())) nodes_[r].flags &= ~kFlagInt;
    return r;
  }
  if (is_const(nx, 0.0)) return y;
  if (is_const(ny, 0.0)) return x;
  ExprNode n{ExprKind::Add};
  n.a = x;
  n.b = y;
  if (nx.is_integer() && ny.is_integer()) n.flags |= kFlagInt;
  return intern(n);
}

ExprId ExprPool::sub(ExprId x, ExprId y) {
  const ExprNode& nx = nodes_[x];
  const ExprNode& ny = nodes_[y];
  if (nx.kind == ExprKind::Const && ny.kind == ExprKind::Const) {
    ExprId r = constant(nx.value - ny.value);
    if (!(nx.is_integer() && ny.is_integer())) nodes_[r].flags &= ~kFlagInt;
    return r;
  }
  if (is_const(ny, 0.0)) return x;
  if (is_const(nx, 0.0)) return neg(y);
  ExprNode n{ExprKind::Sub};
  n.a = x;
  n.b = y;
  if (nx.is_integer() && ny.is_integer()) n.flags |= kFlagInt;
  return intern(n);
}

ExprId ExprPool::mul(ExprId x, ExprId y) {
  const ExprNode& nx = nodes_[x];
  const ExprNode& ny = nodes_[y];
  if (nx.kind == ExprKind::Const && ny.kind == ExprKind::Const) {
    ExprId r = constant(nx.value * ny.value);
    if (!(nx.is_integer() && ny.is_integer())) nodes_[r].flags &= ~kFlagInt;
    return r;
  }
  if (is_const(nx, 0.0) || is_const(ny, 0.0)) return constant(0.0);
  if (is_const(nx, 1.0)) return y;
  if (is_const(ny, 1.0)) return x;
  if (is_const(nx, -1.0)) return neg(y);
  if (is_const(ny, -1.0)) return neg(x);
  ExprNode n{ExprKind::Mul};
  n.a = x;
  n.b = y;
  if (nx.is_integer() && ny.is_integer()) n.flags |= kFlagInt;
  return intern(n);
}

ExprId ExprPool::div(ExprId x, ExprId y) {
  const ExprNode& nx = nodes_[x];
  const ExprNode& ny = nodes_[y];
  if (nx.kind == ExprKind::Const && ny.kind == ExprKind::Const && ny.value != 0.0)
    return constant(nx.value / ny.value);
  if (is_const(ny, 1.0)) return x;
  if (is_const(nx, 0.0)) return constant(0.0);
  ExprNode n{ExprKind::Div};
  n.a = x;
  n.b = y;
  return intern(n);
}

ExprId ExprPool::neg(ExprId x) {
  const ExprNode& nx = nodes_[x];
  if (nx.kind == ExprKind::Const) {
    ExprId r = constant(-nx.value);
    if (!nx.is_integer()) nodes_[r].flags &= ~kFlagInt;
    return r;
  }
  if (nx.kind == ExprKind::Neg) return nx.a;
  ExprNode n{ExprKind::Neg};
  n.a = x;
  if (nx.is_integer()) n.flags |= kFlagInt;
  return intern(n);
}

bool ExprPool::depends_on_counter(ExprId id, int counterId) const {
  const ExprNode& n = nodes_[id];
  if (!n.has_counter()) return false;
  if (n.kind == ExprKind::Counter) return n.aux == counterId;
  if (n.a != kNoExpr && depends_on_counter(n.a, counterId)) return true;
  if (n.b != kNoExpr && depends_on_counter(n.b, counterId)) return true;
  return false;
}

// --- OptimizationSet ---------------------------------------------------

std::string OptimizationSet::to_string() const {
  std::string s;
  if (S) s += 'S';
  if (V) s += 'V';
  if (U) s += 'U';
  if (I) s += 'I';
  if (C) s += 'C';
  if (fQ) s += "fQ";
  if (T) s += 'T';
  if (P) s += 'P';
  return s;
}

OptimizationSet OptimizationSet::parse(const std::string& s) {
  OptimizationSet o;
  for (std::size_t i = 0; i < s.size(); ++i) {
    switch (s[i]) {
      case 'S': o.S = true; break;
      case 'V': o.V = true; break;
      case 'I': o.I = true; break;
      case 'C': o.C = true; break;
      case 'U': o.U = true; break;
      case 'T': o.T = true; break;
      case 'P': o.P = true; break;
      case 'f':
        if (i + 1 < s.size() && s[i + 1] == 'Q') {
          o.fQ = true;
          ++i;
          break;
        }
        [[fallthrough]];
      default:
        throw std::invalid_argument(std::string("unknown optimization letter '") + s[i] +
                                    "' (valid: S, V, I, C, U, fQ, T, P)");
    }
  }
  return o;
}

void OptimizationSet::validate(Form f) const {
  if (U && f != Form::P2VDiffusion)
    throw std::invalid_argument("under-integration (U) is only available for P2V");
  if (P && (S || V || I || C || U || fQ || T))
    throw std::invalid_argument("precomputation (P) is a standalone variant");
  if (V && W < 2) throw std::invalid_argument("batch width W must be >= 2");
}

std::int64_t Kernel::tabulated_scalar_count() const {
  std::int64_t s = 0;
  for (const auto& t : tables)
    if (t.tabulated) s += t.size();
  return s;
}

std::int64_t Kernel::table_bytes() const { return 8 * tabulated_scalar_count(); }

// --- CSE ---------------------------------------------------------------

namespace {

bool cse_candidate(const ExprNode& n) {
  if (n.is_integer()) return false;
  switch (n.kind) {
    case ExprKind::Add:
    case ExprKind::Sub:
    case ExprKind::Mul:
    case ExprKind::Div:
    case ExprKind::Neg:
    case ExprKind::FieldLoad:
    case ExprKind::TableLoad:
      return true;
    default:
      return false;
  }
}

class CsePass {
public:
  CsePass(ExprPool& pool, int& tempCounter) : pool_(pool), temps_(tempCounter) {}

  void run(std::vector<Stmt>& stmts) {
    for (Stmt& s : stmts)
      if (s.kind == Stmt::Kind::Loop || s.kind == Stmt::Kind::Batch) run(s.body);

    refs_.clear();
    tempOf_.clear();
    for (const Stmt& s : stmts)
      if (s.kind == Stmt::Kind::TempAssign || s.kind == Stmt::Kind::Accumulate) count(s.value);

    std::vector<Stmt> out;
    out.reserve(stmts.size());
    for (Stmt& s : stmts) {
      if (s.kind == Stmt::Kind::TempAssign || s.kind == Stmt::Kind::Accumulate) {
        rewritten_.clear();
        s.value = rewrite(s.value, s.orientTag, out);
      }
      out.push_back(std::move(s));
    }
    stmts = std::move(out);
  }

private:
  void count(ExprId id) {
    const ExprNode& n = pool_.node(id);
    if (n.is_integer()) return;
    auto [it, first] = refs_.try_emplace(id, 0);
    ++it->second;
    if (!first) return;
    if (n.kind == ExprKind::TempRef) return;
    if (n.a != kNoExpr) count(n.a);
    if (n.b != kNoExpr) count(n.b);
  }

  ExprId rewrite(ExprId id, int tag, std::vector<Stmt>& out) {
    const ExprNode n = pool_.node(id);
    if (n.is_integer() || n.kind == ExprKind::Const || n.kind == ExprKind::Counter ||
        n.kind == ExprKind::Param || n.kind == ExprKind::TempRef)
      return id;

    if (auto it = tempOf_.find(id); it != tempOf_.end()) return pool_.temp_ref(it->second);
    if (auto it = rewritten_.find(id); it != rewritten_.end()) return it->second;

    ExprId a = n.a, b = n.b;
    if (n.kind != ExprKind::FieldLoad && n.kind != ExprKind::TableLoad) {
      if (a != kNoExpr) a = rewrite(a, tag, out);
      if (b != kNoExpr) b = rewrite(b, tag, out);
    }
    ExprId r = id;
    if (a != n.a || b != n.b) {
      switch (n.kind) {
        case ExprKind::Add: r = pool_.add(a, b); break;
        case ExprKind::Sub: r = pool_.sub(a, b); break;
        case ExprKind::Mul: r = pool_.mul(a, b); break;
        case ExprKind::Div: r = pool_.div(a, b); break;
        case ExprKind::Neg: r = pool_.neg(a); break;
        default: break;
      }
    }

    if (cse_candidate(n) && refs_[id] >= 2) {
      const int t = temps_++;
      Stmt def;
      def.kind = Stmt::Kind::TempAssign;
      def.temp = t;
      def.value = r;
      def.orientTag = tag;
      out.push_back(std::move(def));
      tempOf_.emplace(id, t);
      return pool_.temp_ref(t);
    }
    rewritten_.emplace(id, r);
    return r;
  }

  ExprPool& pool_;
  int& temps_;
  std::unordered_map<ExprId, int> refs_;
  std::unordered_map<ExprId, int> tempOf_;
  std::unordered_map<ExprId, ExprId> rewritten_;
};

} // namespace

Kernel cse(const Kernel& k) {
  Kernel out = k;
  CsePass pass(out.pool, out.numTemps);
  pass.run(out.body);
  out.cseApplied = true;
  return out;
}

// --- loop-invariant motion ----------------------------------------------

namespace {

class HoistPass {
public:
  HoistPass(ExprPool& pool, int& tempCounter) : pool_(pool), temps_(tempCounter) {}

  void run(std::vector<Stmt>& stmts) { process_scope(stmts); }

private:
  void process_scope(std::vector<Stmt>& stmts) {
    std::vector<Stmt> out;
    out.reserve(stmts.size());
    for (Stmt& s : stmts) {
      if (s.kind != Stmt::Kind::Loop && s.kind != Stmt::Kind::Batch) {
        out.push_back(std::move(s));
        continue;
      }
      process_scope(s.body);

      // temps defined in this body that (transitively) vary with the counter
      varying_.clear();
      for (const Stmt& b : s.body)
        if (b.kind == Stmt::Kind::TempAssign && depends(b.value, s.counter))
          varying_.emplace(b.temp, 1);

      std::vector<Stmt> kept;
      for (Stmt& b : s.body) {
        const bool movable = b.kind == Stmt::Kind::TempAssign && !depends(b.value, s.counter);
        if (movable)
          out.push_back(std::move(b));
        else
          kept.push_back(std::move(b));
      }

      // extract maximal invariant subtrees of the remaining statements
      for (Stmt& b : kept)
        if (b.kind == Stmt::Kind::TempAssign || b.kind == Stmt::Kind::Accumulate)
          b.value = extract(b.value, s.counter, b.orientTag, out);

      s.body = std::move(kept);
      out.push_back(std::move(s));
    }
    stmts = std::move(out);
  }

  bool depends(ExprId id, int counterId) {
    const ExprNode& n = pool_.node(id);
    if (n.kind == ExprKind::TempRef) return varying_.count(n.aux) > 0;
    if (n.kind == ExprKind::Counter) return n.aux == counterId;
    if (n.a != kNoExpr && depends(n.a, counterId)) return true;
    if (n.b != kNoExpr && depends(n.b, counterId)) return true;
    return false;
  }

  ExprId extract(ExprId id, int counterId, int tag, std::vector<Stmt>& out) {
    const ExprNode n = pool_.node(id);
    const bool extractable =
        !n.is_integer() &&
        (n.kind == ExprKind::Add || n.kind == ExprKind::Sub || n.kind == ExprKind::Mul ||
         n.kind == ExprKind::Div || n.kind == ExprKind::Neg || n.kind == ExprKind::TableLoad);
    if (extractable && !depends(id, counterId)) {
      auto it = hoistedTemp_.find(id);
      if (it != hoistedTemp_.end()) return pool_.temp_ref(it->second);
      const int t = temps_++;
      Stmt def;
      def.kind = Stmt::Kind::TempAssign;
      def.temp = t;
      def.value = id;
      def.orientTag = tag;
      out.push_back(std::move(def));
      hoistedTemp_.emplace(id, t);
      return pool_.temp_ref(t);
    }
    if (n.kind == ExprKind::TempRef || n.kind == ExprKind::Const ||
        n.kind == ExprKind::Counter || n.kind == ExprKind::Param)
      return id;
    ExprId a = n.a, b = n.b;
    if (n.kind == ExprKind::FieldLoad || n.kind == ExprKind::TableLoad) return id;
    if (a != kNoExpr) a = extract(a, counterId, tag, out);
    if (b != kNoExpr) b = extract(b, counterId, tag, out);
    if (a == n.a && b == n.b) return id;
    switch (n.kind) {
      case ExprKind::Add: return pool_.add(a, b);
      case ExprKind::Sub: return pool_.sub(a, b);
      case ExprKind::Mul: return pool_.mul(a, b);
      case ExprKind::Div: return pool_.div(a, b);
      case ExprKind::Neg: return pool_.neg(a);
      default: return id;
    }
  }

  ExprPool& pool_;
  int& temps_;
  std::unordered_map<ExprId, int> hoistedTemp_;
  std::unordered_map<std::int32_t, char> varying_;
};

} // namespace

Kernel hoist_invariants(const Kernel& k) {
  if (!k.cseApplied)
    throw std::logic_error("hoist_invariants: run cse first");
  Kernel out = k;
  HoistPass pass(out.pool, out.numTemps);
  pass.run(out.body);
  return out;
}

// --- batching --------------------------------------------------------------

namespace {

void vectorize_scope(std::vector<Stmt>& stmts, int W) {
  for (Stmt& s : stmts) {
    if (s.kind == Stmt::Kind::Loop || s.kind == Stmt::Kind::Batch) {
      vectorize_scope(s.body, W);
      if (s.kind == Stmt::Kind::Loop && s.batchable) {
        s.kind = Stmt::Kind::Batch;
        s.width = W;
      }
    }
  }
}

} // namespace

Kernel vectorize(const Kernel& k, int W) {
  if (W < 2) throw std::invalid_argument("vectorize: width must be >= 2");
  Kernel out = k;
  vectorize_scope(out.body, W);
  out.opts.V = true;
  out.opts.W = W;
  return out;
}

// --- accounting --------------------------------------------------------

namespace {

class FlopCounter {
public:
  explicit FlopCounter(const Kernel& k) : k_(k) {}

  FlopCount run(int numMacros) {
    FlopCount out;
    env_.assign(8, 0);
    walk(k_.body, 1.0, out);
    out.total *= numMacros;
    out.batchOps *= numMacros;
    for (int o = 0; o < 6; ++o) out.perElement[o] = perElem_[o];
    return out;
  }

private:
  double static_flops(ExprId id) {
    auto it = flopMemo_.find(id);
    if (it != flopMemo_.end()) return it->second;
    const ExprNode& n = k_.pool.node(id);
    double f = 0.0;
    if (!n.is_integer()) {
      switch (n.kind) {
        case ExprKind::Add:
        case ExprKind::Sub:
        case ExprKind::Mul:
        case ExprKind::Div:
        case ExprKind::Neg:
          f = 1.0;
          break;
        default:
          break;
      }
      if (n.kind != ExprKind::TempRef && n.kind != ExprKind::FieldLoad &&
          n.kind != ExprKind::TableLoad) {
        if (n.a != kNoExpr) f += static_flops(n.a);
        if (n.b != kNoExpr) f += static_flops(n.b);
      }
    }
    flopMemo_.emplace(id, f);
    return f;
  }

  std::int64_t eval_int(ExprId id) {
    const ExprNode& n = k_.pool.node(id);
    switch (n.kind) {
      case ExprKind::Const: return static_cast<std::int64_t>(n.value);
      case ExprKind::Counter: return env_[n.aux];
      case ExprKind::Add: return eval_int(n.a) + eval_int(n.b);
      case ExprKind::Sub: return eval_int(n.a) - eval_int(n.b);
      case ExprKind::Mul: return eval_int(n.a) * eval_int(n.b);
      case ExprKind::Neg: return -eval_int(n.a);
      default: throw std::logic_error("count_flops: non-integer loop extent");
    }
  }

  bool extents_depend_on(const std::vector<Stmt>& stmts, int counterId) {
    for (const Stmt& s : stmts) {
      if (s.kind != Stmt::Kind::Loop && s.kind != Stmt::Kind::Batch) continue;
      if (k_.pool.depends_on_counter(s.extent, counterId)) return true;
      if (extents_depend_on(s.body, counterId)) return true;
    }
    return false;
  }

  void record_representative(const std::vector<Stmt>& body) {
    std::array<double, 6> sums{};
    std::array<bool, 6> seen{};
    for (const Stmt& s : body) {
      if (s.orientTag < 0) continue;
      if (s.kind == Stmt::Kind::TempAssign || s.kind == Stmt::Kind::Accumulate) {
        sums[s.orientTag] += static_flops(s.value);
        seen[s.orientTag] = true;
      } else {
        // fused quadrature loop inside the element body
        for (const Stmt& b : s.body)
          if (b.orientTag >= 0 &&
              (b.kind == Stmt::Kind::TempAssign || b.kind == Stmt::Kind::Accumulate)) {
            sums[b.orientTag] += static_flops(b.value) * static_cast<double>(eval_int(s.extent));
            seen[b.orientTag] = true;
          }
      }
    }
    for (int o = 0; o < 6; ++o)
      if (seen[o] && !perElemSeen_[o]) {
        perElem_[o] = sums[o];
        perElemSeen_[o] = true;
      }
  }

  void walk(const std::vector<Stmt>& stmts, double mult, FlopCount& out) {
    for (const Stmt& s : stmts) {
      switch (s.kind) {
        case Stmt::Kind::TempAssign:
        case Stmt::Kind::Accumulate: {
          const double f = static_flops(s.value) * mult;
          out.total += f;
          out.batchOps += f;
          break;
        }
        case Stmt::Kind::Loop:
        case Stmt::Kind::Batch: {
          if (s.counter == kX) record_representative(s.body);
          const bool varies = extents_depend_on(s.body, s.counter);
          const std::int64_t extent = std::max<std::int64_t>(eval_int(s.extent), 0);
          if (varies) {
            for (std::int64_t i = 0; i < extent; ++i) {
              env_[s.counter] = i;
              walk(s.body, mult, out);
            }
          } else {
            env_[s.counter] = 0;
            if (s.kind == Stmt::Kind::Batch && s.width > 1) {
              FlopCount inner;
              walk(s.body, 1.0, inner);
              out.total += inner.total * static_cast<double>(extent) * mult;
              const std::int64_t blocks = extent / s.width;
              const std::int64_t rem = extent % s.width;
              out.batchOps += inner.batchOps * static_cast<double>(blocks + rem) * mult;
            } else {
              walk(s.body, mult * static_cast<double>(extent), out);
            }
          }
          break;
        }
      }
    }
  }

  const Kernel& k_;
  std::vector<std::int64_t> env_;
  std::unordered_map<ExprId, double> flopMemo_;
  std::array<double, 6> perElem_{};
  std::array<bool, 6> perElemSeen_{};
};

} // namespace

FlopCount count_flops(const Kernel& k, int numMacros) {
  FlopCounter counter(k);
  return counter.run(numMacros);
}

namespace {

long count_statements_rec(const std::vector<Stmt>& stmts) {
  long n = 0;
  for (const Stmt& s : stmts) {
    ++n;
    if (s.kind == Stmt::Kind::Loop || s.kind == Stmt::Kind::Batch)
      n += count_statements_rec(s.body);
  }
  return n;
}

void geometry_muls(const Kernel& k, const std::vector<Stmt>& stmts, bool inLoop, long& count) {
  for (const Stmt& s : stmts) {
    if (s.kind == Stmt::Kind::Loop || s.kind == Stmt::Kind::Batch) {
      geometry_muls(k, s.body, true, count);
      continue;
    }
    if (!inLoop) continue;
    // count Mul nodes whose subtree reaches a Jacobian parameter
    std::vector<ExprId> stack = {s.value};
    while (!stack.empty()) {
      const ExprId id = stack.back();
      stack.pop_back();
      const ExprNode& n = k.pool.node(id);
      if (n.kind == ExprKind::TempRef || n.is_integer()) continue;
      if (n.kind == ExprKind::Mul && n.has_param()) ++count;
      if (n.kind == ExprKind::FieldLoad || n.kind == ExprKind::TableLoad) continue;
      if (n.a != kNoExpr) stack.push_back(n.a);
      if (n.b != kNoExpr) stack.push_back(n.b);
    }
  }
}

} // namespace

long count_statements(const Kernel& k) { return count_statements_rec(k.body); }

long count_inner_geometry_muls(const Kernel& k) {
  long count = 0;
  geometry_muls(k, k.body, false, count);
  return count;
}

// --- source emission -----------------------------------------------------

namespace {

class Emitter {
public:
  explicit Emitter(const Kernel& k) : k_(k) {}

  std::string run() {
    out_.clear();
    line("// generated matrix-free kernel");
    line("// form=" + weak_form(k_.form).name + " opts=" + k_.opts.to_string() +
         " strategy=" + std::string(to_string(k_.strategy)) +
         " level=" + std::to_string(k_.level) + " quad_points=" + std::to_string(k_.rule.num_points()));
    for (const auto& t : k_.tables) {
      std::string dims;
      for (int d : t.dims) dims += "[" + std::to_string(d) + "]";
      line("// table " + t.name + dims + (t.builtin ? " (rule constants)" : " (filled per macro)"));
    }
    line("");
    line("static inline double ld(const double* f, const int* m, long i) {");
    line("  const int e = m[i];");
    line("  return e < 0 ? -f[-e - 1] : f[e - 1];");
    line("}");
    line("static inline void acc(double* f, const int* m, long i, double v) {");
    line("  const int e = m[i];");
    line("  if (e < 0) f[-e - 1] -= v; else f[e - 1] += v;");
    line("}");
    line("");
    emit_tables();
    line("void kernel_apply(const double* v, double* w, const double* c0, const double* c1,");
    line("                  const double* mat, double* mat_out, const int* map0, const int* map1,");
    line("                  const double* jp, const double* const* tab) {");
    indent_ = 1;
    emit_stmts(k_.body);
    indent_ = 0;
    line("}");
    return out_;
  }

private:
  void line(const std::string& s) {
    for (int i = 0; i < indent_; ++i) out_ += "  ";
    out_ += s;
    out_ += '\n';
  }

  static std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
  }

  void emit_tables() {
    for (std::size_t ti = 0; ti < k_.tables.size(); ++ti) {
      const TableSpec& t = k_.tables[ti];
      if (t.builtin) {
        std::string s = "static const double " + t.name + "[" + std::to_string(t.size()) + "] = {";
        for (std::size_t i = 0; i < t.values.size(); ++i) {
          if (i) s += ", ";
          s += fmt(t.values[i]);
        }
        s += "};";
        line(s);
      } else {
        line("// " + t.name + ": " + std::to_string(t.size()) +
             " scalars, filled per macro by kernel_fill_tables");
      }
    }
    bool anyFill = false;
    for (const auto& t : k_.tables) anyFill |= !t.builtin;
    if (anyFill) {
      line("");
      line("void kernel_fill_tables(const double* jp, double* const* tab) {");
      indent_ = 1;
      for (std::size_t ti = 0; ti < k_.tables.size(); ++ti) {
        const TableSpec& t = k_.tables[ti];
        if (t.builtin) continue;
        for (std::size_t i = 0; i < t.fill.size(); ++i)
          line("tab[" + std::to_string(ti) + "][" + std::to_string(i) + "] = " +
               expr(t.fill[i]) + ";");
      }
      indent_ = 0;
      line("}");
      line("");
    }
  }

  std::string field_name(int slot) {
    switch (slot) {
      case kFieldV: return "v";
      case kFieldW: return "w";
      case kFieldC0: return "c0";
      case kFieldC1: return "c1";
      case kFieldMat: return "mat";
      default: return "f?";
    }
  }

  std::string expr(ExprId id) {
    const ExprNode& n = k_.pool.node(id);
    switch (n.kind) {
      case ExprKind::Const: {
        if (n.is_integer() && std::abs(n.value) < 1e15) {
          char buf[32];
          std::snprintf(buf, sizeof(buf), "%lld", static_cast<long long>(n.value));
          return buf;
        }
        return fmt(n.value);
      }
      case ExprKind::Counter:
        switch (n.aux) {
          case kZ: return "z";
          case kY: return "y";
          case kX: return "x";
          case kQ: return "q";
          default: return "c?";
        }
      case ExprKind::Param: return "jp[" + std::to_string(n.aux) + "]";
      case ExprKind::TempRef: return "t" + std::to_string(n.aux);
      case ExprKind::FieldLoad:
        if (n.aux2 < 0) return field_name(n.aux) + "[(long)(" + expr(n.a) + ")]";
        return "ld(" + field_name(n.aux) + ", map" + std::to_string(n.aux2) + ", (long)(" +
               expr(n.a) + "))";
      case ExprKind::TableLoad:
        return "tab[" + std::to_string(n.aux) + "][(long)(" + expr(n.a) + ")]";
      case ExprKind::Add: return "(" + expr(n.a) + " + " + expr(n.b) + ")";
      case ExprKind::Sub: return "(" + expr(n.a) + " - " + expr(n.b) + ")";
      case ExprKind::Mul: return "(" + expr(n.a) + " * " + expr(n.b) + ")";
      case ExprKind::Div: return "(" + expr(n.a) + " / " + expr(n.b) + ")";
      case ExprKind::Neg: return "(-" + expr(n.a) + ")";
    }
    return "?";
  }

  static std::string counter_name(int c) {
    switch (c) {
      case kZ: return "z";
      case kY: return "y";
      case kX: return "x";
      case kQ: return "q";
      default: return "c";
    }
  }

  void emit_stmts(const std::vector<Stmt>& stmts) {
    for (const Stmt& s : stmts) {
      switch (s.kind) {
        case Stmt::Kind::TempAssign:
          line("const double t" + std::to_string(s.temp) + " = " + expr(s.value) + ";");
          break;
        case Stmt::Kind::Accumulate: {
          std::string value = expr(s.value);
          if (s.sign < 0) value = "-" + value;
          if (s.mapSlot < 0) {
            line(field_name(s.fieldSlot) + "[(long)(" + expr(s.index) + ")] += " + value + ";");
          } else {
            line("acc(" + field_name(s.fieldSlot) + ", map" + std::to_string(s.mapSlot) +
                 ", (long)(" + expr(s.index) + "), " + value + ");");
          }
          break;
        }
        case Stmt::Kind::Loop: {
          const std::string c = counter_name(s.counter);
          line("for (long " + c + " = 0; " + c + " < " + expr(s.extent) + "; ++" + c + ") {");
          ++indent_;
          emit_stmts(s.body);
          --indent_;
          line("}");
          break;
        }
        case Stmt::Kind::Batch: {
          const std::string c = counter_name(s.counter);
          const std::string w = std::to_string(s.width);
          const std::string ext = expr(s.extent);
          line("for (long " + c + "b = 0; " + c + "b + " + w + " <= " + ext + "; " + c +
               "b += " + w + ") {");
          ++indent_;
          line("for (long lane = 0; lane < " + w + "; ++lane) {");
          ++indent_;
          line("const long " + c + " = " + c + "b + lane;");
          emit_stmts(s.body);
          --indent_;
          line("}");
          --indent_;
          line("}");
          line("for (long " + c + " = (" + ext + ") / " + w + " * " + w + "; " + c + " < " + ext +
               "; ++" + c + ") {");
          ++indent_;
          emit_stmts(s.body);
          --indent_;
          line("}");
          break;
        }
      }
    }
  }

  const Kernel& k_;
  std::string out_;
  int indent_ = 0;
};

} // namespace

std::string emit_source(const Kernel& k) {
  Emitter e(k);
  return e.run();
}

} // namespace tetmf
