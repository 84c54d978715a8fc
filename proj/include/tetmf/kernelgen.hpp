#pragma once

#include "tetmf/ir.hpp"

namespace tetmf {

// Builds the raw kernel for one form: per element, the element-matrix
// entries are evaluated by quadrature and the local matrix-vector product is
// accumulated directly into the output field; no local matrix is
// materialized. Honors the structural flags S (symmetry), T (tabulation) and
// fQ (fused quadrature loop) of `opts`; CSE, hoisting and batching are
// separate passes.
Kernel build_kernel(Form form, Strategy strategy, const QuadratureRule& rule,
                    const OptimizationSet& opts, int level);

// Full pipeline: rule/strategy selection from the flags, build, cse, then
// hoisting and batching as requested.
Kernel generate_kernel(Form form, const OptimizationSet& opts, int level);

// Restricts entry evaluation to j <= i and reuses the computed entry for the
// mirrored one. Form must be symmetric with equal trial and test space.
Kernel exploit_symmetry(const Kernel& k);

enum class QuadMode { unrolled, fused };

// unrolled: quadrature points are instantiated as constants (wider CSE
// space); fused: one explicit q loop wraps all entry accumulations.
Kernel set_quadrature_mode(const Kernel& k, QuadMode mode);

// Swaps the P2V rule from its default degree (4, 11 points) to the reduced
// degree-2 rule (4 points). Errors for forms without a reduction.
Kernel under_integrate(const Kernel& k);

// Replaces micro-invariant factors of the entry sums by per-orientation
// table loads; constant-coefficient forms tabulate whole entry sums. Tables
// are filled per macro from the Jacobian parameters.
Kernel tabulate(const Kernel& k);

// Precomputed-local-matrix variant: `setup` stores n_loc^2 scalars per
// element into the matrix field, `apply` streams them and performs the
// local matrix-vector product only.
struct PrecomputePair {
  Kernel setup;
  Kernel apply;
};
PrecomputePair precompute_variant(Form form, int level);

} // namespace tetmf
