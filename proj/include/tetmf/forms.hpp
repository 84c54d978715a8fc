#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tetmf/fespace.hpp"
#include "tetmf/mesh.hpp"
#include "tetmf/quadrature.hpp"

namespace tetmf {

enum class Form { P1Diffusion, P2VDiffusion, N1CurlCurlMass };

struct WeakForm {
  Form id;
  std::string name;                // CLI name: P1, P2V, N1
  Space trial, test;
  std::vector<Space> coeffSpaces;  // {} / {P2} / {P1, P1}
  int exactDegree;                 // total degree of the integrand
  int defaultDegree;               // default quadrature degree
  int underIntegrateDegree;        // reduced degree, -1 if not applicable
  bool symmetric;
};

const WeakForm& weak_form(Form f);
Form form_from_string(const std::string& name);

struct LocalMatrix {
  Eigen::MatrixXd mat;    // (j, i) = (test, trial)
  MicroElement element;
};

// Est. bytes of a sparse system matrix; the utility behind "why matrix-free".
std::uint64_t sparse_matrix_bytes(std::uint64_t nnzPerRow, std::uint64_t rows,
                                  std::uint64_t bytesPerEntry);

// Assembles and applies one weak form on a refined mesh with straightforward
// per-element quadrature. This is the ground truth every generated kernel is
// checked against, so it deliberately shares no code with the kernel IR path.
class FormSystem {
public:
  FormSystem(Form form, const MacroMesh& mesh, int level);

  const WeakForm& form() const { return form_; }
  const MacroMesh& mesh() const { return *mesh_; }
  int level() const { return level_; }
  const DoFIndexer& primary() const { return *primary_; }
  const DoFIndexer& coeff_indexer(int c) const { return *coeffIdx_.at(c); }
  std::int64_t num_dofs() const { return primary_->num_dofs(); }

  // coeffs must hold one field per coefficient space of the form
  LocalMatrix local_matrix(const MicroElement& e,
                           const std::vector<const FieldVector*>& coeffs,
                           const QuadratureRule& rule) const;

  void local_apply(const MicroElement& e, const FieldVector& v, FieldVector& w,
                   const std::vector<const FieldVector*>& coeffs,
                   const QuadratureRule& rule) const;

  // One full operator application with the given rule, sawtooth order.
  FieldVector apply(const FieldVector& v, const std::vector<const FieldVector*>& coeffs,
                    const QuadratureRule& rule) const;

  // Oracle application: over-integrated with degree exactDegree + 2.
  FieldVector reference_apply(const FieldVector& v,
                              const std::vector<const FieldVector*>& coeffs) const;

  QuadratureRule default_rule() const { return quadrature(form_.defaultDegree); }

private:
  struct StarTables; // per (macro, orientation, rule) pulled-back factors

  const StarTables& stars(int macroId, Orientation o, const QuadratureRule& rule) const;
  void check_coeffs(const std::vector<const FieldVector*>& coeffs) const;

  WeakForm form_;
  const MacroMesh* mesh_;
  int level_;
  std::unique_ptr<DoFIndexer> primary_;
  std::vector<std::unique_ptr<DoFIndexer>> coeffIdx_;

  mutable std::vector<std::unique_ptr<StarTables>> starCache_;
  mutable int starCacheDegree_ = -1;
};

} // namespace tetmf
