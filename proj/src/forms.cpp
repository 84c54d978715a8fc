#include "tetmf/forms.hpp"

#include <cmath>
#include <stdexcept>

namespace tetmf {

namespace {

const WeakForm kForms[3] = {
    {Form::P1Diffusion, "P1", Space::P1, Space::P1, {}, 0, 1, -1, true},
    {Form::P2VDiffusion, "P2V", Space::P2, Space::P2, {Space::P2}, 4, 4, 2, true},
    {Form::N1CurlCurlMass, "N1", Space::ND1, Space::ND1, {Space::P1, Space::P1}, 3, 2, -1, true},
};

} // namespace

const WeakForm& weak_form(Form f) { return kForms[static_cast<int>(f)]; }

Form form_from_string(const std::string& name) {
  for (const auto& f : kForms)
    if (f.name == name) return f.id;
  throw std::invalid_argument("unknown form '" + name + "' (expected P1, P2V or N1)");
}

std::uint64_t sparse_matrix_bytes(std::uint64_t nnzPerRow, std::uint64_t rows,
                                  std::uint64_t bytesPerEntry) {
  return nnzPerRow * rows * bytesPerEntry;
}

// Pulled-back integrand factors of one (macro, orientation): everything the
// entry sums need except the micro-varying coefficient values.
struct FormSystem::StarTables {
  int macroId = -1;
  Orientation orientation = Orientation::WU;
  // starA: primary term (gradient dot or curl dot), starB: N1 mass term;
  // layout [q * nloc * nloc + j * nloc + i]
  std::vector<double> starA, starB;
  // coefficient-space basis values at the quadrature points [q][m]
  std::vector<double> coeffBasis;
};

FormSystem::FormSystem(Form form, const MacroMesh& mesh, int level)
    : form_(weak_form(form)), mesh_(&mesh), level_(level) {
  primary_ = std::make_unique<DoFIndexer>(form_.trial, mesh, level);
  for (Space s : form_.coeffSpaces) {
    // coefficient spaces repeat for N1; share the indexer
    if (!coeffIdx_.empty() && coeffIdx_.back()->space() == s) {
      coeffIdx_.push_back(nullptr);
      continue;
    }
    coeffIdx_.push_back(std::make_unique<DoFIndexer>(s, mesh, level));
  }
  for (std::size_t c = 0; c < coeffIdx_.size(); ++c)
    if (!coeffIdx_[c]) coeffIdx_[c] = std::make_unique<DoFIndexer>(form_.coeffSpaces[c], mesh, level);
}

void FormSystem::check_coeffs(const std::vector<const FieldVector*>& coeffs) const {
  if (coeffs.size() != form_.coeffSpaces.size())
    throw std::invalid_argument("form " + form_.name + " expects " +
                                std::to_string(form_.coeffSpaces.size()) + " coefficient field(s)");
  for (std::size_t c = 0; c < coeffs.size(); ++c) {
    if (!coeffs[c]) throw std::invalid_argument("missing coefficient field");
    if (coeffs[c]->space != form_.coeffSpaces[c] || coeffs[c]->level != level_)
      throw std::invalid_argument("coefficient field has wrong space or level");
  }
}

const FormSystem::StarTables& FormSystem::stars(int macroId, Orientation o,
                                                const QuadratureRule& rule) const {
  if (starCacheDegree_ != rule.degree) {
    starCache_.clear();
    starCache_.resize(static_cast<std::size_t>(mesh_->num_tets()) * 6);
    starCacheDegree_ = rule.degree;
  }
  auto& slot = starCache_[static_cast<std::size_t>(macroId) * 6 + static_cast<int>(o)];
  if (slot) return *slot;

  auto tables = std::make_unique<StarTables>();
  tables->macroId = macroId;
  tables->orientation = o;

  const ElementMap map = micro_jacobian(*mesh_, macroId, level_, o);
  const double absdet = std::abs(map.det);
  const Mat3 jinvT = map.J.inverse().transpose();
  const int nloc = local_dof_count(form_.trial);
  const int nq = rule.num_points();

  tables->starA.assign(static_cast<std::size_t>(nq) * nloc * nloc, 0.0);
  if (form_.id == Form::N1CurlCurlMass)
    tables->starB.assign(static_cast<std::size_t>(nq) * nloc * nloc, 0.0);

  for (int q = 0; q < nq; ++q) {
    const Vec3& x = rule.points[q];
    const double wdet = rule.weights[q] * absdet;
    if (form_.id == Form::N1CurlCurlMass) {
      std::array<Vec3, 6> curls, vals;
      for (int i = 0; i < 6; ++i) {
        curls[i] = (1.0 / map.det) * (map.J * eval_curl_nd1(i));
        vals[i] = jinvT * eval_basis_nd1(i, x);
      }
      for (int j = 0; j < nloc; ++j)
        for (int i = 0; i < nloc; ++i) {
          tables->starA[(static_cast<std::size_t>(q) * nloc + j) * nloc + i] =
              wdet * curls[i].dot(curls[j]);
          tables->starB[(static_cast<std::size_t>(q) * nloc + j) * nloc + i] =
              wdet * vals[i].dot(vals[j]);
        }
    } else {
      std::array<Vec3, 10> grads;
      for (int i = 0; i < nloc; ++i) grads[i] = jinvT * eval_grad(form_.trial, i, x);
      for (int j = 0; j < nloc; ++j)
        for (int i = 0; i < nloc; ++i)
          tables->starA[(static_cast<std::size_t>(q) * nloc + j) * nloc + i] =
              wdet * grads[i].dot(grads[j]);
    }
  }

  if (!form_.coeffSpaces.empty()) {
    const Space ks = form_.coeffSpaces[0];
    const int nk = local_dof_count(ks);
    tables->coeffBasis.assign(static_cast<std::size_t>(nq) * nk, 0.0);
    for (int q = 0; q < nq; ++q)
      for (int m = 0; m < nk; ++m)
        tables->coeffBasis[static_cast<std::size_t>(q) * nk + m] =
            eval_basis(ks, m, rule.points[q]);
  }

  slot = std::move(tables);
  return *slot;
}

LocalMatrix FormSystem::local_matrix(const MicroElement& e,
                                     const std::vector<const FieldVector*>& coeffs,
                                     const QuadratureRule& rule) const {
  check_coeffs(coeffs);
  const int nloc = local_dof_count(form_.trial);
  const int nq = rule.num_points();
  const StarTables& st = stars(e.macroId, e.orientation, rule);

  LocalMatrix out;
  out.element = e;
  out.mat = Eigen::MatrixXd::Zero(nloc, nloc);

  // micro-varying coefficient values at the quadrature points
  std::array<double, 16> cq{};  // first coefficient (k or alpha)
  std::array<double, 16> cq2{}; // second coefficient (beta)
  if (!coeffs.empty()) {
    const DoFIndexer& kIdx = *coeffIdx_[0];
    const auto kloc = kIdx.local_dofs(e);
    const int nk = kloc.count;
    for (int q = 0; q < nq; ++q) {
      double a = 0.0, b = 0.0;
      for (int m = 0; m < nk; ++m) {
        const double phi = st.coeffBasis[static_cast<std::size_t>(q) * nk + m];
        a += coeffs[0]->data[kloc.ids[m]] * phi;
        if (coeffs.size() > 1) b += coeffs[1]->data[kloc.ids[m]] * phi;
      }
      cq[q] = a;
      cq2[q] = b;
    }
  } else {
    for (int q = 0; q < nq; ++q) cq[q] = 1.0;
  }

  for (int q = 0; q < nq; ++q) {
    const double* sa = st.starA.data() + static_cast<std::size_t>(q) * nloc * nloc;
    for (int j = 0; j < nloc; ++j)
      for (int i = 0; i < nloc; ++i) out.mat(j, i) += cq[q] * sa[j * nloc + i];
    if (!st.starB.empty()) {
      const double* sb = st.starB.data() + static_cast<std::size_t>(q) * nloc * nloc;
      for (int j = 0; j < nloc; ++j)
        for (int i = 0; i < nloc; ++i) out.mat(j, i) += cq2[q] * sb[j * nloc + i];
    }
  }
  return out;
}

void FormSystem::local_apply(const MicroElement& e, const FieldVector& v, FieldVector& w,
                             const std::vector<const FieldVector*>& coeffs,
                             const QuadratureRule& rule) const {
  if (v.space != form_.trial || w.space != form_.test || v.level != level_ || w.level != level_)
    throw std::invalid_argument("local_apply: field shape mismatch");
  const LocalMatrix a = local_matrix(e, coeffs, rule);
  const auto dofs = primary_->local_dofs(e);
  const int nloc = dofs.count;
  for (int j = 0; j < nloc; ++j) {
    double acc = 0.0;
    for (int i = 0; i < nloc; ++i)
      acc += a.mat(j, i) * dofs.signs[i] * v.data[dofs.ids[i]];
    w.data[dofs.ids[j]] += dofs.signs[j] * acc;
  }
}

FieldVector FormSystem::apply(const FieldVector& v, const std::vector<const FieldVector*>& coeffs,
                              const QuadratureRule& rule) const {
  check_coeffs(coeffs);
  if (v.space != form_.trial || v.level != level_ ||
      v.data.size() != static_cast<std::size_t>(primary_->num_dofs()))
    throw std::invalid_argument("apply: field shape mismatch");

  FieldVector w{form_.test, level_, std::vector<double>(primary_->num_dofs(), 0.0)};

  const int nloc = local_dof_count(form_.trial);
  const int nq = rule.num_points();
  std::vector<double> aq(static_cast<std::size_t>(nq), 0.0);
  std::vector<double> bq(static_cast<std::size_t>(nq), 0.0);
  std::vector<double> entries(static_cast<std::size_t>(nloc) * nloc, 0.0);

  for (int m = 0; m < mesh_->num_tets(); ++m) {
    const TraversalOrder order = enumerate_elements(Strategy::sawtooth, m, level_);
    for (const MicroElement& e : order.elements) {
      const StarTables& st = stars(m, e.orientation, rule);
      const auto dofs = primary_->local_dofs(e);

      if (!coeffs.empty()) {
        const auto kloc = coeffIdx_[0]->local_dofs(e);
        const int nk = kloc.count;
        for (int q = 0; q < nq; ++q) {
          double a = 0.0, b = 0.0;
          const double* phi = st.coeffBasis.data() + static_cast<std::size_t>(q) * nk;
          for (int km = 0; km < nk; ++km) {
            a += coeffs[0]->data[kloc.ids[km]] * phi[km];
            if (coeffs.size() > 1) b += coeffs[1]->data[kloc.ids[km]] * phi[km];
          }
          aq[q] = a;
          bq[q] = b;
        }
      } else {
        for (int q = 0; q < nq; ++q) aq[q] = 1.0;
      }

      std::fill(entries.begin(), entries.end(), 0.0);
      for (int q = 0; q < nq; ++q) {
        const double* sa = st.starA.data() + static_cast<std::size_t>(q) * nloc * nloc;
        const double cqa = aq[q];
        for (int k = 0; k < nloc * nloc; ++k) entries[k] += cqa * sa[k];
        if (!st.starB.empty()) {
          const double* sb = st.starB.data() + static_cast<std::size_t>(q) * nloc * nloc;
          const double cqb = bq[q];
          for (int k = 0; k < nloc * nloc; ++k) entries[k] += cqb * sb[k];
        }
      }

      for (int j = 0; j < nloc; ++j) {
        double acc = 0.0;
        for (int i = 0; i < nloc; ++i)
          acc += entries[static_cast<std::size_t>(j) * nloc + i] * dofs.signs[i] *
                 v.data[dofs.ids[i]];
        w.data[dofs.ids[j]] += dofs.signs[j] * acc;
      }
    }
  }
  return w;
}

FieldVector FormSystem::reference_apply(const FieldVector& v,
                                        const std::vector<const FieldVector*>& coeffs) const {
  return apply(v, coeffs, quadrature(std::min(form_.exactDegree + 2, 6)));
}

} // namespace tetmf
