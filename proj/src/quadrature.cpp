#include "tetmf/quadrature.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace tetmf {

namespace {

struct Rule1d {
  std::vector<double> x; // nodes on [0,1]
  std::vector<double> w; // weights including the (1-x)^alpha factor
};

// Gauss-Jacobi rule with weight (1-x)^alpha on [0,1], computed via
// Golub-Welsch on the symmetrized three-term recurrence.
Rule1d gauss_jacobi01(int n, int alpha) {
  const double a = static_cast<double>(alpha);
  const double b = 0.0;

  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    double diag;
    if (i == 0) {
      diag = (b - a) / (a + b + 2.0);
    } else {
      const double k = static_cast<double>(i);
      diag = (b * b - a * a) / ((2.0 * k + a + b) * (2.0 * k + a + b + 2.0));
    }
    jac(i, i) = diag;
    if (i + 1 < n) {
      const double k = static_cast<double>(i + 1);
      const double num = 4.0 * k * (k + a) * (k + b) * (k + a + b);
      const double den = (2.0 * k + a + b) * (2.0 * k + a + b) *
                         (2.0 * k + a + b + 1.0) * (2.0 * k + a + b - 1.0);
      jac(i, i + 1) = jac(i + 1, i) = std::sqrt(num / den);
    }
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jac);
  // total mass of (1-x)^a (1+x)^b on [-1,1]; with b = 0 this is 2^(a+1)/(a+1)
  const double mu0 = std::pow(2.0, a + 1.0) / (a + 1.0);

  Rule1d r;
  r.x.resize(n);
  r.w.resize(n);
  for (int i = 0; i < n; ++i) {
    const double xi = es.eigenvalues()(i);
    const double v0 = es.eigenvectors()(0, i);
    r.x[i] = 0.5 * (1.0 + xi);
    // map [-1,1] -> [0,1]: dx scales by 1/2 and (1-x)^a picks up 2^-a
    r.w[i] = mu0 * v0 * v0 / std::pow(2.0, a + 1.0);
  }
  return r;
}

void push_point(QuadratureRule& rule, double x, double y, double z, double w) {
  rule.points.emplace_back(x, y, z);
  rule.bary.push_back({1.0 - x - y - z, x, y, z});
  rule.weights.push_back(w);
}

// Conical product rule: exact for total degree 2n-1 with n^3 points.
QuadratureRule conical_product(int n, int degree) {
  const Rule1d r2 = gauss_jacobi01(n, 2);
  const Rule1d r1 = gauss_jacobi01(n, 1);
  const Rule1d r0 = gauss_jacobi01(n, 0);

  QuadratureRule rule;
  rule.degree = degree;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        const double x = r2.x[i];
        const double y = r1.x[j] * (1.0 - x);
        const double z = r0.x[k] * (1.0 - x - y);
        push_point(rule, x, y, z, r2.w[i] * r1.w[j] * r0.w[k]);
      }
  return rule;
}

QuadratureRule centroid_rule() {
  QuadratureRule rule;
  rule.degree = 1;
  push_point(rule, 0.25, 0.25, 0.25, kRefVolume);
  return rule;
}

// Classic symmetric 4-point rule, exact to degree 2.
QuadratureRule rule_degree2() {
  const double a = 0.58541019662496845446; // (5 + 3*sqrt(5)) / 20
  const double b = 0.13819660112501051518; // (5 - sqrt(5)) / 20
  QuadratureRule rule;
  rule.degree = 2;
  const double w = 1.0 / 24.0;
  push_point(rule, a, b, b, w);
  push_point(rule, b, a, b, w);
  push_point(rule, b, b, a, w);
  push_point(rule, b, b, b, w);
  return rule;
}

// Keast 11-point rule, exact to degree 4. One negative weight at the
// centroid; weights sum to 1/6.
QuadratureRule rule_degree4() {
  QuadratureRule rule;
  rule.degree = 4;

  const double wc = -148.0 / 11250.0;
  push_point(rule, 0.25, 0.25, 0.25, wc);

  const double a = 11.0 / 14.0;
  const double b = 1.0 / 14.0;
  const double wa = 343.0 / 45000.0;
  push_point(rule, a, b, b, wa);
  push_point(rule, b, a, b, wa);
  push_point(rule, b, b, a, wa);
  push_point(rule, b, b, b, wa);

  const double t = std::sqrt(5.0 / 14.0);
  const double c = 0.25 * (1.0 + t);
  const double d = 0.25 * (1.0 - t);
  const double wcd = 28.0 / 1125.0;
  // all 6 permutations with barycentric pattern (c,c,d,d)
  const double l[6][4] = {{c, c, d, d}, {c, d, c, d}, {c, d, d, c},
                          {d, c, c, d}, {d, c, d, c}, {d, d, c, c}};
  for (const auto& p : l) push_point(rule, p[1], p[2], p[3], wcd);
  return rule;
}

} // namespace

QuadratureRule quadrature(int degree) {
  switch (degree) {
    case 1: return centroid_rule();
    case 2: return rule_degree2();
    case 3: return conical_product(2, 3);
    case 4: return rule_degree4();
    case 5: return conical_product(3, 5);
    case 6: return conical_product(4, 6);
    default:
      throw std::invalid_argument("quadrature: unsupported degree " + std::to_string(degree) +
                                  " (supported: 1..6)");
  }
}

} // namespace tetmf
