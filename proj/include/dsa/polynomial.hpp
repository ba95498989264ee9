#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "dsa/error.hpp"

namespace dsa::poly {

// Sorted driver indices i1 <= ... <= ik.
using MultiIndex = std::vector<int>;
// Per-variable powers.
using Exponent = std::vector<int>;

inline double factorial(int n) {
  double f = 1.0;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

inline std::vector<MultiIndex> multi_indices(int d, int order) {
  std::vector<MultiIndex> out;
  if (order == 0) {
    out.push_back({});
    return out;
  }
  MultiIndex cur(order, 0);
  while (true) {
    out.push_back(cur);
    int pos = order - 1;
    while (pos >= 0 && cur[pos] == d - 1) --pos;
    if (pos < 0) break;
    int v = cur[pos] + 1;
    for (int i = pos; i < order; ++i) cur[i] = v;
  }
  return out;
}

inline Exponent to_exponent(const MultiIndex& m, int d) {
  Exponent e(d, 0);
  for (int i : m) ++e[i];
  return e;
}

inline MultiIndex from_exponent(const Exponent& e) {
  MultiIndex m;
  for (int i = 0; i < static_cast<int>(e.size()); ++i)
    for (int k = 0; k < e[i]; ++k) m.push_back(i);
  return m;
}

inline double exponent_factorial(const Exponent& e) {
  double f = 1.0;
  for (int x : e) f *= factorial(x);
  return f;
}

// Number of ordered index tuples represented by a sorted multi-index.
inline double multiplicity(const MultiIndex& m, int d) {
  return factorial(static_cast<int>(m.size())) / exponent_factorial(to_exponent(m, d));
}

inline bool all_equal(const MultiIndex& m, int value) {
  return std::all_of(m.begin(), m.end(), [&](int i) { return i == value; });
}

// Graded list: degree 0 first, then each degree in multi-index order.
inline std::vector<Exponent> exponents_up_to(int d, int degree, int min_degree = 0) {
  std::vector<Exponent> out;
  for (int k = min_degree; k <= degree; ++k)
    for (const auto& m : multi_indices(d, k)) out.push_back(to_exponent(m, d));
  return out;
}

inline int degree_of(const Exponent& e) {
  int s = 0;
  for (int x : e) s += x;
  return s;
}

inline std::size_t monomial_count(int d, int degree) {
  // C(d + degree, degree)
  double c = 1.0;
  for (int i = 1; i <= degree; ++i) c = c * (d + i) / i;
  return static_cast<std::size_t>(std::llround(c));
}

inline Eigen::MatrixXd design(const Eigen::MatrixXd& X, const std::vector<Exponent>& ex) {
  const Eigen::Index n = X.rows();
  const int d = static_cast<int>(X.cols());
  int maxdeg = 0;
  for (const auto& e : ex) maxdeg = std::max(maxdeg, degree_of(e));
  // powers[j][p] = X(:,j)^p
  std::vector<std::vector<Eigen::ArrayXd>> pw(d);
  for (int j = 0; j < d; ++j) {
    pw[j].push_back(Eigen::ArrayXd::Ones(n));
    for (int p = 1; p <= maxdeg; ++p) pw[j].push_back(pw[j].back() * X.col(j).array());
  }
  Eigen::MatrixXd M(n, ex.size());
  for (std::size_t t = 0; t < ex.size(); ++t) {
    Eigen::ArrayXd col = Eigen::ArrayXd::Ones(n);
    for (int j = 0; j < d; ++j)
      if (ex[t][j]) col *= pw[j][ex[t][j]];
    M.col(t) = col.matrix();
  }
  return M;
}

// Multivariate polynomial map R^d -> R^r.
struct Polynomial {
  int d = 0;
  std::vector<Exponent> terms;
  Eigen::MatrixXd coef;  // n_terms x r

  int outputs() const { return static_cast<int>(coef.cols()); }

  Eigen::MatrixXd eval(const Eigen::MatrixXd& X) const { return design(X, terms) * coef; }

  Eigen::VectorXd eval_point(const Eigen::VectorXd& x) const {
    Eigen::MatrixXd X = x.transpose();
    return eval(X).row(0).transpose();
  }

  // d^a f evaluated at each row of X; N x r
  Eigen::MatrixXd derivative(const Exponent& a, const Eigen::MatrixXd& X) const {
    std::vector<Exponent> red;
    std::vector<double> fac;
    std::vector<std::size_t> which;
    for (std::size_t t = 0; t < terms.size(); ++t) {
      Exponent e = terms[t];
      double f = 1.0;
      bool ok = true;
      for (int j = 0; j < d && ok; ++j) {
        if (e[j] < a[j]) {
          ok = false;
          break;
        }
        for (int q = 0; q < a[j]; ++q) f *= e[j] - q;
        e[j] -= a[j];
      }
      if (!ok) continue;
      red.push_back(e);
      fac.push_back(f);
      which.push_back(t);
    }
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(X.rows(), coef.cols());
    if (red.empty()) return out;
    Eigen::MatrixXd M = design(X, red);
    Eigen::MatrixXd C(red.size(), coef.cols());
    for (std::size_t i = 0; i < red.size(); ++i) C.row(i) = fac[i] * coef.row(which[i]);
    return M * C;
  }

  // Jacobian at a point, r x d
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& x) const {
    Eigen::MatrixXd J(coef.cols(), d);
    Eigen::MatrixXd X = x.transpose();
    for (int j = 0; j < d; ++j) {
      Exponent a(d, 0);
      a[j] = 1;
      J.col(j) = derivative(a, X).row(0).transpose();
    }
    return J;
  }
};

struct FitReport {
  double condition = 0.0;
  double residual_fraction = 0.0;
  int rank = 0;
};

// Least squares on scaled columns; throws when the design is numerically rank deficient.
inline Polynomial fit_polynomial(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, int degree,
                                 FitReport* report = nullptr, double max_condition = 1e12,
                                 const Eigen::VectorXd* weights = nullptr) {
  Polynomial p;
  p.d = static_cast<int>(X.cols());
  p.terms = exponents_up_to(p.d, degree);
  if (static_cast<std::size_t>(X.rows()) < p.terms.size())
    throw NumericalError("polynomial fit: " + std::to_string(X.rows()) + " samples for " +
                         std::to_string(p.terms.size()) + " monomials");
  Eigen::MatrixXd M = design(X, p.terms);
  Eigen::MatrixXd R = Y;
  if (weights) {
    Eigen::VectorXd sw = weights->cwiseSqrt();
    M = sw.asDiagonal() * M;
    R = sw.asDiagonal() * R;
  }
  Eigen::VectorXd scale = M.colwise().norm().transpose();
  for (Eigen::Index j = 0; j < scale.size(); ++j)
    if (!(scale(j) > 0)) scale(j) = 1.0;
  Eigen::MatrixXd Ms = M * scale.cwiseInverse().asDiagonal();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Ms);
  Eigen::VectorXd rd = qr.matrixR().diagonal().cwiseAbs();
  double cond = rd.minCoeff() > 0 ? rd.maxCoeff() / rd.minCoeff() : INFINITY;
  if (report) {
    report->condition = cond;
    report->rank = static_cast<int>(qr.rank());
  }
  if (!(cond <= max_condition))
    throw NumericalError("polynomial fit rank deficient: condition estimate " + std::to_string(cond) + " (degree " +
                         std::to_string(degree) + ", " + std::to_string(p.terms.size()) + " monomials)");
  p.coef = scale.cwiseInverse().asDiagonal() * qr.solve(R);
  if (report) {
    Eigen::MatrixXd res = R - M * p.coef;
    double den = (R.rowwise() - R.colwise().mean()).squaredNorm();
    report->residual_fraction = den > 0 ? res.squaredNorm() / den : 0.0;
  }
  return p;
}

}  // namespace dsa::poly
