#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "dsa/error.hpp"
#include "dsa/parallel.hpp"
#include "dsa/rng.hpp"

namespace dsa {

using Columns = std::vector<int>;

struct InfoResult {
  double value = 0.0;  // reported (clipped / capped) estimate
  double raw = 0.0;
  double null_mean = std::numeric_limits<double>::quiet_NaN();
  double null_q95 = std::numeric_limits<double>::quiet_NaN();
  double null_sd = std::numeric_limits<double>::quiet_NaN();
  int n_shuffles = 0;
  bool capped = false;
  bool significant() const { return n_shuffles > 0 && value > null_q95; }
};

struct InfoOptions {
  int shuffles = 1000;
  std::uint64_t seed = 1;
  double cap = 20.0;  // nat
};

// Linear-interpolated empirical quantile.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw UsageError("quantile of empty sample");
  std::sort(v.begin(), v.end());
  double pos = q * static_cast<double>(v.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(pos));
  std::size_t hi = std::min(lo + 1, v.size() - 1);
  double f = pos - static_cast<double>(lo);
  return v[lo] * (1 - f) + v[hi] * f;
}

inline double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double sd_of(const std::vector<double>& v) {
  double m = mean_of(v), s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0;
}

inline double normal_quantile(double p) {
  static const boost::math::normal_distribution<double> n01;
  return boost::math::quantile(n01, p);
}

inline double normal_cdf(double x) {
  static const boost::math::normal_distribution<double> n01;
  return boost::math::cdf(n01, x);
}

// Average ranks (1-based) of a column.
inline Eigen::VectorXd average_ranks(const Eigen::VectorXd& x) {
  const Eigen::Index n = x.size();
  std::vector<Eigen::Index> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x(a) < x(b); });
  Eigen::VectorXd r(n);
  for (Eigen::Index i = 0; i < n;) {
    Eigen::Index j = i;
    while (j + 1 < n && x(idx[j + 1]) == x(idx[i])) ++j;
    double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Eigen::Index q = i; q <= j; ++q) r(idx[q]) = avg;
    i = j + 1;
  }
  return r;
}

inline Eigen::MatrixXd anamorphosis(const Eigen::MatrixXd& X) {
  if (X.rows() < 8) throw UsageError("anamorphosis needs at least 8 samples");
  Eigen::MatrixXd Z(X.rows(), X.cols());
  const double n = static_cast<double>(X.rows());
  for (Eigen::Index c = 0; c < X.cols(); ++c) {
    if (X.col(c).maxCoeff() == X.col(c).minCoeff())
      throw UsageError("anamorphosis: column " + std::to_string(c) + " is constant");
    Eigen::VectorXd r = average_ranks(X.col(c));
    for (Eigen::Index i = 0; i < X.rows(); ++i) Z(i, c) = normal_quantile((r(i) - 0.5) / n);
  }
  return Z;
}

inline Eigen::MatrixXd correlation(const Eigen::MatrixXd& Z) {
  Eigen::MatrixXd C = Z.rowwise() - Z.colwise().mean();
  Eigen::MatrixXd S = C.transpose() * C;
  Eigen::VectorXd d = S.diagonal().cwiseSqrt().cwiseInverse();
  return d.asDiagonal() * S * d.asDiagonal();
}

namespace detail {

inline constexpr double kDependentEigen = 1e-10;

// Returns -inf when the matrix is exactly singular (eigenvalue <= 1e-10).
inline double logdet_floor(const Eigen::MatrixXd& S, double cap) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() <= kDependentEigen) return -std::numeric_limits<double>::infinity();
  double floor = std::exp(-2.0 * cap);
  return es.eigenvalues().cwiseMax(floor).array().log().sum();
}

inline Eigen::MatrixXd sub(const Eigen::MatrixXd& R, const Columns& c) {
  Eigen::MatrixXd S(c.size(), c.size());
  for (std::size_t i = 0; i < c.size(); ++i)
    for (std::size_t j = 0; j < c.size(); ++j) S(i, j) = R(c[i], c[j]);
  return S;
}

inline void check_groups(const Columns& a, const Columns& b, Eigen::Index ncol) {
  if (a.empty() || b.empty()) throw UsageError("empty column group");
  for (int x : a) {
    if (x < 0 || x >= ncol) throw UsageError("column index out of range");
    if (std::find(b.begin(), b.end(), x) != b.end()) throw UsageError("column groups must be disjoint");
  }
  for (int x : b)
    if (x < 0 || x >= ncol) throw UsageError("column index out of range");
}

}  // namespace detail

// Exactly dependent columns (eigenvalue <= 1e-10) are dropped greedily.
inline Columns independent_subset(const Eigen::MatrixXd& R, const Columns& g) {
  Columns keep;
  for (int c : g) {
    Columns t = keep;
    t.push_back(c);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(detail::sub(R, t), Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() > detail::kDependentEigen) keep = t;
  }
  return keep;
}

// Gaussian-copula MI from a correlation matrix of anamorphosed data.
inline double gaussian_mi(const Eigen::MatrixXd& R, const Columns& a, const Columns& b, double cap, bool* capped) {
  Columns ka = independent_subset(R, a), kb = independent_subset(R, b);
  Columns ab = ka;
  ab.insert(ab.end(), kb.begin(), kb.end());
  std::sort(ab.begin(), ab.end());
  double la = detail::logdet_floor(detail::sub(R, ka), cap), lb = detail::logdet_floor(detail::sub(R, kb), cap);
  double lab = detail::logdet_floor(detail::sub(R, ab), cap);
  double mi = 0.5 * (la + lb - lab);
  if (capped) *capped = false;
  if (!(mi < cap)) {
    mi = cap;
    if (capped) *capped = true;
  }
  return std::max(mi, 0.0);
}

template <class Stat>
inline void fill_null(InfoResult& r, int shuffles, std::uint64_t seed, Stat&& stat) {
  if (shuffles <= 0) return;
  std::vector<double> null(shuffles);
  parallel_for(shuffles, [&](std::size_t i) {
    Rng g = make_rng(seed, i);
    null[i] = stat(g);
  });
  r.n_shuffles = shuffles;
  r.null_mean = mean_of(null);
  r.null_sd = sd_of(null);
  r.null_q95 = quantile(null, 0.95);
}

inline std::vector<Eigen::Index> permutation(Eigen::Index n, Rng& g) {
  std::vector<Eigen::Index> p(n);
  std::iota(p.begin(), p.end(), 0);
  dsa::shuffle(p.begin(), p.end(), g);
  return p;
}

inline Eigen::MatrixXd permute_columns(const Eigen::MatrixXd& Z, const Columns& cols,
                                       const std::vector<Eigen::Index>& p) {
  Eigen::MatrixXd W = Z;
  for (int c : cols)
    for (Eigen::Index i = 0; i < Z.rows(); ++i) W(i, c) = Z(p[i], c);
  return W;
}

inline InfoResult mutual_information(const Eigen::MatrixXd& X, const Columns& a, const Columns& b,
                                     const InfoOptions& opt = {}) {
  detail::check_groups(a, b, X.cols());
  Eigen::MatrixXd Z = anamorphosis(X);
  InfoResult r;
  r.raw = r.value = gaussian_mi(correlation(Z), a, b, opt.cap, &r.capped);
  fill_null(r, opt.shuffles, opt.seed, [&](Rng& g) {
    auto p = permutation(Z.rows(), g);
    return gaussian_mi(correlation(permute_columns(Z, b, p)), a, b, opt.cap, nullptr);
  });
  return r;
}

// Vasicek m-spacing entropy of one column.
inline double spacing_entropy(const Eigen::VectorXd& x) {
  const Eigen::Index n = x.size();
  std::vector<double> s(x.data(), x.data() + n);
  std::sort(s.begin(), s.end());
  auto m = static_cast<Eigen::Index>(std::floor(std::sqrt(static_cast<double>(n)) + 0.5));
  m = std::max<Eigen::Index>(1, std::min(m, n / 2));
  double acc = 0.0, tiny = 1e-12 * std::max(1.0, std::abs(s.back() - s.front()));
  for (Eigen::Index i = 0; i < n; ++i) {
    double hi = s[std::min(n - 1, i + m)], lo = s[std::max<Eigen::Index>(0, i - m)];
    acc += std::log(static_cast<double>(n) / (2.0 * static_cast<double>(m)) * std::max(hi - lo, tiny));
  }
  return acc / static_cast<double>(n);
}

struct NegentropyResult : InfoResult {
  double marginal = 0.0;    // sum of per-column negentropies
  double dependence = 0.0;  // Gaussian-copula multi-information
};

inline NegentropyResult negentropy(const Eigen::MatrixXd& X, const InfoOptions& opt = {}) {
  if (X.rows() < 8) throw UsageError("negentropy needs at least 8 samples");
  NegentropyResult r;
  double marg = 0.0;
  for (Eigen::Index c = 0; c < X.cols(); ++c) {
    Eigen::VectorXd x = X.col(c);
    double var = (x.array() - x.mean()).square().mean();
    if (!(var > 0)) throw NumericalError("negentropy: degenerate covariance in column " + std::to_string(c));
    marg += 0.5 * std::log(2 * M_PI * M_E * var) - spacing_entropy(x);
  }
  Eigen::MatrixXd Z = anamorphosis(X);
  auto multi_info = [&](const Eigen::MatrixXd& R, bool* capped) {
    double ld = detail::logdet_floor(R, opt.cap);
    double v = -0.5 * ld;
    bool c = v >= opt.cap;
    if (capped) *capped = c;
    return c ? opt.cap : std::max(0.0, v);
  };
  r.marginal = marg;
  r.dependence = X.cols() > 1 ? multi_info(correlation(Z), &r.capped) : 0.0;
  r.raw = r.marginal + r.dependence;
  r.value = std::max(0.0, r.raw);
  fill_null(r, opt.shuffles, opt.seed, [&](Rng& g) {
    if (X.cols() < 2) return std::max(0.0, marg);
    Eigen::MatrixXd W = Z;
    for (Eigen::Index c = 1; c < Z.cols(); ++c) W = permute_columns(W, {static_cast<int>(c)}, permutation(Z.rows(), g));
    return std::max(0.0, marg + multi_info(correlation(W), nullptr));
  });
  return r;
}

// Marginal negentropy of one series against Gaussian samples of the same length.
inline InfoResult gaussianity(const Eigen::VectorXd& x, const InfoOptions& opt = {}) {
  if (x.size() < 8) throw UsageError("gaussianity needs at least 8 samples");
  auto marginal = [](const Eigen::VectorXd& v) {
    double var = (v.array() - v.mean()).square().mean();
    if (!(var > 0)) throw NumericalError("gaussianity: constant series");
    return 0.5 * std::log(2 * M_PI * M_E * var) - spacing_entropy(v);
  };
  InfoResult r;
  r.raw = marginal(x);
  r.value = std::max(0.0, r.raw);
  fill_null(r, opt.shuffles, opt.seed, [&](Rng& g) {
    NormalSampler ns;
    Eigen::VectorXd v(x.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = ns(g);
    return std::max(0.0, marginal(v));
  });
  return r;
}

struct InteractionInfoResult {
  InfoResult it;           // I[(A,B);Y] - I(A;Y) - I(B;Y)
  double conditional = 0;  // I(A;B|Y) - I(A;B)
  double discrepancy = 0;
  double standard_error = 0;
  bool forms_agree = false;
};

inline InteractionInfoResult interaction_information(const Eigen::MatrixXd& X, const Columns& a, const Columns& b,
                                                     const Columns& y, const InfoOptions& opt = {}) {
  detail::check_groups(a, b, X.cols());
  detail::check_groups(a, y, X.cols());
  detail::check_groups(b, y, X.cols());
  Eigen::MatrixXd Z = anamorphosis(X);
  Columns ab = a;
  ab.insert(ab.end(), b.begin(), b.end());
  Columns by = b;
  by.insert(by.end(), y.begin(), y.end());
  auto both = [&](const Eigen::MatrixXd& R, bool* capped) {
    bool c1 = false, c2 = false, c3 = false;
    double iaby = gaussian_mi(R, ab, y, opt.cap, &c1);
    double iay = gaussian_mi(R, a, y, opt.cap, &c2);
    double iby = gaussian_mi(R, b, y, opt.cap, &c3);
    if (capped) *capped = c1 || c2 || c3;
    double iab_y = gaussian_mi(R, a, by, opt.cap, nullptr);
    double iab = gaussian_mi(R, a, b, opt.cap, nullptr);
    return std::make_pair(iaby - iay - iby, iab_y - iay - iab);
  };
  InteractionInfoResult res;
  auto [t, c] = both(correlation(Z), &res.it.capped);
  res.it.raw = res.it.value = t;
  res.conditional = c;
  res.discrepancy = std::abs(t - c);
  fill_null(res.it, opt.shuffles, opt.seed, [&](Rng& g) {
    return both(correlation(permute_columns(Z, y, permutation(Z.rows(), g))), nullptr).first;
  });
  double se = std::isnan(res.it.null_sd) ? 0.0 : res.it.null_sd;
  res.standard_error = se;
  res.forms_agree = res.discrepancy <= 2.0 * se + 1e-9;
  return res;
}

// Asymptotic Kolmogorov-Smirnov p-value for statistic d on n samples.
inline double ks_pvalue(double d, std::size_t n) {
  double sn = std::sqrt(static_cast<double>(n));
  double lam = (sn + 0.12 + 0.11 / sn) * d;
  if (lam < 1e-3) return 1.0;
  double sum = 0.0, sign = 1.0;
  for (int j = 1; j <= 200; ++j) {
    double term = sign * std::exp(-2.0 * j * j * lam * lam);
    sum += term;
    if (std::abs(term) < 1e-16) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

// One-sample KS statistic against U(0,1).
inline double ks_uniform_statistic(std::vector<double> u) {
  std::sort(u.begin(), u.end());
  double n = static_cast<double>(u.size()), d = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i)
    d = std::max({d, (i + 1) / n - u[i], u[i] - i / n});
  return d;
}

}  // namespace dsa
