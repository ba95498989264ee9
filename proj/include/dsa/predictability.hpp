#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>
#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <string>
#include <vector>

#include "dsa/dsa_core.hpp"
#include "dsa/error.hpp"
#include "dsa/field.hpp"
#include "dsa/infostats.hpp"
#include "dsa/parallel.hpp"
#include "dsa/polynomial.hpp"
#include "dsa/rng.hpp"
#include "dsa/spacetime.hpp"

namespace dsa {

// Contiguous time partition; length 0 runs to the end of the record.
struct TimeWindow {
  std::size_t start = 0;
  std::size_t length = 0;
};

struct PredictabilityMap {
  int k = 1;
  Grid grid;
  std::size_t n_comp = 1;
  Eigen::VectorXd raw;  // comp-major, one entry per (component, cell)
  Eigen::VectorXd mc_null_mean, mc_null_q95, mc_null_sd;
  Eigen::VectorXd effective;
  Eigen::MatrixXd coef;  // per cell, coefficients on the orthonormal order-k features
  int n_features = 0;
  int n_shuffles = 0;
  std::size_t clipped = 0;
  TimeWindow window;
  std::vector<std::string> warnings;

  std::size_t size() const { return static_cast<std::size_t>(raw.size()); }
  bool has_null() const { return n_shuffles > 0; }
  Eigen::VectorXd recompute_effective() const { return raw - mc_null_mean; }
  std::size_t n_significant() const {
    std::size_t c = 0;
    for (Eigen::Index i = 0; i < raw.size(); ++i) c += raw(i) > mc_null_q95(i);
    return c;
  }
};

namespace detail {

inline Eigen::MatrixXd window_rows(const Eigen::MatrixXd& X, const TimeWindow& w) {
  if (w.start >= static_cast<std::size_t>(X.rows())) throw UsageError("time window starts past the record");
  std::size_t len = w.length == 0 ? X.rows() - w.start : w.length;
  if (w.start + len > static_cast<std::size_t>(X.rows())) throw UsageError("time window runs past the record");
  if (len < 8) throw UsageError("time window shorter than 8 steps");
  return X.middleRows(w.start, len);
}

// Orthonormal basis of the degree-k polynomial block after removing all lower degrees.
inline Eigen::MatrixXd order_features(const Eigen::MatrixXd& X, int k) {
  const Eigen::Index n = X.rows(), d = X.cols();
  Eigen::MatrixXd S = X;
  for (Eigen::Index c = 0; c < d; ++c) {
    double mu = S.col(c).mean();
    double sd = std::sqrt((S.col(c).array() - mu).square().mean());
    if (!(sd > 0)) throw NumericalError("source " + std::to_string(c) + " is constant; normalization undefined");
    S.col(c) = (S.col(c).array() - mu) / sd;
  }
  auto lower = poly::exponents_up_to(static_cast<int>(d), k - 1);
  auto block = poly::exponents_up_to(static_cast<int>(d), k, k);
  Eigen::MatrixXd L = poly::design(S, lower), B = poly::design(S, block);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> ql(L);
  ql.setThreshold(1e-10);
  Eigen::MatrixXd Ql = Eigen::MatrixXd(ql.householderQ()).leftCols(ql.rank());
  B -= Ql * (Ql.transpose() * B);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qb(B);
  double top = B.colwise().norm().maxCoeff();
  double scale = std::sqrt(static_cast<double>(n));
  if (!(top > 1e-10 * scale)) throw NumericalError("order-" + std::to_string(k) + " features vanish; normalization undefined");
  qb.setThreshold(1e-10 * scale / top);
  return Eigen::MatrixXd(qb.householderQ()).leftCols(qb.rank());
}

struct CellSeries {
  Eigen::MatrixXd Zc;  // centered predictand, one column per cell
  Eigen::VectorXd norm;
};

inline CellSeries center_cells(const Field& z, const TimeWindow& w) {
  CellSeries cs;
  Eigen::MatrixXd Z = window_rows(z.flatten(), w);
  cs.Zc = Z.rowwise() - Z.colwise().mean();
  cs.norm = cs.Zc.colwise().norm();
  return cs;
}

inline Eigen::MatrixXd source_matrix(const DynamicSourceSet& x) {
  if (x.n_retained() == 0) throw UsageError("predictability needs at least one retained source");
  return x.retained_matrix();
}

inline void check_axes(const DynamicSourceSet& x, const Field& z) {
  const auto& a = x.sources.time;
  if (a.t.size() != z.n_time() || std::abs(a.step - z.time.step) > 1e-9 * std::abs(a.step) ||
      std::abs(a.t.front() - z.time.t.front()) > 1e-9 * std::max(1.0, std::abs(a.t.front())))
    throw UsageError("sources and predictand do not share a time axis");
  z.require_complete("predictability_map");
}

}  // namespace detail

inline PredictabilityMap predictability_map(const Eigen::MatrixXd& X, const Field& z, int k, const TimeWindow& window = {}) {
  if (k < 1 || k > 6) throw UsageError("predictability order must be in 1..6");
  if (X.rows() != static_cast<Eigen::Index>(z.n_time())) throw UsageError("sources and predictand lengths differ");
  z.require_complete("predictability_map");
  Eigen::MatrixXd Q = detail::order_features(detail::window_rows(X, window), k);
  auto cs = detail::center_cells(z, window);
  PredictabilityMap m;
  m.k = k;
  m.grid = z.grid;
  m.n_comp = z.n_comp;
  m.window = window;
  m.n_features = static_cast<int>(Q.cols());
  const Eigen::Index nc = cs.Zc.cols();
  m.coef = (Q.transpose() * cs.Zc).transpose();
  m.raw.resize(nc);
  std::size_t flat = 0;
  for (Eigen::Index c = 0; c < nc; ++c) {
    if (!(cs.norm(c) > 0)) {
      m.raw(c) = 0.0;
      ++flat;
      continue;
    }
    double v = m.coef.row(c).norm() / cs.norm(c);
    if (v > 1.0) {
      v = 1.0;
      ++m.clipped;
    }
    m.raw(c) = v;
  }
  if (flat) m.warnings.push_back(std::to_string(flat) + " constant predictand cells set to zero");
  if (m.clipped > 0.01 * nc) m.warnings.push_back("more than 1% of cells clipped to [-1, 1]");
  m.mc_null_mean = Eigen::VectorXd::Zero(nc);
  m.mc_null_q95 = Eigen::VectorXd::Zero(nc);
  m.mc_null_sd = Eigen::VectorXd::Zero(nc);
  m.effective = m.raw;
  return m;
}

inline PredictabilityMap predictability_map(const DynamicSourceSet& x, const Field& z, int k, const TimeWindow& window = {}) {
  detail::check_axes(x, z);
  return predictability_map(detail::source_matrix(x), z, k, window);
}

// Spatial map as the retrieval product of the predictand against the order-k temporal basis.
inline Eigen::MatrixXd predictability_structure(const Eigen::MatrixXd& X, const Field& z, int k, const TimeWindow& window = {}) {
  Eigen::MatrixXd Q = detail::order_features(detail::window_rows(X, window), k);
  auto cs = detail::center_cells(z, window);
  SubspaceBasis b;
  b.label = BasisLabel::time;
  b.rank = static_cast<int>(Q.cols());
  b.vectors = Q.cast<cplx>();
  Eigen::MatrixXcd A = cs.Zc.transpose().cast<cplx>();
  return retrieval_product(A, b, CoevolutionManifold{}).real();
}

// Cyclic-shift null: each replicate shifts sources and predictand by independent
// random offsets; every relative shift is scored at once by circular correlation.
inline PredictabilityMap effective_map(const PredictabilityMap& raw, const Eigen::MatrixXd& X, const Field& z, int NS,
                                       std::uint64_t seed) {
  if (NS < 100) throw UsageError("effective_map needs NS >= 100");
  if (X.rows() != static_cast<Eigen::Index>(z.n_time())) throw UsageError("sources and predictand lengths differ");
  Eigen::MatrixXd Q = detail::order_features(detail::window_rows(X, raw.window), raw.k);
  auto cs = detail::center_cells(z, raw.window);
  if (cs.Zc.cols() != raw.raw.size()) throw UsageError("map does not match predictand");
  const Eigen::Index n = Q.rows(), nc = cs.Zc.cols(), p = Q.cols();

  std::vector<std::size_t> rel(NS);
  for (int r = 0; r < NS; ++r) {
    Rng g = make_rng(seed, static_cast<std::uint64_t>(r));
    std::size_t ox = uniform_index(g, n), oz = uniform_index(g, n);
    rel[r] = (oz + n - ox) % n;
  }

  Eigen::FFT<double> fft;
  std::vector<std::vector<std::complex<double>>> FQ(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    std::vector<double> q(Q.col(j).data(), Q.col(j).data() + n);
    fft.fwd(FQ[j], q);
  }
  PredictabilityMap out = raw;
  out.n_shuffles = NS;
  parallel_for(static_cast<std::size_t>(nc), [&](std::size_t c) {
    Eigen::FFT<double> f;
    std::vector<double> zc(cs.Zc.col(c).data(), cs.Zc.col(c).data() + n), cc;
    std::vector<std::complex<double>> Fz, prod(n);
    f.fwd(Fz, zc);
    std::vector<double> stat(n, 0.0);
    for (Eigen::Index j = 0; j < p; ++j) {
      for (Eigen::Index i = 0; i < n; ++i) prod[i] = std::conj(FQ[j][i]) * Fz[i];
      f.inv(cc, prod);
      for (Eigen::Index s = 0; s < n; ++s) stat[s] += cc[s] * cc[s];
    }
    std::vector<double> v(NS);
    for (int r = 0; r < NS; ++r)
      v[r] = cs.norm(c) > 0 ? std::min(1.0, std::sqrt(stat[rel[r]]) / cs.norm(c)) : 0.0;
    out.mc_null_mean(c) = mean_of(v);
    out.mc_null_q95(c) = quantile(v, 0.95);
    out.mc_null_sd(c) = sd_of(v);
  });
  out.effective = out.raw - out.mc_null_mean;
  return out;
}

inline PredictabilityMap effective_map(const PredictabilityMap& raw, const DynamicSourceSet& x, const Field& z, int NS,
                                       std::uint64_t seed) {
  detail::check_axes(x, z);
  return effective_map(raw, detail::source_matrix(x), z, NS, seed);
}

inline double aggregate_correlation(const PredictabilityMap& m, int k = 1) {
  if (m.k != k || k != 1) throw UsageError("aggregate correlation needs the order-1 map");
  const std::size_t cells = m.grid.n_cells();
  double num = 0, den = 0;
  for (std::size_t c = 0; c < m.n_comp; ++c)
    for (std::size_t i = 0; i < cells; ++i) {
      num += m.grid.weights[i] * m.raw(c * cells + i);
      den += m.grid.weights[i];
    }
  return num / den;
}

inline void write_map(const PredictabilityMap& m, const std::filesystem::path& stem) {
  auto layer = [&](const Eigen::VectorXd& v, const std::string& suffix) {
    Field f(m.grid, TimeAxis::regular(0, 1, 1), m.n_comp);
    for (Eigen::Index i = 0; i < v.size(); ++i) f.values[i] = v(i);
    auto p = stem;
    p += suffix;
    write_field(f, p, FieldFormat::csv_grid);
  };
  layer(m.raw, ".raw");
  layer(m.mc_null_mean, ".null");
  layer(m.effective, ".eff");
}

}  // namespace dsa
