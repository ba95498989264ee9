#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>
#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "dsa/error.hpp"
#include "dsa/field.hpp"
#include "dsa/io.hpp"
#include "dsa/numdiff.hpp"
#include "dsa/parallel.hpp"

namespace dsa {

using cplx = std::complex<double>;

struct SpacetimeOptions {
  Periodicity lon = Periodicity::automatic;
  double tau = 1e-3;          // rank threshold for the coupling matrix
  double noise_floor = 1e-3;  // |dA/ds| relative to its maximum
  int coupling_orders = 3;
  double rank_tol = 1e-3;  // structure counting, relative to the leading singular value
};

enum class BasisLabel { space, time, generic };

struct SubspaceBasis {
  BasisLabel label = BasisLabel::generic;
  int rank = 0;
  Eigen::MatrixXcd vectors;  // orthonormal columns
};

struct CoevolutionManifold {
  int c = 0;
  double celerity = 0.0;  // grid cells per time step
  double speed = 0.0;     // lon units per time unit
  std::vector<double> couplings;
  std::vector<double> celerity_field;  // per (component, cell)
  bool periodic = true;
  std::vector<std::string> warnings;
};

struct StructurePair {
  Eigen::MatrixXcd spatial;   // (component, lat, extended lon) x r, unit RMS columns
  Eigen::MatrixXcd temporal;  // time x r, unit RMS columns
  Eigen::VectorXd amplitude;
  CoevolutionManifold manifold;
  int r_s = 0, r_t = 0;
  double residual = 0.0;
  Grid grid;
  TimeAxis time;
  std::size_t n_comp = 1;
  std::size_t n_lon_ext = 0;

  int dimension() const { return r_s + r_t - manifold.c; }
};

namespace detail {

inline std::size_t ext_length(std::size_t n, bool periodic) { return periodic ? n : 2 * n; }

// Reflection-padded when the axis is bounded.
inline std::vector<cplx> extend(const double* x, std::size_t n, bool periodic) {
  std::vector<cplx> v(ext_length(n, periodic));
  for (std::size_t j = 0; j < n; ++j) v[j] = x[j];
  if (!periodic)
    for (std::size_t j = 0; j < n; ++j) v[n + j] = x[n - 1 - j];
  return v;
}

inline double signed_freq(std::size_t k, std::size_t L) {
  return k <= L / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(L);
}

inline std::vector<cplx> analytic(const std::vector<cplx>& v) {
  Eigen::FFT<double> fft;
  std::vector<cplx> F, out;
  fft.fwd(F, v);
  const std::size_t L = v.size();
  for (std::size_t k = 1; k < L; ++k) {
    if (2 * k < L) F[k] *= 2.0;
    else if (2 * k > L) F[k] = 0.0;
  }
  fft.inv(out, F);
  return out;
}

// x(j) -> x(j - shift) on the periodic line.
inline std::vector<cplx> spectral_shift(const std::vector<cplx>& v, double shift) {
  Eigen::FFT<double> fft;
  std::vector<cplx> F, out;
  fft.fwd(F, v);
  const std::size_t L = v.size();
  for (std::size_t k = 0; k < L; ++k) {
    double f = signed_freq(k, L);
    if (2 * k == L) f = 0.0;
    F[k] *= std::polar(1.0, -2.0 * M_PI * f * shift / static_cast<double>(L));
  }
  fft.inv(out, F);
  return out;
}

// k-th derivative per grid cell.
inline std::vector<double> spectral_derivative(const std::vector<cplx>& v, int order) {
  Eigen::FFT<double> fft;
  std::vector<cplx> F, out;
  fft.fwd(F, v);
  const std::size_t L = v.size();
  for (std::size_t k = 0; k < L; ++k) {
    double f = 2 * k == L ? 0.0 : signed_freq(k, L);
    F[k] *= std::pow(cplx(0.0, 2.0 * M_PI * f / static_cast<double>(L)), order);
  }
  fft.inv(out, F);
  std::vector<double> r(L);
  for (std::size_t j = 0; j < L; ++j) r[j] = out[j].real();
  return r;
}

inline double weighted_median(std::vector<std::pair<double, double>> vw) {
  if (vw.empty()) return 0.0;
  std::sort(vw.begin(), vw.end());
  double tot = 0.0, acc = 0.0;
  for (const auto& p : vw) tot += p.second;
  for (const auto& p : vw) {
    acc += p.second;
    if (acc >= 0.5 * tot) return p.first;
  }
  return vw.back().first;
}

inline void check_spacetime(const Field& f) {
  f.require_complete("space-time analysis");
  if (f.grid.n_lon() < 8 || f.n_time() < 8) throw UsageError("space-time analysis needs at least 8 lon points and 8 times");
}

// Amplitude envelope A(t, lon) of one (component, lat) line set.
inline Eigen::MatrixXd envelope(const Field& f, std::size_t c, std::size_t i, bool periodic) {
  const std::size_t n = f.grid.n_lon(), T = f.n_time();
  Eigen::MatrixXd A(T, n);
  std::vector<double> line(n);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < n; ++j) line[j] = f.at(c, t, i, j);
    auto a = analytic(extend(line.data(), n, periodic));
    for (std::size_t j = 0; j < n; ++j) A(t, j) = std::abs(a[j]);
  }
  return A;
}

inline Eigen::MatrixXd lon_derivative(const Eigen::MatrixXd& A, int order, bool periodic) {
  const Eigen::Index T = A.rows(), n = A.cols();
  Eigen::MatrixXd D(T, n);
  for (Eigen::Index t = 0; t < T; ++t) {
    Eigen::VectorXd r = A.row(t).transpose();
    auto d = spectral_derivative(extend(r.data(), n, periodic), order);
    for (Eigen::Index j = 0; j < n; ++j) D(t, j) = d[j];
  }
  return D;
}

}  // namespace detail

inline CoevolutionManifold estimate_coevolution(const Field& f, const SpacetimeOptions& opt = {}) {
  detail::check_spacetime(f);
  CoevolutionManifold m;
  m.periodic = lon_is_periodic(f.grid, opt.lon);
  const std::size_t n = f.grid.n_lon(), nl = f.grid.n_lat(), T = f.n_time();
  const double dt = f.time.step;
  const double dlon = (f.grid.lon.back() - f.grid.lon.front()) / static_cast<double>(n - 1);
  std::vector<Eigen::MatrixXd> As, At, Aa;
  double smax = 0.0;
  for (std::size_t c = 0; c < f.n_comp; ++c)
    for (std::size_t i = 0; i < nl; ++i) {
      Eigen::MatrixXd A = detail::envelope(f, c, i, m.periodic);
      As.push_back(detail::lon_derivative(A, 1, m.periodic));  // per cell
      At.push_back(time_derivative(A, 1.0, 1));                // per step
      Aa.push_back(A);
      smax = std::max(smax, As.back().cwiseAbs().maxCoeff());
    }
  m.celerity_field.assign(f.n_comp * f.n_cells(), 0.0);
  m.couplings.assign(opt.coupling_orders, 0.0);
  if (!(smax > 0)) {
    m.warnings.push_back("flat field: no spatial amplitude gradients");
    return m;
  }
  double g11 = 0, g12 = 0, g22 = 0;
  std::vector<std::pair<double, double>> all;
  for (std::size_t q = 0; q < As.size(); ++q) {
    g11 += As[q].squaredNorm();
    g22 += At[q].squaredNorm();
    g12 += As[q].cwiseProduct(At[q]).sum();
    for (std::size_t j = 0; j < n; ++j) {
      std::vector<std::pair<double, double>> cell;
      for (std::size_t t = 0; t < T; ++t) {
        double s = As[q](t, j);
        if (std::abs(s) <= opt.noise_floor * smax) continue;
        cell.push_back({-At[q](t, j) / s, s * s});
        all.push_back(cell.back());
      }
      m.celerity_field[q * n + j] = detail::weighted_median(cell);
    }
  }
  const double tot = g11 + g22;
  const double rho = g12 / std::sqrt(std::max(g11 * g22, 1e-300));
  const double ratio = (1 - std::abs(rho)) / (1 + std::abs(rho));
  const bool rank_one = ratio <= opt.tau && g11 > opt.tau * tot && g22 > opt.tau * tot;
  if (!rank_one) {
    std::fill(m.celerity_field.begin(), m.celerity_field.end(), 0.0);
    return m;
  }
  m.c = 1;
  m.celerity = detail::weighted_median(all);
  m.speed = m.celerity * dlon / dt;
  for (int k = 1; k <= opt.coupling_orders; ++k) {
    double sst = 0, ss = 0, tt = 0;
    for (std::size_t q = 0; q < Aa.size(); ++q) {
      Eigen::MatrixXd Ds = detail::lon_derivative(Aa[q], k, m.periodic);
      Eigen::MatrixXd Dt = time_derivative(Aa[q], 1.0, k);
      sst += Ds.cwiseProduct(Dt).sum();
      ss += Ds.squaredNorm();
      tt += Dt.squaredNorm();
    }
    m.couplings[k - 1] = ss > 0 && tt > 0 ? sst / std::sqrt(ss * tt) : 0.0;
  }
  return m;
}

namespace detail {

// Rows: (component, lat, extended lon); columns: time. Comoving when c = 1.
inline Eigen::MatrixXcd spacetime_matrix(const Field& f, const CoevolutionManifold& m, std::size_t& L) {
  const std::size_t n = f.grid.n_lon(), nl = f.grid.n_lat(), T = f.n_time();
  const bool wave = m.c == 1;
  L = wave ? ext_length(n, m.periodic) : n;
  Eigen::MatrixXcd M(f.n_comp * nl * L, T);
  parallel_for(f.n_comp * nl, [&](std::size_t q) {
    std::size_t c = q / nl, i = q % nl;
    std::vector<double> ln(n);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t j = 0; j < n; ++j) ln[j] = f.at(c, t, i, j);
      if (wave) {
        auto a = spectral_shift(analytic(extend(ln.data(), n, m.periodic)), -m.celerity * static_cast<double>(t));
        for (std::size_t j = 0; j < L; ++j) M(q * L + j, t) = a[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) M(q * L + j, t) = ln[j];
      }
    }
  });
  return M;
}

inline bool non_constant(const Eigen::VectorXcd& v) {
  double big = v.cwiseAbs().maxCoeff();
  cplx mean = v.mean();
  return (v.array() - mean).abs().maxCoeff() > 1e-8 * std::max(big, 1e-300);
}

}  // namespace detail

inline Field compose(const StructurePair& p);

inline StructurePair decompose(const Field& f, const CoevolutionManifold& m, const SpacetimeOptions& opt = {}) {
  detail::check_spacetime(f);
  if (m.c < 0 || m.c > 1) throw UsageError("coevolution rank must be 0 or 1");
  StructurePair p;
  p.manifold = m;
  p.grid = f.grid;
  p.time = f.time;
  p.n_comp = f.n_comp;
  Eigen::MatrixXcd M = detail::spacetime_matrix(f, m, p.n_lon_ext);
  const double N = static_cast<double>(M.rows()), T = static_cast<double>(M.cols());
  Eigen::BDCSVD<Eigen::MatrixXcd> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double s1 = sv.size() ? sv(0) : 0.0;
  Eigen::Index r = 0;
  while (r < sv.size() && sv(r) > 1e-15 * s1) ++r;
  if (r == 0) r = 1;
  p.spatial = svd.matrixU().leftCols(r) * std::sqrt(N);
  p.temporal = svd.matrixV().leftCols(r).conjugate() * std::sqrt(T);
  p.amplitude = sv.head(r) / std::sqrt(N * T);
  for (Eigen::Index k = 0; k < r; ++k) {
    auto tc = p.temporal.col(k);
    Eigen::Index i0 = 0;
    if (m.c == 1) {
      while (i0 + 1 < tc.size() && std::abs(tc(i0)) < 1e-8) ++i0;
    } else {
      tc.cwiseAbs().maxCoeff(&i0);
    }
    cplx ph = std::abs(tc(i0)) > 0 ? std::conj(tc(i0)) / std::abs(tc(i0)) : cplx(1.0);
    p.temporal.col(k) *= ph;
    p.spatial.col(k) /= ph;
    if (sv(k) > opt.rank_tol * s1) {
      p.r_s += detail::non_constant(p.spatial.col(k));
      p.r_t += detail::non_constant(p.temporal.col(k));
    }
  }
  if (m.c > std::min(p.r_s, p.r_t)) throw NumericalError("rank inconsistency: coevolution rank exceeds structure ranks");
  Field back = compose(p);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < f.values.size(); ++i) {
    num += (back.values[i] - f.values[i]) * (back.values[i] - f.values[i]);
    den += f.values[i] * f.values[i];
  }
  p.residual = den > 0 ? std::sqrt(num / den) : std::sqrt(num);
  return p;
}

inline Field compose(const StructurePair& p) {
  const std::size_t n = p.grid.n_lon(), nl = p.grid.n_lat(), T = p.time.size(), L = p.n_lon_ext;
  const Eigen::Index r = p.amplitude.size();
  if (p.spatial.cols() != r || p.temporal.cols() != r) throw UsageError("structure pair: rank mismatch");
  if (static_cast<std::size_t>(p.spatial.rows()) != p.n_comp * nl * L || static_cast<std::size_t>(p.temporal.rows()) != T)
    throw UsageError("structure pair: shape mismatch");
  if (p.manifold.c > std::min(p.r_s, p.r_t)) throw UsageError("manifold rank exceeds structure ranks");
  Eigen::MatrixXcd M = p.spatial * p.amplitude.asDiagonal() * p.temporal.transpose();
  Field f(p.grid, p.time, p.n_comp);
  parallel_for(p.n_comp * nl, [&](std::size_t q) {
    std::size_t c = q / nl, i = q % nl;
    std::vector<cplx> line(L);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t j = 0; j < L; ++j) line[j] = M(q * L + j, t);
      if (p.manifold.c == 1) line = detail::spectral_shift(line, p.manifold.celerity * static_cast<double>(t));
      for (std::size_t j = 0; j < n; ++j) f.at(c, t, i, j) = line[j].real();
    }
  });
  return f;
}

inline int composed_dimension(const StructurePair& p) { return p.dimension(); }

// Orthonormal leading singular vectors of a (rows: space, cols: time) matrix.
inline SubspaceBasis basis_of(const Eigen::MatrixXcd& a, BasisLabel label, int rank = 0) {
  Eigen::BDCSVD<Eigen::MatrixXcd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  int r = rank;
  if (r <= 0) {
    r = 0;
    while (r < sv.size() && sv(r) > 1e-12 * sv(0)) ++r;
  }
  if (r > sv.size()) throw UsageError("basis rank exceeds matrix rank");
  SubspaceBasis b;
  b.label = label;
  b.rank = r;
  b.vectors = label == BasisLabel::space ? Eigen::MatrixXcd(svd.matrixU().leftCols(r))
                                         : Eigen::MatrixXcd(svd.matrixV().leftCols(r).conjugate());
  return b;
}

// a (rows: space, cols: time) contracted against the basis of the other index;
// with c = 1 rows are periodic lon lines of length line_length, moved to the comoving frame first.
inline Eigen::MatrixXcd retrieval_product(const Eigen::MatrixXcd& a, const SubspaceBasis& b, const CoevolutionManifold& m,
                                          std::size_t line_length = 0) {
  Eigen::MatrixXcd A = a;
  if (m.c == 1) {
    if (line_length == 0 || A.rows() % static_cast<Eigen::Index>(line_length) != 0)
      throw UsageError("retrieval product: rows are not whole lon lines");
    std::vector<cplx> line(line_length);
    for (Eigen::Index q = 0; q < A.rows() / static_cast<Eigen::Index>(line_length); ++q)
      for (Eigen::Index t = 0; t < A.cols(); ++t) {
        for (std::size_t j = 0; j < line_length; ++j) line[j] = A(q * line_length + j, t);
        line = detail::spectral_shift(line, -m.celerity * static_cast<double>(t));
        for (std::size_t j = 0; j < line_length; ++j) A(q * line_length + j, t) = line[j];
      }
  }
  if (b.label == BasisLabel::space) {
    if (b.vectors.rows() != A.rows()) throw UsageError("retrieval product: spatial basis length mismatch");
    return b.vectors.adjoint() * A;
  }
  if (b.vectors.rows() != A.cols()) throw UsageError("retrieval product: temporal basis length mismatch");
  return A * b.vectors.conjugate();
}

inline Eigen::MatrixXcd spacetime_matrix(const Field& f) {
  CoevolutionManifold none;
  std::size_t L = 0;
  return detail::spacetime_matrix(f, none, L);
}

// Spatial part as csv-grid (structure index on the time axis, real/imag as components),
// temporal part as text columns, manifold as flat text.
inline void write_structure_pair(const StructurePair& p, const std::filesystem::path& dir) {
  const std::size_t nl = p.grid.n_lat(), L = p.n_lon_ext, r = p.amplitude.size();
  std::vector<double> lon(L);
  const double dlon = p.grid.n_lon() > 1 ? (p.grid.lon.back() - p.grid.lon.front()) / (p.grid.n_lon() - 1.0) : 1.0;
  for (std::size_t j = 0; j < L; ++j) lon[j] = p.grid.lon.front() + dlon * static_cast<double>(j);
  Field s(Grid::make(p.grid.lat, lon), TimeAxis::regular(0, 1, r), 2 * p.n_comp);
  for (std::size_t c = 0; c < p.n_comp; ++c)
    for (std::size_t k = 0; k < r; ++k)
      for (std::size_t i = 0; i < nl; ++i)
        for (std::size_t j = 0; j < L; ++j) {
          cplx v = p.spatial((c * nl + i) * L + j, k);
          s.at(2 * c, k, i, j) = v.real();
          s.at(2 * c + 1, k, i, j) = v.imag();
        }
  write_field(s, dir / "spatial", FieldFormat::csv_grid);
  std::ostringstream t;
  for (std::size_t i = 0; i < p.time.size(); ++i) {
    t << io::fmt(p.time.t[i]);
    for (std::size_t k = 0; k < r; ++k) t << " " << io::fmt(p.temporal(i, k).real()) << " " << io::fmt(p.temporal(i, k).imag());
    t << "\n";
  }
  io::atomic_write(dir / "temporal.txt", t.str());
  std::ostringstream m;
  m << "c " << p.manifold.c << "\ncelerity " << io::fmt(p.manifold.celerity) << "\nspeed " << io::fmt(p.manifold.speed)
    << "\nperiodic " << p.manifold.periodic << "\nr_s " << p.r_s << "\nr_t " << p.r_t << "\ndimension " << p.dimension()
    << "\nresidual " << io::fmt(p.residual) << "\namplitude";
  for (Eigen::Index k = 0; k < p.amplitude.size(); ++k) m << " " << io::fmt(p.amplitude(k));
  m << "\ncouplings";
  for (double v : p.manifold.couplings) m << " " << io::fmt(v);
  m << "\ncelerity_field";
  for (double v : p.manifold.celerity_field) m << " " << io::fmt(v);
  m << "\n";
  io::atomic_write(dir / "manifold.txt", m.str());
}

}  // namespace dsa
