#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dsa/error.hpp"
#include "dsa/field.hpp"
#include "dsa/parallel.hpp"
#include "dsa/polynomial.hpp"

namespace dsa {

enum class TimeScheme { richardson_cn, central_stencil };
enum class SpaceScheme { compact_adi, central_stencil };

struct SobolevConfig {
  int beta = 5;
  TimeScheme time_scheme = TimeScheme::richardson_cn;
  SpaceScheme space_scheme = SpaceScheme::compact_adi;
  bool detect_jumps = false;
  double jump_sigma = 5.0;

  void validate() const {
    if (beta < 1 || beta > 6) throw UsageError("beta must be in [1, 6], got " + std::to_string(beta));
  }
};

// Finite-difference weights for the m-th derivative at z from nodes x.
inline Eigen::VectorXd fornberg(double z, const std::vector<double>& x, int m) {
  const int n = static_cast<int>(x.size());
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(n, m + 1);
  double c1 = 1.0, c4 = x[0] - z;
  c(0, 0) = 1.0;
  for (int i = 1; i < n; ++i) {
    int mn = std::min(i, m);
    double c2 = 1.0, c5 = c4;
    c4 = x[i] - z;
    for (int j = 0; j < i; ++j) {
      double c3 = x[i] - x[j];
      c2 *= c3;
      if (j == i - 1) {
        for (int k = mn; k >= 1; --k) c(i, k) = c1 * (k * c(i - 1, k - 1) - c5 * c(i - 1, k)) / c2;
        c(i, 0) = -c1 * c5 * c(i - 1, 0) / c2;
      }
      for (int k = mn; k >= 1; --k) c(j, k) = (c4 * c(j, k) - k * c(j, k - 1)) / c3;
      c(j, 0) = c4 * c(j, 0) / c3;
    }
    c1 = c2;
  }
  return c.col(m);
}

namespace detail {

inline std::vector<double> iota_nodes(int lo, int hi) {
  std::vector<double> v;
  for (int i = lo; i <= hi; ++i) v.push_back(i);
  return v;
}

// Order-n derivative of f[lo, hi) at every point, unit spacing.
inline void series_derivative(const double* f, std::ptrdiff_t stride, int lo, int hi, int n, TimeScheme scheme,
                              double* out, std::ptrdiff_t ostride, unsigned char* bflag) {
  const int N = hi - lo;
  const int p = (n + 1) / 2;
  const int width = n + 6;
  if (N < width)
    throw UsageError("record of " + std::to_string(N) + " samples shorter than stencil width " + std::to_string(width) +
                     " for derivative order " + std::to_string(n));
  auto F = [&](int i) { return f[static_cast<std::ptrdiff_t>(i) * stride]; };
  int half;
  Eigen::VectorXd wc;  // central weights
  if (scheme == TimeScheme::richardson_cn) {
    half = 4 * p;
    wc = fornberg(0.0, iota_nodes(-p, p), n);
  } else {
    half = p + 2;
    wc = fornberg(0.0, iota_nodes(-half, half), n);
  }
  std::map<int, Eigen::VectorXd> one_sided;  // keyed by offset of window start
  for (int i = lo; i < hi; ++i) {
    double v;
    bool interior = i - half >= lo && i + half < hi;
    if (interior && scheme == TimeScheme::richardson_cn) {
      auto D = [&](int h) {
        double s = 0.0, f0 = F(i);
        for (int j = -p; j <= p; ++j) s += wc(j + p) * (F(i + j * h) - f0);
        return s / std::pow(static_cast<double>(h), n);
      };
      double d1 = D(1), d2 = D(2), d4 = D(4);
      double r1 = (4.0 * d1 - d2) / 3.0, r1b = (4.0 * d2 - d4) / 3.0;
      v = (16.0 * r1 - r1b) / 15.0;
    } else if (interior) {
      double s = 0.0, f0 = F(i);
      for (int j = -half; j <= half; ++j) s += wc(j + half) * (F(i + j) - f0);
      v = s;
    } else {
      int start = std::clamp(i - width / 2, lo, hi - width);
      int off = i - start;
      auto it = one_sided.find(off);
      if (it == one_sided.end())
        it = one_sided.emplace(off, fornberg(static_cast<double>(off), iota_nodes(0, width - 1), n)).first;
      double s = 0.0, f0 = F(i);
      for (int j = 0; j < width; ++j) s += it->second(j) * (F(start + j) - f0);
      v = s;
      if (bflag) bflag[i] = 1;
    }
    out[static_cast<std::ptrdiff_t>(i) * ostride] = v;
  }
}

// Segment breaks between two consecutive flagged second differences.
inline std::vector<int> jump_breaks(const double* f, std::ptrdiff_t stride, int N, double nsigma, int min_segment) {
  std::vector<int> br;
  if (N < 5) return br;
  std::vector<double> d2(N, 0.0), a;
  for (int i = 1; i + 1 < N; ++i) d2[i] = f[(i + 1) * stride] - 2 * f[i * stride] + f[(i - 1) * stride];
  a.assign(d2.begin() + 1, d2.end() - 1);
  auto med = [](std::vector<double> v) {
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    return v[v.size() / 2];
  };
  double m = med(a);
  for (auto& x : a) x = std::abs(x - m);
  double range = 0.0;
  for (int i = 0; i < N; ++i) range = std::max(range, std::abs(f[i * stride]));
  double sigma = std::max(1.4826 * med(a), 1e-10 * std::max(range, 1e-300));
  std::vector<unsigned char> flag(N, 0);
  for (int i = 1; i + 1 < N; ++i) flag[i] = std::abs(d2[i] - m) > nsigma * sigma;
  int last = 0;
  for (int i = 1; i + 2 < N; ++i)
    if (flag[i] && flag[i + 1]) {
      if (i + 1 - last >= min_segment && N - (i + 1) >= min_segment) {
        br.push_back(i + 1);
        last = i + 1;
      }
      ++i;
    }
  return br;
}

}  // namespace detail

// Order-n time derivative of each column (samples along rows).
inline Eigen::MatrixXd time_derivative(const Eigen::MatrixXd& X, double dt, int n,
                                       TimeScheme scheme = TimeScheme::richardson_cn,
                                       std::vector<unsigned char>* boundary = nullptr, bool detect_jumps = false,
                                       double jump_sigma = 5.0) {
  if (n < 1) throw UsageError("derivative order must be positive");
  const int N = static_cast<int>(X.rows());
  Eigen::MatrixXd out(X.rows(), X.cols());
  std::vector<unsigned char> bf(N, 0);
  double scale = std::pow(dt, -n);
  for (Eigen::Index c = 0; c < X.cols(); ++c) {
    const double* col = X.data() + c * X.rows();
    std::vector<int> cuts{0};
    if (detect_jumps)
      for (int b : detail::jump_breaks(col, 1, N, jump_sigma, n + 6)) cuts.push_back(b);
    cuts.push_back(N);
    std::vector<unsigned char> local(N, 0);
    for (std::size_t s = 0; s + 1 < cuts.size(); ++s)
      detail::series_derivative(col, 1, cuts[s], cuts[s + 1], n, scheme, out.data() + c * X.rows(), 1, local.data());
    for (int i = 0; i < N; ++i) bf[i] |= local[i];
  }
  out *= scale;
  if (boundary) *boundary = bf;
  return out;
}

struct SpaceDerivative {
  int d_lat = 0, d_lon = 0;
  Field values;
};

struct DerivativeStack {
  Field source;
  SobolevConfig cfg;
  std::vector<Field> time_derivs;            // [order - 1]
  std::vector<unsigned char> time_boundary;  // per time index
  std::vector<SpaceDerivative> space_derivs;

  const Field& time(int order) const {
    if (order < 1 || order > static_cast<int>(time_derivs.size()))
      throw UsageError("time derivative of order " + std::to_string(order) + " not available");
    return time_derivs[order - 1];
  }
  const Field& space(int d_lat, int d_lon) const {
    for (const auto& s : space_derivs)
      if (s.d_lat == d_lat && s.d_lon == d_lon) return s.values;
    throw UsageError("space derivative (" + std::to_string(d_lat) + "," + std::to_string(d_lon) + ") not available");
  }

  // Components: time orders first, then space multi-indices, each block n_comp wide.
  Field to_field() const {
    std::size_t blocks = time_derivs.size() + space_derivs.size();
    Field f(source.grid, source.time, blocks * source.n_comp);
    std::size_t per = source.n_comp * source.n_time() * source.n_cells();
    std::size_t b = 0;
    for (const auto& t : time_derivs) std::copy(t.values.begin(), t.values.end(), f.values.begin() + per * b++);
    for (const auto& s : space_derivs)
      std::copy(s.values.values.begin(), s.values.values.end(), f.values.begin() + per * b++);
    return f;
  }
};

inline DerivativeStack time_derivatives(const Field& f, const SobolevConfig& cfg) {
  cfg.validate();
  f.require_complete("time_derivatives");
  DerivativeStack st;
  st.source = f;
  st.cfg = cfg;
  st.time_boundary.assign(f.n_time(), 0);
  Eigen::MatrixXd X = f.flatten();
  for (int n = 1; n <= cfg.beta; ++n) {
    std::vector<unsigned char> b;
    Eigen::MatrixXd D = time_derivative(X, f.time.step, n, cfg.time_scheme, &b, cfg.detect_jumps, cfg.jump_sigma);
    for (std::size_t i = 0; i < b.size(); ++i) st.time_boundary[i] |= b[i];
    st.time_derivs.push_back(Field::from_flat(f.grid, f.time, D));
  }
  return st;
}

namespace detail {

inline double uniform_spacing(const std::vector<double>& a, const char* name) {
  double h = (a.back() - a.front()) / static_cast<double>(a.size() - 1);
  for (std::size_t i = 1; i < a.size(); ++i)
    if (std::abs((a[i] - a[i - 1]) - h) > 1e-9 * std::abs(h))
      throw UsageError(std::string(name) + " axis must be uniformly spaced for spatial derivatives");
  return h;
}

// Operator applied to all lines at once: columns of F are lines of length n.
struct LineOperator {
  Eigen::PartialPivLU<Eigen::MatrixXd> lhs;
  Eigen::MatrixXd rhs;
  Eigen::MatrixXd apply(const Eigen::MatrixXd& F) const { return lhs.solve(rhs * F); }
};

inline LineOperator compact_operator(int n, double h, int order, bool periodic) {
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n), B = Eigen::MatrixXd::Zero(n, n);
  auto wrap = [&](int i) { return ((i % n) + n) % n; };
  if (order == 1) {
    for (int i = 0; i < n; ++i) {
      bool edge = !periodic && (i == 0 || i == n - 1);
      if (edge) continue;
      A(i, i) = 1.0;
      A(i, wrap(i - 1)) += 0.25;
      A(i, wrap(i + 1)) += 0.25;
      B(i, wrap(i + 1)) += 0.75 / h;
      B(i, wrap(i - 1)) -= 0.75 / h;
    }
    if (!periodic) {
      A(0, 0) = 1.0;
      A(0, 1) = 3.0;
      B(0, 0) = -17.0 / 6.0 / h;
      B(0, 1) = 1.5 / h;
      B(0, 2) = 1.5 / h;
      B(0, 3) = -1.0 / 6.0 / h;
      A(n - 1, n - 1) = 1.0;
      A(n - 1, n - 2) = 3.0;
      B(n - 1, n - 1) = 17.0 / 6.0 / h;
      B(n - 1, n - 2) = -1.5 / h;
      B(n - 1, n - 3) = -1.5 / h;
      B(n - 1, n - 4) = 1.0 / 6.0 / h;
    }
  } else {
    double h2 = h * h;
    for (int i = 0; i < n; ++i) {
      bool edge = !periodic && (i == 0 || i == n - 1);
      if (edge) continue;
      A(i, i) = 1.0;
      A(i, wrap(i - 1)) += 0.1;
      A(i, wrap(i + 1)) += 0.1;
      B(i, wrap(i + 1)) += 1.2 / h2;
      B(i, i) -= 2.4 / h2;
      B(i, wrap(i - 1)) += 1.2 / h2;
    }
    if (!periodic) {
      for (int s = 0; s < 2; ++s) {
        int r = s ? n - 1 : 0, dir = s ? -1 : 1;
        A(r, r) = 1.0;
        A(r, r + dir) = 11.0;
        B(r, r) = 13.0 / h2;
        B(r, r + dir) = -27.0 / h2;
        B(r, r + 2 * dir) = 15.0 / h2;
        B(r, r + 3 * dir) = -1.0 / h2;
      }
    }
  }
  return {Eigen::PartialPivLU<Eigen::MatrixXd>(A), B};
}

inline LineOperator stencil_operator(int n, double h, int order, bool periodic) {
  int half = (order + 1) / 2 + 2, width = 2 * half + 1;
  if (!periodic && n < width)
    throw UsageError("axis of " + std::to_string(n) + " points shorter than stencil width " + std::to_string(width));
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd wc = fornberg(0.0, iota_nodes(-half, half), order);
  for (int i = 0; i < n; ++i) {
    if (periodic) {
      for (int j = -half; j <= half; ++j) B(i, ((i + j) % n + n) % n) += wc(j + half);
    } else {
      int start = std::clamp(i - half, 0, n - width);
      Eigen::VectorXd w = fornberg(static_cast<double>(i - start), iota_nodes(0, width - 1), order);
      for (int j = 0; j < width; ++j) B(i, start + j) = w(j);
    }
  }
  B /= std::pow(h, order);
  return {Eigen::PartialPivLU<Eigen::MatrixXd>(Eigen::MatrixXd::Identity(n, n)), B};
}

}  // namespace detail

enum class Periodicity { automatic, periodic, bounded };

struct SpaceOptions {
  Periodicity lon = Periodicity::automatic;
  bool lat_axis = true;
  bool lon_axis = true;
};

inline bool lon_is_periodic(const Grid& g, Periodicity p) {
  if (p != Periodicity::automatic) return p == Periodicity::periodic;
  double h = (g.lon.back() - g.lon.front()) / static_cast<double>(g.n_lon() - 1);
  return std::abs(std::abs(h) * static_cast<double>(g.n_lon()) - 360.0) < 1e-6;
}

// One derivative pass along an axis for every (component, time) slab.
inline Field axis_pass(const Field& f, bool along_lat, const detail::LineOperator& op) {
  Field out = f;
  std::size_t nla = f.grid.n_lat(), nlo = f.grid.n_lon();
  std::size_t slabs = f.n_comp * f.n_time();
  std::size_t len = along_lat ? nla : nlo, lines = along_lat ? nlo : nla;
  Eigen::MatrixXd F(len, slabs * lines);
  for (std::size_t s = 0; s < slabs; ++s)
    for (std::size_t l = 0; l < lines; ++l)
      for (std::size_t i = 0; i < len; ++i) {
        std::size_t cell = along_lat ? i * nlo + l : l * nlo + i;
        F(i, s * lines + l) = f.values[s * f.n_cells() + cell];
      }
  Eigen::MatrixXd G = op.apply(F);
  for (std::size_t s = 0; s < slabs; ++s)
    for (std::size_t l = 0; l < lines; ++l)
      for (std::size_t i = 0; i < len; ++i) {
        std::size_t cell = along_lat ? i * nlo + l : l * nlo + i;
        out.values[s * f.n_cells() + cell] = G(i, s * lines + l);
      }
  return out;
}

inline std::vector<SpaceDerivative> space_derivatives(const Field& f, const SobolevConfig& cfg,
                                                      const SpaceOptions& opt = {}) {
  cfg.validate();
  f.require_complete("space_derivatives");
  bool per_lon = lon_is_periodic(f.grid, opt.lon);
  auto make_ops = [&](bool lat) -> std::pair<detail::LineOperator, detail::LineOperator> {
    const auto& ax = lat ? f.grid.lat : f.grid.lon;
    const char* name = lat ? "lat" : "lon";
    int n = static_cast<int>(ax.size());
    if (n < 4) throw UsageError(std::string(name) + " axis has " + std::to_string(n) + " points; at least 4 needed");
    double h = detail::uniform_spacing(ax, name);
    bool per = !lat && per_lon;
    if (cfg.space_scheme == SpaceScheme::compact_adi)
      return {detail::compact_operator(n, h, 1, per), detail::compact_operator(n, h, 2, per)};
    return {detail::stencil_operator(n, h, 1, per), detail::stencil_operator(n, h, 2, per)};
  };
  std::vector<SpaceDerivative> out;
  std::optional<std::pair<detail::LineOperator, detail::LineOperator>> la, lo;
  if (opt.lat_axis) la = make_ops(true);
  if (opt.lon_axis) lo = make_ops(false);
  for (int tot = 1; tot <= cfg.beta; ++tot)
    for (int a = tot; a >= 0; --a) {
      int b = tot - a;
      if ((a && !la) || (b && !lo)) continue;
      // alternate lat and lon passes, second-derivative operator where two orders remain
      Field cur = f;
      int ra = a, rb = b;
      bool turn_lat = true;
      while (ra || rb) {
        bool use_lat = (turn_lat && ra) || !rb;
        int& r = use_lat ? ra : rb;
        const auto& ops = use_lat ? *la : *lo;
        if (r >= 2) {
          cur = axis_pass(cur, use_lat, ops.second);
          r -= 2;
        } else {
          cur = axis_pass(cur, use_lat, ops.first);
          r -= 1;
        }
        turn_lat = !use_lat;
      }
      out.push_back({a, b, std::move(cur)});
    }
  return out;
}

inline DerivativeStack derivative_stack(const Field& f, const SobolevConfig& cfg, const SpaceOptions& opt = {}) {
  DerivativeStack st = time_derivatives(f, cfg);
  if (opt.lat_axis || opt.lon_axis) st.space_derivs = space_derivatives(f, cfg, opt);
  return st;
}

// Per-sample Taylor jet of a response with respect to a driver state:
// coef[o-1] is N x (r * |multi_indices(d, o)|), response-major.
struct LocalJet {
  int d = 0, r = 0, max_order = 0;
  std::vector<std::vector<poly::MultiIndex>> indices;
  std::vector<Eigen::MatrixXd> coef;
  double worst_condition = 0.0;

  std::size_t samples() const { return coef.empty() ? 0 : static_cast<std::size_t>(coef[0].rows()); }
  double at(int order, std::size_t sample, int resp, std::size_t idx) const {
    return coef[order - 1](sample, resp * indices[order - 1].size() + idx);
  }
};

struct JetOptions {
  int degree = 0;              // local polynomial degree; 0 -> max(order, 3)
  double neighbor_factor = 3;  // neighbors = factor x monomial count
  double target_condition = 1e4;  // neighborhood grows until reached
  double max_condition = 1e10;
};

inline LocalJet state_space_gradient(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Xdot, int k,
                                     const JetOptions& opt = {}) {
  if (X.rows() != Xdot.rows()) throw UsageError("driver and response have different sample counts");
  if (k < 1) throw UsageError("gradient order must be positive");
  const int d = static_cast<int>(X.cols()), r = static_cast<int>(Xdot.cols());
  const int deg = opt.degree > 0 ? std::max(opt.degree, k) : std::max(k, 3);
  auto terms = poly::exponents_up_to(d, deg);
  const std::size_t nm = terms.size();
  const std::size_t N = X.rows();
  if (N < nm)
    throw NumericalError("state_space_gradient: " + std::to_string(N) + " samples for " + std::to_string(nm) +
                         " monomials");
  std::size_t nb = std::min<std::size_t>(N, static_cast<std::size_t>(std::ceil(opt.neighbor_factor * nm)));

  LocalJet jet;
  jet.d = d;
  jet.r = r;
  jet.max_order = k;
  for (int o = 1; o <= k; ++o) {
    jet.indices.push_back(poly::multi_indices(d, o));
    jet.coef.emplace_back(N, r * jet.indices.back().size());
  }
  // term position of each (order, multi-index)
  std::vector<std::vector<std::size_t>> pos(k);
  for (int o = 1; o <= k; ++o)
    for (const auto& m : jet.indices[o - 1]) {
      auto e = poly::to_exponent(m, d);
      pos[o - 1].push_back(std::find(terms.begin(), terms.end(), e) - terms.begin());
    }
  std::vector<double> conds(N, 0.0);
  std::vector<std::string> errs(N);
  parallel_for(N, [&](std::size_t s) {
    std::vector<std::pair<double, std::size_t>> dist(N);
    for (std::size_t q = 0; q < N; ++q) dist[q] = {(X.row(q) - X.row(s)).squaredNorm(), q};
    std::size_t m = nb, sorted = 0;
    double h = 1.0, cond = INFINITY;
    Eigen::MatrixXd C;
    while (true) {
      if (m > sorted) {
        std::partial_sort(dist.begin() + sorted, dist.begin() + m, dist.end());
        sorted = m;
      }
      h = std::sqrt(dist[m - 1].first);
      if (!(h > 0)) h = 1.0;
      Eigen::MatrixXd Xl(m, d), Yl(m, r);
      Eigen::VectorXd w(m);
      for (std::size_t q = 0; q < m; ++q) {
        Xl.row(q) = (X.row(dist[q].second) - X.row(s)) / h;
        Yl.row(q) = Xdot.row(dist[q].second);
        double u = std::sqrt(dist[q].first) / h;
        w(q) = std::exp(-0.5 * u * u);
      }
      Eigen::MatrixXd M = poly::design(Xl, terms);
      Eigen::VectorXd sw = w.cwiseSqrt();
      Eigen::MatrixXd A = sw.asDiagonal() * M, B = sw.asDiagonal() * Yl;
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
      const auto& sv = svd.singularValues();
      cond = sv(sv.size() - 1) > 0 ? sv(0) / sv(sv.size() - 1) : INFINITY;
      if (cond <= opt.target_condition || (m == N && cond <= opt.max_condition)) {
        C = svd.solve(B);
        break;
      }
      if (m == N) break;
      m = std::min(N, 2 * m);
    }
    conds[s] = cond;
    if (!(cond <= opt.max_condition)) {
      errs[s] = "neighborhood regression rank deficient at sample " + std::to_string(s) + ": condition " +
                std::to_string(cond) + " with " + std::to_string(m) + " neighbors and " + std::to_string(nm) +
                " monomials";
      return;
    }
    for (int o = 1; o <= k; ++o) {
      double hs = std::pow(h, -o);
      std::size_t ni = jet.indices[o - 1].size();
      for (std::size_t i = 0; i < ni; ++i) {
        const auto& m = jet.indices[o - 1][i];
        double ef = poly::exponent_factorial(poly::to_exponent(m, d));
        for (int c = 0; c < r; ++c) jet.coef[o - 1](s, c * ni + i) = ef * hs * C(pos[o - 1][i], c);
      }
    }
  });
  for (const auto& e : errs)
    if (!e.empty()) throw NumericalError(e);
  jet.worst_condition = *std::max_element(conds.begin(), conds.end());
  return jet;
}

// Jet from one polynomial fitted to all samples.
inline LocalJet global_gradient(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Xdot, int k, int degree,
                                poly::Polynomial* fitted = nullptr) {
  const int d = static_cast<int>(X.cols()), r = static_cast<int>(Xdot.cols());
  poly::FitReport rep;
  auto P = poly::fit_polynomial(X, Xdot, std::max(degree, k), &rep);
  LocalJet jet;
  jet.d = d;
  jet.r = r;
  jet.max_order = k;
  jet.worst_condition = rep.condition;
  for (int o = 1; o <= k; ++o) {
    jet.indices.push_back(poly::multi_indices(d, o));
    const auto& ix = jet.indices.back();
    Eigen::MatrixXd C(X.rows(), r * ix.size());
    for (std::size_t i = 0; i < ix.size(); ++i) {
      Eigen::MatrixXd D = P.derivative(poly::to_exponent(ix[i], d), X);
      for (int c = 0; c < r; ++c) C.col(c * ix.size() + i) = D.col(c);
    }
    jet.coef.push_back(std::move(C));
  }
  if (fitted) *fitted = std::move(P);
  return jet;
}

inline LocalJet state_space_gradient(const Field& driver, const DerivativeStack& response, int k,
                                     const JetOptions& opt = {}) {
  if (driver.n_time() != response.source.n_time()) throw UsageError("driver and response time axes differ");
  return state_space_gradient(driver.flatten(), response.time(1).flatten(), k, opt);
}

}  // namespace dsa
