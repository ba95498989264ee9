#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dsa/error.hpp"
#include "dsa/field.hpp"
#include "dsa/infostats.hpp"
#include "dsa/interaction.hpp"
#include "dsa/io.hpp"
#include "dsa/numdiff.hpp"
#include "dsa/optimize.hpp"
#include "dsa/parallel.hpp"
#include "dsa/polynomial.hpp"
#include "dsa/rng.hpp"

namespace dsa {

enum class TransformKind { linear, polynomial };

inline TransformKind parse_transform_kind(const std::string& s) {
  if (s == "linear") return TransformKind::linear;
  if (s == "polynomial") return TransformKind::polynomial;
  throw UsageError("unknown transform kind '" + s + "'");
}

// y -> x: centre, whiten onto p principal directions, rotate to m columns,
// optional polynomial correction, then standardize (sign folded into scale).
struct SourceTransform {
  TransformKind kind = TransformKind::linear;
  int degree = 1;
  int m = 0;
  int p = 0;
  Eigen::VectorXd mean;      // n_obs
  Eigen::MatrixXd whiten;    // n_obs x p
  Eigen::MatrixXd rotation;  // p x m
  std::vector<poly::Exponent> quad_terms;
  Eigen::MatrixXd quad;  // n_terms x m
  Eigen::VectorXd out_mean, out_scale;

  Eigen::Index n_obs() const { return mean.size(); }

  Eigen::MatrixXd whitened(const Eigen::MatrixXd& Y) const {
    if (Y.cols() != n_obs()) throw UsageError("transform expects " + std::to_string(n_obs()) + " observables");
    return (Y.rowwise() - mean.transpose()) * whiten;
  }

  Eigen::MatrixXd unscaled(const Eigen::MatrixXd& Z) const {
    Eigen::MatrixXd X = Z * rotation;
    if (!quad_terms.empty()) X += poly::design(X, quad_terms) * quad;
    return X;
  }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& Y) const {
    Eigen::MatrixXd X = unscaled(whitened(Y));
    return (X.rowwise() - out_mean.transpose()).array().rowwise() / out_scale.transpose().array();
  }

  // Loadings of the linear part on the observables.
  Eigen::MatrixXd linear_part() const { return whiten * rotation * out_scale.cwiseInverse().asDiagonal(); }

  std::string serialize() const {
    std::ostringstream s;
    auto row = [&](const auto& v) {
      for (Eigen::Index i = 0; i < v.size(); ++i) s << (i ? " " : "") << io::fmt(v(i));
      s << "\n";
    };
    s << "kind " << (kind == TransformKind::linear ? "linear" : "polynomial") << "\n";
    s << "degree " << degree << "\nn_obs " << n_obs() << "\np " << p << "\nm " << m << "\n";
    s << "mean\n";
    row(mean);
    s << "whiten\n";
    for (Eigen::Index i = 0; i < whiten.rows(); ++i) row(whiten.row(i));
    s << "rotation\n";
    for (Eigen::Index i = 0; i < rotation.rows(); ++i) row(rotation.row(i));
    s << "quad " << quad_terms.size() << "\n";
    for (std::size_t q = 0; q < quad_terms.size(); ++q) {
      for (int e : quad_terms[q]) s << e << " ";
      row(quad.row(q));
    }
    s << "out_mean\n";
    row(out_mean);
    s << "out_scale\n";
    row(out_scale);
    return s.str();
  }

  static SourceTransform parse(const std::string& text) {
    std::istringstream in(text);
    SourceTransform t;
    std::string key, kind;
    auto expect = [&](const char* k) {
      if (!(in >> key) || key != k) throw IoError(std::string("transform file: expected '") + k + "'");
    };
    auto num = [&]() {
      std::string tok;
      double v = 0.0;
      if (!(in >> tok)) throw IoError("transform file truncated");
      if (!io::parse_double(tok, v)) throw IoError("transform file: bad number '" + tok + "'");
      return v;
    };
    auto count = [&]() {
      double v = num();
      if (!(v >= 0 && v < 1e7) || v != std::floor(v)) throw IoError("transform file: bad count");
      return static_cast<int>(v);
    };
    expect("kind");
    in >> kind;
    t.kind = kind == "polynomial" ? TransformKind::polynomial
             : kind == "linear"   ? TransformKind::linear
                                  : throw IoError("transform file: unknown kind '" + kind + "'");
    expect("degree");
    t.degree = count();
    expect("n_obs");
    int n = count();
    expect("p");
    t.p = count();
    expect("m");
    t.m = count();
    expect("mean");
    t.mean.resize(n);
    for (int i = 0; i < n; ++i) t.mean(i) = num();
    expect("whiten");
    t.whiten.resize(n, t.p);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < t.p; ++j) t.whiten(i, j) = num();
    expect("rotation");
    t.rotation.resize(t.p, t.m);
    for (int i = 0; i < t.p; ++i)
      for (int j = 0; j < t.m; ++j) t.rotation(i, j) = num();
    expect("quad");
    int nq = count();
    t.quad.resize(nq, t.m);
    for (int q = 0; q < nq; ++q) {
      poly::Exponent e(t.m);
      for (int j = 0; j < t.m; ++j) e[j] = count();
      t.quad_terms.push_back(e);
      for (int j = 0; j < t.m; ++j) t.quad(q, j) = num();
    }
    expect("out_mean");
    t.out_mean.resize(t.m);
    for (int j = 0; j < t.m; ++j) t.out_mean(j) = num();
    expect("out_scale");
    t.out_scale.resize(t.m);
    for (int j = 0; j < t.m; ++j) t.out_scale(j) = num();
    return t;
  }
};

struct PhysicalScores {
  double gamma = 0.0;               // entropy rate, nat per step (equienergetic shell)
  double gamma_unrestricted = 0.0;  // same over every sample
  double xi = 0.0;                  // mean d(phi)/dt over the isentropic shell
  std::vector<double> lyapunov;
  Eigen::MatrixXd phi;  // quadratic form
  std::size_t energy_shell = 0, entropy_shell = 0;
};

struct PhysicalOptions {
  double band = 0.1;  // fraction of the interquartile range
  int degree = 3;
};

struct ExtractConfig {
  SobolevConfig sobolev;
  int orders = 3;  // k = 1..orders in the objective
  int fit_degree = 3;
  int m_max = 0;  // 0: number of retained principal directions
  int max_pcs = 6;
  TransformKind kind = TransformKind::linear;
  int poly_degree = 2;
  int restarts = 16;
  int max_iter = 500;
  double grad_tol = 1e-8;
  double complement_weight = 10.0;
  double tie_fraction = 0.05;
  int sobolev_order = 1;
  int trim = 16;
  std::uint64_t seed = 1;
  int shuffles = 200;
  bool cutoff = true;
  PhysicalOptions physical;

  void validate() const {
    sobolev.validate();
    if (orders < 1 || orders > sobolev.beta) throw UsageError("objective orders must lie in [1, beta]");
    if (fit_degree < orders || fit_degree > 6) throw UsageError("fit degree must lie in [orders, 6]");
    if (m_max < 0 || max_pcs < 1 || max_pcs > 12) throw UsageError("m_max >= 0 and max_pcs in [1, 12] required");
    if (poly_degree < 2 || poly_degree > 3) throw UsageError("polynomial transform degree must be 2 or 3");
    if (restarts < 1 || max_iter < 1) throw UsageError("restarts and max_iter must be positive");
    if (!(complement_weight >= 0) || !(tie_fraction >= 0)) throw UsageError("weights must be non-negative");
    if (sobolev_order < 0 || sobolev_order > 1) throw UsageError("sobolev order must be 0 or 1");
    if (shuffles < 0 || trim < 0) throw UsageError("shuffles and trim must be non-negative");
    if (!(physical.band > 0)) throw UsageError("shell band must be positive");
  }
};

struct DynamicSourceSet {
  Field sources;
  SourceTransform transform;
  std::vector<InteractionTensor> stack;
  std::vector<double> nu;      // per k
  std::vector<double> nu_raw;  // whitened observables
  PhysicalScores physical;
  std::vector<bool> retained;
  std::vector<InfoResult> cutoff_info;
  double objective = 0.0;
  double objective_initial = 0.0;
  std::string audit;

  std::size_t m() const { return sources.n_comp; }
  Eigen::MatrixXd matrix() const {
    Eigen::MatrixXd X(sources.n_time(), sources.n_comp);
    for (std::size_t c = 0; c < sources.n_comp; ++c)
      for (std::size_t t = 0; t < sources.n_time(); ++t) X(t, c) = sources.at(c, t, 0);
    return X;
  }
  std::size_t n_retained() const { return static_cast<std::size_t>(std::count(retained.begin(), retained.end(), true)); }
  Eigen::MatrixXd retained_matrix() const {
    Eigen::MatrixXd X = matrix(), R(X.rows(), n_retained());
    for (std::size_t c = 0, j = 0; c < retained.size(); ++c)
      if (retained[c]) R.col(j++) = X.col(c);
    return R;
  }
};

namespace detail {

// Least squares on column-scaled design, minimum-norm on dependent columns.
inline Eigen::MatrixXd robust_lsq(const Eigen::MatrixXd& M, const Eigen::MatrixXd& Y) {
  Eigen::VectorXd scale = M.colwise().norm().transpose();
  for (Eigen::Index j = 0; j < scale.size(); ++j)
    if (!(scale(j) > 0)) scale(j) = 1.0;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(M * scale.cwiseInverse().asDiagonal());
  cod.setThreshold(1e-10);
  return scale.cwiseInverse().asDiagonal() * cod.solve(Y);
}

inline poly::Polynomial robust_fit(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, int degree) {
  poly::Polynomial P;
  P.d = static_cast<int>(X.cols());
  P.terms = poly::exponents_up_to(P.d, degree);
  if (static_cast<std::size_t>(X.rows()) < 2 * P.terms.size())
    throw NumericalError("too few samples (" + std::to_string(X.rows()) + ") for a degree-" + std::to_string(degree) +
                         " fit in " + std::to_string(P.d) + " variables");
  P.coef = robust_lsq(poly::design(X, P.terms), Y);
  return P;
}

inline std::vector<InteractionTensor> robust_stack(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Xd, int orders,
                                                   int degree, int sobolev_order, double dt) {
  auto P = robust_fit(X, Xd, std::max(degree, orders));
  const int d = static_cast<int>(X.cols());
  std::vector<InteractionTensor> out;
  for (int k = 1; k <= orders; ++k) {
    InteractionTensor T;
    T.k = k;
    T.n_resp = static_cast<int>(Xd.cols());
    T.n_drv = d;
    T.indices = poly::multi_indices(d, k);
    T.per_sample.resize(X.rows(), T.n_resp * T.indices.size());
    for (std::size_t i = 0; i < T.indices.size(); ++i) {
      Eigen::MatrixXd D = P.derivative(poly::to_exponent(T.indices[i], d), X);
      for (int r = 0; r < T.n_resp; ++r) T.per_sample.col(T.col(r, i)) = D.col(r);
    }
    T.sobolev_order = sobolev_order;
    T.dt = dt;
    finalize_tensor(T, Xd, 1e-3);
    out.push_back(std::move(T));
  }
  return out;
}

inline double weighted_nu(const std::vector<InteractionTensor>& st) {
  double s = 0.0;
  for (const auto& T : st) s += T.offdiag_norm / poly::factorial(T.k);
  return s;
}

inline Eigen::MatrixXd skew_rotation(const Eigen::VectorXd& th, int p) {
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
  int q = 0;
  for (int i = 0; i < p; ++i)
    for (int j = i + 1; j < p; ++j) {
      A(i, j) = th(q);
      A(j, i) = -th(q);
      ++q;
    }
  return A.exp();
}

inline double residual_fraction(const Eigen::MatrixXd& X, const Eigen::MatrixXd& R, int degree) {
  double tot = R.squaredNorm();
  if (!(tot > 0)) return 0.0;
  Eigen::MatrixXd F = poly::design(X, poly::exponents_up_to(static_cast<int>(X.cols()), degree));
  Eigen::MatrixXd C = robust_lsq(F, R);
  return (R - F * C).squaredNorm() / tot;
}

inline Eigen::VectorXd quantile_band(const Eigen::VectorXd& v) {
  std::vector<double> s(v.data(), v.data() + v.size());
  Eigen::VectorXd q(3);
  q << quantile(s, 0.25), quantile(s, 0.5), quantile(s, 0.75);
  return q;
}

inline std::vector<Eigen::Index> shell(const Eigen::VectorXd& v, double band, const char* what) {
  Eigen::VectorXd q = quantile_band(v);
  double iqr = q(2) - q(0), tol = 1e-12 * std::max(1.0, v.cwiseAbs().maxCoeff());
  for (int attempt = 0; attempt < 2; ++attempt, band *= 10) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index t = 0; t < v.size(); ++t)
      if (std::abs(v(t) - q(1)) <= band * iqr + tol) idx.push_back(t);
    if (!idx.empty()) return idx;
  }
  throw NumericalError(std::string("no samples in the ") + what + " shell");
}

// Whitened principal directions of the flattened, area-weighted observables.
struct Problem {
  Eigen::MatrixXd Z, Zd;    // full length
  Eigen::MatrixXd Zo, Zdo;  // trimmed for the objective
  SourceTransform base;
  double dt = 1.0;
};

inline Problem make_problem(const Field& y, const ExtractConfig& cfg) {
  y.require_complete("extract_sources");
  Problem pb;
  pb.dt = y.time.step;
  Eigen::MatrixXd Y = y.flatten();
  const Eigen::Index n = Y.rows(), no = Y.cols();
  Eigen::VectorXd w(no);
  for (std::size_t c = 0; c < y.n_comp; ++c)
    for (std::size_t k = 0; k < y.n_cells(); ++k) w(c * y.n_cells() + k) = std::sqrt(y.grid.weights[k]);
  Eigen::VectorXd mean = Y.colwise().mean().transpose();
  Eigen::MatrixXd Yw = (Y.rowwise() - mean.transpose()) * w.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Yw.transpose() * Yw / static_cast<double>(n));
  Eigen::VectorXd ev = es.eigenvalues().reverse();
  Eigen::MatrixXd V = es.eigenvectors().rowwise().reverse();
  if (!(ev(0) > 0)) throw NumericalError("observables have zero variance");
  int p = 0;
  while (p < ev.size() && p < cfg.max_pcs && ev(p) > 1e-10 * ev(0)) ++p;
  SourceTransform& t = pb.base;
  t.mean = mean;
  t.p = p;
  t.whiten = w.asDiagonal() * V.leftCols(p) * ev.head(p).cwiseSqrt().cwiseInverse().asDiagonal();
  for (int j = 0; j < p; ++j) {
    Eigen::Index r;
    t.whiten.col(j).cwiseAbs().maxCoeff(&r);
    if (t.whiten(r, j) < 0) t.whiten.col(j) *= -1;
  }
  pb.Z = t.whitened(Y);
  pb.Zd = time_derivative(pb.Z, pb.dt, 1, cfg.sobolev.time_scheme);
  Eigen::Index tr = n > 10 * (2 * cfg.trim + 1) ? cfg.trim : 0;
  pb.Zo = pb.Z.middleRows(tr, n - 2 * tr);
  pb.Zdo = pb.Zd.middleRows(tr, n - 2 * tr);
  return pb;
}

inline double objective(const Problem& pb, const Eigen::MatrixXd& W, int m, const ExtractConfig& cfg,
                        const Eigen::MatrixXd* X_override = nullptr, const Eigen::MatrixXd* Xd_override = nullptr) {
  Eigen::MatrixXd X = X_override ? *X_override : Eigen::MatrixXd(pb.Zo * W.leftCols(m));
  Eigen::MatrixXd Xd = Xd_override ? *Xd_override : Eigen::MatrixXd(pb.Zdo * W.leftCols(m));
  double v = weighted_nu(robust_stack(X, Xd, cfg.orders, cfg.fit_degree, cfg.sobolev_order, pb.dt));
  if (m < pb.Zo.cols()) v += cfg.complement_weight * residual_fraction(X, pb.Zo * W.rightCols(pb.Zo.cols() - m), 2);
  return v;
}

struct Restart {
  int m = 0;
  Eigen::VectorXd theta;
  double f = 0.0;
  bool converged = false;
};

}  // namespace detail

inline PhysicalScores physical_scores(const Eigen::MatrixXd& X, double dt, const PhysicalOptions& opt = {}) {
  const Eigen::Index N = X.rows();
  const int m = static_cast<int>(X.cols());
  if (N < 16 || m < 1) throw UsageError("physical_scores needs at least 16 samples");
  PhysicalScores ps;
  // one-step map and tangent propagation
  Eigen::MatrixXd X0 = X.topRows(N - 1), X1 = X.bottomRows(N - 1);
  // lowest degree that fits the one-step map as well as the highest
  std::vector<poly::Polynomial> fits;
  std::vector<double> res;
  for (int dg = 1; dg <= opt.degree; ++dg) {
    fits.push_back(detail::robust_fit(X0, X1, dg));
    res.push_back((X1 - fits.back().eval(X0)).squaredNorm());
  }
  std::size_t pick = 0;
  while (pick + 1 < fits.size() && res[pick] > 1.05 * res.back() + 1e-20 * X1.squaredNorm()) ++pick;
  const poly::Polynomial& F = fits[pick];
  std::vector<Eigen::MatrixXd> Dj(m);
  for (int j = 0; j < m; ++j) {
    poly::Exponent e(m, 0);
    e[j] = 1;
    Dj[j] = F.derivative(e, X0);
  }
  Eigen::MatrixXd L(N - 1, m);
  Eigen::MatrixXd Q = Eigen::MatrixXd::Identity(m, m), J(m, m);
  for (Eigen::Index t = 0; t + 1 < N; ++t) {
    for (int j = 0; j < m; ++j) J.col(j) = Dj[j].row(t).transpose();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(J * Q);
    Eigen::MatrixXd R = qr.matrixQR().triangularView<Eigen::Upper>();
    Q = qr.householderQ() * Eigen::MatrixXd::Identity(m, m);
    for (int i = 0; i < m; ++i) {
      if (R(i, i) < 0) Q.col(i) *= -1;
      L(t, i) = std::log(std::max(std::abs(R(i, i)), 1e-300));
    }
  }
  // quadratic energy form
  Eigen::MatrixXd Xd = time_derivative(X, dt, 1);
  const int np = m * (m + 1) / 2;
  auto form = [m](const Eigen::VectorXd& th) {
    Eigen::MatrixXd Lt = Eigen::MatrixXd::Zero(m, m);
    int q = 0;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j <= i; ++j) Lt(i, j) = th(q++);
    Eigen::MatrixXd P = Lt * Lt.transpose();
    double tr = P.trace();
    return Eigen::MatrixXd(tr > 0 ? Eigen::MatrixXd(P * (m / tr)) : Eigen::MatrixXd::Identity(m, m));
  };
  auto violation = [&](const Eigen::VectorXd& th) {
    Eigen::MatrixXd P = form(th);
    Eigen::VectorXd r = 2.0 * ((X * P).array() * Xd.array()).rowwise().sum();
    return r.cwiseMax(0.0).squaredNorm() / static_cast<double>(N);
  };
  Eigen::VectorXd th0 = Eigen::VectorXd::Zero(np);
  for (int i = 0, q = 0; i < m; ++i)
    for (int j = 0; j <= i; ++j, ++q)
      if (i == j) th0(q) = 1.0;
  BfgsOptions bo;
  bo.max_iter = 200;
  bo.grad_tol = 1e-14;
  ps.phi = form(bfgs(violation, th0, bo).x);
  Eigen::VectorXd phi = ((X * ps.phi).array() * X.array()).rowwise().sum();
  Eigen::VectorXd dphi = 2.0 * ((X * ps.phi).array() * Xd.array()).rowwise().sum();
  // exponents on the equienergetic shell
  auto es = detail::shell(phi.head(N - 1), opt.band, "equienergetic");
  ps.energy_shell = es.size();
  ps.lyapunov.assign(m, 0.0);
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    for (auto t : es) s += L(t, i);
    ps.lyapunov[i] = s / static_cast<double>(es.size());
    ps.gamma += std::max(0.0, ps.lyapunov[i]);
    ps.gamma_unrestricted += std::max(0.0, L.col(i).mean());
  }
  // energy rate on the isentropic shell
  Eigen::VectorXd ent = L.cwiseMax(0.0).rowwise().sum();
  auto is = detail::shell(ent, opt.band, "isentropic");
  ps.entropy_shell = is.size();
  double s = 0.0;
  for (auto t : is) s += dphi(t);
  ps.xi = s / static_cast<double>(is.size());
  return ps;
}

inline PhysicalScores physical_scores(const DynamicSourceSet& x, const PhysicalOptions& opt = {}) {
  if (x.stack.empty()) throw UsageError("physical_scores: interaction stack missing");
  return physical_scores(x.matrix(), x.sources.time.step, opt);
}

inline DynamicSourceSet disambiguate(std::vector<DynamicSourceSet> candidates) {
  if (candidates.empty()) throw UsageError("disambiguate: no candidates");
  std::size_t best = 0;
  auto nu1 = [](const DynamicSourceSet& s) { return s.nu.empty() ? 0.0 : s.nu[0]; };
  std::ostringstream audit;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    audit << "candidate " << i << " gamma " << io::fmt(c.physical.gamma) << " xi " << io::fmt(c.physical.xi) << " nu1 "
          << io::fmt(nu1(c)) << "\n";
    if (i == 0) continue;
    const auto& b = candidates[best];
    double dg = c.physical.gamma - b.physical.gamma, dx = c.physical.xi - b.physical.xi;
    bool better;
    if (std::abs(dg) > 1e-9) {
      better = dg > 0;
    } else if (std::abs(dx) > 1e-9) {
      better = dx < 0;
    } else {
      better = nu1(c) < nu1(b);
    }
    if (better) best = i;
  }
  audit << "selected " << best << "\n";
  DynamicSourceSet w = std::move(candidates[best]);
  w.audit += audit.str();
  return w;
}

namespace detail {

// Sign, order and scale conventions; recomputes stack and scores.
inline DynamicSourceSet build_set(const Problem& pb, SourceTransform t, const Field& y, const ExtractConfig& cfg) {
  Eigen::MatrixXd X = t.unscaled(pb.Z);
  const int m = t.m;
  t.out_mean = X.colwise().mean().transpose();
  t.out_scale.resize(m);
  for (int j = 0; j < m; ++j) {
    double sd = std::sqrt((X.col(j).array() - t.out_mean(j)).square().mean());
    if (!(sd > 0)) throw NumericalError("extracted source " + std::to_string(j) + " has zero variance");
    t.out_scale(j) = sd;
  }
  Eigen::MatrixXd Lp = t.linear_part();
  std::vector<std::pair<Eigen::Index, double>> key(m);
  for (int j = 0; j < m; ++j) {
    Eigen::Index r;
    Lp.col(j).cwiseAbs().maxCoeff(&r);
    if (Lp(r, j) < 0) t.out_scale(j) *= -1;
    key[j] = {r, -std::abs(Lp(r, j))};
  }
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return key[a] < key[b]; });
  if (t.quad_terms.empty()) {
    SourceTransform u = t;
    for (int j = 0; j < m; ++j) {
      u.rotation.col(j) = t.rotation.col(order[j]);
      u.out_mean(j) = t.out_mean(order[j]);
      u.out_scale(j) = t.out_scale(order[j]);
    }
    t = u;
  }
  DynamicSourceSet s;
  s.transform = t;
  Eigen::MatrixXd S = t.apply(y.flatten());
  s.sources = Field(Grid::make({0.0}, {0.0}), y.time, m);
  for (int c = 0; c < m; ++c)
    for (Eigen::Index k = 0; k < S.rows(); ++k) s.sources.at(c, k, 0) = S(k, c);
  Eigen::MatrixXd Sd = time_derivative(S, pb.dt, 1, cfg.sobolev.time_scheme);
  s.stack = robust_stack(S, Sd, cfg.orders, cfg.fit_degree, cfg.sobolev_order, pb.dt);
  for (const auto& T : s.stack) s.nu.push_back(T.offdiag_norm);
  s.retained.assign(m, true);
  return s;
}

inline std::vector<double> nu_of(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Xd, const ExtractConfig& cfg,
                                 double dt) {
  std::vector<double> v;
  for (const auto& T : robust_stack(X, Xd, cfg.orders, cfg.fit_degree, cfg.sobolev_order, dt)) v.push_back(T.offdiag_norm);
  return v;
}

inline bool same_sources(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  if (A.cols() != B.cols()) return false;
  Eigen::MatrixXd C = (A.transpose() * B) / static_cast<double>(A.rows());
  for (Eigen::Index i = 0; i < C.rows(); ++i)
    if (C.row(i).cwiseAbs().maxCoeff() < 0.999) return false;
  return true;
}

inline void refine_polynomial(const Problem& pb, SourceTransform& t, const ExtractConfig& cfg, double& f) {
  const int m = t.m;
  auto terms = poly::exponents_up_to(m, cfg.poly_degree, 2);
  Eigen::MatrixXd Xl = pb.Zo * t.rotation, Ml = poly::design(Xl, terms);
  auto params = [&](const Eigen::VectorXd& th) {
    return Eigen::Map<const Eigen::MatrixXd>(th.data(), static_cast<Eigen::Index>(terms.size()), m);
  };
  // complement uses the same orthogonal completion as the linear stage
  Eigen::MatrixXd full = pb.Zo.cols() > m
                             ? Eigen::MatrixXd(Eigen::HouseholderQR<Eigen::MatrixXd>(t.rotation).householderQ())
                             : t.rotation;
  full.leftCols(m) = t.rotation;
  auto obj = [&](const Eigen::VectorXd& th) {
    Eigen::MatrixXd X = Xl + Ml * params(th);
    Eigen::MatrixXd Xd = time_derivative(X, pb.dt, 1, cfg.sobolev.time_scheme);
    return objective(pb, full, m, cfg, &X, &Xd);
  };
  BfgsOptions bo;
  bo.max_iter = std::min(cfg.max_iter, 100);
  bo.grad_tol = cfg.grad_tol;
  Eigen::VectorXd th0 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(terms.size()) * m);
  auto r = bfgs(obj, th0, bo);
  if (!(r.f < f)) return;
  Eigen::MatrixXd Q = params(r.x);
  // injectivity on the data cloud
  for (Eigen::Index s = 0; s < Xl.rows(); ++s) {
    Eigen::MatrixXd Jt = Eigen::MatrixXd::Identity(m, m);
    for (std::size_t q = 0; q < terms.size(); ++q)
      for (int a = 0; a < m; ++a) {
        if (terms[q][a] == 0) continue;
        double v = terms[q][a];
        for (int b = 0; b < m; ++b) v *= std::pow(Xl(s, b), terms[q][b] - (b == a ? 1 : 0));
        Jt.row(a) += v * Q.row(q);
      }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Jt);
    double cond = svd.singularValues()(0) / svd.singularValues()(m - 1);
    if (!(cond <= 1e8)) throw NumericalError("polynomial transform not injective on the data (condition " + io::fmt(cond) + ")");
  }
  t.kind = TransformKind::polynomial;
  t.degree = cfg.poly_degree;
  t.quad_terms = terms;
  t.quad = Q;
  f = r.f;
}

}  // namespace detail

// Retain sources whose fitted tendency shares information with the observed tendencies.
inline DynamicSourceSet cutoff_sources(DynamicSourceSet x, const Field& y, int shuffles, std::uint64_t seed = 1,
                                       int degree = 3) {
  const Eigen::MatrixXd X_all = x.matrix();
  if (static_cast<std::size_t>(X_all.rows()) != y.n_time()) throw UsageError("cutoff: time axes differ");
  Eigen::MatrixXd Zy = x.transform.whitened(y.flatten());
  std::vector<unsigned char> edge;
  Eigen::MatrixXd Zyd_all = time_derivative(Zy, y.time.step, 1, TimeScheme::richardson_cn, &edge);
  Eigen::MatrixXd Xd_all = time_derivative(X_all, y.time.step, 1);
  // one-sided boundary stencils couple a tendency to the current state; drop them
  Eigen::Index lo = 0, hi = X_all.rows();
  while (lo < hi && edge[lo]) ++lo;
  while (hi > lo && edge[hi - 1]) --hi;
  const Eigen::MatrixXd X = X_all.middleRows(lo, hi - lo), Xd = Xd_all.middleRows(lo, hi - lo);
  const Eigen::MatrixXd Zyd = Zyd_all.middleRows(lo, hi - lo);
  const Eigen::Index N = X.rows();
  const int m = static_cast<int>(X.cols()), p = static_cast<int>(Zy.cols());
  Columns a{0}, b(p);
  std::iota(b.begin(), b.end(), 1);
  const Eigen::Index h = N / 2;
  // two-fold cross-fitted tendency model of one source
  auto stat = [&](const Eigen::VectorXd& target) {
    Eigen::MatrixXd A(N, 1 + p);
    auto Pa = detail::robust_fit(X.topRows(h), target.head(h), degree);
    auto Pb = detail::robust_fit(X.bottomRows(N - h), target.tail(N - h), degree);
    A.col(0).head(h) = Pb.eval(X.topRows(h));
    A.col(0).tail(N - h) = Pa.eval(X.bottomRows(N - h));
    A.rightCols(p) = Zyd;
    if ((A.col(0).array() - A.col(0).mean()).abs().maxCoeff() <= 1e-300) return 0.0;
    return gaussian_mi(correlation(anamorphosis(A)), a, b, 20.0, nullptr);
  };
  x.retained.assign(m, false);
  x.cutoff_info.assign(m, InfoResult{});
  for (int i = 0; i < m; ++i) {
    InfoResult& r = x.cutoff_info[i];
    const Eigen::VectorXd target = Xd.col(i);
    r.raw = r.value = stat(target);
    fill_null(r, shuffles, split_seed(seed, i), [&](Rng& g) {
      auto perm = permutation(N, g);
      Eigen::VectorXd tp(N);
      for (Eigen::Index t = 0; t < N; ++t) tp(t) = target(perm[t]);
      return stat(tp);
    });
    x.retained[i] = r.significant();
  }
  return x;
}

// Off-diagonal norm per order against cyclically shifted sources.
inline std::vector<InfoResult> diagonality_test(const DynamicSourceSet& x, int shuffles, std::uint64_t seed = 1,
                                                int degree = 3, int sobolev_order = 1) {
  const Eigen::MatrixXd X = x.matrix();
  const double dt = x.sources.time.step;
  const Eigen::MatrixXd Xd = time_derivative(X, dt, 1);
  const int orders = static_cast<int>(x.stack.size());
  if (orders == 0) throw UsageError("diagonality_test: interaction stack missing");
  const Eigen::Index N = X.rows();
  std::vector<InfoResult> out(orders);
  auto obs = detail::robust_stack(X, Xd, orders, degree, sobolev_order, dt);
  for (int k = 0; k < orders; ++k) out[k].raw = out[k].value = obs[k].offdiag_norm;
  if (shuffles <= 0 || X.cols() < 2) return out;
  std::vector<std::vector<double>> null(orders, std::vector<double>(shuffles));
  parallel_for(shuffles, [&](std::size_t s) {
    Rng g = make_rng(seed, s);
    Eigen::MatrixXd Xs = X, Xds = Xd;
    for (Eigen::Index c = 1; c < X.cols(); ++c) {
      Eigen::Index sh = 1 + static_cast<Eigen::Index>(uniform_index(g, N - 1));
      for (Eigen::Index t = 0; t < N; ++t) {
        Xs(t, c) = X((t + sh) % N, c);
        Xds(t, c) = Xd((t + sh) % N, c);
      }
    }
    auto st = detail::robust_stack(Xs, Xds, orders, degree, sobolev_order, dt);
    for (int k = 0; k < orders; ++k) null[k][s] = st[k].offdiag_norm;
  });
  for (int k = 0; k < orders; ++k) {
    out[k].n_shuffles = shuffles;
    out[k].null_mean = mean_of(null[k]);
    out[k].null_sd = sd_of(null[k]);
    out[k].null_q95 = quantile(null[k], 0.95);
  }
  return out;
}

inline DynamicSourceSet extract_sources(const Field& y, const ExtractConfig& cfg = {}) {
  cfg.validate();
  auto pb = detail::make_problem(y, cfg);
  const int p = static_cast<int>(pb.Z.cols());
  const int m_max = cfg.m_max > 0 ? std::min(cfg.m_max, p) : p;
  if (m_max > 32) throw UsageError("source count exceeds the state limit");
  const int nth = p * (p - 1) / 2;
  std::vector<detail::Restart> runs;
  for (int m = 1; m <= m_max; ++m)
    for (int r = 0; r < cfg.restarts; ++r) runs.push_back({m, Eigen::VectorXd::Zero(nth), 0.0, false});
  BfgsOptions bo;
  bo.max_iter = cfg.max_iter;
  bo.grad_tol = cfg.grad_tol;
  parallel_for(runs.size(), [&](std::size_t i) {
    auto& run = runs[i];
    Eigen::VectorXd th0 = Eigen::VectorXd::Zero(nth);
    if (i % cfg.restarts != 0) {
      Rng g = make_rng(cfg.seed, i);
      NormalSampler ns;
      for (int q = 0; q < nth; ++q) th0(q) = 2.0 * ns(g);
    }
    auto f = [&](const Eigen::VectorXd& th) {
      return detail::objective(pb, detail::skew_rotation(th, p), run.m, cfg);
    };
    auto res = bfgs(f, th0, bo);
    run.theta = res.x;
    run.f = res.f;
    run.converged = res.converged;
  });
  std::size_t best = runs.size();
  for (std::size_t i = 0; i < runs.size(); ++i)
    if (runs[i].converged && std::isfinite(runs[i].f) && (best == runs.size() || runs[i].f < runs[best].f)) best = i;
  if (best == runs.size()) throw NumericalError("source optimization did not converge in any restart");
  const int m = runs[best].m;
  const double fbest = runs[best].f;
  const double f0 = detail::objective(pb, Eigen::MatrixXd::Identity(p, p), p, cfg);

  std::vector<DynamicSourceSet> cands;
  std::vector<Eigen::MatrixXd> seen;
  std::vector<double> fs;
  for (std::size_t i = 0; i < runs.size() && cands.size() < 8; ++i) {
    const auto& run = runs[i];
    if (run.m != m || !run.converged || !(run.f <= fbest * (1 + cfg.tie_fraction) + 1e-12)) continue;
    Eigen::MatrixXd W = detail::skew_rotation(run.theta, p);
    SourceTransform t = pb.base;
    t.m = m;
    t.rotation = W.leftCols(m);
    Eigen::MatrixXd X = pb.Z * t.rotation;
    bool dup = false;
    for (const auto& s : seen) dup = dup || detail::same_sources(s, X);
    if (dup) continue;
    seen.push_back(X);
    auto set = detail::build_set(pb, t, y, cfg);
    set.objective = run.f;
    set.physical = physical_scores(set.matrix(), pb.dt, cfg.physical);
    cands.push_back(std::move(set));
  }
  DynamicSourceSet out = disambiguate(std::move(cands));
  out.objective_initial = f0;
  if (cfg.kind == TransformKind::polynomial) {
    SourceTransform t = out.transform;
    double f = out.objective;
    detail::refine_polynomial(pb, t, cfg, f);
    if (f < out.objective) {
      std::string audit = out.audit;
      out = detail::build_set(pb, t, y, cfg);
      out.objective = f;
      out.objective_initial = f0;
      out.physical = physical_scores(out.matrix(), pb.dt, cfg.physical);
      out.audit = audit + "polynomial refinement " + io::fmt(f) + "\n";
    }
  }
  out.nu_raw = detail::nu_of(pb.Z, pb.Zd, cfg, pb.dt);
  if (cfg.cutoff) out = cutoff_sources(std::move(out), y, cfg.shuffles, cfg.seed, cfg.fit_degree);
  return out;
}

}  // namespace dsa
