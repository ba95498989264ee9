#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>
#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dsa/dsa_core.hpp"
#include "dsa/error.hpp"
#include "dsa/field.hpp"
#include "dsa/infostats.hpp"
#include "dsa/io.hpp"
#include "dsa/numdiff.hpp"
#include "dsa/ode.hpp"
#include "dsa/parallel.hpp"
#include "dsa/polynomial.hpp"
#include "dsa/predictability.hpp"
#include "dsa/rng.hpp"

namespace dsa {

struct ModelConfig {
  int q = 5;
  int ensemble_size = 200;
  int horizon = 100;
  std::uint64_t seed = 1;
  double perturbation = 0.01;  // phi-energy of each member's perturbation is perturbation^2
  long anchor_index = -1;      // reference sample shared by all members; -1 draws one per member
  Eigen::VectorXd anchor_state;  // explicit start, used when anchor_index < 0 and non-empty
  Eigen::VectorXd anchor_z;
  int null_shuffles = 200;
  int beta = 6;

  void validate() const {
    if (q < 1 || q > beta) throw UsageError("truncation q must be in 1.." + std::to_string(beta));
    if (ensemble_size < 1) throw UsageError("ensemble_size must be positive");
    if (horizon < 1) throw UsageError("horizon must be positive");
    if (!(perturbation >= 0) || !std::isfinite(perturbation)) throw UsageError("perturbation must be finite and >= 0");
    if (null_shuffles != 0 && null_shuffles < 100) throw UsageError("null_shuffles must be 0 or >= 100");
  }
};

// Each source evolves on its own: dx_i/dt = sum_k coef(k, i) x_i^k.
struct SourceModel {
  Eigen::MatrixXd coef;  // (q + 1) x m

  int m() const { return static_cast<int>(coef.cols()); }
  Eigen::VectorXd rhs(const Eigen::VectorXd& x) const {
    Eigen::VectorXd r = Eigen::VectorXd::Zero(x.size());
    for (int i = 0; i < m(); ++i)
      for (Eigen::Index k = coef.rows() - 1; k >= 0; --k) r(i) = r(i) * x(i) + coef(k, i);
    return r;
  }
  Eigen::VectorXd slope(const Eigen::VectorXd& x) const {
    Eigen::VectorXd r = Eigen::VectorXd::Zero(x.size());
    for (int i = 0; i < m(); ++i)
      for (Eigen::Index k = coef.rows() - 1; k >= 1; --k) r(i) = r(i) * x(i) + k * coef(k, i);
    return r;
  }
};

struct ReferenceManifold {
  int q = 1;
  double dt = 1.0;
  SourceModel sources;
  poly::Polynomial predictand;  // standardized predictand tendency per cell
  Eigen::MatrixXd coef_null_mean, coef_null_q95;  // signed mean and q95 of |coef| under cyclic shifts
  Eigen::VectorXd z_mean, z_scale;
  Eigen::VectorXd lyapunov;  // descending
  std::vector<int> lyapunov_axis;
  Eigen::MatrixXd phi;
  Eigen::MatrixXd states, z_states;
  Grid grid = Grid::make({0.0}, {0.0});
  std::size_t n_comp = 1;
  std::vector<std::string> warnings;

  int m() const { return sources.m(); }
  std::size_t n_cells() const { return static_cast<std::size_t>(predictand.coef.cols()); }
  // Monomials of total degree k.
  std::vector<std::size_t> order_terms(int k) const {
    std::vector<std::size_t> out;
    for (std::size_t t = 0; t < predictand.terms.size(); ++t)
      if (poly::degree_of(predictand.terms[t]) == k) out.push_back(t);
    return out;
  }
  bool in_null_band(std::size_t term, std::size_t cell) const {
    return std::abs(predictand.coef(term, cell)) <= coef_null_q95(term, cell);
  }
};

struct InitialEnsemble {
  Eigen::MatrixXd base;    // manifold draws, members x m
  Eigen::MatrixXd states;  // perturbed, members x m
  Eigen::MatrixXd z0;      // members x cells
  Eigen::VectorXd spectrum_before, spectrum_after;
  Eigen::VectorXd weights;  // perturbation variance share per sorted exponent
  Eigen::VectorXd energy;   // per member
  std::vector<std::string> warnings;
};

struct SimulationEnsemble {
  std::vector<Eigen::MatrixXd> trajectories;  // per member, (horizon + 1) x cells
  std::vector<Eigen::MatrixXd> source_paths;  // per member, (horizon + 1) x m
  std::vector<bool> flagged;
  std::vector<Eigen::MatrixXd> quantile_summary;  // one (horizon + 1) x cells matrix per level
  double dt = 1.0;
  std::vector<std::string> warnings;

  static constexpr double levels[5] = {0.05, 0.25, 0.5, 0.75, 0.95};
  std::size_t n_members() const { return trajectories.size(); }
  std::size_t n_flagged() const { return static_cast<std::size_t>(std::count(flagged.begin(), flagged.end(), true)); }
  Eigen::Index n_steps() const { return trajectories.empty() ? 0 : trajectories[0].rows(); }
  Eigen::Index n_cells() const { return trajectories.empty() ? 0 : trajectories[0].cols(); }
  Eigen::VectorXd median(std::size_t cell) const { return quantile_summary[2].col(cell); }
};

namespace detail {

inline constexpr double kBlowUp = 1e6;

inline Eigen::MatrixXd standardize_cells(const Eigen::MatrixXd& Z, Eigen::VectorXd& mean, Eigen::VectorXd& scale) {
  mean = Z.colwise().mean().transpose();
  Eigen::MatrixXd S = Z.rowwise() - mean.transpose();
  scale = (S.colwise().squaredNorm() / static_cast<double>(Z.rows())).cwiseSqrt().transpose();
  for (Eigen::Index c = 0; c < S.cols(); ++c) {
    if (scale(c) > 0)
      S.col(c) /= scale(c);
    else
      scale(c) = 1.0;
  }
  return S;
}

inline bool positive_definite(const Eigen::MatrixXd& P) {
  if (P.rows() == 0 || P.rows() != P.cols() || !P.allFinite()) return false;
  Eigen::LLT<Eigen::MatrixXd> llt(P);
  return llt.info() == Eigen::Success;
}

// Signed mean and q95 of |coef| over cyclic shifts of the tendencies against the sources.
inline void coefficient_null(const Eigen::MatrixXd& M, const Eigen::MatrixXd& Zd, int NS, std::uint64_t seed,
                             Eigen::MatrixXd& mean, Eigen::MatrixXd& q95) {
  const Eigen::Index n = M.rows(), p = M.cols(), nc = Zd.cols();
  mean = Eigen::MatrixXd::Zero(p, nc);
  q95 = Eigen::MatrixXd::Zero(p, nc);
  if (NS == 0) return;
  Eigen::VectorXd sc = M.colwise().norm().transpose();
  for (Eigen::Index j = 0; j < p; ++j)
    if (!(sc(j) > 0)) sc(j) = 1.0;
  Eigen::MatrixXd Ms = M * sc.cwiseInverse().asDiagonal();
  Eigen::MatrixXd G = Ms.transpose() * Ms;
  Eigen::MatrixXd P = sc.cwiseInverse().asDiagonal() * G.completeOrthogonalDecomposition().pseudoInverse() * Ms.transpose();
  std::vector<std::size_t> rel(NS);
  for (int r = 0; r < NS; ++r) {
    Rng g = make_rng(seed, static_cast<std::uint64_t>(r));
    std::size_t ox = uniform_index(g, n), oz = uniform_index(g, n);
    rel[r] = (oz + n - ox) % n;
  }
  Eigen::FFT<double> fft;
  std::vector<std::vector<std::complex<double>>> FP(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    std::vector<double> row(n);
    for (Eigen::Index t = 0; t < n; ++t) row[t] = P(j, t);
    fft.fwd(FP[j], row);
  }
  parallel_for(static_cast<std::size_t>(nc), [&](std::size_t c) {
    Eigen::FFT<double> f;
    std::vector<double> z(Zd.col(c).data(), Zd.col(c).data() + n), cc;
    std::vector<std::complex<double>> Fz, prod(n);
    f.fwd(Fz, z);
    for (Eigen::Index j = 0; j < p; ++j) {
      for (Eigen::Index i = 0; i < n; ++i) prod[i] = std::conj(FP[j][i]) * Fz[i];
      f.inv(cc, prod);
      std::vector<double> v(NS), a(NS);
      for (int r = 0; r < NS; ++r) {
        v[r] = cc[rel[r]];
        a[r] = std::abs(v[r]);
      }
      mean(j, c) = mean_of(v);
      q95(j, c) = quantile(a, 0.95);
    }
  });
}

inline void source_spectrum(ReferenceManifold& ref) {
  const int m = ref.m();
  Eigen::VectorXd lam = Eigen::VectorXd::Zero(m);
  for (Eigen::Index t = 0; t < ref.states.rows(); ++t) lam += ref.sources.slope(ref.states.row(t).transpose());
  if (ref.states.rows() > 0) lam /= static_cast<double>(ref.states.rows());
  std::vector<int> idx(m);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return lam(a) > lam(b); });
  ref.lyapunov.resize(m);
  for (int i = 0; i < m; ++i) ref.lyapunov(i) = lam(idx[i]);
  ref.lyapunov_axis = idx;
}

}  // namespace detail

// Assembles a manifold from known dynamics; the predictand has z_mean 0 and z_scale 1.
inline ReferenceManifold make_manifold(const SourceModel& sources, const poly::Polynomial& predictand, double dt,
                                       const Eigen::MatrixXd& states) {
  if (predictand.d != sources.m()) throw UsageError("predictand polynomial and source model dimensions differ");
  if (states.cols() != sources.m()) throw UsageError("reference states have the wrong width");
  ReferenceManifold ref;
  ref.q = static_cast<int>(sources.coef.rows()) - 1;
  for (const auto& e : predictand.terms) ref.q = std::max(ref.q, poly::degree_of(e));
  ref.dt = dt;
  ref.sources = sources;
  ref.predictand = predictand;
  const Eigen::Index p = predictand.coef.rows(), nc = predictand.coef.cols();
  ref.coef_null_mean = Eigen::MatrixXd::Zero(p, nc);
  ref.coef_null_q95 = Eigen::MatrixXd::Zero(p, nc);
  ref.z_mean = Eigen::VectorXd::Zero(nc);
  ref.z_scale = Eigen::VectorXd::Ones(nc);
  ref.phi = Eigen::MatrixXd::Identity(sources.m(), sources.m());
  ref.states = states;
  ref.z_states = Eigen::MatrixXd::Zero(states.rows(), nc);
  ref.grid = Grid::make({0.0}, std::vector<double>(1, 0.0));
  if (nc > 1) {
    std::vector<double> lon(nc);
    std::iota(lon.begin(), lon.end(), 0.0);
    ref.grid = Grid::make({0.0}, lon);
  }
  detail::source_spectrum(ref);
  return ref;
}

// Drops every predictand and source term above degree q.
inline ReferenceManifold truncate(const ReferenceManifold& ref, int q) {
  if (q < 1) throw UsageError("truncation order must be >= 1");
  ReferenceManifold out = ref;
  out.q = std::min(ref.q, q);
  for (std::size_t t = 0; t < out.predictand.terms.size(); ++t)
    if (poly::degree_of(out.predictand.terms[t]) > q) out.predictand.coef.row(t).setZero();
  if (out.sources.coef.rows() > q + 1) out.sources.coef.bottomRows(out.sources.coef.rows() - q - 1).setZero();
  return out;
}

inline ReferenceManifold fit_model(const Eigen::MatrixXd& X, const Field& z, const ModelConfig& cfg) {
  cfg.validate();
  if (X.rows() != static_cast<Eigen::Index>(z.n_time())) throw UsageError("sources and predictand lengths differ");
  if (X.cols() == 0) throw UsageError("no sources");
  z.require_complete("fit_model");
  ReferenceManifold ref;
  ref.q = cfg.q;
  ref.dt = z.time.step;
  ref.grid = z.grid;
  ref.n_comp = z.n_comp;
  ref.states = X;
  const int m = static_cast<int>(X.cols());
  Eigen::MatrixXd Xd = time_derivative(X, ref.dt, 1);
  ref.sources.coef.resize(cfg.q + 1, m);
  for (int i = 0; i < m; ++i) {
    auto p = poly::fit_polynomial(X.col(i), Xd.col(i), cfg.q);
    for (std::size_t t = 0; t < p.terms.size(); ++t) ref.sources.coef(p.terms[t][0], i) = p.coef(t, 0);
  }
  ref.z_states = detail::standardize_cells(z.flatten(), ref.z_mean, ref.z_scale);
  Eigen::MatrixXd Zd = time_derivative(ref.z_states, ref.dt, 1);
  ref.predictand = poly::fit_polynomial(X, Zd, cfg.q);
  detail::coefficient_null(poly::design(X, ref.predictand.terms), Zd, cfg.null_shuffles, cfg.seed, ref.coef_null_mean,
                           ref.coef_null_q95);
  ref.phi = Eigen::MatrixXd::Identity(m, m);
  detail::source_spectrum(ref);
  return ref;
}

inline ReferenceManifold fit_model(const DynamicSourceSet& x, const Field& z, const std::vector<PredictabilityMap>& maps,
                                   const ModelConfig& cfg) {
  cfg.validate();
  for (int k = 1; k <= cfg.q; ++k)
    if (std::none_of(maps.begin(), maps.end(), [&](const PredictabilityMap& p) { return p.k == k; }))
      throw UsageError("missing predictability map for order " + std::to_string(k));
  detail::check_axes(x, z);
  auto ref = fit_model(detail::source_matrix(x), z, cfg);
  const Eigen::Index m = x.physical.phi.rows();
  if (m == static_cast<Eigen::Index>(x.m()) && m > 0) {
    std::vector<int> keep;
    for (std::size_t c = 0; c < x.retained.size(); ++c)
      if (x.retained[c]) keep.push_back(static_cast<int>(c));
    Eigen::MatrixXd P(keep.size(), keep.size());
    for (std::size_t a = 0; a < keep.size(); ++a)
      for (std::size_t b = 0; b < keep.size(); ++b) P(a, b) = x.physical.phi(keep[a], keep[b]);
    if (detail::positive_definite(P))
      ref.phi = P;
    else
      ref.warnings.push_back("energy form not positive definite; identity used");
  }
  return ref;
}

inline InitialEnsemble initialize(const ReferenceManifold& ref, const ModelConfig& cfg) {
  cfg.validate();
  const int m = ref.m();
  const int M = cfg.ensemble_size;
  const Eigen::Index nc = static_cast<Eigen::Index>(ref.n_cells());
  if (ref.lyapunov.size() != m) throw UsageError("reference manifold has no Lyapunov spectrum");
  InitialEnsemble ens;
  ens.spectrum_before = ref.lyapunov;
  const double total = ref.lyapunov.sum();
  Eigen::VectorXd pos = ref.lyapunov.cwiseMax(0.0);
  if (pos.sum() > 0) {
    ens.weights = pos / pos.sum();
  } else {
    ens.weights = Eigen::VectorXd::Constant(m, 1.0 / m);
    ens.warnings.push_back("no positive Lyapunov exponents; isotropic perturbations");
  }
  ens.spectrum_after = ens.weights * total;
  if (cfg.anchor_index >= 0 && cfg.anchor_index >= ref.states.rows()) throw UsageError("anchor_index outside the reference record");
  if (cfg.anchor_index < 0 && cfg.anchor_state.size() > 0 && cfg.anchor_state.size() != m)
    throw UsageError("anchor_state has the wrong width");
  if (cfg.anchor_z.size() > 0 && cfg.anchor_z.size() != nc) throw UsageError("anchor_z has the wrong width");
  if (cfg.anchor_index < 0 && cfg.anchor_state.size() == 0 && ref.states.rows() == 0)
    throw UsageError("no reference states to draw from");
  ens.base.resize(M, m);
  ens.states.resize(M, m);
  ens.z0.resize(M, nc);
  ens.energy.resize(M);
  parallel_for(static_cast<std::size_t>(M), [&](std::size_t i) {
    Rng g = make_rng(cfg.seed, i);
    NormalSampler ns;
    if (cfg.anchor_index >= 0) {
      ens.base.row(i) = ref.states.row(cfg.anchor_index);
      ens.z0.row(i) = ref.z_states.row(cfg.anchor_index);
    } else if (cfg.anchor_state.size() > 0) {
      ens.base.row(i) = cfg.anchor_state.transpose();
      ens.z0.row(i) = cfg.anchor_z.size() ? Eigen::RowVectorXd(cfg.anchor_z.transpose()) : Eigen::RowVectorXd::Zero(nc);
    } else {
      std::size_t r = uniform_index(g, static_cast<std::size_t>(ref.states.rows()));
      ens.base.row(i) = ref.states.row(r);
      ens.z0.row(i) = ref.z_states.row(r);
    }
    Eigen::VectorXd d = Eigen::VectorXd::Zero(m);
    for (int k = 0; k < m; ++k) d(ref.lyapunov_axis[k]) = std::sqrt(ens.weights(k)) * ns(g);
    double e = d.dot(ref.phi * d);
    if (cfg.perturbation > 0 && e > 0)
      d *= cfg.perturbation / std::sqrt(e);
    else
      d.setZero();
    ens.states.row(i) = ens.base.row(i) + d.transpose();
    ens.energy(i) = d.dot(ref.phi * d);
  });
  return ens;
}

inline SimulationEnsemble simulate(const ReferenceManifold& ref, const InitialEnsemble& init, const ModelConfig& cfg) {
  cfg.validate();
  const int m = ref.m();
  const Eigen::Index nc = static_cast<Eigen::Index>(ref.n_cells());
  const std::size_t M = static_cast<std::size_t>(init.states.rows());
  if (init.states.cols() != m || init.z0.cols() != nc) throw UsageError("initial ensemble does not match the model");
  if (M == 0) throw UsageError("empty initial ensemble");
  SimulationEnsemble ens;
  ens.dt = ref.dt;
  const int H = cfg.horizon;
  ens.trajectories.assign(M, Eigen::MatrixXd());
  ens.source_paths.assign(M, Eigen::MatrixXd());
  std::vector<char> flag(M, 0);
  Rhs rhs = [&](const Eigen::VectorXd& y) {
    Eigen::VectorXd x = y.head(m), out(y.size());
    out.head(m) = ref.sources.rhs(x);
    out.tail(nc) = ref.predictand.eval_point(x);
    return out;
  };
  parallel_for(M, [&](std::size_t i) {
    Eigen::VectorXd y(m + nc);
    y.head(m) = init.states.row(i).transpose();
    y.tail(nc) = init.z0.row(i).transpose();
    Eigen::MatrixXd zt(H + 1, nc), xt(H + 1, m);
    for (int s = 0; s <= H; ++s) {
      if (!y.allFinite() || y.head(m).cwiseAbs().maxCoeff() > detail::kBlowUp) {
        flag[i] = 1;
        zt.bottomRows(H + 1 - s).setConstant(std::numeric_limits<double>::quiet_NaN());
        xt.bottomRows(H + 1 - s).setConstant(std::numeric_limits<double>::quiet_NaN());
        break;
      }
      zt.row(s) = y.tail(nc).transpose();
      xt.row(s) = y.head(m).transpose();
      if (s < H) y = rk4_step(rhs, y, ref.dt);
    }
    ens.trajectories[i] = std::move(zt);
    ens.source_paths[i] = std::move(xt);
  });
  ens.flagged.assign(M, false);
  for (std::size_t i = 0; i < M; ++i) ens.flagged[i] = flag[i] != 0;
  if (ens.n_flagged() == M) throw NumericalError("every ensemble member blew up");
  if (ens.n_flagged()) ens.warnings.push_back(std::to_string(ens.n_flagged()) + " members flagged for blow-up and excluded");
  if (M < 100) ens.warnings.push_back("fewer than 100 members; quantiles are unstable");
  ens.quantile_summary.assign(5, Eigen::MatrixXd(H + 1, nc));
  std::vector<double> v;
  for (int s = 0; s <= H; ++s)
    for (Eigen::Index c = 0; c < nc; ++c) {
      v.clear();
      for (std::size_t i = 0; i < M; ++i)
        if (!ens.flagged[i]) v.push_back(ens.trajectories[i](s, c));
      std::sort(v.begin(), v.end());
      for (int l = 0; l < 5; ++l) ens.quantile_summary[l](s, c) = quantile(v, SimulationEnsemble::levels[l]);
    }
  return ens;
}

// Empirical CDF rank of obs within the unflagged members at each step; ties count half.
inline Eigen::VectorXd observation_quantiles(const SimulationEnsemble& ens, const Eigen::VectorXd& obs, std::size_t cell = 0) {
  if (obs.size() != ens.n_steps()) throw UsageError("observation series and ensemble time axes differ");
  if (static_cast<Eigen::Index>(cell) >= ens.n_cells()) throw UsageError("cell index outside the ensemble");
  Eigen::VectorXd r(obs.size());
  for (Eigen::Index s = 0; s < obs.size(); ++s) {
    double below = 0, n = 0;
    for (std::size_t i = 0; i < ens.n_members(); ++i) {
      if (ens.flagged[i]) continue;
      double v = ens.trajectories[i](s, cell);
      below += v < obs(s) ? 1.0 : v == obs(s) ? 0.5 : 0.0;
      n += 1;
    }
    r(s) = std::clamp(below / n, 0.0, 1.0);
  }
  return r;
}

// Back to physical units; values below zero are clipped when requested.
inline SimulationEnsemble destandardize(const SimulationEnsemble& ens, const ReferenceManifold& ref, bool clip_at_zero,
                                        double* clip_fraction = nullptr) {
  SimulationEnsemble out = ens;
  std::size_t clipped = 0, total = 0;
  auto map = [&](Eigen::MatrixXd& Z, bool count) {
    for (Eigen::Index c = 0; c < Z.cols(); ++c)
      for (Eigen::Index s = 0; s < Z.rows(); ++s) {
        double& v = Z(s, c);
        if (std::isnan(v)) continue;
        v = v * ref.z_scale(c) + ref.z_mean(c);
        if (count) ++total;
        if (clip_at_zero && v < 0) {
          v = 0;
          if (count) ++clipped;
        }
      }
  };
  for (std::size_t i = 0; i < out.n_members(); ++i)
    if (!out.flagged[i]) map(out.trajectories[i], true);
  for (auto& q : out.quantile_summary) map(q, false);
  if (clip_fraction) *clip_fraction = total ? static_cast<double>(clipped) / total : 0.0;
  return out;
}

inline std::string summary_csv(const SimulationEnsemble& ens, std::size_t cell, double t0, const Eigen::VectorXd* obs = nullptr) {
  Eigen::VectorXd rank;
  if (obs) rank = observation_quantiles(ens, *obs, cell);
  std::ostringstream o;
  o << "timestamp,q05,q25,q50,q75,q95,obs,obs_rank\n";
  for (Eigen::Index s = 0; s < ens.n_steps(); ++s) {
    o << io::fmt(t0 + s * ens.dt);
    for (int l = 0; l < 5; ++l) o << ',' << io::fmt(ens.quantile_summary[l](s, cell));
    if (obs)
      o << ',' << io::fmt((*obs)(s)) << ',' << io::fmt(rank(s));
    else
      o << ",,";
    o << '\n';
  }
  return o.str();
}

}  // namespace dsa
