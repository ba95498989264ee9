#include <gtest/gtest.h>

#include "dsa/dynsim.hpp"

using namespace dsa;

namespace {

// Smooth quasi-periodic sources with unit variance.
Eigen::MatrixXd smooth_sources(int n, double dt) {
  Eigen::MatrixXd X(n, 2);
  for (int t = 0; t < n; ++t) {
    X(t, 0) = std::sqrt(2.0) * std::sin(0.7 * t * dt);
    X(t, 1) = std::sqrt(2.0) * std::sin(0.7 * std::sqrt(2.0) * t * dt + 0.4);
  }
  return X;
}

poly::Polynomial cubic_link() {
  poly::Polynomial p;
  p.d = 2;
  p.terms = poly::exponents_up_to(2, 3);
  p.coef = Eigen::MatrixXd::Zero(p.terms.size(), 1);
  for (std::size_t t = 0; t < p.terms.size(); ++t) {
    const auto& e = p.terms[t];
    if (e == poly::Exponent{1, 0}) p.coef(t, 0) = 0.8;
    if (e == poly::Exponent{0, 1}) p.coef(t, 0) = -0.5;
    if (e == poly::Exponent{1, 1}) p.coef(t, 0) = 0.3;
    if (e == poly::Exponent{2, 0}) p.coef(t, 0) = 0.25;
    if (e == poly::Exponent{3, 0}) p.coef(t, 0) = -0.2;
    if (e == poly::Exponent{1, 2}) p.coef(t, 0) = 0.15;
  }
  return p;
}

// z integrated from dz/dt = link(x(t)) with a fine midpoint rule on the analytic sources.
Field integrated_predictand(const poly::Polynomial& link, int n, double dt) {
  Field z(Grid::make({0.0}, {0.0}), TimeAxis::regular(0, dt, n), 1);
  double acc = 0;
  const int sub = 200;
  for (int t = 0; t < n; ++t) {
    z.at(0, t, 0) = acc;
    for (int s = 0; s < sub; ++s) {
      double tt = (t + (s + 0.5) / sub) * dt;
      Eigen::Vector2d x(std::sqrt(2.0) * std::sin(0.7 * tt), std::sqrt(2.0) * std::sin(0.7 * std::sqrt(2.0) * tt + 0.4));
      acc += dt / sub * link.eval_point(x)(0);
    }
  }
  return z;
}

SourceModel diag(std::vector<std::vector<double>> c) {
  SourceModel s;
  std::size_t q = 0;
  for (auto& v : c) q = std::max(q, v.size());
  s.coef = Eigen::MatrixXd::Zero(q, c.size());
  for (std::size_t i = 0; i < c.size(); ++i)
    for (std::size_t k = 0; k < c[i].size(); ++k) s.coef(k, i) = c[i][k];
  return s;
}

poly::Polynomial single(int d, int deg, std::vector<std::pair<poly::Exponent, double>> terms) {
  poly::Polynomial p;
  p.d = d;
  p.terms = poly::exponents_up_to(d, deg);
  p.coef = Eigen::MatrixXd::Zero(p.terms.size(), 1);
  for (auto& [e, v] : terms)
    for (std::size_t t = 0; t < p.terms.size(); ++t)
      if (p.terms[t] == e) p.coef(t, 0) = v;
  return p;
}

}  // namespace

TEST(FitModel, RecoversCubicLink) {
  const int n = 3000;
  const double dt = 0.05;
  auto link = cubic_link();
  Field z = integrated_predictand(link, n, dt);
  ModelConfig cfg;
  cfg.q = 5;
  auto ref = fit_model(smooth_sources(n, dt), z, cfg);
  // the standardized fit scales coefficients by 1 / sd(z)
  double s = ref.z_scale(0);
  for (std::size_t t = 0; t < link.terms.size(); ++t) {
    std::size_t j = std::find(ref.predictand.terms.begin(), ref.predictand.terms.end(), link.terms[t]) - ref.predictand.terms.begin();
    double want = link.coef(t, 0);
    double got = ref.predictand.coef(j, 0) * s;
    if (want != 0.0) EXPECT_NEAR(got, want, 0.05 * std::abs(want)) << t;
  }
  for (int k = 4; k <= 5; ++k)
    for (std::size_t j : ref.order_terms(k)) EXPECT_TRUE(ref.in_null_band(j, 0)) << k;
}

TEST(FitModel, LinearReducesToRegressionSlope) {
  const int n = 2000;
  const double dt = 0.05;
  auto link = single(2, 1, {{{1, 0}, 1.3}, {{0, 1}, -0.4}});
  Field z = integrated_predictand(link, n, dt);
  ModelConfig cfg;
  cfg.q = 1;
  cfg.null_shuffles = 0;
  Eigen::MatrixXd X = smooth_sources(n, dt);
  auto ref = fit_model(X, z, cfg);
  // ordinary regression of the differentiated standardized series on [1, x]
  Eigen::MatrixXd Z = ref.z_states;
  Eigen::MatrixXd Zd = time_derivative(Z, dt, 1);
  Eigen::MatrixXd A(n, 3);
  A << Eigen::VectorXd::Ones(n), X;
  Eigen::VectorXd b = A.colPivHouseholderQr().solve(Zd.col(0));
  for (std::size_t t = 0; t < ref.predictand.terms.size(); ++t) {
    const auto& e = ref.predictand.terms[t];
    double want = e[0] ? b(1) : e[1] ? b(2) : b(0);
    EXPECT_NEAR(ref.predictand.coef(t, 0), want, 1e-3);
  }
}

TEST(FitModel, ConstantPredictandIsNull) {
  const int n = 800;
  Field z(Grid::make({0.0}, {0.0}), TimeAxis::regular(0, 0.05, n), 1);
  for (auto& v : z.values) v = 2.5;
  auto ref = fit_model(smooth_sources(n, 0.05), z, ModelConfig{});
  for (Eigen::Index t = 0; t < ref.predictand.coef.rows(); ++t) EXPECT_EQ(ref.predictand.coef(t, 0), 0.0);
}

TEST(FitModel, SourceSelfDynamicsAndSpectrum) {
  // dx/dt = -0.5 x and dx/dt = 0.2 x sampled exactly
  const int n = 400;
  const double dt = 0.01;
  Eigen::MatrixXd X(n, 2);
  for (int t = 0; t < n; ++t) {
    X(t, 0) = 2 * std::exp(-0.5 * t * dt);
    X(t, 1) = 0.5 * std::exp(0.2 * t * dt);
  }
  Field z(Grid::make({0.0}, {0.0}), TimeAxis::regular(0, dt, n), 1);
  for (int t = 0; t < n; ++t) z.at(0, t, 0) = X(t, 0);
  ModelConfig cfg;
  cfg.q = 1;
  cfg.null_shuffles = 0;
  auto ref = fit_model(X, z, cfg);
  EXPECT_NEAR(ref.sources.coef(1, 0), -0.5, 1e-6);
  EXPECT_NEAR(ref.sources.coef(1, 1), 0.2, 1e-6);
  EXPECT_NEAR(ref.lyapunov(0), 0.2, 1e-6);
  EXPECT_NEAR(ref.lyapunov(1), -0.5, 1e-6);
  EXPECT_EQ(ref.lyapunov_axis[0], 1);
}

TEST(FitModel, MissingOrders) {
  DynamicSourceSet x;
  Field z(Grid::make({0.0}, {0.0}), TimeAxis::regular(0, 1, 10), 1);
  ModelConfig cfg;
  cfg.q = 2;
  PredictabilityMap m1;
  m1.k = 1;
  EXPECT_THROW(fit_model(x, z, {m1}, cfg), UsageError);
  cfg.q = 9;
  EXPECT_THROW(cfg.validate(), UsageError);
}

TEST(Initialize, ConcentratesOnUnstableDirection) {
  auto ref = make_manifold(diag({{0, 0.3}, {0, -0.3}}), single(2, 1, {{{1, 0}, 1.0}}), 0.1, Eigen::MatrixXd::Zero(1, 2));
  ModelConfig cfg;
  cfg.ensemble_size = 1000;
  cfg.perturbation = 0.05;
  auto init = initialize(ref, cfg);
  EXPECT_NEAR(init.spectrum_after.sum(), init.spectrum_before.sum(), 1e-9);
  double angle = 0;
  for (int i = 0; i < cfg.ensemble_size; ++i) {
    Eigen::VectorXd d = (init.states.row(i) - init.base.row(i)).transpose();
    angle += std::acos(std::min(1.0, std::abs(d(0)) / d.norm()));
    EXPECT_NEAR(init.energy(i), cfg.perturbation * cfg.perturbation, 1e-6);
  }
  EXPECT_LE(angle / cfg.ensemble_size * 180 / M_PI, 5.0);
}

TEST(Initialize, EnergyUnderNonIdentityForm) {
  auto ref = make_manifold(diag({{0, 0.3}, {0, 0.1}, {0, -0.2}}), single(3, 1, {{{1, 0, 0}, 1.0}}), 0.1,
                           Eigen::MatrixXd::Random(50, 3));
  ref.phi = Eigen::Matrix3d{{2.0, 0.3, 0.0}, {0.3, 1.0, 0.1}, {0.0, 0.1, 0.5}};
  ModelConfig cfg;
  cfg.perturbation = 0.2;
  auto init = initialize(ref, cfg);
  for (Eigen::Index i = 0; i < init.energy.size(); ++i) {
    Eigen::VectorXd d = (init.states.row(i) - init.base.row(i)).transpose();
    EXPECT_NEAR(d.dot(ref.phi * d), 0.04, 1e-6);
  }
  EXPECT_NEAR(init.spectrum_after.sum(), init.spectrum_before.sum(), 1e-9);
}

TEST(Initialize, ZeroScaleAndFallback) {
  auto ref = make_manifold(diag({{0, -0.3}, {0, -0.1}}), single(2, 1, {{{1, 0}, 1.0}}), 0.1, Eigen::MatrixXd::Random(20, 2));
  ModelConfig cfg;
  cfg.perturbation = 0;
  cfg.ensemble_size = 50;
  auto init = initialize(ref, cfg);
  EXPECT_EQ(init.states, init.base);
  EXPECT_FALSE(init.warnings.empty());
  EXPECT_NEAR(init.weights.sum(), 1.0, 1e-12);
  auto again = initialize(ref, cfg);
  EXPECT_EQ(again.states, init.states);
}

TEST(Simulate, LinearDecayRate) {
  const double a = 0.4;
  auto ref = make_manifold(diag({{0, -a}}), single(1, 1, {{{1}, 0.0}}), 0.05, Eigen::MatrixXd::Zero(1, 1));
  ModelConfig cfg;
  cfg.horizon = 200;
  cfg.perturbation = 0.5;
  cfg.anchor_state = Eigen::VectorXd::Constant(1, 1.0);
  auto ens = simulate(ref, initialize(ref, cfg), cfg);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(cfg.horizon + 1);
  for (const auto& p : ens.source_paths) mean += p.col(0);
  mean /= static_cast<double>(ens.n_members());
  double rate = -std::log(mean(cfg.horizon) / mean(0)) / (cfg.horizon * 0.05);
  EXPECT_NEAR(rate, a, 0.05 * a);
}

TEST(Simulate, MedianMatchesFineStepOracle) {
  auto src = diag({{0, 0.5, 0, -0.5}, {0, -0.3, 0.1}});
  auto link = single(2, 2, {{{0, 0}, 0.2}, {{1, 1}, 1.0}, {{2, 0}, 0.5}});
  auto ref = make_manifold(src, link, 0.05, Eigen::MatrixXd::Zero(1, 2));
  ModelConfig cfg;
  cfg.horizon = 100;
  cfg.perturbation = 1e-4;
  cfg.anchor_state = Eigen::Vector2d(0.3, 0.8);
  auto ens = simulate(ref, initialize(ref, cfg), cfg);
  Rhs f = [&](const Eigen::VectorXd& y) {
    Eigen::VectorXd o(3);
    o.head(2) = src.rhs(y.head(2));
    o(2) = link.eval_point(y.head(2))(0);
    return o;
  };
  Eigen::MatrixXd fine = integrate(f, Eigen::Vector3d(0.3, 0.8, 0.0), 0.05, cfg.horizon + 1, 100);
  Eigen::VectorXd med = ens.median(0), truth = fine.col(2);
  EXPECT_LE((med - truth).norm() / truth.norm(), 0.01);
}

TEST(Simulate, QuantilesMonotoneAndReproducible) {
  auto ref = make_manifold(diag({{0, 0.2, 0, -0.1}, {0, -0.2}}), single(2, 2, {{{1, 0}, 1.0}, {{0, 2}, 0.5}}), 0.1,
                           Eigen::MatrixXd::Random(100, 2));
  ModelConfig cfg;
  cfg.horizon = 30;
  cfg.perturbation = 0.3;
  auto a = simulate(ref, initialize(ref, cfg), cfg), b = simulate(ref, initialize(ref, cfg), cfg);
  for (int l = 0; l + 1 < 5; ++l) EXPECT_TRUE((a.quantile_summary[l].array() <= a.quantile_summary[l + 1].array()).all());
  for (std::size_t i = 0; i < a.n_members(); ++i) EXPECT_EQ(a.trajectories[i], b.trajectories[i]);
}

TEST(Simulate, BlowUpFlagged) {
  auto ref = make_manifold(diag({{0, 0, 1.0}}), single(1, 1, {{{1}, 1.0}}), 0.1, Eigen::MatrixXd::Zero(1, 1));
  ModelConfig cfg;
  cfg.horizon = 200;
  cfg.ensemble_size = 100;
  cfg.perturbation = 0.5;
  cfg.anchor_state = Eigen::VectorXd::Constant(1, 0.0);
  auto ens = simulate(ref, initialize(ref, cfg), cfg);
  EXPECT_GT(ens.n_flagged(), 0u);
  EXPECT_LT(ens.n_flagged(), ens.n_members());
  EXPECT_FALSE(ens.warnings.empty());
}

TEST(Simulate, TruncationErrorSlopeSix) {
  auto src = diag({{0, -0.2}});
  auto truth = single(1, 6, {{{1}, 1.0}, {{3}, 0.5}, {{6}, 0.7}});
  auto full = make_manifold(src, truth, 0.05, Eigen::MatrixXd::Zero(1, 1));
  auto cut = truncate(full, 5);
  ModelConfig cfg;
  cfg.horizon = 50;
  cfg.ensemble_size = 1;
  cfg.perturbation = 0;
  std::vector<double> la, le;
  for (double A : {0.05, 0.1, 0.2, 0.4, 0.8}) {
    cfg.anchor_state = Eigen::VectorXd::Constant(1, A);
    auto e1 = simulate(full, initialize(full, cfg), cfg), e2 = simulate(cut, initialize(cut, cfg), cfg);
    la.push_back(std::log(A));
    le.push_back(std::log(std::abs(e1.trajectories[0](cfg.horizon, 0) - e2.trajectories[0](cfg.horizon, 0))));
  }
  Eigen::Map<Eigen::VectorXd> x(la.data(), la.size()), y(le.data(), le.size());
  double slope = (x.array() - x.mean()).matrix().dot((y.array() - y.mean()).matrix()) / (x.array() - x.mean()).square().sum();
  EXPECT_NEAR(slope, 6.0, 0.5);
}

TEST(ObservationQuantiles, RanksAndCalibration) {
  auto ref = make_manifold(diag({{0, 0.3, 0, -0.3}, {0, -0.2}}), single(2, 2, {{{1, 0}, 1.0}, {{1, 1}, 0.4}}), 0.1,
                           Eigen::MatrixXd::Random(200, 2));
  ModelConfig cfg;
  cfg.horizon = 20;
  cfg.perturbation = 0.2;
  auto ens = simulate(ref, initialize(ref, cfg), cfg);
  Eigen::VectorXd med = ens.median(0);
  Eigen::VectorXd r = observation_quantiles(ens, med);
  for (Eigen::Index s = 0; s < r.size(); ++s) EXPECT_NEAR(r(s), 0.5, 1.0 / std::sqrt(ens.n_members()));
  Eigen::VectorXd high = med.array() + 1e9;
  EXPECT_EQ(observation_quantiles(ens, high), Eigen::VectorXd::Ones(r.size()));
  EXPECT_THROW(observation_quantiles(ens, Eigen::VectorXd::Zero(3)), UsageError);
  // held-out member as truth, one trial per seed
  std::vector<double> ranks;
  ModelConfig c2 = cfg;
  c2.ensemble_size = 101;
  c2.horizon = 10;
  for (int trial = 0; trial < 1000; ++trial) {
    c2.seed = 1000 + trial;
    auto init = initialize(ref, c2);
    auto e = simulate(ref, init, c2);
    Eigen::VectorXd obs = e.trajectories.back().col(0);
    e.trajectories.pop_back();
    e.flagged.pop_back();
    ranks.push_back(observation_quantiles(e, obs)(c2.horizon));
  }
  EXPECT_GT(ks_pvalue(ks_uniform_statistic(ranks), ranks.size()), 0.05);
}

TEST(Destandardize, ClipsAtZero) {
  auto ref = make_manifold(diag({{0, -0.1}}), single(1, 1, {{{1}, 1.0}}), 0.1, Eigen::MatrixXd::Random(50, 1));
  ref.z_mean(0) = 0.1;
  ref.z_scale(0) = 2.0;
  ModelConfig cfg;
  cfg.horizon = 10;
  cfg.perturbation = 0.5;
  auto ens = simulate(ref, initialize(ref, cfg), cfg);
  double frac = -1;
  auto phys = destandardize(ens, ref, true, &frac);
  EXPECT_GT(frac, 0.0);
  EXPECT_LT(frac, 1.0);
  for (const auto& t : phys.trajectories) EXPECT_GE(t.minCoeff(), 0.0);
  std::string csv = summary_csv(phys, 0, 0.0);
  EXPECT_EQ(csv.substr(0, 40), "timestamp,q05,q25,q50,q75,q95,obs,obs_ra");
}

TEST(Simulate, DissipativeFitStaysBounded) {
  const int n = 300;
  const double dt = 0.02;
  Eigen::MatrixXd X(n, 2);
  Field z(Grid::make({0.0}, {0.0, 1.0}), TimeAxis::regular(0, dt, n), 1);
  for (int t = 0; t < n; ++t) {
    X(t, 0) = 2 * std::exp(-0.5 * t * dt);
    X(t, 1) = -1.5 * std::exp(-0.3 * t * dt);
    z.at(0, t, 0) = X(t, 0) * X(t, 1);
    z.at(0, t, 1) = X(t, 1);
  }
  ModelConfig cfg;
  cfg.q = 3;
  cfg.null_shuffles = 0;
  auto ref = fit_model(X, z, cfg);
  cfg.horizon = 10 * n;
  cfg.perturbation = 0.1;
  auto ens = simulate(ref, initialize(ref, cfg), cfg);
  EXPECT_EQ(ens.n_flagged(), 0u);
  double spread = (ens.quantile_summary[4] - ens.quantile_summary[0]).cwiseAbs().maxCoeff();
  EXPECT_TRUE(std::isfinite(spread));
  EXPECT_LT(spread, 100.0);
}
