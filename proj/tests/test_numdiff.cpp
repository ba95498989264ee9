#include <gtest/gtest.h>

#include <cmath>

#include "dsa/numdiff.hpp"
#include "dsa/rng.hpp"

using namespace dsa;

namespace {

Eigen::MatrixXd sample(double t0, double dt, int n, const std::function<double(double)>& f) {
  Eigen::MatrixXd X(n, 1);
  for (int i = 0; i < n; ++i) X(i, 0) = f(t0 + dt * i);
  return X;
}

double err_at(double t, double dt, int order, TimeScheme sch, const std::function<double(double)>& f,
              const std::function<double(double)>& exact) {
  int half = 40;
  auto X = sample(t - half * dt, dt, 2 * half + 1, f);
  auto D = time_derivative(X, dt, order, sch);
  return std::abs(D(half, 0) - exact(t));
}

}  // namespace

TEST(Fornberg, CentralFirstDerivative) {
  auto w = fornberg(0.0, {-1, 0, 1}, 1);
  EXPECT_NEAR(w(0), -0.5, 1e-15);
  EXPECT_NEAR(w(1), 0.0, 1e-15);
  EXPECT_NEAR(w(2), 0.5, 1e-15);
}

TEST(TimeDerivative, FifthDerivativeOfQuintic) {
  auto X = sample(-2.0, 0.1, 60, [](double t) { return std::pow(t, 5); });
  auto D = time_derivative(X, 0.1, 5);
  for (int i = 0; i < 60; ++i) EXPECT_NEAR(D(i, 0), 120.0, 120.0 * 1e-6) << i;
}

TEST(TimeDerivative, PolynomialExactness) {
  for (int n = 1; n <= 6; ++n) {
    int deg = n + 5;
    auto f = [&](double t) { return std::pow(t, deg) + 0.5 * std::pow(t, n); };
    auto exact = [&](double t) {
      double a = 1.0, b = 0.5;
      for (int q = 0; q < n; ++q) a *= deg - q, b *= n - q;
      return a * std::pow(t, deg - n) + b;
    };
    auto X = sample(-1.0, 0.05, 41, f);
    auto D = time_derivative(X, 0.05, n);
    for (int i = 0; i < 41; ++i) {
      double e = exact(-1.0 + 0.05 * i);
      EXPECT_NEAR(D(i, 0), e, 1e-10 * std::max(1.0, std::abs(e)) * std::pow(20.0, n)) << n << " " << i;
    }
  }
}

TEST(TimeDerivative, SineAtZero) {
  auto f = [](double t) { return std::sin(t); };
  auto c = [](double t) { return std::cos(t); };
  EXPECT_LE(err_at(0.0, 1e-2, 1, TimeScheme::richardson_cn, f, c), 1e-8);
  EXPECT_LE(err_at(0.0, 1e-2, 1, TimeScheme::central_stencil, f, c), 1e-8);
}

TEST(TimeDerivative, ConvergenceOrder) {
  auto f = [](double t) { return std::sin(t); };
  auto c = [](double t) { return std::cos(t); };
  for (auto sch : {TimeScheme::richardson_cn, TimeScheme::central_stencil}) {
    double e1 = err_at(0.3, 0.2, 1, sch, f, c), e2 = err_at(0.3, 0.1, 1, sch, f, c);
    double p = std::log2(e1 / e2);
    EXPECT_GE(p, 4.0);
    EXPECT_NEAR(p, 6.0, 0.5);
  }
  // boundary stencils are of matching order
  double eb[2];
  for (int k = 0; k < 2; ++k) {
    double dt = 0.2 / (1 << k);
    auto X = sample(0.3, dt, 40, f);
    auto D = time_derivative(X, dt, 1);
    eb[k] = std::abs(D(0, 0) - std::cos(0.3));
  }
  EXPECT_GE(std::log2(eb[0] / eb[1]), 5.5);
}

TEST(TimeDerivative, ConstantAndLinearity) {
  Eigen::MatrixXd X = Eigen::MatrixXd::Constant(50, 2, 3.7);
  for (int n = 1; n <= 6; ++n) EXPECT_LE(time_derivative(X, 0.5, n).cwiseAbs().maxCoeff(), 1e-12);
  Rng g(3);
  NormalSampler ns;
  Eigen::MatrixXd A(80, 1), B(80, 1);
  for (int i = 0; i < 80; ++i) A(i, 0) = ns(g), B(i, 0) = ns(g);
  auto L = time_derivative(2.5 * A - 1.5 * B, 1.0, 2);
  Eigen::MatrixXd R = 2.5 * time_derivative(A, 1.0, 2) - 1.5 * time_derivative(B, 1.0, 2);
  EXPECT_LE((L - R).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, L.cwiseAbs().maxCoeff()));
}

TEST(TimeDerivative, TooShortAndBoundaryFlags) {
  Eigen::MatrixXd X = Eigen::MatrixXd::Random(8, 1);
  EXPECT_THROW(time_derivative(X, 1.0, 5), UsageError);
  Eigen::MatrixXd Y = Eigen::MatrixXd::Random(100, 1);
  std::vector<unsigned char> b;
  time_derivative(Y, 1.0, 1, TimeScheme::richardson_cn, &b);
  EXPECT_TRUE(b[0]);
  EXPECT_TRUE(b[3]);
  EXPECT_FALSE(b[4]);
  EXPECT_FALSE(b[95]);
  EXPECT_TRUE(b[96]);
}

TEST(TimeDerivative, JumpDetectorKeepsStencilsOffTheStep) {
  int n = 120;
  Eigen::MatrixXd X(n, 1);
  for (int i = 0; i < n; ++i) X(i, 0) = 0.01 * i + (i >= 60 ? 5.0 : 0.0);
  auto with = time_derivative(X, 1.0, 1, TimeScheme::richardson_cn, nullptr, true);
  auto without = time_derivative(X, 1.0, 1);
  EXPECT_NEAR(with(58, 0), 0.01, 1e-10);
  EXPECT_NEAR(with(61, 0), 0.01, 1e-10);
  EXPECT_GT(std::abs(without(58, 0) - 0.01), 0.1);
}

TEST(DerivativeStack, FieldTimeDerivatives) {
  Field f(Grid::uniform(2, 2), TimeAxis::regular(0, 0.1, 50), 2);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t t = 0; t < 50; ++t)
      for (std::size_t k = 0; k < 4; ++k) f.at(c, t, k) = (c + 1.0) * std::pow(0.1 * t, 2) + double(k);
  SobolevConfig cfg;
  cfg.beta = 3;
  auto st = time_derivatives(f, cfg);
  EXPECT_EQ(st.time_derivs.size(), 3u);
  EXPECT_NEAR(st.time(2).at(1, 25, 3), 4.0, 1e-8);
  EXPECT_NEAR(st.time(1).at(0, 10, 0), 2.0 * 1.0, 1e-8);
  EXPECT_EQ(st.to_field().n_comp, 6u);
  cfg.beta = 7;
  EXPECT_THROW(time_derivatives(f, cfg), UsageError);
}

namespace {

Field lon_field(int n, const std::function<double(double)>& g) {
  Field f(Grid::uniform(4, n, 0.0, 1.0, 0.0, 360.0 / n), TimeAxis::regular(0, 1, 1), 1);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < n; ++j) f.at(0, 0, i, j) = g(2 * M_PI * j / n);
  return f;
}

double lon_err(int n) {
  auto f = lon_field(n, [](double s) { return std::cos(s); });
  SobolevConfig cfg;
  cfg.beta = 1;
  auto d = space_derivatives(f, cfg);
  const Field& dl = d[1].values;  // (0,1)
  EXPECT_EQ(d[1].d_lon, 1);
  double e = 0;
  for (int j = 0; j < n; ++j) e = std::max(e, std::abs(dl.at(0, 0, 1, j) * 180.0 / M_PI + std::sin(2 * M_PI * j / n)));
  return e;
}

}  // namespace

TEST(SpaceDerivative, CosineOnPeriodicGrid) {
  EXPECT_LE(lon_err(256), 1e-6);
  double p = std::log2(lon_err(64) / lon_err(128));
  EXPECT_NEAR(p, 4.0, 0.5);
}

TEST(SpaceDerivative, BoundedConvergence) {
  auto run = [](int n) {
    Field f(Grid::uniform(4, n, 0.0, 1.0, 0.0, 1.0 / (n - 1)), TimeAxis::regular(0, 1, 1), 1);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < n; ++j) f.at(0, 0, i, j) = std::sin(2.0 * j / (n - 1.0));
    SobolevConfig cfg;
    cfg.beta = 2;
    auto d = space_derivatives(f, cfg);
    double e1 = 0, e2 = 0;
    for (int j = 0; j < n; ++j) {
      double x = j / (n - 1.0);
      for (const auto& s : d) {
        if (s.d_lat == 0 && s.d_lon == 1) e1 = std::max(e1, std::abs(s.values.at(0, 0, 2, j) - 2 * std::cos(2 * x)));
        if (s.d_lat == 0 && s.d_lon == 2) e2 = std::max(e2, std::abs(s.values.at(0, 0, 2, j) + 4 * std::sin(2 * x)));
      }
    }
    return std::make_pair(e1, e2);
  };
  auto a = run(41), b = run(81);
  EXPECT_GE(std::log2(a.first / b.first), 3.5);
  EXPECT_GE(std::log2(a.second / b.second), 2.5);
  EXPECT_LE(b.first, 1e-6);
}

TEST(SpaceDerivative, SeparableMixedPartial) {
  int n = 101;
  Field f(Grid::uniform(n, n, 0.0, 0.01, 0.0, 0.01), TimeAxis::regular(0, 1, 1), 1);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) f.at(0, 0, i, j) = std::sin(2 * 0.01 * i) * std::cos(3 * 0.01 * j);
  SobolevConfig cfg;
  cfg.beta = 2;
  auto d = space_derivatives(f, cfg);
  for (const auto& s : d) {
    if (s.d_lat != 1 || s.d_lon != 1) continue;
    double e = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        e = std::max(e, std::abs(s.values.at(0, 0, i, j) + 6 * std::cos(2 * 0.01 * i) * std::sin(3 * 0.01 * j)));
    EXPECT_LE(e, 1e-6);
  }
  EXPECT_EQ(d.size(), 5u);
}

TEST(SpaceDerivative, RampAndShortAxis) {
  Field f(Grid::uniform(5, 6), TimeAxis::regular(0, 1, 2), 1);
  for (std::size_t t = 0; t < 2; ++t)
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 6; ++j) f.at(0, t, i, j) = 2.0 * i - 3.0 * j + 1.0;
  SobolevConfig cfg;
  cfg.beta = 2;
  for (auto sch : {SpaceScheme::compact_adi}) {
    cfg.space_scheme = sch;
    for (const auto& s : space_derivatives(f, cfg)) {
      double expect = (s.d_lat == 1 && s.d_lon == 0) ? 2.0 : (s.d_lat == 0 && s.d_lon == 1) ? -3.0 : 0.0;
      for (double v : s.values.values) EXPECT_NEAR(v, expect, 1e-10);
    }
  }
  Field g(Grid::uniform(3, 6), TimeAxis::regular(0, 1, 2), 1);
  EXPECT_THROW(space_derivatives(g, cfg), UsageError);
  SpaceOptions only_lon;
  only_lon.lat_axis = false;
  EXPECT_NO_THROW(space_derivatives(g, cfg, only_lon));
}

TEST(SpaceDerivative, CentralStencilScheme) {
  auto f = lon_field(128, [](double s) { return std::sin(s); });
  SobolevConfig cfg;
  cfg.beta = 1;
  cfg.space_scheme = SpaceScheme::central_stencil;
  SpaceOptions o;
  o.lat_axis = false;
  auto d = space_derivatives(f, cfg, o);
  ASSERT_EQ(d.size(), 1u);
  for (int j = 0; j < 128; ++j) EXPECT_NEAR(d[0].values.at(0, 0, 0, j) * 180 / M_PI, std::cos(2 * M_PI * j / 128), 1e-8);
}

TEST(StateSpaceGradient, LinearScalar) {
  for (double a : {-0.7, 0.3}) {
    auto X = sample(0.0, 0.01, 400, [&](double t) { return 1.5 * std::exp(a * t); });
    auto Xd = time_derivative(X, 0.01, 1);
    auto jet = state_space_gradient(X, Xd, 2);
    for (std::size_t s = 20; s < 380; s += 40) {
      EXPECT_NEAR(jet.at(1, s, 0, 0), a, 1e-8);
      EXPECT_NEAR(jet.at(2, s, 0, 0), 0.0, 1e-6);
    }
    // direct least squares over the whole record
    Eigen::VectorXd x = X.col(0), y = Xd.col(0);
    double slope = x.dot(y) / x.dot(x);
    EXPECT_NEAR(slope, a, 1e-9);
  }
}

TEST(StateSpaceGradient, Quadratic) {
  // x' = x^2, x(t) = 1 / (1/x0 - t)
  auto X = sample(0.0, 0.002, 400, [](double t) { return 1.0 / (2.0 - t); });
  auto Xd = time_derivative(X, 0.002, 1);
  auto jet = state_space_gradient(X, Xd, 2);
  for (std::size_t s = 20; s < 380; s += 40) {
    EXPECT_NEAR(jet.at(2, s, 0, 0), 2.0, 1e-6);
    EXPECT_NEAR(jet.at(1, s, 0, 0), 2.0 * X(s, 0), 1e-6);
  }
}

TEST(StateSpaceGradient, NoiseDriverWithinShuffleNull) {
  Rng g(17);
  NormalSampler ns;
  int N = 300;
  Eigen::MatrixXd X(N, 1), Y(N, 1);
  for (int i = 0; i < N; ++i) X(i, 0) = ns(g), Y(i, 0) = ns(g);
  auto stat = [&](const Eigen::MatrixXd& y) {
    auto jet = state_space_gradient(X, y, 1, JetOptions{1, 3.0, 1e4, 1e10});
    return std::abs(jet.coef[0].mean());
  };
  double obs = stat(Y);
  std::vector<double> null;
  std::vector<int> idx(N);
  std::iota(idx.begin(), idx.end(), 0);
  for (int r = 0; r < 1000; ++r) {
    auto rg = make_rng(99, r);
    dsa::shuffle(idx.begin(), idx.end(), rg);
    Eigen::MatrixXd ys(N, 1);
    for (int i = 0; i < N; ++i) ys(i, 0) = Y(idx[i], 0);
    null.push_back(stat(ys));
  }
  std::sort(null.begin(), null.end());
  EXPECT_LE(obs, null[949]);
}

TEST(StateSpaceGradient, RankDeficientReportsCondition) {
  Eigen::MatrixXd X(100, 2), Y(100, 2);
  for (int i = 0; i < 100; ++i) X(i, 0) = i * 0.01, X(i, 1) = 2 * i * 0.01, Y(i, 0) = i, Y(i, 1) = -i;
  try {
    state_space_gradient(X, Y, 1);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("condition"), std::string::npos);
  }
}
