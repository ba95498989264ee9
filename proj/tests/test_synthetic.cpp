#include <gtest/gtest.h>

#include <numeric>

#include "dsa/synthetic.hpp"

using namespace dsa;

namespace {

// Two nearby orbits with periodic renormalization of the separation.
double two_orbit_lyapunov(double r, double x0, int n) {
  double x = x0, y = x0 + 1e-9, s = 0;
  for (int i = 0; i < 100; ++i) x = r * x * (1 - x), y = x + 1e-9;
  for (int i = 0; i < n; ++i) {
    x = r * x * (1 - x);
    y = r * y * (1 - y);
    double d = std::abs(y - x);
    s += std::log(d / 1e-9);
    y = x + (y > x ? 1e-9 : -1e-9);
  }
  return s / n;
}

}  // namespace

TEST(Synthetic, LogisticLyapunov) {
  double a = logistic_lyapunov(4.0, 0.3, 100000);
  EXPECT_NEAR(a, std::log(2.0), 0.02 * std::log(2.0));
  EXPECT_NEAR(two_orbit_lyapunov(4.0, 0.3, 100000), std::log(2.0), 0.02 * std::log(2.0));
}

TEST(Synthetic, IdentityMixingReturnsTruth) {
  Scenario s;
  s.params["identity"] = 1;
  s.params["n"] = 500;
  auto d = generate(s);
  EXPECT_EQ(d.observed.values, d.truth.values);
  EXPECT_EQ(d.observed.n_comp, 2u);
}

TEST(Synthetic, SeedReproducible) {
  Scenario s;
  s.params["n"] = 300;
  s.params["noise"] = 0.1;
  auto a = generate(s), b = generate(s);
  EXPECT_EQ(a.observed.values, b.observed.values);
  s.seed = 2;
  EXPECT_NE(generate(s).observed.values, a.observed.values);
}

TEST(Synthetic, LinearMixtureComposition) {
  Scenario s;
  s.params["n"] = 400;
  auto d = generate(s);
  ASSERT_EQ(d.observed.n_comp, 3u);
  Eigen::MatrixXd Y = d.sources * d.mixing.transpose();
  for (int c = 0; c < 3; ++c)
    for (int t = 0; t < 400; t += 37) EXPECT_DOUBLE_EQ(d.observed.at(c, t, 3), Y(t, c));
  // standardized sources
  EXPECT_NEAR(d.sources.col(0).mean(), 0.0, 1e-12);
  EXPECT_NEAR(d.sources.col(1).squaredNorm() / 400, 1.0, 1e-12);
}

TEST(Synthetic, NonlinearMixtureThirdObservable) {
  Scenario s;
  s.kind = ScenarioKind::nonlinear_mixture;
  s.params["n"] = 200;
  auto d = generate(s);
  for (int t = 0; t < 200; t += 11) {
    double x1 = d.sources(t, 0), x2 = d.sources(t, 1);
    EXPECT_NEAR(d.observed.at(2, t, 0), x1 * x2 + 0.1 * x2 * x2, 1e-14);
  }
}

TEST(Synthetic, TravelingWaveFormulaAndMetadata) {
  Scenario s;
  s.kind = ScenarioKind::traveling_wave;
  auto d = generate(s);
  EXPECT_DOUBLE_EQ(d.metadata.at("canonic_frequency"), 1.5);
  EXPECT_EQ(d.observed.grid.n_lon(), 256u);
  EXPECT_EQ(d.observed.n_time(), 512u);
  double L = 16 * M_PI;
  int t = 100, j = 37;
  double tt = t * 0.05, x = L * j / 256.0;
  double env = std::pow((1 + std::cos(2 * M_PI * (x - 2 * tt) / L)) / 2, 4);
  EXPECT_NEAR(d.observed.at(0, t, 1, j), env * std::cos(x - 0.5 * tt), 1e-13);
}

TEST(Synthetic, PolynomialLinkQuadratic) {
  Scenario s;
  s.kind = ScenarioKind::polynomial_link;
  s.params["n"] = 300;
  auto d = generate(s);
  ASSERT_TRUE(d.predictand.has_value());
  const Field& z = *d.predictand;
  double ratio = z.at(0, 5, 2) / (d.sources(5, 0) * d.sources(5, 0));
  for (int t = 0; t < 300; t += 17) EXPECT_NEAR(z.at(0, t, 2), ratio * d.sources(t, 0) * d.sources(t, 0), 1e-12);
}

TEST(Synthetic, InvalidParameters) {
  Scenario s;
  s.params["n"] = 3;
  EXPECT_THROW(generate(s), UsageError);
  s.params["n"] = 500;
  s.params["noise"] = -1;
  EXPECT_THROW(generate(s), UsageError);
  EXPECT_THROW(parse_scenario("spiral"), UsageError);
  Scenario p;
  p.kind = ScenarioKind::polynomial_link;
  p.options["link"] = "sine";
  EXPECT_THROW(generate(p), UsageError);
}

TEST(Recovery, PermutedSignFlippedIsPerfect) {
  Scenario s;
  s.params["n"] = 1000;
  auto d = generate(s);
  Eigen::MatrixXd R(1000, 3);
  R.col(0) = Eigen::VectorXd::Random(1000);
  R.col(1) = -3.0 * d.sources.col(1);
  R.col(2) = d.sources.col(0).array().exp().matrix();
  auto sc = score_recovery(d.sources, R);
  EXPECT_EQ(sc.pairing[0], 2);
  EXPECT_EQ(sc.pairing[1], 1);
  EXPECT_EQ(sc.sign[1], -1);
  EXPECT_NEAR(sc.min_score(), 1.0, 1e-12);
  auto none = score_recovery(d.sources, Eigen::MatrixXd(1000, 0));
  EXPECT_EQ(none.min_score(), 0.0);
}

TEST(Recovery, HungarianMatchesBruteForce) {
  Rng g(3);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd C(5, 5);
    for (int i = 0; i < 25; ++i) C.data()[i] = uniform01(g);
    auto a = hungarian(C);
    double got = 0;
    for (int i = 0; i < 5; ++i) got += C(i, a[i]);
    std::vector<int> p(5);
    std::iota(p.begin(), p.end(), 0);
    double best = 1e9;
    do {
      double v = 0;
      for (int i = 0; i < 5; ++i) v += C(i, p[i]);
      best = std::min(best, v);
    } while (std::next_permutation(p.begin(), p.end()));
    EXPECT_NEAR(got, best, 1e-12);
  }
}

TEST(BruteForce, ExactDerivatives) {
  // f = (x0*x1 - x1, x0^2)
  poly::Polynomial P;
  P.d = 2;
  P.terms = {{1, 1}, {0, 1}, {2, 0}};
  P.coef.resize(3, 2);
  P.coef << 1, 0, -1, 0, 0, 1;
  Eigen::MatrixXd X(3, 2);
  X << 0.5, 1.0, -1.0, 2.0, 2.0, -0.5;
  auto D1 = brute_force_interaction(P, X, 1);
  for (int s = 0; s < 3; ++s) {
    EXPECT_DOUBLE_EQ(D1.entry(s, 0, {0}), X(s, 1));
    EXPECT_DOUBLE_EQ(D1.entry(s, 0, {1}), X(s, 0) - 1);
    EXPECT_DOUBLE_EQ(D1.entry(s, 1, {0}), 2 * X(s, 0));
    EXPECT_DOUBLE_EQ(D1.entry(s, 1, {1}), 0.0);
  }
  auto D2 = brute_force_interaction(P, X, 2);
  EXPECT_DOUBLE_EQ(D2.entry(1, 0, {1, 0}), 1.0);
  EXPECT_DOUBLE_EQ(D2.entry(1, 1, {0, 0}), 2.0);
}
