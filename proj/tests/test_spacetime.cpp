#include <gtest/gtest.h>

#include <chrono>

#include "dsa/spacetime.hpp"
#include "dsa/synthetic.hpp"

using namespace dsa;

namespace {

SpacetimeOptions periodic() {
  SpacetimeOptions o;
  o.lon = Periodicity::periodic;
  return o;
}

Field wave() {
  Scenario s;
  s.kind = ScenarioKind::traveling_wave;
  return generate(s).observed;
}

Field separable() {
  Scenario s;
  s.kind = ScenarioKind::separable;
  return generate(s).observed;
}

double corr_abs(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  Eigen::VectorXd x = a.array() - a.mean(), y = b.array() - b.mean();
  return std::abs(x.dot(y)) / (x.norm() * y.norm());
}

double rel_rms(const Field& a, const Field& b) {
  double n = 0, d = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    n += std::pow(a.values[i] - b.values[i], 2);
    d += b.values[i] * b.values[i];
  }
  return std::sqrt(n / d);
}

}  // namespace

TEST(Spacetime, TravelingWaveCanonicForm) {
  auto t0 = std::chrono::steady_clock::now();
  Field f = wave();
  auto m = estimate_coevolution(f, periodic());
  ASSERT_EQ(m.c, 1);
  EXPECT_NEAR(m.speed, 2.0, 0.02);
  auto p = decompose(f, m, periodic());
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(secs, 10.0);
  double num = 0, den = 0;
  for (std::size_t t = 0; t < f.n_time(); ++t) {
    double c = std::cos(1.5 * f.time.t[t]);
    num += std::pow(p.temporal(t, 0).real() - c, 2);
    den += c * c;
  }
  EXPECT_LE(std::sqrt(num / den), 0.01);
  EXPECT_LE(p.residual, 1e-6);
  EXPECT_LE(rel_rms(compose(p), f), 1e-6);
  EXPECT_EQ(p.r_s, 1);
  EXPECT_EQ(p.r_t, 1);
  EXPECT_EQ(composed_dimension(p), 1);
  for (double c : m.couplings) EXPECT_NEAR(std::abs(c), 1.0, 1e-3);
}

TEST(Spacetime, SeparableReducesToProjection) {
  Field f = separable();
  auto m = estimate_coevolution(f);
  ASSERT_EQ(m.c, 0);
  for (double v : m.celerity_field) EXPECT_EQ(v, 0.0);
  for (double v : m.couplings) EXPECT_LE(std::abs(v), 1e-10);
  auto p = decompose(f, m);
  EXPECT_LE(rel_rms(compose(p), f), 1e-10);
  EXPECT_EQ(p.r_s, 1);
  EXPECT_EQ(p.r_t, 1);
  EXPECT_EQ(p.dimension(), 2);
  // g on the first lat row, h from the generator formula
  const std::size_t n = f.grid.n_lon();
  Eigen::VectorXd g(n), xs(n), h(f.n_time()), xt(f.n_time());
  for (std::size_t j = 0; j < n; ++j) {
    double s = 2 * M_PI * j / n;
    g(j) = 1 + 0.5 * std::cos(s) + 0.3 * std::sin(2 * s);
    xs(j) = p.spatial(j, 0).real();
  }
  for (std::size_t t = 0; t < f.n_time(); ++t) {
    h(t) = f.at(0, t, 0, 0) / g(0);
    xt(t) = p.temporal(t, 0).real();
  }
  EXPECT_GE(corr_abs(g, xs), 0.999);
  EXPECT_GE(corr_abs(h, xt), 0.999);
  // spatial structure is the contraction of the data against the temporal one
  Eigen::MatrixXcd X = spacetime_matrix(f);
  Eigen::MatrixXcd proj = X * p.temporal.col(0) / static_cast<double>(f.n_time());
  EXPECT_LE((proj - p.spatial.col(0) * p.amplitude(0)).cwiseAbs().maxCoeff(), 1e-12 * proj.cwiseAbs().maxCoeff());
}

TEST(Spacetime, StandingWaveSeparable) {
  Field f(Grid::uniform(2, 64, 0, 1, 0, 360.0 / 64), TimeAxis::regular(0, 0.1, 100), 1);
  for (std::size_t t = 0; t < 100; ++t)
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 64; ++j) f.at(0, t, i, j) = std::cos(2 * M_PI * j / 64) * std::cos(0.5 * f.time.t[t]);
  EXPECT_EQ(estimate_coevolution(f).c, 0);
}

TEST(Spacetime, ConstantField) {
  Field f(Grid::uniform(2, 16, 0, 1, 0, 360.0 / 16), TimeAxis::regular(0, 1, 20), 1);
  for (auto& v : f.values) v = 3.0;
  auto m = estimate_coevolution(f);
  EXPECT_EQ(m.c, 0);
  EXPECT_FALSE(m.warnings.empty());
  auto p = decompose(f, m);
  EXPECT_EQ(p.r_s, 0);
  EXPECT_EQ(p.r_t, 0);
  EXPECT_EQ(p.dimension(), 0);
  EXPECT_LE(rel_rms(compose(p), f), 1e-12);
}

TEST(Spacetime, BoundedLonRoundTrip) {
  Field f = wave();
  auto o = SpacetimeOptions{};
  o.lon = Periodicity::bounded;
  CoevolutionManifold m;
  m.c = 1;
  m.celerity = 0.3;
  m.periodic = false;
  auto p = decompose(f, m, o);
  EXPECT_EQ(p.n_lon_ext, 2 * f.grid.n_lon());
  EXPECT_LE(rel_rms(compose(p), f), 1e-9);
}

TEST(Spacetime, Errors) {
  Field f(Grid::uniform(2, 4), TimeAxis::regular(0, 1, 20), 1);
  EXPECT_THROW(estimate_coevolution(f), UsageError);
  Field g = separable();
  g.mask[5] = 1;
  EXPECT_THROW(estimate_coevolution(g), UsageError);
  Field s = separable();
  CoevolutionManifold bad;
  bad.c = 2;
  EXPECT_THROW(decompose(s, bad), UsageError);
  auto p = decompose(s, estimate_coevolution(s));
  p.amplitude.conservativeResize(p.amplitude.size() + 1);
  EXPECT_THROW(compose(p), UsageError);
}

TEST(Retrieval, ProjectionIdentityAndNonCommutativity) {
  Eigen::MatrixXcd a = Eigen::MatrixXcd::Random(12, 30), b = Eigen::MatrixXcd::Random(12, 30);
  CoevolutionManifold none;
  auto Bt = basis_of(b, BasisLabel::time, 3);
  EXPECT_LE((Bt.vectors.adjoint() * Bt.vectors - Eigen::MatrixXcd::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-10);
  Eigen::MatrixXcd direct = a * Bt.vectors.conjugate();
  EXPECT_LE((retrieval_product(a, Bt, none) - direct).cwiseAbs().maxCoeff(), 1e-12);
  auto At = basis_of(a, BasisLabel::time, 3);
  EXPECT_GT((retrieval_product(a, Bt, none) - retrieval_product(b, At, none)).cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_EQ(retrieval_product(a, At, none), retrieval_product(a, At, none));
  // full temporal basis: contraction is invertible
  auto full = basis_of(a, BasisLabel::time, 12);
  Eigen::MatrixXcd back = retrieval_product(a, full, none) * full.vectors.transpose();
  EXPECT_LE((back - a).cwiseAbs().maxCoeff(), 1e-10);
  auto Bs = basis_of(a, BasisLabel::space);
  EXPECT_EQ(Bs.rank, 12);
  EXPECT_LE((Bs.vectors * retrieval_product(a, Bs, none) - a).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_THROW(retrieval_product(a, basis_of(b.leftCols(20), BasisLabel::time), none), UsageError);
}

TEST(Retrieval, ComovingFrameOnWave) {
  Field f = wave();
  auto m = estimate_coevolution(f, periodic());
  Eigen::MatrixXcd X = spacetime_matrix(f);
  auto p = decompose(f, m, periodic());
  SubspaceBasis tb;
  tb.label = BasisLabel::time;
  tb.rank = 1;
  tb.vectors = p.temporal.col(0).conjugate() / std::sqrt(static_cast<double>(f.n_time()));
  Eigen::MatrixXcd r = retrieval_product(X, tb, m, f.grid.n_lon());
  EXPECT_EQ(r.cols(), 1);
  EXPECT_THROW(retrieval_product(X, tb, m, 7), UsageError);
}

TEST(Spacetime, WritesStructureFiles) {
  Field f = separable();
  auto p = decompose(f, estimate_coevolution(f));
  auto dir = std::filesystem::temp_directory_path() / "dsa_st_test";
  std::filesystem::remove_all(dir);
  write_structure_pair(p, dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "temporal.txt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "manifold.txt"));
  EXPECT_TRUE(std::filesystem::is_directory(dir / "spatial"));
  std::filesystem::remove_all(dir);
}
