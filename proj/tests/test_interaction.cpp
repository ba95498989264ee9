#include <gtest/gtest.h>

#include "dsa/interaction.hpp"
#include "dsa/ode.hpp"
#include "dsa/rng.hpp"

using namespace dsa;

namespace {

// Pooled short trajectories from random starts; tendencies by numdiff.
struct Cloud {
  Eigen::MatrixXd X, Xd;
};

Cloud cloud(const Rhs& f, int d, int members, int steps, double h, double lo, double hi, std::uint64_t seed) {
  Cloud c;
  c.X.resize(members * steps, d);
  c.Xd.resize(members * steps, d);
  Rng g(seed);
  for (int m = 0; m < members; ++m) {
    Eigen::VectorXd x0(d);
    for (int j = 0; j < d; ++j) x0(j) = lo + (hi - lo) * uniform01(g);
    Eigen::MatrixXd tr = integrate(f, x0, h, steps, 4);
    c.X.middleRows(m * steps, steps) = tr;
    c.Xd.middleRows(m * steps, steps) = time_derivative(tr, h, 1);
  }
  return c;
}

}  // namespace

TEST(DynamicInteraction, DecoupledLinearPair) {
  auto f = [](const Eigen::VectorXd& x) {
    Eigen::VectorXd r(2);
    r << -x(0), -2 * x(1);
    return r;
  };
  auto c = cloud(f, 2, 30, 40, 0.01, -1, 1, 1);
  auto st = interaction_stack(c.X, c.Xd, 2);
  const auto& D1 = st[0];
  EXPECT_NEAR(D1.diagonal_spectrum[0], -1.0, 1e-6);
  EXPECT_NEAR(D1.diagonal_spectrum[1], -2.0, 1e-6);
  for (std::size_t s = 0; s < c.X.rows(); s += 97) {
    EXPECT_LE(std::abs(D1.entry(s, 0, {1})), 1e-6);
    EXPECT_LE(std::abs(D1.entry(s, 1, {0})), 1e-6);
  }
  EXPECT_LE(D1.offdiag_norm, 1e-10);
  // linear system: all second-order entries vanish
  EXPECT_LE(st[1].per_sample.cwiseAbs().maxCoeff(), 1e-5);
}

TEST(DynamicInteraction, CoupledEntry) {
  auto f = [](const Eigen::VectorXd& x) {
    Eigen::VectorXd r(2);
    r << x(1), -x(0) - 0.3 * x(1);
    return r;
  };
  auto c = cloud(f, 2, 30, 40, 0.01, -1, 1, 2);
  auto D1 = dynamic_interaction(c.X, c.Xd, 1);
  EXPECT_NEAR(D1.entry(0, {1}), 1.0, 1e-6);
  EXPECT_NEAR(D1.entry(1, {0}), -1.0, 1e-6);
  EXPECT_GT(D1.offdiag_norm, 1.0);
}

TEST(DynamicInteraction, SymmetryAndNormRecompute) {
  auto f = [](const Eigen::VectorXd& x) {
    Eigen::VectorXd r(3);
    r << x(0) * x(1) - x(2), x(1) * x(2) * x(0) + 0.1, -x(2) + x(0) * x(0);
    return r;
  };
  auto c = cloud(f, 3, 40, 30, 0.01, -0.8, 0.8, 3);
  auto D3 = dynamic_interaction(c.X, c.Xd, 3);
  EXPECT_EQ(D3.entry(7, 1, {0, 1, 2}), D3.entry(7, 1, {2, 0, 1}));
  EXPECT_EQ(D3.entry(1, {1, 2, 0}), D3.entry(1, {0, 2, 1}));
  EXPECT_NEAR(D3.entry(7, 1, {0, 1, 2}), 1.0, 1e-5);
  double again = offdiag_sobolev_norm(D3.per_sample, D3.indices, D3.n_resp, D3.n_drv, D3.sobolev_order, D3.dt);
  EXPECT_NEAR(again, D3.offdiag_norm, 1e-12 * std::max(1.0, again));
  double w = D3.weights.sum();
  EXPECT_NEAR(w, 1.0, 1e-12);
}

TEST(MultiProcess, SingleProcessReduces) {
  auto f = [](const Eigen::VectorXd& x) {
    Eigen::VectorXd r(2);
    r << x(1), -x(0);
    return r;
  };
  auto c = cloud(f, 2, 20, 40, 0.01, -1, 1, 4);
  auto a = dynamic_interaction(c.X, c.Xd, 1);
  auto b = multi_process_interaction(std::vector<Eigen::MatrixXd>{c.X}, std::vector<Eigen::MatrixXd>{c.Xd}, 1);
  EXPECT_EQ(a.per_sample, b.per_sample);
  EXPECT_EQ(a.aggregate, b.aggregate);
}

TEST(MultiProcess, PredatorPreyJacobian) {
  auto f = [](const Eigen::VectorXd& z) {
    Eigen::VectorXd r(2);
    r << z(0) - z(0) * z(1), z(0) * z(1) - z(1);
    return r;
  };
  auto c = cloud(f, 2, 30, 40, 0.01, 0.5, 1.5, 5);
  std::vector<Eigen::MatrixXd> xs{c.X.col(0), c.X.col(1)}, xds{c.Xd.col(0), c.Xd.col(1)};
  auto D = multi_process_interaction(xs, xds, 1);
  ASSERT_EQ(D.resp_blocks.size(), 2u);
  double worst = 0;
  for (Eigen::Index s = 0; s < c.X.rows(); ++s) {
    double x = c.X(s, 0), y = c.X(s, 1);
    worst = std::max(worst, std::abs(D.entry(s, 0, {0}) - (1 - y)));
    worst = std::max(worst, std::abs(D.entry(s, 0, {1}) + x));
    worst = std::max(worst, std::abs(D.entry(s, 1, {0}) - y));
    worst = std::max(worst, std::abs(D.entry(s, 1, {1}) - (x - 1)));
  }
  EXPECT_LE(worst, 1e-5);
}

TEST(MultiProcess, IndependentNoiseCrossBlocksWithinNull) {
  // two independent AR(1) processes
  int N = 400;
  Rng g(11);
  NormalSampler ns;
  Eigen::MatrixXd a(N, 1), b(N, 1);
  a(0, 0) = b(0, 0) = 0;
  for (int t = 1; t < N; ++t) a(t, 0) = 0.9 * a(t - 1, 0) + ns(g), b(t, 0) = 0.8 * b(t - 1, 0) + ns(g);
  Eigen::MatrixXd ad = time_derivative(a, 1.0, 1), bd = time_derivative(b, 1.0, 1);
  InteractionOptions opt;
  opt.jet.degree = 1;
  opt.jet.neighbor_factor = 10;
  auto stat = [&](const Eigen::MatrixXd& bb, const Eigen::MatrixXd& bbd) {
    auto D = multi_process_interaction({a, bb}, {ad, bbd}, 1, opt);
    return cross_block_norm(D, 0, 1) + cross_block_norm(D, 1, 0);
  };
  double obs = stat(b, bd);
  std::vector<double> null;
  for (int r = 0; r < 200; ++r) {
    auto rg = make_rng(5, r);
    std::size_t sh = 1 + uniform_index(rg, N - 1);
    Eigen::MatrixXd bs(N, 1), bds(N, 1);
    for (int t = 0; t < N; ++t) bs(t, 0) = b((t + sh) % N, 0), bds(t, 0) = bd((t + sh) % N, 0);
    null.push_back(stat(bs, bds));
  }
  std::sort(null.begin(), null.end());
  EXPECT_LE(obs, null[189]);
}

TEST(MultiProcess, FieldInterfaceAndLimits) {
  Field p(Grid::uniform(2, 2), TimeAxis::regular(0, 1, 60), 1), q(Grid::uniform(2, 2), TimeAxis::regular(0, 1, 61), 1);
  EXPECT_THROW(multi_process_interaction(std::vector<Field>{p, q}, 1), UsageError);
  Eigen::MatrixXd big = Eigen::MatrixXd::Random(100, 40);
  EXPECT_THROW(dynamic_interaction(big, big, 1), UsageError);
}

TEST(TensorDump, Format) {
  InteractionTensor T;
  T.k = 2;
  T.n_resp = 1;
  T.n_drv = 2;
  T.indices = poly::multi_indices(2, 2);
  T.aggregate = Eigen::Vector3d(0.0, 2.5, 0.0);
  EXPECT_EQ(tensor_dump(T), "2 0 0 1 2.5\n");
}
