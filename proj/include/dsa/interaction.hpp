#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dsa/error.hpp"
#include "dsa/field.hpp"
#include "dsa/io.hpp"
#include "dsa/numdiff.hpp"
#include "dsa/parallel.hpp"
#include "dsa/polynomial.hpp"

namespace dsa {

// Order-k dynamic interaction: d^k (response) / d(driver)^k, stored per sorted
// driver multi-index; symmetric in the driver indices by construction.
struct InteractionTensor {
  int k = 1;
  int n_resp = 0;
  int n_drv = 0;
  std::vector<poly::MultiIndex> indices;
  Eigen::MatrixXd per_sample;  // samples x (n_resp * n_idx), response-major
  Eigen::VectorXd aggregate;   // [.]_R
  Eigen::VectorXd weights;     // reference-manifold sample weights, sum 1
  std::vector<double> diagonal_spectrum;
  double offdiag_norm = 0.0;
  int sobolev_order = 1;
  double dt = 1.0;
  std::vector<int> resp_blocks{0};  // block start offsets
  std::vector<int> drv_blocks{0};

  std::size_t n_idx() const { return indices.size(); }
  std::size_t col(int resp, std::size_t idx) const { return resp * indices.size() + idx; }

  std::size_t find(const poly::MultiIndex& m) const {
    poly::MultiIndex s = m;
    std::sort(s.begin(), s.end());
    auto it = std::find(indices.begin(), indices.end(), s);
    if (it == indices.end()) throw UsageError("multi-index not present in tensor");
    return it - indices.begin();
  }
  // Any ordering of the driver indices addresses the same entry.
  double entry(int resp, const poly::MultiIndex& m) const { return aggregate(col(resp, find(m))); }
  double entry(std::size_t sample, int resp, const poly::MultiIndex& m) const {
    return per_sample(sample, col(resp, find(m)));
  }

  bool is_diagonal(int resp, std::size_t idx) const { return poly::all_equal(indices[idx], resp); }

  int block_of(const std::vector<int>& blocks, int i) const {
    int b = 0;
    for (std::size_t q = 0; q < blocks.size(); ++q)
      if (i >= blocks[q]) b = static_cast<int>(q);
    return b;
  }
};

struct InteractionOptions {
  JetOptions jet;
  bool local = true;     // false: one global polynomial
  int global_degree = 3;
  int sobolev_order = 1;  // 0: L2 only, 1: adds the time-derivative term
  double dt = 1.0;
  double speed_eps = 1e-3;  // relative to median speed
  int max_dim = 32;
};

// Sobolev norm of the off-diagonal part, counting every ordered index tuple.
inline double offdiag_sobolev_norm(const Eigen::MatrixXd& C, const std::vector<poly::MultiIndex>& indices, int n_resp,
                                   int n_drv, int sobolev_order, double dt) {
  const std::size_t ni = indices.size();
  std::vector<double> mult(ni);
  for (std::size_t i = 0; i < ni; ++i) mult[i] = poly::multiplicity(indices[i], n_drv);
  const Eigen::Index N = C.rows();
  if (N == 0) return 0.0;
  double l2 = 0.0, h1 = 0.0;
  for (int r = 0; r < n_resp; ++r)
    for (std::size_t i = 0; i < ni; ++i) {
      if (poly::all_equal(indices[i], r) && r < n_drv) continue;
      auto c = C.col(r * ni + i);
      l2 += mult[i] * c.squaredNorm();
      if (sobolev_order >= 1 && N >= 3) {
        double s = 0.0;
        for (Eigen::Index t = 1; t + 1 < N; ++t) {
          double d = (c(t + 1) - c(t - 1)) / (2.0 * dt);
          s += d * d;
        }
        h1 += mult[i] * s / static_cast<double>(N - 2);
      }
    }
  return l2 / static_cast<double>(N) + h1;
}

inline void finalize_tensor(InteractionTensor& T, const Eigen::MatrixXd& Xdot, double speed_eps) {
  const Eigen::Index N = T.per_sample.rows();
  Eigen::VectorXd speed = Xdot.rowwise().norm();
  std::vector<double> sp(speed.data(), speed.data() + N);
  std::nth_element(sp.begin(), sp.begin() + N / 2, sp.end());
  double eps = speed_eps * std::max(sp[N / 2], 1e-300);
  Eigen::VectorXd w = (speed.array() + eps).inverse().matrix();
  w /= tree_reduce<double>(0, N, [&](std::size_t i) { return w(i); });
  T.weights = w;
  const Eigen::Index M = T.per_sample.cols();
  T.aggregate.resize(M);
  for (Eigen::Index c = 0; c < M; ++c)
    T.aggregate(c) = tree_reduce<double>(0, N, [&](std::size_t i) { return w(i) * T.per_sample(i, c); });
  T.diagonal_spectrum.assign(T.n_resp, 0.0);
  for (int r = 0; r < T.n_resp && r < T.n_drv; ++r) {
    poly::MultiIndex m(T.k, r);
    T.diagonal_spectrum[r] = T.aggregate(T.col(r, T.find(m)));
  }
  T.offdiag_norm = offdiag_sobolev_norm(T.per_sample, T.indices, T.n_resp, T.n_drv, T.sobolev_order, T.dt);
}

inline std::vector<InteractionTensor> interaction_stack(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Xdot,
                                                        int max_k, const InteractionOptions& opt = {}) {
  if (X.cols() > opt.max_dim)
    throw UsageError("state dimension " + std::to_string(X.cols()) + " exceeds limit " + std::to_string(opt.max_dim));
  LocalJet jet = opt.local ? state_space_gradient(X, Xdot, max_k, opt.jet)
                           : global_gradient(X, Xdot, max_k, opt.global_degree);
  std::vector<InteractionTensor> out;
  for (int k = 1; k <= max_k; ++k) {
    InteractionTensor T;
    T.k = k;
    T.n_resp = static_cast<int>(Xdot.cols());
    T.n_drv = static_cast<int>(X.cols());
    T.indices = jet.indices[k - 1];
    T.per_sample = jet.coef[k - 1];
    T.sobolev_order = opt.sobolev_order;
    T.dt = opt.dt;
    finalize_tensor(T, Xdot, opt.speed_eps);
    out.push_back(std::move(T));
  }
  return out;
}

inline InteractionTensor dynamic_interaction(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Xdot, int k,
                                             const InteractionOptions& opt = {}) {
  auto st = interaction_stack(X, Xdot, k, opt);
  return std::move(st.back());
}

inline InteractionTensor dynamic_interaction(const Field& x, const DerivativeStack& derivs, int k,
                                             InteractionOptions opt = {}) {
  if (k > derivs.cfg.beta) throw UsageError("interaction order exceeds beta");
  if (derivs.source.n_time() != x.n_time()) throw UsageError("derivative stack does not match field");
  opt.dt = x.time.step;
  return dynamic_interaction(x.flatten(), derivs.time(1).flatten(), k, opt);
}

// Stacked state (M1, ..., Mn); each entry is (states, tendencies).
inline InteractionTensor multi_process_interaction(const std::vector<Eigen::MatrixXd>& states,
                                                   const std::vector<Eigen::MatrixXd>& tendencies, int k,
                                                   const InteractionOptions& opt = {}) {
  if (states.empty() || states.size() != tendencies.size()) throw UsageError("process lists empty or mismatched");
  Eigen::Index N = states[0].rows(), d = 0;
  std::vector<int> blocks;
  for (std::size_t p = 0; p < states.size(); ++p) {
    if (states[p].rows() != N || tendencies[p].rows() != N) throw UsageError("process time axes differ");
    if (states[p].cols() != tendencies[p].cols()) throw UsageError("process state and tendency widths differ");
    blocks.push_back(static_cast<int>(d));
    d += states[p].cols();
  }
  Eigen::MatrixXd X(N, d), Xd(N, d);
  for (std::size_t p = 0; p < states.size(); ++p) {
    X.middleCols(blocks[p], states[p].cols()) = states[p];
    Xd.middleCols(blocks[p], states[p].cols()) = tendencies[p];
  }
  auto T = dynamic_interaction(X, Xd, k, opt);
  T.resp_blocks = blocks;
  T.drv_blocks = blocks;
  return T;
}

inline InteractionTensor multi_process_interaction(const std::vector<Field>& processes, int k,
                                                   InteractionOptions opt = {}) {
  if (processes.empty()) throw UsageError("no processes");
  std::vector<Eigen::MatrixXd> xs, xds;
  for (const auto& p : processes) {
    if (p.n_time() != processes[0].n_time() || std::abs(p.time.step - processes[0].time.step) > 1e-12 ||
        p.time.t.front() != processes[0].time.t.front())
      throw UsageError("process time axes differ");
    p.require_complete("multi_process_interaction");
    xs.push_back(p.flatten());
    xds.push_back(time_derivative(xs.back(), p.time.step, 1));
  }
  opt.dt = processes[0].time.step;
  return multi_process_interaction(xs, xds, k, opt);
}

// Squared Sobolev norm of the block (response block p, entries touching driver block q).
inline double cross_block_norm(const InteractionTensor& T, std::size_t p, std::size_t q) {
  const std::size_t ni = T.n_idx();
  auto end = [](const std::vector<int>& b, std::size_t i, int n) { return i + 1 < b.size() ? b[i + 1] : n; };
  int r0 = T.resp_blocks.at(p), r1 = end(T.resp_blocks, p, T.n_resp);
  int d0 = T.drv_blocks.at(q), d1 = end(T.drv_blocks, q, T.n_drv);
  std::vector<std::size_t> cols;
  std::vector<poly::MultiIndex> idx;
  for (int r = r0; r < r1; ++r)
    for (std::size_t i = 0; i < ni; ++i) {
      const auto& m = T.indices[i];
      bool touches = std::any_of(m.begin(), m.end(), [&](int j) { return j >= d0 && j < d1; });
      if (touches) cols.push_back(T.col(r, i));
    }
  double s = 0.0;
  for (auto c : cols) {
    std::size_t i = c % ni;
    s += poly::multiplicity(T.indices[i], T.n_drv) * T.per_sample.col(c).squaredNorm();
  }
  return T.per_sample.rows() ? s / static_cast<double>(T.per_sample.rows()) : 0.0;
}

inline std::string tensor_dump(const InteractionTensor& T, double zero_tol = 0.0) {
  std::string s;
  for (int r = 0; r < T.n_resp; ++r)
    for (std::size_t i = 0; i < T.n_idx(); ++i) {
      double v = T.aggregate(T.col(r, i));
      if (std::abs(v) <= zero_tol) continue;
      s += std::to_string(T.k) + " " + std::to_string(r);
      for (int j : T.indices[i]) s += " " + std::to_string(j);
      s += " " + io::fmt(v) + "\n";
    }
  return s;
}

}  // namespace dsa
