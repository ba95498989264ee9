#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dsa/error.hpp"
#include "dsa/field.hpp"
#include "dsa/infostats.hpp"
#include "dsa/interaction.hpp"
#include "dsa/io.hpp"
#include "dsa/polynomial.hpp"
#include "dsa/rng.hpp"

namespace dsa {

enum class ScenarioKind { linear_mixture, nonlinear_mixture, traveling_wave, separable, polynomial_link, chaotic_source };

inline ScenarioKind parse_scenario(const std::string& s) {
  if (s == "linear-mixture") return ScenarioKind::linear_mixture;
  if (s == "nonlinear-mixture") return ScenarioKind::nonlinear_mixture;
  if (s == "traveling-wave") return ScenarioKind::traveling_wave;
  if (s == "separable") return ScenarioKind::separable;
  if (s == "polynomial-link") return ScenarioKind::polynomial_link;
  if (s == "chaotic-source") return ScenarioKind::chaotic_source;
  throw UsageError("unknown scenario '" + s + "'");
}

inline std::string scenario_name(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::linear_mixture: return "linear-mixture";
    case ScenarioKind::nonlinear_mixture: return "nonlinear-mixture";
    case ScenarioKind::traveling_wave: return "traveling-wave";
    case ScenarioKind::separable: return "separable";
    case ScenarioKind::polynomial_link: return "polynomial-link";
    case ScenarioKind::chaotic_source: return "chaotic-source";
  }
  return "?";
}

struct Scenario {
  ScenarioKind kind = ScenarioKind::linear_mixture;
  std::map<std::string, double> params;
  std::map<std::string, std::string> options;
  std::uint64_t seed = 1;

  double param(const std::string& k, double def) const {
    auto it = params.find(k);
    return it == params.end() ? def : it->second;
  }
  std::string option(const std::string& k, const std::string& def) const {
    auto it = options.find(k);
    return it == options.end() ? def : it->second;
  }
};

struct SyntheticData {
  Field observed;
  Field truth;                      // sources as components, spatially uniform
  Eigen::MatrixXd sources;          // time x m
  std::optional<Field> predictand;  // polynomial-link only
  Eigen::MatrixXd mixing;
  std::map<std::string, double> metadata;
};

inline std::vector<double> logistic_orbit(double r, double x0, std::size_t n, std::size_t burn = 200) {
  std::vector<double> x(n);
  double v = x0;
  for (std::size_t i = 0; i < burn; ++i) v = r * v * (1 - v);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = v;
    v = r * v * (1 - v);
  }
  return x;
}

// Benettin-style average of log|f'(x)| along the orbit.
inline double logistic_lyapunov(double r, double x0, std::size_t n) {
  auto x = logistic_orbit(r, x0, n);
  double s = 0.0;
  for (double v : x) s += std::log(std::abs(r * (1 - 2 * v)));
  return s / static_cast<double>(n);
}

namespace detail {

inline Eigen::VectorXd standardized(const std::vector<double>& v) {
  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
  x.array() -= x.mean();
  x /= std::sqrt(x.squaredNorm() / static_cast<double>(x.size()));
  return x;
}

inline void check_range(const std::string& name, double v, double lo, double hi) {
  if (!(v >= lo && v <= hi))
    throw UsageError("scenario parameter '" + name + "' = " + io::fmt(v) + " outside [" + io::fmt(lo) + ", " +
                     io::fmt(hi) + "]");
}

inline Field uniform_field(const Eigen::MatrixXd& series, const Grid& g, const TimeAxis& ta) {
  Field f(g, ta, series.cols());
  for (std::size_t c = 0; c < f.n_comp; ++c)
    for (std::size_t t = 0; t < f.n_time(); ++t)
      for (std::size_t k = 0; k < f.n_cells(); ++k) f.at(c, t, k) = series(t, c);
  return f;
}

inline Eigen::MatrixXd chaotic_pair(std::size_t n, Rng& g, const std::string& kind) {
  Eigen::MatrixXd S(n, 2);
  if (kind == "gaussian-noise") {
    NormalSampler ns;
    for (std::size_t t = 0; t < n; ++t) S(t, 0) = ns(g), S(t, 1) = ns(g);
    return S;
  }
  double a = 0.1 + 0.8 * uniform01(g), b = 0.1 + 0.8 * uniform01(g);
  S.col(0) = standardized(logistic_orbit(4.0, a, n));
  S.col(1) = standardized(logistic_orbit(3.8, b, n));
  return S;
}

inline void add_noise(Field& f, double amp, const std::string& kind, Rng& g) {
  if (amp <= 0) return;
  NormalSampler ns;
  for (auto& v : f.values) v += amp * (kind == "uniform" ? std::sqrt(12.0) * (uniform01(g) - 0.5) : ns(g));
}

}  // namespace detail

inline SyntheticData generate(const Scenario& scn) {
  Rng g = make_rng(scn.seed, static_cast<std::uint64_t>(scn.kind));
  SyntheticData out;
  const double noise = scn.param("noise", 0.0);
  detail::check_range("noise", noise, 0.0, 10.0);
  const std::string noise_kind = scn.option("noise_kind", "gaussian");
  if (noise_kind != "gaussian" && noise_kind != "uniform") throw UsageError("noise_kind must be gaussian or uniform");
  switch (scn.kind) {
    case ScenarioKind::linear_mixture:
    case ScenarioKind::nonlinear_mixture:
    case ScenarioKind::polynomial_link: {
      double nd = scn.param("n", 5000);
      detail::check_range("n", nd, 64, 1e6);
      auto n = static_cast<std::size_t>(nd);
      std::string src = scn.option("sources", "logistic");
      if (src != "logistic" && src != "gaussian-noise") throw UsageError("sources must be logistic or gaussian-noise");
      Eigen::MatrixXd S = detail::chaotic_pair(n, g, src);
      out.sources = S;
      Eigen::MatrixXd Y;
      if (scn.kind == ScenarioKind::nonlinear_mixture) {
        double c = scn.param("quad", 0.1);
        detail::check_range("quad", c, -10, 10);
        Y.resize(n, 3);
        Y.col(0) = S.col(0);
        Y.col(1) = S.col(1);
        Y.col(2) = (S.col(0).array() * S.col(1).array() + c * S.col(1).array().square()).matrix();
        out.mixing = Eigen::MatrixXd::Identity(3, 2);
      } else {
        Eigen::MatrixXd A(3, 2);
        A << 0.8, 0.6, -0.6, 0.8, 0.3, 0.5;
        if (scn.param("identity", 0) != 0) A = Eigen::MatrixXd::Identity(2, 2);
        out.mixing = A;
        Y = S * A.transpose();
      }
      Grid grid = Grid::uniform(2, 2, 40.0, 10.0, 0.0, 10.0);
      TimeAxis ta = TimeAxis::regular(0.0, 1.0, n);
      out.observed = detail::uniform_field(Y, grid, ta);
      out.truth = detail::uniform_field(S, grid, ta);
      detail::add_noise(out.observed, noise, noise_kind, g);
      if (scn.kind == ScenarioKind::polynomial_link) {
        double nla = scn.param("n_lat", 6), nlo = scn.param("n_lon", 8);
        detail::check_range("n_lat", nla, 2, 512);
        detail::check_range("n_lon", nlo, 2, 512);
        Grid pg = Grid::uniform(static_cast<std::size_t>(nla), static_cast<std::size_t>(nlo), 30.0, 2.0, 0.0, 2.0);
        Field z(pg, ta, 1);
        std::string link = scn.option("link", "quadratic");
        double c1 = scn.param("c1", 0.6), c2 = scn.param("c2", 0.3), c3 = scn.param("c3", 0.1);
        double pn = scn.param("link_noise", 0.0);
        detail::check_range("link_noise", pn, 0.0, 10.0);
        NormalSampler ns;
        for (std::size_t k = 0; k < pg.n_cells(); ++k) {
          double scale = 0.5 + 1.5 * uniform01(g);
          for (std::size_t t = 0; t < n; ++t) {
            double x = S(t, 0), v;
            if (link == "linear") {
              v = x;
            } else if (link == "quadratic") {
              v = x * x;
            } else if (link == "cubic") {
              v = c1 * x + c2 * x * x + c3 * x * x * x;
            } else if (link == "correlated") {
              v = 0.6 * x + 0.8 * ns(g);
            } else if (link == "independent") {
              v = ns(g);
            } else {
              throw UsageError("unknown link '" + link + "'");
            }
            z.at(0, t, k) = scale * (v + pn * ns(g));
          }
        }
        out.predictand = z;
        out.metadata["c1"] = c1;
        out.metadata["c2"] = c2;
        out.metadata["c3"] = c3;
      }
      out.metadata["n_sources"] = 2;
      out.metadata["n_observables"] = static_cast<double>(Y.cols());
      break;
    }
    case ScenarioKind::chaotic_source: {
      double nd = scn.param("n", 5000);
      detail::check_range("n", nd, 64, 1e7);
      auto n = static_cast<std::size_t>(nd);
      double r = scn.param("r", 4.0);
      detail::check_range("r", r, 3.57, 4.0);
      double x0 = 0.1 + 0.8 * uniform01(g);
      Eigen::MatrixXd S(n, 2);
      S.col(0) = detail::standardized(logistic_orbit(r, x0, n));
      std::vector<double> q(n);
      double f1 = scn.param("f1", 0.0537), f2 = f1 * (std::sqrt(5.0) - 1.0) / 2.0 * 1.3;
      for (std::size_t t = 0; t < n; ++t) q[t] = std::sin(2 * M_PI * f1 * t) + 0.7 * std::sin(2 * M_PI * f2 * t + 1.0);
      S.col(1) = detail::standardized(q);
      out.sources = S;
      out.mixing = Eigen::MatrixXd::Identity(2, 2);
      Grid grid = Grid::uniform(2, 2, 40.0, 10.0, 0.0, 10.0);
      TimeAxis ta = TimeAxis::regular(0.0, 1.0, n);
      out.observed = detail::uniform_field(S, grid, ta);
      out.truth = out.observed;
      detail::add_noise(out.observed, noise, noise_kind, g);
      out.metadata["lyapunov"] = r == 4.0 ? std::log(2.0) : logistic_lyapunov(r, x0, 100000);
      out.metadata["r"] = r;
      break;
    }
    case ScenarioKind::traveling_wave: {
      double omega = scn.param("omega", 2.0), v = scn.param("v", 0.5);
      detail::check_range("omega", omega, -20, 20);
      detail::check_range("v", v, -20, 20);
      double nl = scn.param("n_lon", 256), nt = scn.param("n_time", 512), dt = scn.param("dt", 0.05);
      double L = scn.param("length", 2 * M_PI * 8);
      detail::check_range("n_lon", nl, 8, 1 << 16);
      detail::check_range("n_time", nt, 8, 1 << 20);
      detail::check_range("dt", dt, 1e-6, 10);
      detail::check_range("length", L, 1e-3, 1e6);
      auto NL = static_cast<std::size_t>(nl), NT = static_cast<std::size_t>(nt);
      std::vector<double> lon(NL);
      for (std::size_t j = 0; j < NL; ++j) lon[j] = L * j / nl;
      Grid grid = Grid::make({0.0, 1.0}, lon);
      TimeAxis ta = TimeAxis::regular(0.0, dt, NT);
      Field f(grid, ta, 1);
      for (std::size_t t = 0; t < NT; ++t) {
        double tt = ta.t[t];
        for (std::size_t j = 0; j < NL; ++j) {
          double s = lon[j];
          double env = std::pow(0.5 * (1 + std::cos(2 * M_PI * (s - omega * tt) / L)), 4);
          double w = env * std::cos(s - v * tt);
          f.at(0, t, 0, j) = w;
          f.at(0, t, 1, j) = w;
        }
      }
      out.observed = f;
      out.truth = f;
      detail::add_noise(out.observed, noise, noise_kind, g);
      out.metadata["omega"] = omega;
      out.metadata["v"] = v;
      out.metadata["canonic_frequency"] = omega - v;
      out.metadata["dimension"] = 1;
      break;
    }
    case ScenarioKind::separable: {
      double nl = scn.param("n_lon", 64), nt = scn.param("n_time", 200);
      detail::check_range("n_lon", nl, 8, 1 << 16);
      detail::check_range("n_time", nt, 8, 1 << 20);
      auto NL = static_cast<std::size_t>(nl), NT = static_cast<std::size_t>(nt);
      double ph = 2 * M_PI * uniform01(g);
      Grid grid = Grid::uniform(3, NL, 0.0, 1.0, 0.0, 360.0 / nl);
      TimeAxis ta = TimeAxis::regular(0.0, 0.1, NT);
      Field f(grid, ta, 1);
      for (std::size_t t = 0; t < NT; ++t) {
        double tt = ta.t[t];
        double h = std::cos(tt) + 0.5 * std::sin(2.3 * tt + ph);
        for (std::size_t i = 0; i < 3; ++i)
          for (std::size_t j = 0; j < NL; ++j) {
            double s = 2 * M_PI * j / nl;
            double gs = (1.0 + 0.2 * i) * (1.0 + 0.5 * std::cos(s) + 0.3 * std::sin(2 * s));
            f.at(0, t, i, j) = gs * h;
          }
      }
      out.observed = f;
      out.truth = f;
      detail::add_noise(out.observed, noise, noise_kind, g);
      out.metadata["dimension"] = 2;
      break;
    }
  }
  return out;
}

// Minimum-cost assignment on a square matrix; returns column per row.
inline std::vector<int> hungarian(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  const double INF = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0), v(n + 1, 0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), INF);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = 0;
      double delta = INF;
      for (int j = 1; j <= n; ++j)
        if (!used[j]) {
          double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
          if (cur < minv[j]) minv[j] = cur, way[j] = j0;
          if (minv[j] < delta) delta = minv[j], j1 = j;
        }
      for (int j = 0; j <= n; ++j)
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> ans(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j]) ans[p[j] - 1] = j - 1;
  return ans;
}

struct RecoveryScore {
  std::vector<int> pairing;   // truth index -> recovered index (-1 if unmatched)
  std::vector<double> score;  // |corr| after anamorphosis, per truth source
  std::vector<int> sign;
  double min_score() const { return score.empty() ? 0.0 : *std::min_element(score.begin(), score.end()); }
};

inline RecoveryScore score_recovery(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& recovered) {
  if (truth.rows() != recovered.rows()) throw UsageError("score_recovery: time axes differ");
  if (truth.cols() == 0) throw UsageError("score_recovery: no true sources");
  RecoveryScore r;
  const int mt = static_cast<int>(truth.cols()), mr = static_cast<int>(recovered.cols());
  if (mr == 0) {
    r.pairing.assign(mt, -1);
    r.score.assign(mt, 0.0);
    r.sign.assign(mt, 0);
    return r;
  }
  Eigen::MatrixXd all(truth.rows(), mt + mr);
  all << truth, recovered;
  Eigen::MatrixXd C = correlation(anamorphosis(all));
  int n = std::max(mt, mr);
  Eigen::MatrixXd cost = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < mt; ++i)
    for (int j = 0; j < mr; ++j) cost(i, j) = -std::abs(C(i, mt + j));
  auto a = hungarian(cost);
  for (int i = 0; i < mt; ++i) {
    int j = a[i] < mr ? a[i] : -1;
    r.pairing.push_back(j);
    double c = j >= 0 ? C(i, mt + j) : 0.0;
    r.score.push_back(std::abs(c));
    r.sign.push_back(c >= 0 ? 1 : -1);
  }
  return r;
}

// Exact D^k of a polynomial right-hand side at each sample.
inline InteractionTensor brute_force_interaction(const poly::Polynomial& system, const Eigen::MatrixXd& X, int k) {
  if (system.d != X.cols()) throw UsageError("system dimension mismatch");
  for (const auto& t : system.terms)
    if (poly::degree_of(t) > 6) throw UsageError("brute_force_interaction supports degree <= 6");
  InteractionTensor T;
  T.k = k;
  T.n_resp = system.outputs();
  T.n_drv = system.d;
  T.indices = poly::multi_indices(system.d, k);
  T.per_sample.resize(X.rows(), T.n_resp * T.indices.size());
  for (std::size_t i = 0; i < T.indices.size(); ++i) {
    Eigen::MatrixXd D = system.derivative(poly::to_exponent(T.indices[i], system.d), X);
    for (int r = 0; r < T.n_resp; ++r) T.per_sample.col(T.col(r, i)) = D.col(r);
  }
  finalize_tensor(T, system.eval(X), 1e-3);
  return T;
}

}  // namespace dsa
