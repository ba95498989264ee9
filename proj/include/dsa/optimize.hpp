#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>

namespace dsa {

using Objective = std::function<double(const Eigen::VectorXd&)>;

struct BfgsOptions {
  int max_iter = 500;
  double grad_tol = 1e-8;
  double f_tol = 1e-12;  // relative change over consecutive iterations
  double fd_step = 1e-6;
};

struct BfgsResult {
  Eigen::VectorXd x;
  double f = std::numeric_limits<double>::infinity();
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

inline Eigen::VectorXd numeric_gradient(const Objective& f, const Eigen::VectorXd& x, double step, int& evals) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    double h = step * std::max(1.0, std::abs(x(i)));
    Eigen::VectorXd a = x, b = x;
    a(i) += h;
    b(i) -= h;
    g(i) = (f(a) - f(b)) / (2 * h);
    evals += 2;
  }
  return g;
}

inline BfgsResult bfgs(const Objective& f, const Eigen::VectorXd& x0, const BfgsOptions& opt = {}) {
  BfgsResult r;
  const Eigen::Index n = x0.size();
  r.x = x0;
  r.f = f(x0);
  r.evaluations = 1;
  if (n == 0 || !std::isfinite(r.f)) {
    r.converged = n == 0 && std::isfinite(r.f);
    return r;
  }
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd g = numeric_gradient(f, r.x, opt.fd_step, r.evaluations);
  int flat = 0;
  for (r.iterations = 0; r.iterations < opt.max_iter; ++r.iterations) {
    if (g.norm() <= opt.grad_tol) {
      r.converged = true;
      break;
    }
    Eigen::VectorXd p = -H * g;
    if (p.dot(g) >= 0) {
      H.setIdentity();
      p = -g;
    }
    double a = 1.0, fn = 0.0;
    Eigen::VectorXd xn;
    bool ok = false;
    for (int ls = 0; ls < 40; ++ls, a *= 0.5) {
      xn = r.x + a * p;
      fn = f(xn);
      ++r.evaluations;
      if (std::isfinite(fn) && fn <= r.f + 1e-4 * a * p.dot(g)) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      r.converged = true;  // no descent possible at finite-difference resolution
      break;
    }
    Eigen::VectorXd gn = numeric_gradient(f, xn, opt.fd_step, r.evaluations);
    Eigen::VectorXd s = xn - r.x, y = gn - g;
    double sy = s.dot(y);
    if (sy > 1e-16 * s.norm() * y.norm()) {
      double rho = 1.0 / sy;
      Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
      H = (I - rho * s * y.transpose()) * H * (I - rho * y * s.transpose()) + rho * s * s.transpose();
    }
    double rel = std::abs(r.f - fn) / std::max({std::abs(r.f), std::abs(fn), 1e-300});
    r.x = xn;
    r.f = fn;
    g = gn;
    flat = rel < opt.f_tol ? flat + 1 : 0;
    if (flat >= 3 || fn == 0.0) {
      r.converged = true;
      break;
    }
  }
  return r;
}

}  // namespace dsa
