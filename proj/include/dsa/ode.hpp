#pragma once

#include <Eigen/Dense>
#include <functional>

namespace dsa {

using Rhs = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

inline Eigen::VectorXd rk4_step(const Rhs& f, const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd k1 = f(x);
  Eigen::VectorXd k2 = f(x + 0.5 * h * k1);
  Eigen::VectorXd k3 = f(x + 0.5 * h * k2);
  Eigen::VectorXd k4 = f(x + h * k3);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// Rows are states at t0, t0 + h, ...; `sub` internal steps per output step.
inline Eigen::MatrixXd integrate(const Rhs& f, const Eigen::VectorXd& x0, double h, int steps, int sub = 1) {
  Eigen::MatrixXd out(steps, x0.size());
  Eigen::VectorXd x = x0;
  for (int i = 0; i < steps; ++i) {
    out.row(i) = x.transpose();
    for (int s = 0; s < sub; ++s) x = rk4_step(f, x, h / sub);
  }
  return out;
}

}  // namespace dsa
