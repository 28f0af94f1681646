#pragma once

#include <random>

#include "vifg/factor.hpp"
#include "vifg/graph.hpp"

// Test-only oracles, independent of the library's implementation paths.

namespace vifg::testing {

// Rodrigues formula evaluated directly on the matrix form.
inline Mat3 rodrigues(const Vec3& omega) {
  const double theta = omega.norm();
  if (theta < 1e-12) return Mat3::Identity();
  const Vec3 axis = omega / theta;
  const Mat3 K = skew(axis);
  return Mat3::Identity() + std::sin(theta) * K + (1.0 - std::cos(theta)) * K * K;
}

// Matrix log via Eigen's angle-axis decomposition.
inline Vec3 matrix_log(const Mat3& m) {
  const Eigen::AngleAxisd aa(m);
  return aa.angle() * aa.axis();
}

// Central finite differences of a factor's raw residual w.r.t. one key.
inline Eigen::MatrixXd fd_jacobian(const MeasurementFactor& factor, const GraphValues& values,
                                   const VariableKey& key, double h = 1e-6) {
  const int dim = tangent_dim(key);
  const int m = factor.residual_dim();
  Eigen::MatrixXd J(m, dim);
  for (int c = 0; c < dim; ++c) {
    Eigen::VectorXd step = Eigen::VectorXd::Zero(dim);
    GraphValues vp = values, vm = values;
    step[c] = h;
    vp.update(key, block_boxplus(values.at(key), step));
    step[c] = -h;
    vm.update(key, block_boxplus(values.at(key), step));
    J.col(c) = (factor.residual(vp) - factor.residual(vm)) / (2.0 * h);
  }
  return J;
}

// Compare every analytic Jacobian block of a factor against central
// differences; returns the worst relative error (relative to the max scale).
inline double max_jacobian_error(const MeasurementFactor& factor, const GraphValues& values,
                                 double h = 1e-6) {
  std::vector<Eigen::MatrixXd> jac;
  factor.jacobians(values, jac);
  double worst = 0.0;
  for (size_t i = 0; i < factor.keys().size(); ++i) {
    const Eigen::MatrixXd fd = fd_jacobian(factor, values, factor.keys()[i], h);
    const double scale = std::max(1.0, fd.cwiseAbs().maxCoeff());
    worst = std::max(worst, (jac[i] - fd).cwiseAbs().maxCoeff() / scale);
  }
  return worst;
}

inline std::mt19937_64& rng() {
  static std::mt19937_64 gen(20240817ull);
  return gen;
}

inline double uniform(double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng());
}

inline Vec3 random_vec3(double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  return Vec3(g(rng()), g(rng()), g(rng()));
}

inline Rotation3 random_rotation(double max_angle = 3.0) {
  Vec3 w = random_vec3(1.0);
  if (w.norm() > 1e-12) w = w.normalized() * uniform(0.0, max_angle);
  return Rotation3::exp(w);
}

inline RigidTransform random_pose(double trans_scale = 1.0) {
  return RigidTransform(random_rotation(), random_vec3(trans_scale));
}

// Random symmetric positive definite matrix with controlled conditioning.
inline Eigen::MatrixXd random_spd(int n, double ridge = 0.5) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = g(rng());
  return A * A.transpose() + ridge * Eigen::MatrixXd::Identity(n, n);
}

inline Eigen::VectorXd random_vector(int n, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = g(rng());
  return v;
}

}  // namespace vifg::testing
