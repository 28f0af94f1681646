#include "vifg/lie.hpp"

#include <cmath>

namespace vifg {

Rotation3 Rotation3::exp(const Vec3& omega) {
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  Eigen::Quaterniond q;
  if (theta < 1e-8) {
    // sin(t/2)/t = 1/2 - t^2/48 + O(t^4)
    const double f = 0.5 - theta2 / 48.0;
    q = Eigen::Quaterniond(1.0 - theta2 / 8.0, f * omega.x(), f * omega.y(), f * omega.z());
  } else {
    const double half = 0.5 * theta;
    const double f = std::sin(half) / theta;
    q = Eigen::Quaterniond(std::cos(half), f * omega.x(), f * omega.y(), f * omega.z());
  }
  return Rotation3(q);
}

Vec3 Rotation3::log() const {
  Eigen::Quaterniond q = q_;
  if (q.w() < 0) q.coeffs() = -q.coeffs();  // canonical hemisphere, angle in [0, pi]
  const Vec3 v(q.x(), q.y(), q.z());
  const double vn = v.norm();
  if (vn < 1e-9) {
    return 2.0 * v * (1.0 + vn * vn / (6.0 * q.w() * q.w())) / q.w();
  }
  const double theta = 2.0 * std::atan2(vn, q.w());
  return v * (theta / vn);
}

Mat3 so3_left_jacobian(const Vec3& w) {
  const double t2 = w.squaredNorm();
  const double t = std::sqrt(t2);
  const Mat3 W = skew(w);
  if (t < 1e-6) {
    return Mat3::Identity() + 0.5 * W + W * W / 6.0;
  }
  const double a = (1.0 - std::cos(t)) / t2;
  const double b = (t - std::sin(t)) / (t2 * t);
  return Mat3::Identity() + a * W + b * W * W;
}

Mat3 so3_left_jacobian_inverse(const Vec3& w) {
  const double t2 = w.squaredNorm();
  const double t = std::sqrt(t2);
  const Mat3 W = skew(w);
  if (t < 1e-6) {
    return Mat3::Identity() - 0.5 * W + W * W / 12.0;
  }
  const double c = 1.0 / t2 - (1.0 + std::cos(t)) / (2.0 * t * std::sin(t));
  return Mat3::Identity() - 0.5 * W + c * W * W;
}

Mat3 so3_right_jacobian(const Vec3& w) { return so3_left_jacobian(-w); }

Mat3 so3_right_jacobian_inverse(const Vec3& w) { return so3_left_jacobian_inverse(-w); }

}  // namespace vifg
