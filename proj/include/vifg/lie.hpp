#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

namespace vifg {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

/// Rotation in SO(3), stored as a unit quaternion; renormalized after every update.
///
/// Tangent convention is left-multiplicative throughout the library:
///   boxplus(R, w)    = exp(w) * R
///   boxminus(Ra, Rb) = log(Ra * Rb^-1)
class Rotation3 {
 public:
  Rotation3() : q_(Eigen::Quaterniond::Identity()) {}
  explicit Rotation3(const Eigen::Quaterniond& q) : q_(q.normalized()) {}
  explicit Rotation3(const Mat3& m) : q_(Eigen::Quaterniond(m).normalized()) {}

  static Rotation3 identity() { return Rotation3(); }

  /// Construct from a quaternion that is already unit-norm, without
  /// renormalizing (bit-faithful deserialization).
  static Rotation3 from_unit_quaternion(const Eigen::Quaterniond& q) {
    Rotation3 r;
    r.q_ = q;
    return r;
  }

  /// Exponential map; exact Rodrigues with a series branch below 1e-8.
  static Rotation3 exp(const Vec3& omega);

  /// Log map into (-pi, pi]; inverse of exp for angles below pi.
  Vec3 log() const;

  Mat3 matrix() const { return q_.toRotationMatrix(); }
  const Eigen::Quaterniond& quaternion() const { return q_; }

  Rotation3 inverse() const { return Rotation3(q_.conjugate()); }
  Rotation3 operator*(const Rotation3& o) const { return Rotation3(q_ * o.q_); }
  Vec3 operator*(const Vec3& v) const { return q_ * v; }

  Rotation3 boxplus(const Vec3& w) const { return exp(w) * (*this); }
  Vec3 boxminus(const Rotation3& o) const { return ((*this) * o.inverse()).log(); }

  double angular_distance(const Rotation3& o) const { return boxminus(o).norm(); }

  bool is_approx(const Rotation3& o, double tol = 1e-9) const {
    return (matrix() - o.matrix()).cwiseAbs().maxCoeff() < tol;
  }

 private:
  Eigen::Quaterniond q_;
};

/// Left Jacobian of SO(3): exp(w + dw) ~= exp(Jl(w) dw) * exp(w).
Mat3 so3_left_jacobian(const Vec3& w);
Mat3 so3_left_jacobian_inverse(const Vec3& w);
/// Right Jacobian: exp(w + dw) ~= exp(w) * exp(Jr(w) dw); Jr(w) = Jl(-w).
Mat3 so3_right_jacobian(const Vec3& w);
Mat3 so3_right_jacobian_inverse(const Vec3& w);

/// Element of SE(3) as (rotation, translation): x -> R x + t.
///
/// Tangent is decoupled (rotation 3, translation 3): the rotation part uses the
/// SO(3) log/exp maps and the translation part plain vector addition.
class RigidTransform {
 public:
  RigidTransform() : t_(Vec3::Zero()) {}
  RigidTransform(const Rotation3& r, const Vec3& t) : r_(r), t_(t) {}

  static RigidTransform identity() { return RigidTransform(); }

  const Rotation3& rotation() const { return r_; }
  const Vec3& translation() const { return t_; }

  Vec3 operator*(const Vec3& x) const { return r_ * x + t_; }
  RigidTransform operator*(const RigidTransform& o) const {
    return RigidTransform(r_ * o.r_, r_ * o.t_ + t_);
  }
  RigidTransform inverse() const {
    Rotation3 ri = r_.inverse();
    return RigidTransform(ri, -(ri * t_));
  }

  /// Tangent order: rotation(3), translation(3).
  RigidTransform boxplus(const Eigen::Matrix<double, 6, 1>& d) const {
    return RigidTransform(r_.boxplus(d.head<3>()), t_ + d.tail<3>());
  }
  Eigen::Matrix<double, 6, 1> boxminus(const RigidTransform& o) const {
    Eigen::Matrix<double, 6, 1> d;
    d.head<3>() = r_.boxminus(o.r_);
    d.tail<3>() = t_ - o.t_;
    return d;
  }

  bool is_approx(const RigidTransform& o, double tol = 1e-9) const {
    return r_.is_approx(o.r_, tol) && (t_ - o.t_).cwiseAbs().maxCoeff() < tol;
  }

 private:
  Rotation3 r_;
  Vec3 t_;
};

/// Element of Sim(3) acting as x -> s R x + t. Only used as a container for the
/// scale variable (pure-scale elements); the scale scalar itself is what is optimized.
class SimilarityTransform {
 public:
  SimilarityTransform() : t_(Vec3::Zero()), s_(1.0) {}
  SimilarityTransform(const Rotation3& r, const Vec3& t, double s) : r_(r), t_(t), s_(s) {}

  /// The pure-scale element: identity rotation and translation, scale s.
  static SimilarityTransform from_scale(double s) {
    return SimilarityTransform(Rotation3(), Vec3::Zero(), s);
  }

  const Rotation3& rotation() const { return r_; }
  const Vec3& translation() const { return t_; }
  double scale() const { return s_; }

  Vec3 operator*(const Vec3& x) const { return s_ * (r_ * x) + t_; }
  SimilarityTransform operator*(const SimilarityTransform& o) const {
    return SimilarityTransform(r_ * o.r_, s_ * (r_ * o.t_) + t_, s_ * o.s_);
  }
  SimilarityTransform inverse() const {
    Rotation3 ri = r_.inverse();
    return SimilarityTransform(ri, -(ri * t_) / s_, 1.0 / s_);
  }

  static SimilarityTransform from_rigid(const RigidTransform& t) {
    return SimilarityTransform(t.rotation(), t.translation(), 1.0);
  }
  /// Valid only when scale == 1 (within tolerance).
  RigidTransform to_rigid() const { return RigidTransform(r_, t_); }

 private:
  Rotation3 r_;
  Vec3 t_;
  double s_;
};

}  // namespace vifg
