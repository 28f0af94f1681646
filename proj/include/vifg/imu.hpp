#pragma once

#include <span>
#include <vector>

#include "vifg/common.hpp"
#include "vifg/lie.hpp"

namespace vifg {

struct ImuMeasurement {
  double timestamp = 0.0;  // seconds
  Vec3 gyro = Vec3::Zero();    // rad/s
  Vec3 accel = Vec3::Zero();   // m/s^2, specific force
};

struct ImuBias {
  Vec3 gyro = Vec3::Zero();
  Vec3 accel = Vec3::Zero();

  Eigen::Matrix<double, 6, 1> vector() const {
    Eigen::Matrix<double, 6, 1> v;
    v << gyro, accel;
    return v;
  }
  static ImuBias from_vector(const Eigen::Matrix<double, 6, 1>& v) {
    return {v.head<3>(), v.tail<3>()};
  }
};

struct ImuNoiseParams {
  double gyro_noise_density = 1.7e-4;    // rad/s/sqrt(Hz)
  double accel_noise_density = 2.0e-3;   // m/s^2/sqrt(Hz)
  double gyro_bias_random_walk = 2.0e-5; // rad/s^2/sqrt(Hz)
  double accel_bias_random_walk = 3.0e-3;// m/s^3/sqrt(Hz)
  double gravity_magnitude = 9.81;

  Vec3 gravity() const { return Vec3(0, 0, -gravity_magnitude); }
  void validate() const;
};

/// State of the IMU body: pose T_w_imu (body to world, metric gravity-aligned
/// frame), world velocity, and bias.
struct ImuState {
  RigidTransform pose;
  Vec3 velocity = Vec3::Zero();
  ImuBias bias;
};

using Mat9 = Eigen::Matrix<double, 9, 9>;
using Vec9 = Eigen::Matrix<double, 9, 1>;

/// Preintegrated IMU measurements between two keyframes: relative rotation,
/// velocity, and position deltas, a 9x9 covariance over (theta, v, p), and
/// first-order bias-correction Jacobians at the linearization bias.
class PreintegratedImu {
 public:
  explicit PreintegratedImu(const ImuNoiseParams& params, const ImuBias& linearization_bias = {});

  /// Apply one measurement held constant over dt (zero-order hold).
  void integrate(const ImuMeasurement& m, double dt);

  /// Integrate a sample run covering [t_start, t_end] with midpoint averaging
  /// of consecutive samples. Samples must bracket the interval.
  static PreintegratedImu integrate_sequence(const ImuNoiseParams& params, const ImuBias& bias,
                                             std::span<const ImuMeasurement> samples,
                                             double t_start, double t_end);

  double delta_t() const { return dt_; }
  const Rotation3& delta_rotation() const { return d_rot_; }
  const Vec3& delta_velocity() const { return d_vel_; }
  const Vec3& delta_position() const { return d_pos_; }
  const Mat9& covariance() const { return cov_; }
  const ImuBias& linearization_bias() const { return bias_; }

  const Mat3& d_rot_d_gyro_bias() const { return j_rot_bg_; }
  const Mat3& d_vel_d_gyro_bias() const { return j_vel_bg_; }
  const Mat3& d_vel_d_accel_bias() const { return j_vel_ba_; }
  const Mat3& d_pos_d_gyro_bias() const { return j_pos_bg_; }
  const Mat3& d_pos_d_accel_bias() const { return j_pos_ba_; }

  Rotation3 corrected_delta_rotation(const ImuBias& b) const;
  Vec3 corrected_delta_velocity(const ImuBias& b) const;
  Vec3 corrected_delta_position(const ImuBias& b) const;

  /// Predicted state after the interval, and the covariance of the prediction
  /// expressed in world-frame tangent coordinates (theta, v, p).
  std::pair<ImuState, Mat9> predict(const ImuState& state_i, const Vec3& gravity) const;

  /// Assemble from explicit parts (serialization, tests).
  static PreintegratedImu from_parts(const ImuNoiseParams& params, const ImuBias& bias, double dt,
                                     const Rotation3& d_rot, const Vec3& d_vel, const Vec3& d_pos,
                                     const Mat9& cov);

 private:
  ImuNoiseParams params_;
  ImuBias bias_;
  double dt_ = 0.0;
  Rotation3 d_rot_;
  Vec3 d_vel_ = Vec3::Zero();
  Vec3 d_pos_ = Vec3::Zero();
  Mat9 cov_ = Mat9::Zero();
  Mat3 j_rot_bg_ = Mat3::Zero();
  Mat3 j_vel_bg_ = Mat3::Zero();
  Mat3 j_vel_ba_ = Mat3::Zero();
  Mat3 j_pos_bg_ = Mat3::Zero();
  Mat3 j_pos_ba_ = Mat3::Zero();
};

/// Residual of the inertial energy: prediction [-] state_j over (theta, v, p),
/// with the whitener from the prediction covariance and, on request, the raw
/// Jacobians with respect to the connected blocks (decoupled left tangents).
struct ImuResidual {
  Vec9 r;
  Mat9 sqrt_information;  // L with L^T L = Sigma^-1 (world tangent frame)
  // Jacobians of the raw residual:
  Eigen::Matrix<double, 9, 6> d_pose_i;   // (theta_i, p_i)
  Eigen::Matrix<double, 9, 6> d_pose_j;   // (theta_j, p_j)
  Eigen::Matrix<double, 9, 3> d_vel_i;
  Eigen::Matrix<double, 9, 3> d_vel_j;
  Eigen::Matrix<double, 9, 6> d_bias_i;   // (bg, ba)
};

ImuResidual imu_residual(const ImuState& state_i, const ImuState& state_j,
                         const PreintegratedImu& preint, const Vec3& gravity,
                         bool with_jacobians);

/// E = (s_hat [-] s_j)^T Sigma^-1 (s_hat [-] s_j). Throws
/// DegenerateCovarianceError when the covariance cannot be inverted.
double imu_energy(const ImuState& state_i, const ImuState& state_j, const PreintegratedImu& preint,
                  const Vec3& gravity);

}  // namespace vifg
