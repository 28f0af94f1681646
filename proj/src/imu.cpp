#include "vifg/imu.hpp"

#include <algorithm>
#include <cmath>

namespace vifg {

void ImuNoiseParams::validate() const {
  if (gyro_noise_density <= 0 || accel_noise_density <= 0 || gyro_bias_random_walk <= 0 ||
      accel_bias_random_walk <= 0 || gravity_magnitude <= 0)
    throw ConfigError("imu noise params must be positive");
}

PreintegratedImu::PreintegratedImu(const ImuNoiseParams& params, const ImuBias& bias)
    : params_(params), bias_(bias) {
  params_.validate();
}

void PreintegratedImu::integrate(const ImuMeasurement& m, double dt) {
  if (dt <= 0) throw DataError("preintegration: non-positive dt");

  const Vec3 w = m.gyro - bias_.gyro;
  const Vec3 a = m.accel - bias_.accel;
  // Midpoint rotation for the velocity/position updates keeps the scheme
  // second-order in dt under rotation.
  const Mat3 R = (d_rot_ * Rotation3::exp(w * (0.5 * dt))).matrix();
  const Mat3 A = skew(a);
  const Rotation3 dR = Rotation3::exp(w * dt);
  const Mat3 Jr = so3_right_jacobian(w * dt);

  // Covariance over (theta, v, p), right perturbation of the rotation delta.
  Mat9 F = Mat9::Identity();
  F.block<3, 3>(0, 0) = dR.matrix().transpose();
  F.block<3, 3>(3, 0) = -R * A * dt;
  F.block<3, 3>(6, 0) = -0.5 * R * A * dt * dt;
  F.block<3, 3>(6, 3) = Mat3::Identity() * dt;

  Eigen::Matrix<double, 9, 6> G = Eigen::Matrix<double, 9, 6>::Zero();
  G.block<3, 3>(0, 0) = Jr * dt;
  G.block<3, 3>(3, 3) = R * dt;
  G.block<3, 3>(6, 3) = 0.5 * R * dt * dt;

  Eigen::Matrix<double, 6, 6> Q = Eigen::Matrix<double, 6, 6>::Zero();
  const double qg = params_.gyro_noise_density * params_.gyro_noise_density / dt;
  const double qa = params_.accel_noise_density * params_.accel_noise_density / dt;
  Q.topLeftCorner<3, 3>() = qg * Mat3::Identity();
  Q.bottomRightCorner<3, 3>() = qa * Mat3::Identity();

  cov_ = (F * cov_ * F.transpose() + G * Q * G.transpose()).eval();
  cov_ = 0.5 * (cov_ + cov_.transpose()).eval();

  // First-order bias Jacobians (position before velocity before rotation so
  // each update uses the previous-step values it depends on).
  j_pos_bg_ += j_vel_bg_ * dt - 0.5 * R * A * j_rot_bg_ * dt * dt;
  j_pos_ba_ += j_vel_ba_ * dt - 0.5 * R * dt * dt;
  j_vel_bg_ += -R * A * j_rot_bg_ * dt;
  j_vel_ba_ += -R * dt;
  j_rot_bg_ = dR.matrix().transpose() * j_rot_bg_ - Jr * dt;

  // Delta recursion.
  d_pos_ += d_vel_ * dt + 0.5 * R * a * dt * dt;
  d_vel_ += R * a * dt;
  d_rot_ = d_rot_ * dR;
  dt_ += dt;
}

PreintegratedImu PreintegratedImu::integrate_sequence(const ImuNoiseParams& params,
                                                      const ImuBias& bias,
                                                      std::span<const ImuMeasurement> samples,
                                                      double t_start, double t_end) {
  if (t_end <= t_start) throw DataError("preintegration: empty interval");
  PreintegratedImu out(params, bias);
  for (size_t i = 1; i < samples.size(); ++i) {
    if (samples[i].timestamp <= samples[i - 1].timestamp)
      throw DataError("preintegration: timestamps not strictly increasing");
  }
  for (size_t i = 0; i + 1 < samples.size(); ++i) {
    const double lo = std::max(samples[i].timestamp, t_start);
    const double hi = std::min(samples[i + 1].timestamp, t_end);
    if (hi <= lo) continue;
    ImuMeasurement mid;
    mid.timestamp = 0.5 * (lo + hi);
    mid.gyro = 0.5 * (samples[i].gyro + samples[i + 1].gyro);
    mid.accel = 0.5 * (samples[i].accel + samples[i + 1].accel);
    out.integrate(mid, hi - lo);
  }
  if (out.delta_t() <= 0) throw DataGapError("preintegration: no samples cover the interval");
  return out;
}

Rotation3 PreintegratedImu::corrected_delta_rotation(const ImuBias& b) const {
  const Vec3 dbg = b.gyro - bias_.gyro;
  return d_rot_ * Rotation3::exp(j_rot_bg_ * dbg);
}

Vec3 PreintegratedImu::corrected_delta_velocity(const ImuBias& b) const {
  return d_vel_ + j_vel_bg_ * (b.gyro - bias_.gyro) + j_vel_ba_ * (b.accel - bias_.accel);
}

Vec3 PreintegratedImu::corrected_delta_position(const ImuBias& b) const {
  return d_pos_ + j_pos_bg_ * (b.gyro - bias_.gyro) + j_pos_ba_ * (b.accel - bias_.accel);
}

std::pair<ImuState, Mat9> PreintegratedImu::predict(const ImuState& state_i,
                                                    const Vec3& gravity) const {
  const Rotation3& Ri = state_i.pose.rotation();
  const Vec3& pi = state_i.pose.translation();
  const Vec3& vi = state_i.velocity;

  const Rotation3 dR = corrected_delta_rotation(state_i.bias);
  const Vec3 dv = corrected_delta_velocity(state_i.bias);
  const Vec3 dp = corrected_delta_position(state_i.bias);

  ImuState out;
  out.pose = RigidTransform(Ri * dR, pi + vi * dt_ + 0.5 * gravity * dt_ * dt_ + Ri * dp);
  out.velocity = vi + gravity * dt_ + Ri * dv;
  out.bias = state_i.bias;

  // Map the preintegration covariance into world-frame tangent coordinates.
  Mat9 T = Mat9::Zero();
  T.block<3, 3>(0, 0) = out.pose.rotation().matrix();
  T.block<3, 3>(3, 3) = Ri.matrix();
  T.block<3, 3>(6, 6) = Ri.matrix();
  Mat9 cov = T * cov_ * T.transpose();
  return {out, 0.5 * (cov + cov.transpose()).eval()};
}

PreintegratedImu PreintegratedImu::from_parts(const ImuNoiseParams& params, const ImuBias& bias,
                                              double dt, const Rotation3& d_rot, const Vec3& d_vel,
                                              const Vec3& d_pos, const Mat9& cov) {
  PreintegratedImu out(params, bias);
  out.dt_ = dt;
  out.d_rot_ = d_rot;
  out.d_vel_ = d_vel;
  out.d_pos_ = d_pos;
  out.cov_ = cov;
  return out;
}

ImuResidual imu_residual(const ImuState& state_i, const ImuState& state_j,
                         const PreintegratedImu& preint, const Vec3& gravity,
                         bool with_jacobians) {
  auto [pred, cov] = preint.predict(state_i, gravity);

  ImuResidual res;
  res.r.segment<3>(0) = pred.pose.rotation().boxminus(state_j.pose.rotation());
  res.r.segment<3>(3) = pred.velocity - state_j.velocity;
  res.r.segment<3>(6) = pred.pose.translation() - state_j.pose.translation();

  Eigen::LLT<Mat9> llt(cov);
  if (llt.info() != Eigen::Success)
    throw DegenerateCovarianceError("imu residual: covariance not positive definite");
  // L^T L = Sigma^-1 with L = inv(chol_lower)^... use matrixL of the inverse via solve.
  Mat9 L = llt.matrixL().solve(Mat9::Identity());
  res.sqrt_information = L;

  if (with_jacobians) {
    const Mat3 Ri = state_i.pose.rotation().matrix();
    const Vec3 r_theta = res.r.segment<3>(0);
    const Mat3 jl_inv = so3_left_jacobian_inverse(r_theta);
    const Mat3 jr_inv = so3_right_jacobian_inverse(r_theta);
    const double dt = preint.delta_t();

    const Vec3 dbg = state_i.bias.gyro - preint.linearization_bias().gyro;
    const Vec3 dv = preint.corrected_delta_velocity(state_i.bias);
    const Vec3 dp = preint.corrected_delta_position(state_i.bias);

    res.d_pose_i.setZero();
    res.d_pose_j.setZero();
    res.d_vel_i.setZero();
    res.d_vel_j.setZero();
    res.d_bias_i.setZero();

    // rotation residual
    res.d_pose_i.block<3, 3>(0, 0) = jl_inv;
    res.d_pose_j.block<3, 3>(0, 0) = -jr_inv;
    {
      const Vec3 phi = preint.d_rot_d_gyro_bias() * dbg;
      const Mat3 dcorr = so3_right_jacobian(phi) * preint.d_rot_d_gyro_bias();
      res.d_bias_i.block<3, 3>(0, 0) = jr_inv * state_j.pose.rotation().matrix() * dcorr;
    }

    // velocity residual
    res.d_vel_i.block<3, 3>(3, 0) = Mat3::Identity();
    res.d_vel_j.block<3, 3>(3, 0) = -Mat3::Identity();
    res.d_pose_i.block<3, 3>(3, 0) = -skew(Ri * dv);
    res.d_bias_i.block<3, 3>(3, 0) = Ri * preint.d_vel_d_gyro_bias();
    res.d_bias_i.block<3, 3>(3, 3) = Ri * preint.d_vel_d_accel_bias();

    // position residual
    res.d_pose_i.block<3, 3>(6, 3) = Mat3::Identity();
    res.d_pose_j.block<3, 3>(6, 3) = -Mat3::Identity();
    res.d_vel_i.block<3, 3>(6, 0) = Mat3::Identity() * dt;
    res.d_pose_i.block<3, 3>(6, 0) = -skew(Ri * dp);
    res.d_bias_i.block<3, 3>(6, 0) = Ri * preint.d_pos_d_gyro_bias();
    res.d_bias_i.block<3, 3>(6, 3) = Ri * preint.d_pos_d_accel_bias();
  }
  return res;
}

double imu_energy(const ImuState& state_i, const ImuState& state_j, const PreintegratedImu& preint,
                  const Vec3& gravity) {
  const ImuResidual res = imu_residual(state_i, state_j, preint, gravity, false);
  return (res.sqrt_information * res.r).squaredNorm();
}

}  // namespace vifg
