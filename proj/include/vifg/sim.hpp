#pragma once

#include <random>

#include "vifg/frontend_sim.hpp"
#include "vifg/imu.hpp"

namespace vifg {

/// One analytic trajectory piece: per-axis sinusoidal position around a linear
/// drift, sinusoidal attitude in the exponential chart. Twice differentiable,
/// so the IMU signal follows in closed form. Covers sinusoidal excitation,
/// constant velocity (zero amplitudes), and circular arcs (quarter-phase pair).
struct TrajectorySegment {
  double duration = 60.0;
  Vec3 position0 = Vec3::Zero();
  Vec3 linear_velocity = Vec3::Zero();
  Vec3 amplitude = Vec3::Zero();
  Vec3 frequency = Vec3::Zero();   // rad/s per axis
  Vec3 phase = Vec3::Zero();
  Vec3 rot_amplitude = Vec3::Zero();
  Vec3 rot_frequency = Vec3::Zero();
  Vec3 rot_phase = Vec3::Zero();
};

/// Piecewise analytic pose function of time with exact derivatives. Segment
/// joins must be C1 in position and C0 in attitude (ConfigError otherwise).
class AnalyticTrajectory {
 public:
  explicit AnalyticTrajectory(std::vector<TrajectorySegment> segments);

  double duration() const { return duration_; }
  RigidTransform pose(double t) const;       // T_w_imu
  Vec3 velocity(double t) const;             // world frame
  Vec3 acceleration(double t) const;         // world frame
  Vec3 angular_velocity_body(double t) const;

 private:
  std::pair<const TrajectorySegment*, double> locate(double t) const;

  std::vector<TrajectorySegment> segments_;
  std::vector<double> starts_;
  double duration_ = 0.0;
};

struct SimConfig {
  uint64_t seed = 1;
  double imu_rate = 200.0;       // Hz
  double keyframe_rate = 2.5;    // Hz
  std::vector<TrajectorySegment> segments = {TrajectorySegment{
      60.0, Vec3::Zero(), Vec3(0.05, 0.02, 0.0), Vec3(0.8, 0.6, 0.35),
      Vec3(1.3, 1.7, 2.3), Vec3(0.0, 1.1, 2.2), Vec3(0.25, 0.2, 0.3),
      Vec3(0.9, 1.2, 0.7), Vec3(0.4, 1.9, 0.0)}};

  double true_scale = 2.0;
  Vec3 true_gravity_tangent = Vec3(0.06, -0.09, 0.4);  // R_V_I = exp(of this)
  RigidTransform t_cam_imu = RigidTransform(
      Rotation3(Eigen::Quaterniond(0.9997, 0.01, -0.02, 0.015)), Vec3(0.05, -0.02, 0.01));

  ImuNoiseParams imu;
  double noise_scale = 1.0;      // 0 disables measurement noise and the bias walk
  Vec3 initial_gyro_bias = Vec3(0.002, -0.001, 0.0015);
  Vec3 initial_accel_bias = Vec3(0.02, -0.015, 0.01);

  // Scene
  CameraModel camera{320.0, 320.0, 320.0, 240.0, 640, 480};
  int landmarks_per_keyframe = 12;
  double depth_min = 4.0, depth_max = 12.0;  // metric
  double pixel_noise = 0.5;                  // intensity units on host references
  double exposure_base = 0.02, exposure_jitter = 0.2;   // fraction
  double affine_a_range = 0.05, affine_b_range = 1.0;

  std::string to_json() const;
  static SimConfig from_json(const std::string& text);
};

struct SimOutput {
  std::vector<ImuMeasurement> imu;  // noisy measurements, full rate
  std::vector<std::pair<double, RigidTransform>> groundtruth;  // T_w_imu at keyframe times
  SyntheticScene scene;
  std::vector<double> keyframe_times;
  double true_scale = 1.0;
  Rotation3 true_gravity_rot;
  RigidTransform t_cam_imu;
  std::map<uint32_t, Vec3> true_velocities;  // per keyframe, world frame
  std::map<uint32_t, ImuBias> true_biases;   // per keyframe
};

/// Deterministic from the seed: exact analytic derivatives plus bias walk and
/// white noise.
SimOutput simulate(const SimConfig& config);

}  // namespace vifg
