#pragma once

#include <string>

#include "vifg/imu.hpp"

namespace vifg {

struct TrajectoryPoint {
  double timestamp = 0.0;
  RigidTransform pose;  // T_w_body
};

// TUM trajectory format: `timestamp tx ty tz qx qy qz qw`.
std::vector<TrajectoryPoint> read_tum(const std::string& path);
void write_tum(const std::string& path, const std::vector<TrajectoryPoint>& traj);

// EuRoC-style IMU CSV: `timestamp[ns], wx, wy, wz, ax, ay, az`.
std::vector<ImuMeasurement> read_imu_csv(const std::string& path);
void write_imu_csv(const std::string& path, const std::vector<ImuMeasurement>& data);

enum class AlignMode { SE3, Sim3 };

struct Alignment {
  Rotation3 rotation;
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;  // 1 for SE3 alignment
};

/// Closed-form least-squares alignment est -> gt over matched positions.
Alignment umeyama_align(const std::vector<Vec3>& est, const std::vector<Vec3>& gt, AlignMode mode);

struct EvaluationResult {
  double rmse_ate = 0.0;        // m, after alignment
  double scale_error = 0.0;     // percent
  double drift = 0.0;           // percent: rmse * 100 / length
  double length = 0.0;          // gt trajectory length, m
  int matched = 0;
  uint64_t seed = 0;
  bool failed = false;
};

/// SE(3)-aligned RMSE/ATE by default (metric evaluation, scale fixed to 1);
/// Sim(3) mode additionally estimates the alignment scale. scale_error is
/// |s_align - 1| * 100 from a Sim(3) fit in either mode. Timestamps are matched
/// nearest-neighbour within match_tolerance. Fewer than 3 matches throws
/// InsufficientDataError.
EvaluationResult evaluate(const std::vector<TrajectoryPoint>& est,
                          const std::vector<TrajectoryPoint>& gt,
                          AlignMode mode = AlignMode::SE3, double match_tolerance = 1e-3);

}  // namespace vifg
