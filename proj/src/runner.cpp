#include "vifg/runner.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <random>

namespace vifg {

std::vector<KeyframeInput> make_keyframe_inputs(const SimOutput& sim, const TrackingNoise& noise,
                                                uint64_t run_seed) {
  std::mt19937_64 rng(run_seed ^ 0x9e3779b97f4a7c15ull);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<KeyframeInput> out;
  out.reserve(sim.scene.frames.size());
  size_t imu_lo = 0;
  double t_prev = 0.0;
  for (const auto& [id, kf] : sim.scene.frames) {
    KeyframeInput in;
    in.id = id;
    in.timestamp = kf.timestamp;

    Eigen::Matrix<double, 6, 1> d;
    for (int i = 0; i < 3; ++i) d[i] = noise.rotation * gauss(rng);
    for (int i = 3; i < 6; ++i) d[i] = noise.translation * gauss(rng);
    in.init_pose_v = id == 0 ? kf.pose_v : kf.pose_v.boxplus(d);

    auto hit = sim.scene.hosted.find(id);
    if (hit != sim.scene.hosted.end()) {
      for (uint32_t lm : hit->second) {
        const double dtrue = sim.scene.landmark(lm).inv_depth;
        in.init_inv_depths[lm] =
            std::max(1e-4, dtrue * (1.0 + noise.inv_depth_rel * gauss(rng)));
      }
    }

    if (id > 0) {
      // Slice of samples bracketing [t_prev, t].
      while (imu_lo + 1 < sim.imu.size() && sim.imu[imu_lo + 1].timestamp <= t_prev) ++imu_lo;
      size_t hi = imu_lo;
      while (hi + 1 < sim.imu.size() && sim.imu[hi].timestamp < kf.timestamp) ++hi;
      in.imu_segment.assign(sim.imu.begin() + static_cast<long>(imu_lo),
                            sim.imu.begin() + static_cast<long>(hi) + 1);
    }
    t_prev = kf.timestamp;
    out.push_back(std::move(in));
  }
  return out;
}

RunResult run_single(const SimOutput& sim, const PipelineConfig& config,
                     const TrackingNoise& noise, uint64_t run_seed) {
  RunResult r;
  r.seed = run_seed;

  VioPipeline pipeline(config, &sim.scene);
  for (const auto& kf : make_keyframe_inputs(sim, noise, run_seed)) {
    pipeline.process(kf);
    if (pipeline.tracking_lost()) break;
  }

  r.lost = pipeline.tracking_lost();
  r.final_phase = pipeline.phase();
  r.est_scale = pipeline.scale();
  r.phase_log = pipeline.phase_log();
  for (const auto& [t, pose] : pipeline.metric_trajectory()) r.trajectory.push_back({t, pose});

  if (r.final_phase >= InitPhase::Initialized) {
    r.pipeline_scale_error = std::abs(r.est_scale / sim.true_scale - 1.0) * 100.0;
    // Yaw is gauge-fixed, so the meaningful error is the gravity direction.
    const Vec3 dir_est = pipeline.gravity_rotation() * Vec3::UnitZ();
    const Vec3 dir_true = sim.true_gravity_rot * Vec3::UnitZ();
    r.gravity_error_deg =
        std::acos(std::clamp(dir_est.dot(dir_true), -1.0, 1.0)) * 180.0 / M_PI;
  }

  try {
    if (r.final_phase >= InitPhase::Initialized) {
      // Metric evaluation: estimated IMU trajectory against the ground truth.
      std::vector<TrajectoryPoint> gt;
      for (const auto& [t, pose] : sim.groundtruth) gt.push_back({t, pose});
      r.eval = evaluate(r.trajectory, gt, AlignMode::SE3);
    } else {
      // Visual-only output has an arbitrary scale: compare camera trajectories
      // under Sim(3) alignment.
      std::vector<TrajectoryPoint> est, gt;
      for (const auto& [id, rec] : pipeline.history())
        est.push_back({rec.timestamp, rec.pose_v.inverse()});
      const RigidTransform imu_cam = config.t_cam_imu.inverse();
      for (const auto& [t, pose] : sim.groundtruth) gt.push_back({t, pose * imu_cam});
      r.eval = evaluate(est, gt, AlignMode::Sim3);
    }
  } catch (const InsufficientDataError&) {
    r.eval.failed = true;
  }
  r.eval.seed = run_seed;
  r.eval.failed = r.eval.failed || r.lost;
  return r;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

ProtocolResult run_protocol(const SimOutput& sim, const PipelineConfig& config,
                            const TrackingNoise& noise, int runs, uint64_t base_seed) {
  ProtocolResult out;
  std::vector<std::future<RunResult>> futures;
  futures.reserve(static_cast<size_t>(runs));
  for (int i = 0; i < runs; ++i) {
    futures.push_back(std::async(std::launch::async, [&, i] {
      return run_single(sim, config, noise, base_seed + static_cast<uint64_t>(i));
    }));
  }
  for (auto& f : futures) out.runs.push_back(f.get());

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> rmse, scale_err, drift;
  for (const auto& r : out.runs) {
    rmse.push_back(r.eval.failed ? inf : r.eval.rmse_ate);
    scale_err.push_back(r.eval.failed
                            ? inf
                            : (r.pipeline_scale_error >= 0 ? r.pipeline_scale_error
                                                           : r.eval.scale_error));
    drift.push_back(r.eval.failed ? inf : r.eval.drift);
    if (r.eval.failed) out.failures++;
  }
  out.median_rmse = median(rmse);
  out.median_scale_error = median(scale_err);
  out.median_drift = median(drift);
  return out;
}

std::vector<std::pair<double, int>> cumulative_errors(const std::vector<double>& errors) {
  std::vector<double> sorted = errors;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::pair<double, int>> rows;
  for (double t : sorted) {
    if (std::isinf(t)) break;  // failure runs never enter the plot
    int count = 0;
    for (double e : errors)
      if (e <= t) count++;
    rows.emplace_back(t, count);
  }
  return rows;
}

}  // namespace vifg
