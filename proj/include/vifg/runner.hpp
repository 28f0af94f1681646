#pragma once

#include "vifg/eval.hpp"
#include "vifg/pipeline.hpp"
#include "vifg/sim.hpp"

namespace vifg {

struct TrackingNoise {
  double rotation = 0.002;      // rad, per-axis std of the initial pose guess
  double translation = 0.01;    // visual-frame units
  double inv_depth_rel = 0.01;  // relative std on initial inverse depths
};

/// Keyframe packets for the pipeline: initial estimates are ground truth plus
/// run-seeded tracking noise, plus the covering IMU sample slice.
std::vector<KeyframeInput> make_keyframe_inputs(const SimOutput& sim, const TrackingNoise& noise,
                                                uint64_t run_seed);

struct RunResult {
  uint64_t seed = 0;
  bool lost = false;
  InitPhase final_phase = InitPhase::NoImu;
  double est_scale = 1.0;
  double pipeline_scale_error = -1.0;  // |s_hat / s_true - 1| * 100
  double gravity_error_deg = -1.0;
  EvaluationResult eval;
  std::vector<PhaseLogRow> phase_log;
  std::vector<TrajectoryPoint> trajectory;
};

RunResult run_single(const SimOutput& sim, const PipelineConfig& config,
                     const TrackingNoise& noise, uint64_t run_seed);

struct ProtocolResult {
  std::vector<RunResult> runs;
  double median_rmse = 0.0;
  double median_scale_error = 0.0;
  double median_drift = 0.0;
  int failures = 0;
};

/// Evaluate `runs` times with per-run seeds base_seed, base_seed+1, ...
/// Failure runs count as infinite error. Runs execute in parallel.
ProtocolResult run_protocol(const SimOutput& sim, const PipelineConfig& config,
                            const TrackingNoise& noise, int runs, uint64_t base_seed);

/// Cumulative error plot rows: (threshold, number of runs with error below it).
std::vector<std::pair<double, int>> cumulative_errors(const std::vector<double>& errors);

double median(std::vector<double> v);

}  // namespace vifg
