#pragma once

#include <array>
#include <optional>

#include "vifg/factor.hpp"

namespace vifg {

/// Pinhole intrinsics and image bounds.
struct CameraModel {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  Vec2 project(const Vec3& xc) const {
    return Vec2(fx * xc.x() / xc.z() + cx, fy * xc.y() / xc.z() + cy);
  }
  Vec3 unproject(const Vec2& px) const {
    return Vec3((px.x() - cx) / fx, (px.y() - cy) / fy, 1.0);
  }
  bool in_bounds(const Vec2& px, double margin = 3.0) const {
    return px.x() >= margin && px.y() >= margin && px.x() <= width - 1 - margin &&
           px.y() <= height - 1 - margin;
  }
  void validate() const {
    if (fx <= 0 || fy <= 0 || width <= 0 || height <= 0)
      throw ConfigError("camera: invalid intrinsics");
  }
};

/// The 8-pixel residual pattern used for every point.
struct Pattern8 {
  static constexpr int kSize = 8;
  static const std::array<Vec2, kSize>& offsets();
};

struct ProjectionJacobians {
  Eigen::Matrix<double, 2, 6> d_host = Eigen::Matrix<double, 2, 6>::Zero();
  Eigen::Matrix<double, 2, 6> d_target = Eigen::Matrix<double, 2, 6>::Zero();
  Vec2 d_inv_depth = Vec2::Zero();
};

struct Projection {
  Vec2 pixel = Vec2::Zero();
  double z = 0.0;   // depth in the target camera
  bool visible = false;
};

/// Warp a host pixel at the given inverse depth into the target frame. Poses
/// are world-to-camera. Points at non-positive depth on either side are
/// flagged invisible (not an error).
Projection project_point(const CameraModel& camera, const Vec2& host_pixel, double inv_depth,
                         const RigidTransform& host_pose, const RigidTransform& target_pose,
                         ProjectionJacobians* jac = nullptr);

/// Smooth analytic intensity patch of one landmark as seen in one target frame:
/// a low-order polynomial radiance patch (defined on the host image plane)
/// composed with the inverse of the true host-to-target homography, then passed
/// through the target frame's true brightness transfer. Differentiable
/// everywhere in front of the camera.
struct IntensityPatch {
  Mat3 warp_to_host = Mat3::Identity();  // true homography target -> host pixels
  Vec2 host_center = Vec2::Zero();
  Eigen::Matrix<double, 6, 1> coeffs = Eigen::Matrix<double, 6, 1>::Zero();
  double gain = 1.0;    // t_j * exp(a_j^true)
  double offset = 0.0;  // b_j^true

  double radiance(const Vec2& host_offset) const;
  Vec2 radiance_gradient(const Vec2& host_offset) const;
  double value(const Vec2& target_pixel) const;
  Vec2 gradient(const Vec2& target_pixel) const;
};

struct LandmarkTruth {
  uint32_t id = 0;
  uint32_t host = 0;
  Vec2 pixel = Vec2::Zero();
  double inv_depth = 0.0;  // true inverse depth in the visual frame
  Eigen::Matrix<double, 6, 1> patch = Eigen::Matrix<double, 6, 1>::Zero();
  std::array<double, Pattern8::kSize> host_intensity{};   // observed (noisy) reference values
  std::array<double, Pattern8::kSize> weights{};          // gradient-dependent pattern weights
};

struct KeyframeTruth {
  uint32_t id = 0;
  double timestamp = 0.0;
  RigidTransform pose_v;   // true world-to-camera pose in the visual frame
  double exposure = 0.02;  // seconds
  double affine_a = 0.0;
  double affine_b = 0.0;
};

/// Ground-truth scene shared by the simulator and the photometric factors:
/// keyframe truths, landmark patches, and the intensity lookup used in place of
/// real images.
class SyntheticScene {
 public:
  CameraModel camera;
  std::map<uint32_t, KeyframeTruth> frames;
  std::map<uint32_t, LandmarkTruth> landmarks;
  std::map<uint32_t, std::vector<uint32_t>> hosted;  // frame -> landmark ids

  void add_frame(KeyframeTruth kf);
  void add_landmark(LandmarkTruth lm);

  const KeyframeTruth& frame(uint32_t id) const;
  const LandmarkTruth& landmark(uint32_t id) const;

  /// Intensity function of `target_frame` in the neighbourhood of the given
  /// landmark's true projection.
  IntensityPatch target_patch(uint32_t landmark_id, uint32_t target_frame) const;

  std::string to_json() const;
  static SyntheticScene from_json(const std::string& text);
};

/// Photometric observation of one landmark in one target frame: the 8-pattern
/// brightness-corrected residual with Huber norm and gradient weights.
class PhotometricFactor : public MeasurementFactor {
 public:
  PhotometricFactor(const SyntheticScene* scene, uint32_t landmark_id, uint32_t host,
                    uint32_t target, double huber_knee = 9.0);

  const std::vector<VariableKey>& keys() const override { return keys_; }
  int residual_dim() const override { return Pattern8::kSize; }
  Eigen::VectorXd residual(const GraphValues& values) const override;
  void jacobians(const GraphValues& values, std::vector<Eigen::MatrixXd>& jac) const override;
  Eigen::MatrixXd sqrt_information(const GraphValues&) const override { return sqrt_weights_; }
  Eigen::VectorXd irls_row_weights(const Eigen::VectorXd& raw) const override;
  double energy(const GraphValues& values) const override;
  double objective(const GraphValues& values) const override;
  void accumulate(const GraphValues& values, LinearSystem& sys) const override;

  uint32_t landmark_id() const { return landmark_; }
  uint32_t host() const { return host_; }
  uint32_t target() const { return target_; }

 private:
  struct Eval;
  Eval evaluate(const GraphValues& values, bool with_jacobians) const;

  const SyntheticScene* scene_;
  uint32_t landmark_, host_, target_;
  double huber_;
  IntensityPatch patch_;
  double exposure_ratio_base_;  // t_j / t_i
  std::vector<VariableKey> keys_;
  Eigen::MatrixXd sqrt_weights_;
};

/// Total photometric energy and residual count over a set of observation
/// factors (Huber, pattern-weighted, without the dynamic weight).
std::pair<double, int> photometric_energy(const std::vector<std::shared_ptr<Factor>>& photometric,
                                          const GraphValues& values);

/// Dynamic photometric weight: lambda * min(1, (theta / e)^2); continuous at
/// e == theta; caps the weighted RMS error at sqrt(lambda) * theta.
double dynamic_weight(double e_photo, double lambda, double theta);

struct VictimPolicyInput {
  std::vector<uint32_t> window;  // temporal order, newest last
  const GraphValues* values = nullptr;
  const SyntheticScene* scene = nullptr;
  const std::map<uint32_t, std::vector<uint32_t>>* hosted = nullptr;  // live landmarks per frame
  int n_f = 8;
  double min_visibility = 0.05;
};

/// DSO-style non-fixed-lag marginalization heuristic: keep the newest two
/// frames, prefer frames with under 5% of their points visible in the newest
/// frame, otherwise maximize the distance score. Returns nothing while the
/// window is within capacity (<= n_f - 1 frames).
std::optional<uint32_t> select_marginalization_victim(const VictimPolicyInput& in);

}  // namespace vifg
