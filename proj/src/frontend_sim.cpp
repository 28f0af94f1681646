#include "vifg/frontend_sim.hpp"

#include <cmath>

#include "json.hpp"

namespace vifg {

const std::array<Vec2, Pattern8::kSize>& Pattern8::offsets() {
  static const std::array<Vec2, kSize> kOffsets = {
      Vec2(0, -2), Vec2(-1, -1), Vec2(1, -1), Vec2(-2, 0),
      Vec2(0, 0),  Vec2(2, 0),   Vec2(-1, 1), Vec2(0, 2)};
  return kOffsets;
}

Projection project_point(const CameraModel& camera, const Vec2& host_pixel, double inv_depth,
                         const RigidTransform& host_pose, const RigidTransform& target_pose,
                         ProjectionJacobians* jac) {
  Projection out;
  if (inv_depth <= 0) return out;

  const Vec3 x_host = camera.unproject(host_pixel) / inv_depth;
  const Vec3 x_world = host_pose.inverse() * x_host;
  const Vec3 x_target = target_pose * x_world;
  if (x_target.z() < 1e-4) return out;

  out.pixel = camera.project(x_target);
  out.z = x_target.z();
  out.visible = true;

  if (jac) {
    const double z = x_target.z();
    Eigen::Matrix<double, 2, 3> dpi;
    dpi << camera.fx / z, 0, -camera.fx * x_target.x() / (z * z),
        0, camera.fy / z, -camera.fy * x_target.y() / (z * z);

    const Mat3 Rt = target_pose.rotation().matrix();
    const Mat3 Rh_t = host_pose.rotation().inverse().matrix();
    const Mat3 R_th = Rt * Rh_t;  // host cam -> target cam rotation

    // target pose: x_t = exp(dr) R_t x_w + t_t + dt
    jac->d_target.leftCols<3>() = dpi * (-skew(x_target - target_pose.translation()));
    jac->d_target.rightCols<3>() = dpi;

    // host pose: x_w = R_h^T exp(-dr) (x_h - t_h - dt)
    const Vec3 u = x_host - host_pose.translation();
    jac->d_host.leftCols<3>() = dpi * (R_th * skew(u));
    jac->d_host.rightCols<3>() = dpi * (-R_th);

    // inverse depth: x_h = unproject / d
    jac->d_inv_depth = dpi * (R_th * (-x_host / inv_depth));
  }
  return out;
}

double IntensityPatch::radiance(const Vec2& d) const {
  const double u = d.x(), v = d.y();
  return coeffs[0] + coeffs[1] * u + coeffs[2] * v + coeffs[3] * u * u + coeffs[4] * u * v +
         coeffs[5] * v * v;
}

Vec2 IntensityPatch::radiance_gradient(const Vec2& d) const {
  const double u = d.x(), v = d.y();
  return Vec2(coeffs[1] + 2 * coeffs[3] * u + coeffs[4] * v,
              coeffs[2] + coeffs[4] * u + 2 * coeffs[5] * v);
}

double IntensityPatch::value(const Vec2& p) const {
  const Vec3 q = warp_to_host * Vec3(p.x(), p.y(), 1.0);
  const Vec2 u(q.x() / q.z(), q.y() / q.z());
  return gain * radiance(u - host_center) + offset;
}

Vec2 IntensityPatch::gradient(const Vec2& p) const {
  const Vec3 q = warp_to_host * Vec3(p.x(), p.y(), 1.0);
  const Vec2 u(q.x() / q.z(), q.y() / q.z());
  Eigen::Matrix2d du;
  du << warp_to_host(0, 0) - u.x() * warp_to_host(2, 0),
      warp_to_host(0, 1) - u.x() * warp_to_host(2, 1),
      warp_to_host(1, 0) - u.y() * warp_to_host(2, 0),
      warp_to_host(1, 1) - u.y() * warp_to_host(2, 1);
  du /= q.z();
  return gain * (radiance_gradient(u - host_center).transpose() * du).transpose();
}

void SyntheticScene::add_frame(KeyframeTruth kf) {
  const uint32_t id = kf.id;
  if (!frames.emplace(id, std::move(kf)).second)
    throw StructuralError("scene: duplicate frame id");
}

void SyntheticScene::add_landmark(LandmarkTruth lm) {
  const uint32_t id = lm.id;
  const uint32_t host = lm.host;
  if (!landmarks.emplace(id, std::move(lm)).second)
    throw StructuralError("scene: duplicate landmark id");
  hosted[host].push_back(id);
}

const KeyframeTruth& SyntheticScene::frame(uint32_t id) const {
  auto it = frames.find(id);
  if (it == frames.end()) throw StructuralError("scene: unknown frame");
  return it->second;
}

const LandmarkTruth& SyntheticScene::landmark(uint32_t id) const {
  auto it = landmarks.find(id);
  if (it == landmarks.end()) throw StructuralError("scene: unknown landmark");
  return it->second;
}

IntensityPatch SyntheticScene::target_patch(uint32_t landmark_id, uint32_t target_frame) const {
  const LandmarkTruth& lm = landmark(landmark_id);
  const KeyframeTruth& host_kf = frame(lm.host);
  const KeyframeTruth& target_kf = frame(target_frame);

  // True host->target homography of the fronto-parallel plane z = 1/d in the
  // host camera: x_t = (R + d t n^T) x_h with n = e_z.
  const RigidTransform rel = target_kf.pose_v * host_kf.pose_v.inverse();
  Mat3 Hn = rel.rotation().matrix();
  Hn.col(2) += lm.inv_depth * rel.translation();

  Mat3 K = Mat3::Identity();
  K(0, 0) = camera.fx;
  K(1, 1) = camera.fy;
  K(0, 2) = camera.cx;
  K(1, 2) = camera.cy;
  Mat3 Kinv = Mat3::Identity();
  Kinv(0, 0) = 1.0 / camera.fx;
  Kinv(1, 1) = 1.0 / camera.fy;
  Kinv(0, 2) = -camera.cx / camera.fx;
  Kinv(1, 2) = -camera.cy / camera.fy;

  IntensityPatch patch;
  patch.warp_to_host = (K * Hn * Kinv).inverse();
  patch.host_center = lm.pixel;
  patch.coeffs = lm.patch;
  patch.gain = target_kf.exposure * std::exp(target_kf.affine_a);
  patch.offset = target_kf.affine_b;
  return patch;
}

namespace {

nlohmann::json pose_to_json(const RigidTransform& p) {
  const auto& q = p.rotation().quaternion();
  return {{"q", {q.w(), q.x(), q.y(), q.z()}},
          {"t", {p.translation().x(), p.translation().y(), p.translation().z()}}};
}

RigidTransform pose_from_json(const nlohmann::json& j) {
  const auto& q = j.at("q");
  const auto& t = j.at("t");
  return RigidTransform(
      Rotation3::from_unit_quaternion(Eigen::Quaterniond(q[0], q[1], q[2], q[3])),
      Vec3(t[0], t[1], t[2]));
}

}  // namespace

std::string SyntheticScene::to_json() const {
  nlohmann::json j;
  j["version"] = 1;
  j["camera"] = {{"fx", camera.fx}, {"fy", camera.fy}, {"cx", camera.cx}, {"cy", camera.cy},
                 {"width", camera.width}, {"height", camera.height}};
  for (const auto& [id, kf] : frames) {
    j["frames"].push_back({{"id", id},
                           {"timestamp", kf.timestamp},
                           {"pose_v", pose_to_json(kf.pose_v)},
                           {"exposure", kf.exposure},
                           {"affine_a", kf.affine_a},
                           {"affine_b", kf.affine_b}});
  }
  for (const auto& [id, lm] : landmarks) {
    nlohmann::json l = {{"id", id},
                        {"host", lm.host},
                        {"pixel", {lm.pixel.x(), lm.pixel.y()}},
                        {"inv_depth", lm.inv_depth}};
    for (int i = 0; i < 6; ++i) l["patch"].push_back(lm.patch[i]);
    for (int i = 0; i < Pattern8::kSize; ++i) {
      l["host_intensity"].push_back(lm.host_intensity[i]);
      l["weights"].push_back(lm.weights[i]);
    }
    j["landmarks"].push_back(std::move(l));
  }
  return j.dump(1);
}

SyntheticScene SyntheticScene::from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  SyntheticScene scene;
  const auto& c = j.at("camera");
  scene.camera = {c.at("fx"), c.at("fy"), c.at("cx"), c.at("cy"), c.at("width"), c.at("height")};
  for (const auto& f : j.value("frames", nlohmann::json::array())) {
    KeyframeTruth kf;
    kf.id = f.at("id");
    kf.timestamp = f.at("timestamp");
    kf.pose_v = pose_from_json(f.at("pose_v"));
    kf.exposure = f.at("exposure");
    kf.affine_a = f.at("affine_a");
    kf.affine_b = f.at("affine_b");
    scene.add_frame(std::move(kf));
  }
  for (const auto& l : j.value("landmarks", nlohmann::json::array())) {
    LandmarkTruth lm;
    lm.id = l.at("id");
    lm.host = l.at("host");
    lm.pixel = Vec2(l.at("pixel")[0], l.at("pixel")[1]);
    lm.inv_depth = l.at("inv_depth");
    for (int i = 0; i < 6; ++i) lm.patch[i] = l.at("patch")[i];
    for (int i = 0; i < Pattern8::kSize; ++i) {
      lm.host_intensity[i] = l.at("host_intensity")[i];
      lm.weights[i] = l.at("weights")[i];
    }
    scene.add_landmark(std::move(lm));
  }
  return scene;
}

struct PhotometricFactor::Eval {
  Eigen::VectorXd r;
  std::vector<Eigen::MatrixXd> jac;
  std::array<bool, Pattern8::kSize> visible{};
};

PhotometricFactor::PhotometricFactor(const SyntheticScene* scene, uint32_t landmark_id,
                                     uint32_t host, uint32_t target, double huber_knee)
    : scene_(scene), landmark_(landmark_id), host_(host), target_(target), huber_(huber_knee) {
  patch_ = scene_->target_patch(landmark_, target_);
  exposure_ratio_base_ = scene_->frame(target_).exposure / scene_->frame(host_).exposure;
  keys_ = {pose_key(host_), pose_key(target_), affine_key(host_), affine_key(target_),
           depth_key(landmark_)};
  const auto& w = scene_->landmark(landmark_).weights;
  Eigen::VectorXd sw(Pattern8::kSize);
  for (int k = 0; k < Pattern8::kSize; ++k) sw[k] = std::sqrt(w[k]);
  sqrt_weights_ = sw.asDiagonal();
}

PhotometricFactor::Eval PhotometricFactor::evaluate(const GraphValues& values,
                                                    bool with_jacobians) const {
  const RigidTransform& host_pose = values.pose(keys_[0]);
  const RigidTransform& target_pose = values.pose(keys_[1]);
  const Eigen::VectorXd& aff_i = values.vector(keys_[2]);
  const Eigen::VectorXd& aff_j = values.vector(keys_[3]);
  const double inv_depth = values.positive(keys_[4]);

  const LandmarkTruth& lm = scene_->landmark(landmark_);
  const CameraModel& cam = scene_->camera;
  const double ratio = exposure_ratio_base_ * std::exp(aff_j[0] - aff_i[0]);

  Eval ev;
  ev.r = Eigen::VectorXd::Zero(Pattern8::kSize);
  if (with_jacobians) {
    ev.jac.assign(5, Eigen::MatrixXd());
    ev.jac[0] = Eigen::MatrixXd::Zero(Pattern8::kSize, 6);
    ev.jac[1] = Eigen::MatrixXd::Zero(Pattern8::kSize, 6);
    ev.jac[2] = Eigen::MatrixXd::Zero(Pattern8::kSize, 2);
    ev.jac[3] = Eigen::MatrixXd::Zero(Pattern8::kSize, 2);
    ev.jac[4] = Eigen::MatrixXd::Zero(Pattern8::kSize, 1);
  }

  // Shared per-factor geometry, hoisted out of the pattern loop.
  const Mat3 Rh = host_pose.rotation().matrix();
  const Mat3 Rt = target_pose.rotation().matrix();
  const Mat3 R_th = Rt * Rh.transpose();
  const Vec3& t_h = host_pose.translation();
  const Vec3& t_t = target_pose.translation();
  const Vec3 t_th = t_t - R_th * t_h;

  for (int k = 0; k < Pattern8::kSize; ++k) {
    const Vec2 px = lm.pixel + Pattern8::offsets()[k];
    const Vec3 x_host = cam.unproject(px) / inv_depth;
    const Vec3 x_target = R_th * x_host + t_th;
    if (x_target.z() < 1e-4) continue;  // zero residual/Jacobian; energy() charges saturation
    ev.visible[k] = true;

    const double z = x_target.z();
    const Vec2 pixel(cam.fx * x_target.x() / z + cam.cx, cam.fy * x_target.y() / z + cam.cy);
    const double transferred = ratio * (lm.host_intensity[k] - aff_i[1]);
    ev.r[k] = (patch_.value(pixel) - aff_j[1]) - transferred;

    if (with_jacobians) {
      Eigen::Matrix<double, 2, 3> dpi;
      dpi << cam.fx / z, 0, -cam.fx * x_target.x() / (z * z), 0, cam.fy / z,
          -cam.fy * x_target.y() / (z * z);
      const Vec2 grad = patch_.gradient(pixel);
      const Eigen::RowVector3d g_dpi = grad.transpose() * dpi;

      ev.jac[1].row(k).head<3>() = -g_dpi * skew(x_target - t_t);
      ev.jac[1].row(k).tail<3>() = g_dpi;
      const Eigen::RowVector3d g_dpi_Rth = g_dpi * R_th;
      ev.jac[0].row(k).head<3>() = g_dpi_Rth * skew(x_host - t_h);
      ev.jac[0].row(k).tail<3>() = -g_dpi_Rth;
      // log-parameterized inverse depth: d x_host / d log d = -x_host
      ev.jac[4](k, 0) = g_dpi_Rth * (-x_host);
      ev.jac[2](k, 0) = transferred;   // d/d a_i
      ev.jac[2](k, 1) = ratio;         // d/d b_i
      ev.jac[3](k, 0) = -transferred;  // d/d a_j
      ev.jac[3](k, 1) = -1.0;          // d/d b_j
    }
  }
  return ev;
}

Eigen::VectorXd PhotometricFactor::residual(const GraphValues& values) const {
  return evaluate(values, false).r;
}

void PhotometricFactor::jacobians(const GraphValues& values,
                                  std::vector<Eigen::MatrixXd>& jac) const {
  jac = evaluate(values, true).jac;
}

Eigen::VectorXd PhotometricFactor::irls_row_weights(const Eigen::VectorXd& raw) const {
  Eigen::VectorXd w(raw.size());
  for (int k = 0; k < raw.size(); ++k) {
    const double a = std::abs(raw[k]);
    w[k] = a <= huber_ ? 1.0 : huber_ / a;
  }
  return w;
}

double PhotometricFactor::energy(const GraphValues& values) const {
  const Eval ev = evaluate(values, false);
  const auto& weights = scene_->landmark(landmark_).weights;
  double e = 0.0;
  for (int k = 0; k < ev.r.size(); ++k) {
    if (!ev.visible[k]) {
      // An observation pushed out of view pays the Huber saturation energy, so
      // losing a point is never energetically attractive.
      e += weights[k] * huber_ * huber_;
      continue;
    }
    const double a = std::abs(ev.r[k]);
    const double rho = a <= huber_ ? a * a : huber_ * (2.0 * a - huber_);
    e += weights[k] * rho;
  }
  return e;
}

double PhotometricFactor::objective(const GraphValues& values) const {
  return 0.5 * group_weight * energy(values);
}

void PhotometricFactor::accumulate(const GraphValues& values, LinearSystem& sys) const {
  const Eval ev = evaluate(values, true);
  const auto& weights = scene_->landmark(landmark_).weights;
  Eigen::VectorXd w(Pattern8::kSize);
  for (int k = 0; k < Pattern8::kSize; ++k) {
    const double a = std::abs(ev.r[k]);
    const double huber = a <= huber_ ? 1.0 : huber_ / a;
    w[k] = group_weight * weights[k] * huber;
  }
  accumulate_blocks(sys, keys_, ev.jac, Eigen::MatrixXd(w.asDiagonal()), ev.r);
}

std::pair<double, int> photometric_energy(const std::vector<std::shared_ptr<Factor>>& photometric,
                                          const GraphValues& values) {
  double e = 0.0;
  int n = 0;
  for (const auto& f : photometric) {
    e += f->energy(values);
    if (const auto* m = dynamic_cast<const MeasurementFactor*>(f.get()))
      n += m->residual_dim();
  }
  return {e, n};
}

double dynamic_weight(double e_photo, double lambda, double theta) {
  if (e_photo >= theta) {
    const double q = theta / e_photo;
    return lambda * q * q;
  }
  return lambda;
}

std::optional<uint32_t> select_marginalization_victim(const VictimPolicyInput& in) {
  if (static_cast<int>(in.window.size()) <= in.n_f - 1) return std::nullopt;
  if (in.window.size() < 3) return std::nullopt;

  const uint32_t newest = in.window.back();
  const uint32_t second = in.window[in.window.size() - 2];
  const RigidTransform& newest_pose = in.values->pose(pose_key(newest));

  auto center = [&](uint32_t f) { return in.values->pose(pose_key(f)).inverse().translation(); };

  // Visibility of a frame's live points in the newest frame.
  auto visibility = [&](uint32_t f) {
    auto it = in.hosted->find(f);
    if (it == in.hosted->end() || it->second.empty()) return 0.0;
    int total = 0, visible = 0;
    for (uint32_t lm_id : it->second) {
      const VariableKey dk = depth_key(lm_id);
      if (!in.values->has(dk)) continue;
      const LandmarkTruth& lm = in.scene->landmark(lm_id);
      const Projection p = project_point(in.scene->camera, lm.pixel, in.values->positive(dk),
                                         in.values->pose(pose_key(f)), newest_pose);
      total++;
      if (p.visible && in.scene->camera.in_bounds(p.pixel)) visible++;
    }
    return total == 0 ? 0.0 : static_cast<double>(visible) / total;
  };

  for (uint32_t f : in.window) {
    if (f == newest || f == second) continue;
    if (visibility(f) < in.min_visibility) return f;
  }

  // Distance score: spread old frames, keep them near the newest.
  std::optional<uint32_t> best;
  double best_score = -1.0;
  const Vec3 c_new = center(newest);
  for (uint32_t f : in.window) {
    if (f == newest || f == second) continue;
    const Vec3 c_f = center(f);
    double sum = 0.0;
    for (uint32_t j : in.window) {
      if (j == f || j == newest) continue;
      sum += 1.0 / ((c_f - center(j)).norm() + 1e-5);
    }
    const double score = std::sqrt((c_f - c_new).norm()) * sum;
    if (score > best_score) {
      best_score = score;
      best = f;
    }
  }
  return best;
}

}  // namespace vifg
