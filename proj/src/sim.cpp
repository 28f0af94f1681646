#include "vifg/sim.hpp"

#include <cmath>

#include "json.hpp"

namespace vifg {

namespace {

Vec3 seg_position(const TrajectorySegment& s, double tau) {
  Vec3 p = s.position0 + s.linear_velocity * tau;
  for (int i = 0; i < 3; ++i)
    p[i] += s.amplitude[i] * std::sin(s.frequency[i] * tau + s.phase[i]);
  return p;
}

Vec3 seg_velocity(const TrajectorySegment& s, double tau) {
  Vec3 v = s.linear_velocity;
  for (int i = 0; i < 3; ++i)
    v[i] += s.amplitude[i] * s.frequency[i] * std::cos(s.frequency[i] * tau + s.phase[i]);
  return v;
}

Vec3 seg_acceleration(const TrajectorySegment& s, double tau) {
  Vec3 a = Vec3::Zero();
  for (int i = 0; i < 3; ++i)
    a[i] -= s.amplitude[i] * s.frequency[i] * s.frequency[i] *
            std::sin(s.frequency[i] * tau + s.phase[i]);
  return a;
}

Vec3 seg_theta(const TrajectorySegment& s, double tau) {
  Vec3 th;
  for (int i = 0; i < 3; ++i)
    th[i] = s.rot_amplitude[i] * std::sin(s.rot_frequency[i] * tau + s.rot_phase[i]);
  return th;
}

Vec3 seg_theta_dot(const TrajectorySegment& s, double tau) {
  Vec3 td;
  for (int i = 0; i < 3; ++i)
    td[i] = s.rot_amplitude[i] * s.rot_frequency[i] *
            std::cos(s.rot_frequency[i] * tau + s.rot_phase[i]);
  return td;
}

}  // namespace

AnalyticTrajectory::AnalyticTrajectory(std::vector<TrajectorySegment> segments)
    : segments_(std::move(segments)) {
  if (segments_.empty()) throw ConfigError("trajectory: no segments");
  double t = 0.0;
  for (const auto& s : segments_) {
    if (s.duration <= 0) throw ConfigError("trajectory: non-positive segment duration");
    starts_.push_back(t);
    t += s.duration;
  }
  duration_ = t;
  // C1 joins: position and velocity continuous, attitude continuous.
  for (size_t i = 0; i + 1 < segments_.size(); ++i) {
    const auto& a = segments_[i];
    const auto& b = segments_[i + 1];
    if ((seg_position(a, a.duration) - seg_position(b, 0)).norm() > 1e-9 ||
        (seg_velocity(a, a.duration) - seg_velocity(b, 0)).norm() > 1e-9 ||
        (seg_theta(a, a.duration) - seg_theta(b, 0)).norm() > 1e-9)
      throw ConfigError("trajectory: segments do not join smoothly");
  }
}

std::pair<const TrajectorySegment*, double> AnalyticTrajectory::locate(double t) const {
  t = std::clamp(t, 0.0, duration_);
  size_t i = segments_.size() - 1;
  while (i > 0 && t < starts_[i]) --i;
  return {&segments_[i], t - starts_[i]};
}

RigidTransform AnalyticTrajectory::pose(double t) const {
  auto [s, tau] = locate(t);
  return RigidTransform(Rotation3::exp(seg_theta(*s, tau)), seg_position(*s, tau));
}

Vec3 AnalyticTrajectory::velocity(double t) const {
  auto [s, tau] = locate(t);
  return seg_velocity(*s, tau);
}

Vec3 AnalyticTrajectory::acceleration(double t) const {
  auto [s, tau] = locate(t);
  return seg_acceleration(*s, tau);
}

Vec3 AnalyticTrajectory::angular_velocity_body(double t) const {
  // R(t) = exp(theta(t)); body rate = Jr(theta) * theta_dot.
  auto [s, tau] = locate(t);
  return so3_right_jacobian(seg_theta(*s, tau)) * seg_theta_dot(*s, tau);
}

SimOutput simulate(const SimConfig& config) {
  config.camera.validate();
  config.imu.validate();
  if (config.imu_rate <= 0 || config.keyframe_rate <= 0)
    throw ConfigError("simulate: rates must be positive");

  const AnalyticTrajectory traj(config.segments);
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SimOutput out;
  out.true_scale = config.true_scale;
  out.true_gravity_rot = Rotation3::exp(config.true_gravity_tangent);
  out.t_cam_imu = config.t_cam_imu;
  out.scene.camera = config.camera;

  const Vec3 gravity = config.imu.gravity();
  const double dt = 1.0 / config.imu_rate;
  const double ns = config.noise_scale;

  // IMU stream: exact derivatives + bias walk + white noise.
  Vec3 bg = config.initial_gyro_bias;
  Vec3 ba = config.initial_accel_bias;
  const int n_samples = static_cast<int>(std::floor(traj.duration() * config.imu_rate)) + 1;
  std::vector<std::pair<double, ImuBias>> bias_timeline;
  out.imu.reserve(n_samples);
  for (int k = 0; k < n_samples; ++k) {
    const double t = k * dt;
    ImuMeasurement m;
    m.timestamp = t;
    const Rotation3 r = traj.pose(t).rotation();
    m.gyro = traj.angular_velocity_body(t) + bg;
    m.accel = r.inverse() * (traj.acceleration(t) - gravity) + ba;
    if (ns > 0) {
      const double sg = ns * config.imu.gyro_noise_density / std::sqrt(dt);
      const double sa = ns * config.imu.accel_noise_density / std::sqrt(dt);
      m.gyro += sg * Vec3(gauss(rng), gauss(rng), gauss(rng));
      m.accel += sa * Vec3(gauss(rng), gauss(rng), gauss(rng));
      bg += ns * config.imu.gyro_bias_random_walk * std::sqrt(dt) *
            Vec3(gauss(rng), gauss(rng), gauss(rng));
      ba += ns * config.imu.accel_bias_random_walk * std::sqrt(dt) *
            Vec3(gauss(rng), gauss(rng), gauss(rng));
    }
    bias_timeline.emplace_back(t, ImuBias{bg, ba});
    out.imu.push_back(m);
  }

  // Keyframes and scene. Visual-frame poses follow from the true scale and
  // gravity rotation by inverting the omega transform.
  const int n_kf = std::max(2, static_cast<int>(std::floor(traj.duration() * config.keyframe_rate)) + 1);
  uint32_t next_landmark = 0;
  for (int k = 0; k < n_kf; ++k) {
    const double t = k / config.keyframe_rate;
    if (t > traj.duration() + 1e-9) break;
    const RigidTransform p_imu = traj.pose(t);  // T_w_imu in metric frame
    out.groundtruth.emplace_back(t, p_imu);
    out.keyframe_times.push_back(t);
    out.true_velocities[k] = traj.velocity(t);
    // bias at nearest sample time
    const size_t bi = std::min<size_t>(static_cast<size_t>(t / dt), bias_timeline.size() - 1);
    out.true_biases[k] = bias_timeline[bi].second;

    // P_V from: scaled_s(P_V^-1) = Rot(R_VI) o P_I o T_cam_imu^-1
    const RigidTransform m =
        RigidTransform(out.true_gravity_rot, Vec3::Zero()) * p_imu * config.t_cam_imu.inverse();
    const RigidTransform pv_inv(m.rotation(), m.translation() / config.true_scale);

    KeyframeTruth kf;
    kf.id = static_cast<uint32_t>(k);
    kf.timestamp = t;
    kf.pose_v = pv_inv.inverse();
    kf.exposure = config.exposure_base * (1.0 + config.exposure_jitter * (2.0 * unit(rng) - 1.0));
    kf.affine_a = config.affine_a_range * (2.0 * unit(rng) - 1.0);
    kf.affine_b = config.affine_b_range * (2.0 * unit(rng) - 1.0);
    out.scene.add_frame(kf);
  }

  // Landmarks: hosted per keyframe, metric depths mapped into the visual frame.
  for (const auto& [fid, kf] : out.scene.frames) {
    for (int i = 0; i < config.landmarks_per_keyframe; ++i) {
      LandmarkTruth lm;
      lm.id = next_landmark++;
      lm.host = fid;
      const double margin = 24.0;
      lm.pixel = Vec2(margin + unit(rng) * (config.camera.width - 2 * margin),
                      margin + unit(rng) * (config.camera.height - 2 * margin));
      const double z_metric = config.depth_min + unit(rng) * (config.depth_max - config.depth_min);
      lm.inv_depth = config.true_scale / z_metric;
      lm.patch[0] = 80.0 + 100.0 * unit(rng);
      lm.patch[1] = -6.0 + 12.0 * unit(rng);
      lm.patch[2] = -6.0 + 12.0 * unit(rng);
      lm.patch[3] = -0.8 + 1.6 * unit(rng);
      lm.patch[4] = -0.8 + 1.6 * unit(rng);
      lm.patch[5] = -0.8 + 1.6 * unit(rng);

      IntensityPatch host_patch;
      host_patch.coeffs = lm.patch;
      const double host_gain = kf.exposure * std::exp(kf.affine_a);
      for (int p = 0; p < Pattern8::kSize; ++p) {
        const Vec2 off = Pattern8::offsets()[p];
        const double clean = host_gain * host_patch.radiance(off) + kf.affine_b;
        lm.host_intensity[p] = clean + ns * config.pixel_noise * gauss(rng);
        const Vec2 grad = host_gain * host_patch.radiance_gradient(off);
        lm.weights[p] = 2500.0 / (2500.0 + grad.squaredNorm());
      }
      out.scene.add_landmark(lm);
    }
  }
  return out;
}

std::string SimConfig::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["imu_rate"] = imu_rate;
  j["keyframe_rate"] = keyframe_rate;
  for (const auto& s : segments) {
    nlohmann::json js;
    auto put = [&js](const char* name, const Vec3& v) {
      js[name] = {v.x(), v.y(), v.z()};
    };
    js["duration"] = s.duration;
    put("position0", s.position0);
    put("linear_velocity", s.linear_velocity);
    put("amplitude", s.amplitude);
    put("frequency", s.frequency);
    put("phase", s.phase);
    put("rot_amplitude", s.rot_amplitude);
    put("rot_frequency", s.rot_frequency);
    put("rot_phase", s.rot_phase);
    j["segments"].push_back(std::move(js));
  }
  j["true_scale"] = true_scale;
  j["true_gravity_tangent"] = {true_gravity_tangent.x(), true_gravity_tangent.y(),
                               true_gravity_tangent.z()};
  const auto& q = t_cam_imu.rotation().quaternion();
  j["t_cam_imu"] = {{"q", {q.w(), q.x(), q.y(), q.z()}},
                    {"t", {t_cam_imu.translation().x(), t_cam_imu.translation().y(),
                           t_cam_imu.translation().z()}}};
  j["imu"] = {{"gyro_noise_density", imu.gyro_noise_density},
              {"accel_noise_density", imu.accel_noise_density},
              {"gyro_bias_random_walk", imu.gyro_bias_random_walk},
              {"accel_bias_random_walk", imu.accel_bias_random_walk},
              {"gravity_magnitude", imu.gravity_magnitude}};
  j["noise_scale"] = noise_scale;
  j["initial_gyro_bias"] = {initial_gyro_bias.x(), initial_gyro_bias.y(), initial_gyro_bias.z()};
  j["initial_accel_bias"] = {initial_accel_bias.x(), initial_accel_bias.y(),
                             initial_accel_bias.z()};
  j["camera"] = {{"fx", camera.fx}, {"fy", camera.fy}, {"cx", camera.cx},
                 {"cy", camera.cy}, {"width", camera.width}, {"height", camera.height}};
  j["landmarks_per_keyframe"] = landmarks_per_keyframe;
  j["depth_min"] = depth_min;
  j["depth_max"] = depth_max;
  j["pixel_noise"] = pixel_noise;
  j["exposure_base"] = exposure_base;
  j["exposure_jitter"] = exposure_jitter;
  j["affine_a_range"] = affine_a_range;
  j["affine_b_range"] = affine_b_range;
  return j.dump(1);
}

SimConfig SimConfig::from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  SimConfig c;
  auto vec3 = [](const nlohmann::json& a) { return Vec3(a[0], a[1], a[2]); };
  c.seed = j.value("seed", c.seed);
  c.imu_rate = j.value("imu_rate", c.imu_rate);
  c.keyframe_rate = j.value("keyframe_rate", c.keyframe_rate);
  if (j.contains("segments")) {
    c.segments.clear();
    for (const auto& js : j.at("segments")) {
      TrajectorySegment s;
      s.duration = js.value("duration", 60.0);
      if (js.contains("position0")) s.position0 = vec3(js["position0"]);
      if (js.contains("linear_velocity")) s.linear_velocity = vec3(js["linear_velocity"]);
      if (js.contains("amplitude")) s.amplitude = vec3(js["amplitude"]);
      if (js.contains("frequency")) s.frequency = vec3(js["frequency"]);
      if (js.contains("phase")) s.phase = vec3(js["phase"]);
      if (js.contains("rot_amplitude")) s.rot_amplitude = vec3(js["rot_amplitude"]);
      if (js.contains("rot_frequency")) s.rot_frequency = vec3(js["rot_frequency"]);
      if (js.contains("rot_phase")) s.rot_phase = vec3(js["rot_phase"]);
      c.segments.push_back(s);
    }
  }
  c.true_scale = j.value("true_scale", c.true_scale);
  if (j.contains("true_gravity_tangent")) c.true_gravity_tangent = vec3(j["true_gravity_tangent"]);
  if (j.contains("t_cam_imu")) {
    const auto& jt = j.at("t_cam_imu");
    const auto& q = jt.at("q");
    c.t_cam_imu = RigidTransform(Rotation3(Eigen::Quaterniond(q[0], q[1], q[2], q[3])),
                                 vec3(jt.at("t")));
  }
  if (j.contains("imu")) {
    const auto& ji = j.at("imu");
    c.imu.gyro_noise_density = ji.value("gyro_noise_density", c.imu.gyro_noise_density);
    c.imu.accel_noise_density = ji.value("accel_noise_density", c.imu.accel_noise_density);
    c.imu.gyro_bias_random_walk = ji.value("gyro_bias_random_walk", c.imu.gyro_bias_random_walk);
    c.imu.accel_bias_random_walk =
        ji.value("accel_bias_random_walk", c.imu.accel_bias_random_walk);
    c.imu.gravity_magnitude = ji.value("gravity_magnitude", c.imu.gravity_magnitude);
  }
  c.noise_scale = j.value("noise_scale", c.noise_scale);
  if (j.contains("initial_gyro_bias")) c.initial_gyro_bias = vec3(j["initial_gyro_bias"]);
  if (j.contains("initial_accel_bias")) c.initial_accel_bias = vec3(j["initial_accel_bias"]);
  if (j.contains("camera")) {
    const auto& jc = j.at("camera");
    c.camera = {jc.at("fx"), jc.at("fy"), jc.at("cx"), jc.at("cy"), jc.at("width"),
                jc.at("height")};
  }
  c.landmarks_per_keyframe = j.value("landmarks_per_keyframe", c.landmarks_per_keyframe);
  c.depth_min = j.value("depth_min", c.depth_min);
  c.depth_max = j.value("depth_max", c.depth_max);
  c.pixel_noise = j.value("pixel_noise", c.pixel_noise);
  c.exposure_base = j.value("exposure_base", c.exposure_base);
  c.exposure_jitter = j.value("exposure_jitter", c.exposure_jitter);
  c.affine_a_range = j.value("affine_a_range", c.affine_a_range);
  c.affine_b_range = j.value("affine_b_range", c.affine_b_range);
  return c;
}

}  // namespace vifg
