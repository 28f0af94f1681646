#include "vifg/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "json.hpp"

namespace vifg {

RigidTransform omega_transform(const RigidTransform& pose_v, double scale,
                               const Rotation3& gravity_rot, const RigidTransform& t_cam_imu,
                               OmegaJacobians* jac) {
  const Rotation3 rv_inv = pose_v.rotation().inverse();
  const Rotation3 g_inv = gravity_rot.inverse();
  const Vec3 u = t_cam_imu.translation() - scale * pose_v.translation();

  const Rotation3 r_out = g_inv * rv_inv * t_cam_imu.rotation();
  const Vec3 t_out = g_inv * (rv_inv * u);

  if (jac) {
    const Mat3 A = (g_inv * rv_inv).matrix();
    const Mat3 Gt = g_inv.matrix();
    jac->d_pose_v.setZero();
    jac->d_pose_v.topLeftCorner<3, 3>() = -A;
    jac->d_pose_v.bottomLeftCorner<3, 3>() = A * skew(u);
    jac->d_pose_v.bottomRightCorner<3, 3>() = -scale * A;
    jac->d_log_scale.setZero();
    jac->d_log_scale.tail<3>() = -scale * (A * pose_v.translation());
    jac->d_gravity.setZero();
    jac->d_gravity.topRows<3>() = -Gt;
    jac->d_gravity.bottomRows<3>() = Gt * skew(rv_inv * u);
  }
  return RigidTransform(r_out, t_out);
}

namespace {

// Position-only pose prior: gauge anchor that pins a camera position without
// touching its orientation.
class PositionPriorFactor : public MeasurementFactor {
 public:
  PositionPriorFactor(const VariableKey& pose, Vec3 position, double info)
      : keys_{pose}, position_(std::move(position)), sqrt_info_(std::sqrt(info)) {}
  const std::vector<VariableKey>& keys() const override { return keys_; }
  int residual_dim() const override { return 3; }
  Eigen::VectorXd residual(const GraphValues& v) const override {
    return v.pose(keys_[0]).translation() - position_;
  }
  void jacobians(const GraphValues&, std::vector<Eigen::MatrixXd>& jac) const override {
    jac.assign(1, Eigen::MatrixXd::Zero(3, 6));
    jac[0].rightCols<3>().setIdentity();
  }
  Eigen::MatrixXd sqrt_information(const GraphValues&) const override {
    return sqrt_info_ * Mat3::Identity();
  }

 private:
  std::vector<VariableKey> keys_;
  Vec3 position_;
  double sqrt_info_;
};

struct OmegaEval {
  ImuResidual res;
  OmegaJacobians oi, oj;
};

OmegaEval eval_imu(const RigidTransform& pose_i_v, const Vec3& vel_i, const ImuBias& bias_i,
                   const RigidTransform& pose_j_v, const Vec3& vel_j, double scale,
                   const Rotation3& gravity_rot, const RigidTransform& t_cam_imu,
                   const PreintegratedImu& preint, const Vec3& gravity, bool with_jacobians) {
  OmegaEval ev;
  const RigidTransform p_i =
      omega_transform(pose_i_v, scale, gravity_rot, t_cam_imu, with_jacobians ? &ev.oi : nullptr);
  const RigidTransform p_j =
      omega_transform(pose_j_v, scale, gravity_rot, t_cam_imu, with_jacobians ? &ev.oj : nullptr);
  const ImuState si{p_i, vel_i, bias_i};
  const ImuState sj{p_j, vel_j, bias_i};
  ev.res = imu_residual(si, sj, preint, gravity, with_jacobians);
  return ev;
}

}  // namespace

ImuFactor::ImuFactor(uint32_t frame_i, uint32_t frame_j,
                     std::shared_ptr<const PreintegratedImu> preint,
                     const RigidTransform& t_cam_imu, const Vec3& gravity)
    : i_(frame_i), j_(frame_j), preint_(std::move(preint)), t_cam_imu_(t_cam_imu),
      gravity_(gravity) {
  keys_ = {pose_key(i_),     velocity_key(i_), bias_key(i_), pose_key(j_),
           velocity_key(j_), scale_key(),      gravity_key()};
}

Eigen::VectorXd ImuFactor::residual(const GraphValues& v) const {
  const OmegaEval ev = eval_imu(v.pose(keys_[0]), v.vector(keys_[1]),
                                ImuBias::from_vector(v.vector(keys_[2])), v.pose(keys_[3]),
                                v.vector(keys_[4]), v.positive(keys_[5]), v.rotation(keys_[6]),
                                t_cam_imu_, *preint_, gravity_, false);
  return ev.res.r;
}

void ImuFactor::jacobians(const GraphValues& v, std::vector<Eigen::MatrixXd>& jac) const {
  const OmegaEval ev = eval_imu(v.pose(keys_[0]), v.vector(keys_[1]),
                                ImuBias::from_vector(v.vector(keys_[2])), v.pose(keys_[3]),
                                v.vector(keys_[4]), v.positive(keys_[5]), v.rotation(keys_[6]),
                                t_cam_imu_, *preint_, gravity_, true);
  jac.resize(7);
  jac[0] = ev.res.d_pose_i * ev.oi.d_pose_v;
  jac[1] = ev.res.d_vel_i;
  jac[2] = ev.res.d_bias_i;
  jac[3] = ev.res.d_pose_j * ev.oj.d_pose_v;
  jac[4] = ev.res.d_vel_j;
  jac[5] = ev.res.d_pose_i * ev.oi.d_log_scale + ev.res.d_pose_j * ev.oj.d_log_scale;
  jac[6] = ev.res.d_pose_i * ev.oi.d_gravity + ev.res.d_pose_j * ev.oj.d_gravity;
}

Eigen::MatrixXd ImuFactor::sqrt_information(const GraphValues& v) const {
  const OmegaEval ev = eval_imu(v.pose(keys_[0]), v.vector(keys_[1]),
                                ImuBias::from_vector(v.vector(keys_[2])), v.pose(keys_[3]),
                                v.vector(keys_[4]), v.positive(keys_[5]), v.rotation(keys_[6]),
                                t_cam_imu_, *preint_, gravity_, false);
  return ev.res.sqrt_information;
}

void ImuFactor::accumulate(const GraphValues& v, LinearSystem& sys) const {
  const OmegaEval ev = eval_imu(v.pose(keys_[0]), v.vector(keys_[1]),
                                ImuBias::from_vector(v.vector(keys_[2])), v.pose(keys_[3]),
                                v.vector(keys_[4]), v.positive(keys_[5]), v.rotation(keys_[6]),
                                t_cam_imu_, *preint_, gravity_, true);
  std::vector<Eigen::MatrixXd> jac(7);
  jac[0] = ev.res.d_pose_i * ev.oi.d_pose_v;
  jac[1] = ev.res.d_vel_i;
  jac[2] = ev.res.d_bias_i;
  jac[3] = ev.res.d_pose_j * ev.oj.d_pose_v;
  jac[4] = ev.res.d_vel_j;
  jac[5] = ev.res.d_pose_i * ev.oi.d_log_scale + ev.res.d_pose_j * ev.oj.d_log_scale;
  jac[6] = ev.res.d_pose_i * ev.oi.d_gravity + ev.res.d_pose_j * ev.oj.d_gravity;
  Eigen::MatrixXd W = ev.res.sqrt_information.transpose() * ev.res.sqrt_information;
  W *= group_weight;
  accumulate_blocks(sys, keys_, jac, W, ev.res.r);
}

CoarseImuFactor::CoarseImuFactor(uint32_t frame_i, uint32_t frame_j, RigidTransform pose_i_v,
                                 RigidTransform pose_j_v,
                                 std::shared_ptr<const PreintegratedImu> preint,
                                 const RigidTransform& t_cam_imu, const Vec3& gravity,
                                 VariableKey shared_bias)
    : pose_i_v_(std::move(pose_i_v)), pose_j_v_(std::move(pose_j_v)), preint_(std::move(preint)),
      t_cam_imu_(t_cam_imu), gravity_(gravity) {
  keys_ = {velocity_key(frame_i), velocity_key(frame_j), shared_bias, scale_key(), gravity_key()};
}

Eigen::VectorXd CoarseImuFactor::residual(const GraphValues& v) const {
  const OmegaEval ev =
      eval_imu(pose_i_v_, v.vector(keys_[0]), ImuBias::from_vector(v.vector(keys_[2])), pose_j_v_,
               v.vector(keys_[1]), v.positive(keys_[3]), v.rotation(keys_[4]), t_cam_imu_,
               *preint_, gravity_, false);
  return ev.res.r;
}

void CoarseImuFactor::jacobians(const GraphValues& v, std::vector<Eigen::MatrixXd>& jac) const {
  const OmegaEval ev =
      eval_imu(pose_i_v_, v.vector(keys_[0]), ImuBias::from_vector(v.vector(keys_[2])), pose_j_v_,
               v.vector(keys_[1]), v.positive(keys_[3]), v.rotation(keys_[4]), t_cam_imu_,
               *preint_, gravity_, true);
  jac.resize(5);
  jac[0] = ev.res.d_vel_i;
  jac[1] = ev.res.d_vel_j;
  jac[2] = ev.res.d_bias_i;
  jac[3] = ev.res.d_pose_i * ev.oi.d_log_scale + ev.res.d_pose_j * ev.oj.d_log_scale;
  jac[4] = ev.res.d_pose_i * ev.oi.d_gravity + ev.res.d_pose_j * ev.oj.d_gravity;
}

Eigen::MatrixXd CoarseImuFactor::sqrt_information(const GraphValues& v) const {
  const OmegaEval ev =
      eval_imu(pose_i_v_, v.vector(keys_[0]), ImuBias::from_vector(v.vector(keys_[2])), pose_j_v_,
               v.vector(keys_[1]), v.positive(keys_[3]), v.rotation(keys_[4]), t_cam_imu_,
               *preint_, gravity_, false);
  return ev.res.sqrt_information;
}

BiasRandomWalkFactor::BiasRandomWalkFactor(uint32_t frame_i, uint32_t frame_j,
                                           const ImuNoiseParams& params, double dt) {
  if (dt <= 0) throw DataError("bias random walk: non-positive dt");
  keys_ = {bias_key(frame_i), bias_key(frame_j)};
  Eigen::Matrix<double, 6, 1> inv_sigma;
  const double sg = params.gyro_bias_random_walk * std::sqrt(dt);
  const double sa = params.accel_bias_random_walk * std::sqrt(dt);
  inv_sigma << 1 / sg, 1 / sg, 1 / sg, 1 / sa, 1 / sa, 1 / sa;
  sqrt_info_ = inv_sigma.asDiagonal();
}

Eigen::VectorXd BiasRandomWalkFactor::residual(const GraphValues& v) const {
  return v.vector(keys_[1]) - v.vector(keys_[0]);
}

void BiasRandomWalkFactor::jacobians(const GraphValues&, std::vector<Eigen::MatrixXd>& jac) const {
  jac.resize(2);
  jac[0] = -Eigen::MatrixXd::Identity(6, 6);
  jac[1] = Eigen::MatrixXd::Identity(6, 6);
}

const char* to_string(InitPhase phase) {
  switch (phase) {
    case InitPhase::NoImu: return "no_imu";
    case InitPhase::CoarseReady: return "coarse_ready";
    case InitPhase::Initialized: return "initialized";
    case InitPhase::Reinitialized: return "reinitialized";
  }
  return "?";
}

VioPipeline::VioPipeline(PipelineConfig config, const SyntheticScene* scene)
    : cfg_(std::move(config)), scene_(scene), delayed_(cfg_.delay) {
  cfg_.imu.validate();
  if (cfg_.n_f < 3) throw ConfigError("pipeline: n_f too small");
}

double VioPipeline::scale() const {
  return values_.has(scale_key()) ? values_.positive(scale_key()) : 1.0;
}

Rotation3 VioPipeline::gravity_rotation() const {
  return values_.has(gravity_key()) ? values_.rotation(gravity_key()) : Rotation3();
}

void VioPipeline::process(const KeyframeInput& input) {
  if (lost_) return;
  if (!history_.empty() && input.id != history_.rbegin()->first + 1)
    throw StructuralError("pipeline: keyframe ids must be sequential");

  add_keyframe_state(input);
  if (window_.size() >= 2) bundle_adjustment_step();
  update_history();
  if (!lost_) {
    run_marginalization();
    run_initializer();
  }

  PhaseLogRow row;
  row.frame = input.id;
  row.timestamp = input.timestamp;
  row.phase = phase_;
  row.scale = scale();
  row.scale_cov = last_scale_cov_;
  row.photo_weight = last_weight_;
  phase_log_.push_back(row);
}

void VioPipeline::add_keyframe_state(const KeyframeInput& input) {
  const uint32_t id = input.id;
  const bool first = history_.empty();

  values_.insert(pose_key(id), input.init_pose_v);
  values_.insert(affine_key(id), Eigen::VectorXd(Eigen::VectorXd::Zero(2)));
  main_.register_frame(id, {pose_key(id), affine_key(id)});
  delayed_.add_keyframe(id);

  main_.add_factor(std::make_shared<PriorFactor>(affine_key(id),
                                                 Eigen::VectorXd(Eigen::VectorXd::Zero(2)),
                                                 cfg_.affine_prior_info));
  if (first) {
    main_.add_factor(
        std::make_shared<PriorFactor>(pose_key(id), input.init_pose_v, cfg_.first_pose_info));
  }

  // Hosted landmarks.
  auto hit = scene_->hosted.find(id);
  if (hit != scene_->hosted.end()) {
    for (uint32_t lm : hit->second) {
      auto dit = input.init_inv_depths.find(lm);
      const double d0 = dit != input.init_inv_depths.end() ? dit->second
                                                           : scene_->landmark(lm).inv_depth;
      const PositiveScalar init{std::max(d0, 1e-4)};
      values_.insert(depth_key(lm), init);
      if (cfg_.depth_prior_info > 0)
        main_.add_factor(
            std::make_shared<PriorFactor>(depth_key(lm), init, cfg_.depth_prior_info));
      main_.register_hosted_depth(id, depth_key(lm));
      live_hosted_[id].push_back(lm);
    }
  }

  KeyframeRecord rec;
  rec.timestamp = input.timestamp;
  rec.pose_v = input.init_pose_v;
  history_[id] = rec;

  if (!first) {
    const uint32_t prev = id - 1;
    if (cfg_.enable_imu && !input.imu_segment.empty()) {
      auto preint = std::make_shared<PreintegratedImu>(PreintegratedImu::integrate_sequence(
          cfg_.imu, ImuBias{}, input.imu_segment, history_.at(prev).timestamp, input.timestamp));
      segments_[{prev, id}] = preint;
      Vec3 mean = Vec3::Zero();
      for (const auto& m : input.imu_segment) mean += m.accel;
      segment_mean_accel_[{prev, id}] = mean / static_cast<double>(input.imu_segment.size());
    }

    if (phase_ >= InitPhase::Initialized) {
      auto sit = segments_.find({prev, id});
      if (sit == segments_.end()) throw DataGapError("pipeline: missing imu segment");
      // Predict the new frame's inertial state from the previous one.
      const ImuState prev_state{
          omega_transform(values_.pose(pose_key(prev)), scale(), gravity_rotation(),
                          cfg_.t_cam_imu),
          values_.vector(velocity_key(prev)),
          ImuBias::from_vector(values_.vector(bias_key(prev)))};
      auto [pred, cov] = sit->second->predict(prev_state, cfg_.imu.gravity());
      (void)cov;
      values_.insert(velocity_key(id), Eigen::VectorXd(pred.velocity));
      values_.insert(bias_key(id), Eigen::VectorXd(prev_state.bias.vector()));
      main_.add_frame_block(id, velocity_key(id));
      main_.add_frame_block(id, bias_key(id));

      FactorTag imu_tag;
      imu_tag.inertial = true;
      imu_tag.imu_pair = {prev, id};
      main_.add_factor(make_imu_factor(prev, id), imu_tag);
      FactorTag bias_tag;
      bias_tag.inertial = true;
      main_.add_factor(make_bias_factor(prev, id), bias_tag);
    }

    add_observations(id);
  }
  window_.push_back(id);
}

void VioPipeline::add_observations(uint32_t id) {
  const RigidTransform& new_pose = values_.pose(pose_key(id));
  for (uint32_t other : window_) {
    if (other == id) continue;
    const RigidTransform& other_pose = values_.pose(pose_key(other));

    auto add_obs = [&](uint32_t lm, uint32_t host, uint32_t target, const RigidTransform& hp,
                       const RigidTransform& tp) {
      const VariableKey dk = depth_key(lm);
      if (!values_.has(dk)) return;
      const Projection p =
          project_point(scene_->camera, scene_->landmark(lm).pixel, values_.positive(dk), hp, tp);
      if (!p.visible || !scene_->camera.in_bounds(p.pixel)) return;
      FactorTag tag;
      tag.host_frame = host;
      tag.target_frame = target;
      main_.add_factor(
          std::make_shared<PhotometricFactor>(scene_, lm, host, target, cfg_.huber_knee), tag);
    };

    auto oit = live_hosted_.find(other);
    if (oit != live_hosted_.end())
      for (uint32_t lm : oit->second) add_obs(lm, other, id, other_pose, new_pose);
    auto nit = live_hosted_.find(id);
    if (nit != live_hosted_.end())
      for (uint32_t lm : nit->second) add_obs(lm, id, other, new_pose, other_pose);
  }
}

void VioPipeline::bundle_adjustment_step() {
  const auto photo = main_.active_photometric();
  double weight = cfg_.photo_lambda;
  if (!photo.empty()) {
    const auto [e, n] = photometric_energy(photo, values_);
    if (n > 0) weight = dynamic_weight(std::sqrt(e / n), cfg_.photo_lambda, cfg_.photo_theta);
    for (const auto& f : photo) f->group_weight = weight;
  }
  last_weight_ = weight;

  FactorGraph graph = main_.assemble();
  if (graph.size() == 0) return;
  try {
    last_ba_stats_ = LMStats{};
    last_ba_stats_.record_steps = cfg_.record_lm_steps;
    LMConfig lm = cfg_.lm_window;
    lm.lambda_warm_start = &ba_lambda_;
    values_ = graph.solve_lm(values_, lm, &last_ba_stats_);
  } catch (const DivergedError&) {
    lost_ = true;
  }
}

void VioPipeline::inject_scale(double factor) {
  if (!values_.has(scale_key())) throw StructuralError("inject_scale: no scale variable yet");
  values_.update(scale_key(), PositiveScalar{values_.positive(scale_key()) * factor});
}

void VioPipeline::update_history() {
  for (uint32_t f : window_) {
    KeyframeRecord& rec = history_[f];
    rec.pose_v = values_.pose(pose_key(f));
    if (values_.has(velocity_key(f))) {
      rec.velocity = values_.vector(velocity_key(f));
      rec.bias = ImuBias::from_vector(values_.vector(bias_key(f)));
      rec.has_imu_state = true;
    }
  }
}

void VioPipeline::run_marginalization() {
  while (true) {
    VictimPolicyInput in;
    in.window = window_;
    in.values = &values_;
    in.scene = scene_;
    in.hosted = &live_hosted_;
    in.n_f = cfg_.n_f;
    in.min_visibility = cfg_.min_visibility;
    const auto victim = select_marginalization_victim(in);
    if (!victim) break;

    const auto t0 = std::chrono::steady_clock::now();
    FrameMarginalizationResult result = main_.marginalize_frame(values_, *victim);
    const auto t1 = std::chrono::steady_clock::now();
    last_marg_seconds_ = std::chrono::duration<double>(t1 - t0).count();
    total_marg_seconds_ += last_marg_seconds_;

    delayed_.add_linearized_photometric(result.delayed_payload);
    delayed_.record_marginalization(*victim);

    for (const auto& k : result.eliminated)
      if (values_.has(k)) values_.erase(k);
    for (const auto& p : result.folded_imu_pairs) prior_imu_pairs_.push_back(p);
    live_hosted_.erase(*victim);
    window_.erase(std::remove(window_.begin(), window_.end(), *victim), window_.end());
  }
}

std::shared_ptr<Factor> VioPipeline::make_imu_factor(uint32_t i, uint32_t j) const {
  auto it = segments_.find({i, j});
  if (it == segments_.end()) return nullptr;
  return std::make_shared<ImuFactor>(i, j, it->second, cfg_.t_cam_imu, cfg_.imu.gravity());
}

std::shared_ptr<Factor> VioPipeline::make_bias_factor(uint32_t i, uint32_t j) const {
  auto it = segments_.find({i, j});
  if (it == segments_.end()) return nullptr;
  return std::make_shared<BiasRandomWalkFactor>(i, j, cfg_.imu, it->second->delta_t());
}

Rotation3 gravity_rotation_from_accel(const RigidTransform& first_pose_v,
                                      const Rotation3& cam_imu_rotation, const Vec3& mean_accel) {
  const Vec3 u = first_pose_v.rotation().inverse() * (cam_imu_rotation * mean_accel);
  if (u.norm() < 1e-8) return Rotation3();
  return Rotation3(Eigen::Quaterniond::FromTwoVectors(Vec3::UnitZ(), u.normalized()));
}

CoarseInitResult VioPipeline::coarse_imu_init() {
  CoarseInitResult out;
  if (history_.size() < 2) return out;

  const uint32_t newest = history_.rbegin()->first;
  const uint32_t lo =
      newest + 1 >= static_cast<uint32_t>(cfg_.delay) ? newest + 1 - cfg_.delay : 0;

  const VariableKey shared_bias = bias_key(0xFFFFFFFFu);
  FactorGraph graph;
  for (uint32_t f = lo; f < newest; ++f) {
    auto sit = segments_.find({f, f + 1});
    if (sit == segments_.end()) return out;
    graph.add(std::make_shared<CoarseImuFactor>(f, f + 1, history_.at(f).pose_v,
                                                history_.at(f + 1).pose_v, sit->second,
                                                cfg_.t_cam_imu, cfg_.imu.gravity(), shared_bias));
  }
  graph.add(std::make_shared<PriorFactor>(shared_bias, Eigen::VectorXd(Eigen::VectorXd::Zero(6)),
                                          cfg_.bias_prior_info));
  graph.fix_coordinate(gravity_key(), 2);

  // Gravity direction from the mean accelerometer reading between the first
  // two keyframes of the span; scale 1, velocities and bias 0.
  auto ait = segment_mean_accel_.find({lo, lo + 1});
  if (ait == segment_mean_accel_.end()) return out;
  const Rotation3 g0 = gravity_rotation_from_accel(history_.at(lo).pose_v,
                                                   cfg_.t_cam_imu.rotation(), ait->second);

  GraphValues init;
  for (uint32_t f = lo; f <= newest; ++f)
    init.insert(velocity_key(f), Eigen::VectorXd(Eigen::VectorXd::Zero(3)));
  init.insert(shared_bias, Eigen::VectorXd(Eigen::VectorXd::Zero(6)));
  init.insert(scale_key(), PositiveScalar{1.0});
  init.insert(gravity_key(), g0);

  try {
    const GraphValues sol = graph.solve_lm(init, cfg_.lm_init);
    out.scale_cov = graph.marginal_covariance(sol, scale_key())(0, 0);
    out.scale = sol.positive(scale_key());
    out.gravity_rot = sol.rotation(gravity_key());
    out.bias = ImuBias::from_vector(sol.vector(shared_bias));
    for (uint32_t f = lo; f <= newest; ++f) out.velocities[f] = sol.vector(velocity_key(f));
    out.passed = out.scale_cov < cfg_.theta_init;
  } catch (const UnobservableError&) {
    out.passed = false;
  } catch (const DivergedError&) {
    out.passed = false;
  }
  return out;
}

GraphValues VioPipeline::pgba_overrides(const CoarseInitResult* coarse) const {
  GraphValues over;
  const uint32_t conn = delayed_.find_first_connected();
  for (uint32_t f : window_) {
    over.insert(pose_key(f), values_.pose(pose_key(f)));
    over.insert(affine_key(f), values_.vector(affine_key(f)));
  }
  for (uint32_t f : delayed_.alive_frames()) {
    if (f < conn) continue;
    Vec3 vel = Vec3::Zero();
    Eigen::Matrix<double, 6, 1> bias = Eigen::Matrix<double, 6, 1>::Zero();
    if (coarse) {
      auto vit = coarse->velocities.find(f);
      if (vit != coarse->velocities.end()) vel = vit->second;
      bias = coarse->bias.vector();
    } else if (values_.has(velocity_key(f))) {
      vel = values_.vector(velocity_key(f));
      bias = values_.vector(bias_key(f));
    } else {
      auto hit = history_.find(f);
      if (hit != history_.end() && hit->second.has_imu_state) {
        vel = hit->second.velocity;
        bias = hit->second.bias.vector();
      }
    }
    over.insert(velocity_key(f), Eigen::VectorXd(vel));
    over.insert(bias_key(f), Eigen::VectorXd(bias));
  }
  if (coarse) {
    over.insert(scale_key(), PositiveScalar{coarse->scale});
    over.insert(gravity_key(), coarse->gravity_rot);
  } else {
    over.insert(scale_key(), PositiveScalar{scale()});
    over.insert(gravity_key(), gravity_rotation());
  }
  return over;
}

PgbaGraph VioPipeline::build_pgba(const CoarseInitResult* coarse) const {
  const GraphValues over = pgba_overrides(coarse);
  PgbaGraph pgba = delayed_.populate_with_imu(
      [this](uint32_t i, uint32_t j) { return make_imu_factor(i, j); },
      [this](uint32_t i, uint32_t j) { return make_bias_factor(i, j); }, over);

  pgba.graph.add(std::make_shared<PriorFactor>(gravity_key(), over.rotation(gravity_key()),
                                               cfg_.gravity_prior_info));
  pgba.graph.add(std::make_shared<PriorFactor>(bias_key(pgba.first_connected),
                                               Eigen::VectorXd(Eigen::VectorXd::Zero(6)),
                                               cfg_.bias_prior_info));
  // Visual gauge anchors: a full pose prior on the oldest alive frame plus a
  // position prior on the newest pin the similarity gauge of the visual
  // blocks, so the scale marginal is the gauge-conditioned quantity. Without
  // the second anchor, rescaling the visual frame about the first camera while
  // compensating the scale variable is a free mode (relative inertial factors
  // cannot see a uniform shift of the metric origin).
  const auto alive = delayed_.alive_frames();
  const uint32_t oldest = alive.front();
  const uint32_t newest = alive.back();
  pgba.graph.add(std::make_shared<PriorFactor>(pose_key(oldest), pgba.values.pose(pose_key(oldest)),
                                               cfg_.pgba_gauge_info));
  if (newest != oldest) {
    pgba.graph.add(std::make_shared<PositionPriorFactor>(
        pose_key(newest), pgba.values.pose(pose_key(newest)).translation(),
        cfg_.pgba_gauge_info));
  }
  pgba.graph.fix_coordinate(gravity_key(), 2);
  return pgba;
}

PgbaResult VioPipeline::pgba_init(const CoarseInitResult& coarse, bool optimize) {
  PgbaResult out;
  try {
    PgbaGraph pgba = build_pgba(coarse.passed ? &coarse : nullptr);

    GraphValues sol = pgba.values;
    if (optimize) {
      sol = pgba.graph.solve_lm(pgba.values, cfg_.lm_init);
      out.scale_cov = pgba.graph.marginal_covariance(sol, scale_key())(0, 0);
    }

    const ReadvanceResult readv = readvance(pgba, sol);
    out.prior = readv.prior;
    out.solution = std::move(sol);
    out.scale = out.solution.positive(scale_key());
    out.gravity_rot = out.solution.rotation(gravity_key());
    out.imu_pairs = pgba.imu_pairs;
    out.success = true;
  } catch (const DivergedError& e) {
    out.success = false;
    out.failure = e.what();
  } catch (const UnobservableError& e) {
    out.success = false;
    out.failure = e.what();
  } catch (const DataGapError& e) {
    out.success = false;
    out.failure = e.what();
  }
  return out;
}

void VioPipeline::install_initializer_result(const PgbaResult& result, bool adopt_values) {
  main_.set_prior(std::make_shared<LinearizedQuadraticFactor>(result.prior));

  auto upsert = [this](const VariableKey& k, StateBlock v) {
    if (values_.has(k))
      values_.update(k, std::move(v));
    else
      values_.insert(k, std::move(v));
  };

  upsert(scale_key(), PositiveScalar{result.scale});
  upsert(gravity_key(), result.gravity_rot);

  for (uint32_t f : window_) {
    if (adopt_values) {
      values_.update(pose_key(f), result.solution.pose(pose_key(f)));
      values_.update(affine_key(f), result.solution.vector(affine_key(f)));
    }
    if (result.solution.has(velocity_key(f))) {
      const bool had = values_.has(velocity_key(f));
      if (adopt_values || !had) {
        upsert(velocity_key(f), Eigen::VectorXd(result.solution.vector(velocity_key(f))));
        upsert(bias_key(f), Eigen::VectorXd(result.solution.vector(bias_key(f))));
      }
      if (!had) {
        main_.add_frame_block(f, velocity_key(f));
        main_.add_frame_block(f, bias_key(f));
      }
    }
  }

  if (!gravity_fixed_) {
    main_.fix_coordinate(gravity_key(), 2);
    main_.add_factor(std::make_shared<PriorFactor>(gravity_key(), result.gravity_rot,
                                                   cfg_.gravity_prior_info));
    gravity_fixed_ = true;
  }

  prior_imu_pairs_ = result.imu_pairs;
  s_fej_ = result.scale;
}

void VioPipeline::run_initializer() {
  if (!cfg_.enable_imu || lost_) return;

  switch (phase_) {
    case InitPhase::NoImu:
    case InitPhase::CoarseReady: {
      if (static_cast<int>(history_.size()) < cfg_.min_keyframes_for_init) return;
      if (delayed_.eliminated_order().empty() && delayed_.pending().empty()) return;
      CoarseInitResult coarse = coarse_imu_init();
      last_scale_cov_ = coarse.scale_cov;
      if (!coarse.passed) return;
      phase_ = InitPhase::CoarseReady;
      PgbaResult pgba = pgba_init(coarse, true);
      if (!pgba.success) return;
      install_initializer_result(pgba, true);
      last_scale_cov_ = pgba.scale_cov;
      last_pgba_frame_ = window_.back();
      phase_ = pgba.scale_cov < cfg_.theta_reinit ? InitPhase::Reinitialized
                                                  : InitPhase::Initialized;
      break;
    }
    case InitPhase::Initialized: {
      // Scheduled reinitialization with the now more accurate estimates.
      if (window_.back() >= last_pgba_frame_ + cfg_.reinit_interval_keyframes) {
        CoarseInitResult none;
        PgbaResult pgba = pgba_init(none, true);
        last_pgba_frame_ = window_.back();
        if (pgba.success) {
          install_initializer_result(pgba, true);
          last_scale_cov_ = pgba.scale_cov;
          phase_ = pgba.scale_cov < cfg_.theta_reinit ? InitPhase::Reinitialized
                                                      : InitPhase::Initialized;
        }
      }
      maybe_replace_marginalization();
      break;
    }
    case InitPhase::Reinitialized:
      maybe_replace_marginalization();
      break;
  }
}

bool VioPipeline::maybe_replace_marginalization() {
  if (phase_ < InitPhase::Initialized || !values_.has(scale_key())) return false;
  const double s = scale();
  const double ds = std::max(s, s_fej_) / std::min(s, s_fej_);
  if (ds <= cfg_.theta_scale_jump) return false;

  CoarseInitResult none;
  PgbaResult rebuilt = pgba_init(none, false);
  if (!rebuilt.success) return false;

  if (!prior_imu_pairs_.empty()) {
    const std::set<std::pair<uint32_t, uint32_t>> now(rebuilt.imu_pairs.begin(),
                                                      rebuilt.imu_pairs.end());
    int kept = 0;
    for (const auto& p : prior_imu_pairs_)
      if (now.count(p)) kept++;
    const double lost =
        1.0 - static_cast<double>(kept) / static_cast<double>(prior_imu_pairs_.size());
    if (lost > cfg_.theta_lost) return false;
  }

  install_initializer_result(rebuilt, false);
  return true;
}

double VioPipeline::total_energy() const {
  double e_photo = 0.0, e_imu = 0.0, e_prior = 0.0;
  for (const auto& entry : main_.entries()) {
    if (!entry.active) continue;
    if (entry.tag.inertial)
      e_imu += entry.factor->energy(values_);
    else if (entry.tag.host_frame)
      e_photo += entry.factor->energy(values_);
    else
      e_prior += entry.factor->energy(values_);
  }
  if (main_.prior() && main_.prior()->dim() > 0) e_prior += main_.prior()->energy(values_);
  return last_weight_ * e_photo + e_imu + e_prior;
}

std::vector<std::pair<double, RigidTransform>> VioPipeline::metric_trajectory() const {
  const double s = scale();
  const Rotation3 g = gravity_rotation();
  std::vector<std::pair<double, RigidTransform>> out;
  out.reserve(history_.size());
  for (const auto& [id, rec] : history_) {
    out.emplace_back(rec.timestamp, omega_transform(rec.pose_v, s, g, cfg_.t_cam_imu));
  }
  return out;
}

std::string PipelineConfig::to_json() const {
  nlohmann::json j;
  j["n_f"] = n_f;
  j["delay"] = delay;
  j["theta_init"] = theta_init;
  j["theta_reinit"] = theta_reinit;
  j["theta_scale_jump"] = theta_scale_jump;
  j["theta_lost"] = theta_lost;
  j["photo_lambda"] = photo_lambda;
  j["photo_theta"] = photo_theta;
  j["huber_knee"] = huber_knee;
  j["min_visibility"] = min_visibility;
  j["min_keyframes_for_init"] = min_keyframes_for_init;
  j["first_pose_info"] = first_pose_info;
  j["affine_prior_info"] = affine_prior_info;
  j["gravity_prior_info"] = gravity_prior_info;
  j["bias_prior_info"] = bias_prior_info;
  j["enable_imu"] = enable_imu;
  j["imu"] = {{"gyro_noise_density", imu.gyro_noise_density},
              {"accel_noise_density", imu.accel_noise_density},
              {"gyro_bias_random_walk", imu.gyro_bias_random_walk},
              {"accel_bias_random_walk", imu.accel_bias_random_walk},
              {"gravity_magnitude", imu.gravity_magnitude}};
  const auto& q = t_cam_imu.rotation().quaternion();
  j["t_cam_imu"] = {{"q", {q.w(), q.x(), q.y(), q.z()}},
                    {"t", {t_cam_imu.translation().x(), t_cam_imu.translation().y(),
                           t_cam_imu.translation().z()}}};
  j["lm_window"] = {{"max_iterations", lm_window.max_iterations}};
  j["lm_init"] = {{"max_iterations", lm_init.max_iterations}};
  return j.dump(1);
}

PipelineConfig PipelineConfig::from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  PipelineConfig c;
  c.n_f = j.value("n_f", c.n_f);
  c.delay = j.value("delay", c.delay);
  c.theta_init = j.value("theta_init", c.theta_init);
  c.theta_reinit = j.value("theta_reinit", c.theta_reinit);
  c.theta_scale_jump = j.value("theta_scale_jump", c.theta_scale_jump);
  c.theta_lost = j.value("theta_lost", c.theta_lost);
  c.photo_lambda = j.value("photo_lambda", c.photo_lambda);
  c.photo_theta = j.value("photo_theta", c.photo_theta);
  c.huber_knee = j.value("huber_knee", c.huber_knee);
  c.min_visibility = j.value("min_visibility", c.min_visibility);
  c.min_keyframes_for_init = j.value("min_keyframes_for_init", c.min_keyframes_for_init);
  c.first_pose_info = j.value("first_pose_info", c.first_pose_info);
  c.affine_prior_info = j.value("affine_prior_info", c.affine_prior_info);
  c.gravity_prior_info = j.value("gravity_prior_info", c.gravity_prior_info);
  c.bias_prior_info = j.value("bias_prior_info", c.bias_prior_info);
  c.enable_imu = j.value("enable_imu", c.enable_imu);
  if (j.contains("imu")) {
    const auto& ji = j.at("imu");
    c.imu.gyro_noise_density = ji.value("gyro_noise_density", c.imu.gyro_noise_density);
    c.imu.accel_noise_density = ji.value("accel_noise_density", c.imu.accel_noise_density);
    c.imu.gyro_bias_random_walk = ji.value("gyro_bias_random_walk", c.imu.gyro_bias_random_walk);
    c.imu.accel_bias_random_walk =
        ji.value("accel_bias_random_walk", c.imu.accel_bias_random_walk);
    c.imu.gravity_magnitude = ji.value("gravity_magnitude", c.imu.gravity_magnitude);
  }
  if (j.contains("t_cam_imu")) {
    const auto& jt = j.at("t_cam_imu");
    const auto& q = jt.at("q");
    const auto& t = jt.at("t");
    c.t_cam_imu = RigidTransform(Rotation3(Eigen::Quaterniond(q[0], q[1], q[2], q[3])),
                                 Vec3(t[0], t[1], t[2]));
  }
  if (j.contains("lm_window"))
    c.lm_window.max_iterations = j.at("lm_window").value("max_iterations", 50);
  if (j.contains("lm_init")) c.lm_init.max_iterations = j.at("lm_init").value("max_iterations", 50);
  return c;
}

}  // namespace vifg
