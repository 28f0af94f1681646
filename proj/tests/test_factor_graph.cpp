#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "test_support.hpp"

using namespace vifg;
namespace tt = vifg::testing;

namespace {

// r = x - x0 on an n-vector, weight W = I.
struct LinearFactor : MeasurementFactor {
  LinearFactor(VariableKey key, Eigen::VectorXd target) : keys_{key}, target_(std::move(target)) {}
  const std::vector<VariableKey>& keys() const override { return keys_; }
  int residual_dim() const override { return static_cast<int>(target_.size()); }
  Eigen::VectorXd residual(const GraphValues& v) const override {
    return v.vector(keys_[0]) - target_;
  }
  void jacobians(const GraphValues&, std::vector<Eigen::MatrixXd>& jac) const override {
    jac.assign(1, Eigen::MatrixXd::Identity(residual_dim(), residual_dim()));
  }
  std::vector<VariableKey> keys_;
  Eigen::VectorXd target_;
};

// Rosenbrock split into two residual terms over two scalar blocks:
// r1 = 10 (y - x^2), r2 = 1 - x. Minimum at (1, 1).
struct RosenbrockFactor : MeasurementFactor {
  RosenbrockFactor(VariableKey x, VariableKey y) : keys_{x, y} {}
  const std::vector<VariableKey>& keys() const override { return keys_; }
  int residual_dim() const override { return 2; }
  Eigen::VectorXd residual(const GraphValues& v) const override {
    const double x = v.scalar(keys_[0]), y = v.scalar(keys_[1]);
    Eigen::VectorXd r(2);
    r << 10.0 * (y - x * x), 1.0 - x;
    return r;
  }
  void jacobians(const GraphValues& v, std::vector<Eigen::MatrixXd>& jac) const override {
    const double x = v.scalar(keys_[0]);
    jac.assign(2, Eigen::MatrixXd(2, 1));
    jac[0] << -20.0 * x, -1.0;
    jac[1] << 10.0, 0.0;
  }
  std::vector<VariableKey> keys_;
};

// Nonlinear binary factor mixing a pose and a vector block, for FD checks.
struct PoseVectorFactor : MeasurementFactor {
  PoseVectorFactor(VariableKey pose, VariableKey vec, Vec3 anchor)
      : keys_{pose, vec}, anchor_(std::move(anchor)) {}
  const std::vector<VariableKey>& keys() const override { return keys_; }
  int residual_dim() const override { return 3; }
  Eigen::VectorXd residual(const GraphValues& v) const override {
    const RigidTransform& t = v.pose(keys_[0]);
    return t * anchor_ - v.vector(keys_[1]);
  }
  void jacobians(const GraphValues& v, std::vector<Eigen::MatrixXd>& jac) const override {
    const RigidTransform& t = v.pose(keys_[0]);
    jac.assign(2, Eigen::MatrixXd());
    jac[0] = Eigen::MatrixXd(3, 6);
    jac[0].leftCols<3>() = -skew(t.rotation() * anchor_);
    jac[0].rightCols<3>() = Mat3::Identity();
    jac[1] = -Mat3::Identity();
  }
  std::vector<VariableKey> keys_;
  Vec3 anchor_;
};

GraphValues vec_values(std::initializer_list<std::pair<VariableKey, Eigen::VectorXd>> init) {
  GraphValues v;
  for (const auto& [k, b] : init) v.insert(k, b);
  return v;
}

}  // namespace

TEST_CASE("linearize: empty graph is a zero system") {
  FactorGraph g;
  const LinearSystem sys = g.linearize(GraphValues(), {});
  CHECK(sys.dim() == 0);
}

TEST_CASE("linearize: single unary prior gives H=I, b=-(x-x0)") {
  const VariableKey key = velocity_key(0);
  FactorGraph g;
  g.add(std::make_shared<LinearFactor>(key, Eigen::VectorXd(Vec3(1.0, 2.0, 3.0))));
  GraphValues v = vec_values({{key, Eigen::VectorXd(Vec3(1.5, 2.0, 2.0))}});
  const LinearSystem sys = g.linearize(v);
  CHECK((sys.H - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((sys.b - Vec3(-0.5, 0.0, 1.0)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("linearize matches finite-difference jacobians on a random graph") {
  const VariableKey p0 = pose_key(0), w0 = velocity_key(0), w1 = velocity_key(1);
  GraphValues v;
  v.insert(p0, tt::random_pose());
  v.insert(w0, Eigen::VectorXd(tt::random_vec3(2.0)));
  v.insert(w1, Eigen::VectorXd(tt::random_vec3(2.0)));

  FactorGraph g;
  g.add(std::make_shared<PoseVectorFactor>(p0, w0, tt::random_vec3(1.0)));
  g.add(std::make_shared<PoseVectorFactor>(p0, w1, tt::random_vec3(1.0)));
  g.add(std::make_shared<LinearFactor>(w0, Eigen::VectorXd(tt::random_vec3(1.0))));

  // Oracle: H = sum J^T J and b = -sum J^T r from finite-difference Jacobians.
  const std::vector<VariableKey> order = g.variable_order();
  LinearSystem oracle = LinearSystem::zeros(order);
  for (const auto& f : g.factors()) {
    const auto* mf = dynamic_cast<const MeasurementFactor*>(f.get());
    const Eigen::VectorXd r = mf->residual(v);
    std::vector<Eigen::MatrixXd> J;
    for (const auto& k : mf->keys()) J.push_back(tt::fd_jacobian(*mf, v, k));
    for (size_t i = 0; i < mf->keys().size(); ++i) {
      const int oi = oracle.offset(mf->keys()[i]);
      oracle.b.segment(oi, J[i].cols()) -= J[i].transpose() * r;
      for (size_t jdx = 0; jdx < mf->keys().size(); ++jdx) {
        const int oj = oracle.offset(mf->keys()[jdx]);
        oracle.H.block(oi, oj, J[i].cols(), J[jdx].cols()) += J[i].transpose() * J[jdx];
      }
    }
  }
  const LinearSystem sys = g.linearize(v);
  const double scale = std::max(1.0, oracle.H.cwiseAbs().maxCoeff());
  CHECK((sys.H - oracle.H).cwiseAbs().maxCoeff() / scale < 1e-5);
  CHECK((sys.b - oracle.b).cwiseAbs().maxCoeff() / scale < 1e-5);
  CHECK((sys.H - sys.H.transpose()).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("linearize is deterministic (bit-identical)") {
  const VariableKey p0 = pose_key(0), w0 = velocity_key(0);
  GraphValues v;
  v.insert(p0, tt::random_pose());
  v.insert(w0, Eigen::VectorXd(tt::random_vec3(2.0)));
  FactorGraph g;
  g.add(std::make_shared<PoseVectorFactor>(p0, w0, tt::random_vec3(1.0)));
  g.add(std::make_shared<LinearFactor>(w0, Eigen::VectorXd(tt::random_vec3(1.0))));
  const LinearSystem a = g.linearize(v);
  const LinearSystem b = g.linearize(v);
  CHECK(a.H == b.H);
  CHECK(a.b == b.b);
}

TEST_CASE("solve_lm: quadratic problem reaches the optimum within 3 iterations") {
  const VariableKey key = velocity_key(0);
  FactorGraph g;
  const Vec3 target(3.0, -1.0, 0.5);
  g.add(std::make_shared<LinearFactor>(key, Eigen::VectorXd(target)));
  LMConfig cfg;
  cfg.max_iterations = 3;
  const GraphValues sol = g.solve_lm(vec_values({{key, Eigen::VectorXd(Vec3::Zero())}}), cfg);
  CHECK((sol.vector(key) - target).norm() < 1e-8);
}

TEST_CASE("solve_lm: rosenbrock reaches (1,1)") {
  const VariableKey x = depth_key(0), y = depth_key(1);
  GraphValues init;
  init.insert(x, -1.2);
  init.insert(y, 1.0);
  FactorGraph g;
  g.add(std::make_shared<RosenbrockFactor>(x, y));
  LMConfig cfg;
  cfg.max_iterations = 200;
  const GraphValues sol = g.solve_lm(init, cfg);
  CHECK(sol.scalar(x) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(sol.scalar(y) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("solve_lm: graph already at optimum returns unchanged values") {
  const VariableKey key = velocity_key(0);
  const Vec3 target(3.0, -1.0, 0.5);
  FactorGraph g;
  g.add(std::make_shared<LinearFactor>(key, Eigen::VectorXd(target)));
  const GraphValues at_opt = vec_values({{key, Eigen::VectorXd(target)}});
  LMStats stats;
  const GraphValues sol = g.solve_lm(at_opt, LMConfig{}, &stats);
  CHECK(sol.vector(key) == target);  // bit-identical: zero step is not applied
  CHECK(stats.converged);
}

TEST_CASE("solve_lm: accepted steps never increase the objective") {
  const VariableKey p0 = pose_key(0), w0 = velocity_key(0);
  for (int trial = 0; trial < 20; ++trial) {
    GraphValues v;
    v.insert(p0, tt::random_pose());
    v.insert(w0, Eigen::VectorXd(tt::random_vec3(2.0)));
    FactorGraph g;
    g.add(std::make_shared<PoseVectorFactor>(p0, w0, tt::random_vec3(1.0)));
    g.add(std::make_shared<LinearFactor>(w0, Eigen::VectorXd(tt::random_vec3(1.0))));

    LMStats stats;
    stats.record_steps = true;
    GraphValues running = v;
    const GraphValues sol = g.solve_lm(v, LMConfig{}, &stats);
    double prev = g.objective(v);
    const std::vector<VariableKey> order = g.variable_order();
    for (const auto& step : stats.applied_steps) {
      running = running.boxplus(order, step);
      const double next = g.objective(running);
      CHECK(next <= prev + 1e-12);
      prev = next;
    }
    CHECK(g.objective(sol) <= g.objective(v));
  }
}

TEST_CASE("solve_lm: empty graph is a structural error") {
  FactorGraph g;
  CHECK_THROWS_AS(g.solve_lm(GraphValues{}), StructuralError);
}

TEST_CASE("marginal covariance: scalar prior with information w") {
  const VariableKey key = depth_key(0);
  struct ScalarPrior : MeasurementFactor {
    explicit ScalarPrior(VariableKey k) : keys_{k} {}
    const std::vector<VariableKey>& keys() const override { return keys_; }
    int residual_dim() const override { return 1; }
    Eigen::VectorXd residual(const GraphValues& v) const override {
      return Eigen::VectorXd::Constant(1, v.scalar(keys_[0]) - 2.0);
    }
    void jacobians(const GraphValues&, std::vector<Eigen::MatrixXd>& jac) const override {
      jac.assign(1, Eigen::MatrixXd::Identity(1, 1));
    }
    Eigen::MatrixXd sqrt_information(const GraphValues&) const override {
      return Eigen::MatrixXd::Constant(1, 1, std::sqrt(4.0));  // information w = 4
    }
    std::vector<VariableKey> keys_;
  };
  FactorGraph g;
  g.add(std::make_shared<ScalarPrior>(key));
  GraphValues v;
  v.insert(key, 2.0);
  CHECK(g.marginal_covariance(v, key)(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("marginal covariance: independent blocks invert block-diagonally") {
  const VariableKey a = velocity_key(0), b = velocity_key(1);
  FactorGraph g;
  g.add(std::make_shared<LinearFactor>(a, Eigen::VectorXd(Vec3::Zero())));
  g.add(std::make_shared<LinearFactor>(b, Eigen::VectorXd(Vec3::Zero())));
  g.add(std::make_shared<LinearFactor>(b, Eigen::VectorXd(Vec3::Zero())));  // information 2 I
  GraphValues v = vec_values({{a, Eigen::VectorXd(tt::random_vec3())},
                              {b, Eigen::VectorXd(tt::random_vec3())}});
  CHECK((g.marginal_covariance(v, a) - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((g.marginal_covariance(v, b) - 0.5 * Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("marginal covariance: chained gaussian matches dense inversion oracle") {
  // x0 -- x1 -- x2 chain of relative factors plus one anchor.
  struct RelFactor : MeasurementFactor {
    RelFactor(VariableKey a, VariableKey b, double w) : keys_{a, b}, w_(w) {}
    const std::vector<VariableKey>& keys() const override { return keys_; }
    int residual_dim() const override { return 3; }
    Eigen::VectorXd residual(const GraphValues& v) const override {
      return v.vector(keys_[1]) - v.vector(keys_[0]);
    }
    void jacobians(const GraphValues&, std::vector<Eigen::MatrixXd>& jac) const override {
      jac.assign(2, Eigen::MatrixXd());
      jac[0] = -Mat3::Identity();
      jac[1] = Mat3::Identity();
    }
    Eigen::MatrixXd sqrt_information(const GraphValues&) const override {
      return std::sqrt(w_) * Mat3::Identity();
    }
    std::vector<VariableKey> keys_;
    double w_;
  };
  const VariableKey x0 = velocity_key(0), x1 = velocity_key(1), x2 = velocity_key(2);
  FactorGraph g;
  g.add(std::make_shared<LinearFactor>(x0, Eigen::VectorXd(Vec3::Zero())));
  g.add(std::make_shared<RelFactor>(x0, x1, 2.0));
  g.add(std::make_shared<RelFactor>(x1, x2, 3.0));
  GraphValues v = vec_values({{x0, Eigen::VectorXd(Vec3::Zero())},
                              {x1, Eigen::VectorXd(Vec3::Zero())},
                              {x2, Eigen::VectorXd(Vec3::Zero())}});
  const LinearSystem sys = g.linearize(v);
  const Eigen::MatrixXd dense_inverse = sys.H.inverse();
  for (const auto& key : {x0, x1, x2}) {
    const int o = sys.offset(key);
    CHECK((g.marginal_covariance(v, key) - dense_inverse.block(o, o, 3, 3))
              .cwiseAbs()
              .maxCoeff() < 1e-9);
  }
}

TEST_CASE("marginal covariance: singular system reports unobservable") {
  // A relative factor alone leaves the absolute values unconstrained.
  struct RelFactor : MeasurementFactor {
    RelFactor(VariableKey a, VariableKey b) : keys_{a, b} {}
    const std::vector<VariableKey>& keys() const override { return keys_; }
    int residual_dim() const override { return 3; }
    Eigen::VectorXd residual(const GraphValues& v) const override {
      return v.vector(keys_[1]) - v.vector(keys_[0]);
    }
    void jacobians(const GraphValues&, std::vector<Eigen::MatrixXd>& jac) const override {
      jac.assign(2, Eigen::MatrixXd());
      jac[0] = -Mat3::Identity();
      jac[1] = Mat3::Identity();
    }
    std::vector<VariableKey> keys_;
  };
  FactorGraph g;
  g.add(std::make_shared<RelFactor>(velocity_key(0), velocity_key(1)));
  GraphValues v = vec_values({{velocity_key(0), Eigen::VectorXd(Vec3::Zero())},
                              {velocity_key(1), Eigen::VectorXd(Vec3::Zero())}});
  CHECK_THROWS_AS(g.marginal_covariance(v, velocity_key(0)), UnobservableError);
}

TEST_CASE("fixed coordinates are never stepped") {
  const VariableKey key = gravity_key();
  GraphValues v;
  v.insert(key, tt::random_rotation(0.3));
  struct RotPrior : MeasurementFactor {
    explicit RotPrior(VariableKey k, Rotation3 target) : keys_{k}, target_(std::move(target)) {}
    const std::vector<VariableKey>& keys() const override { return keys_; }
    int residual_dim() const override { return 3; }
    Eigen::VectorXd residual(const GraphValues& v) const override {
      return v.rotation(keys_[0]).boxminus(target_);
    }
    void jacobians(const GraphValues& v, std::vector<Eigen::MatrixXd>& jac) const override {
      jac.assign(1, so3_left_jacobian_inverse(v.rotation(keys_[0]).boxminus(target_)));
    }
    std::vector<VariableKey> keys_;
    Rotation3 target_;
  };
  FactorGraph g;
  g.add(std::make_shared<RotPrior>(key, tt::random_rotation(0.3)));
  g.fix_coordinate(key, 2);
  LMStats stats;
  stats.record_steps = true;
  g.solve_lm(v, LMConfig{}, &stats);
  CHECK(!stats.applied_steps.empty());
  for (const auto& step : stats.applied_steps) CHECK(step[2] == 0.0);
}

TEST_CASE("prior factor jacobians match finite differences on manifold blocks") {
  for (int i = 0; i < 100; ++i) {
    const PriorFactor pose_prior(pose_key(0), tt::random_pose(), 2.0);
    GraphValues v;
    v.insert(pose_key(0), tt::random_pose());
    CHECK(tt::max_jacobian_error(pose_prior, v) < 1e-5);

    const PriorFactor rot_prior(gravity_key(), tt::random_rotation(1.0), 3.0);
    GraphValues vr;
    vr.insert(gravity_key(), tt::random_rotation(1.0));
    CHECK(tt::max_jacobian_error(rot_prior, vr) < 1e-5);
  }
}
