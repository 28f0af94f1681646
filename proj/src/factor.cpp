#include "vifg/factor.hpp"

#include <cmath>

namespace vifg {

LinearSystem LinearSystem::zeros(const std::vector<VariableKey>& order) {
  LinearSystem sys;
  sys.order = order;
  int n = 0;
  for (const auto& key : order) {
    if (!sys.offsets_.emplace(key, n).second)
      throw StructuralError("linear system: duplicate key " + to_string(key));
    n += tangent_dim(key);
  }
  sys.H = Eigen::MatrixXd::Zero(n, n);
  sys.b = Eigen::VectorXd::Zero(n);
  return sys;
}

int LinearSystem::offset(const VariableKey& key) const {
  auto it = offsets_.find(key);
  if (it == offsets_.end()) throw StructuralError("linear system: missing key " + to_string(key));
  return it->second;
}

Eigen::MatrixXd MeasurementFactor::sqrt_information(const GraphValues&) const {
  return Eigen::MatrixXd::Identity(residual_dim(), residual_dim());
}

Eigen::VectorXd MeasurementFactor::irls_row_weights(const Eigen::VectorXd& raw) const {
  return Eigen::VectorXd::Ones(raw.size());
}

double MeasurementFactor::energy(const GraphValues& values) const {
  const Eigen::VectorXd r = residual(values);
  const Eigen::MatrixXd L = sqrt_information(values);
  const Eigen::VectorXd rw = L * r;
  return rw.squaredNorm();
}

double MeasurementFactor::objective(const GraphValues& values) const {
  return 0.5 * group_weight * energy(values);
}

void MeasurementFactor::accumulate_blocks(LinearSystem& sys, const std::vector<VariableKey>& keys,
                                          const std::vector<Eigen::MatrixXd>& jac,
                                          const Eigen::MatrixXd& W, const Eigen::VectorXd& r) {
  if (jac.size() != keys.size()) throw StructuralError("factor: jacobian count mismatch");
  const Eigen::VectorXd Wr = W * r;
  for (size_t i = 0; i < keys.size(); ++i) {
    const int oi = sys.offset(keys[i]);
    const int di = tangent_dim(keys[i]);
    const Eigen::MatrixXd JiTW = jac[i].transpose() * W;
    sys.b.segment(oi, di) -= jac[i].transpose() * Wr;
    for (size_t j = i; j < keys.size(); ++j) {
      const int oj = sys.offset(keys[j]);
      const int dj = tangent_dim(keys[j]);
      const Eigen::MatrixXd Hij = JiTW * jac[j];
      sys.H.block(oi, oj, di, dj) += Hij;
      if (j != i) sys.H.block(oj, oi, dj, di) += Hij.transpose();
    }
  }
}

void MeasurementFactor::accumulate(const GraphValues& values, LinearSystem& sys) const {
  const Eigen::VectorXd r = residual(values);
  std::vector<Eigen::MatrixXd> jac;
  jacobians(values, jac);

  const Eigen::MatrixXd L = sqrt_information(values);
  const Eigen::VectorXd w = irls_row_weights(r);
  // W = gw * L^T diag(w) L
  Eigen::MatrixXd W = L.transpose() * w.asDiagonal() * L;
  W *= group_weight;
  accumulate_blocks(sys, keys(), jac, W, r);
}

PriorFactor::PriorFactor(const VariableKey& key, StateBlock mean, Eigen::MatrixXd sqrt_info)
    : keys_{key}, mean_(std::move(mean)), sqrt_info_(std::move(sqrt_info)) {
  dim_ = block_dim(mean_);
  if (dim_ != tangent_dim(key)) throw StructuralError("prior: mean dim mismatch");
  if (sqrt_info_.rows() != dim_ || sqrt_info_.cols() != dim_)
    throw StructuralError("prior: sqrt info dim mismatch");
}

static Eigen::MatrixXd isotropic_sqrt_info(const StateBlock& mean, double info) {
  const int n = block_dim(mean);
  return std::sqrt(info) * Eigen::MatrixXd::Identity(n, n);
}

PriorFactor::PriorFactor(const VariableKey& key, StateBlock mean, double info)
    : PriorFactor(key, mean, isotropic_sqrt_info(mean, info)) {}

Eigen::VectorXd PriorFactor::residual(const GraphValues& values) const {
  return block_boxminus(values.at(keys_[0]), mean_);
}

void PriorFactor::jacobians(const GraphValues& values, std::vector<Eigen::MatrixXd>& jac) const {
  // d(x [-] x0)/dx: identity for vector parts, inverse left Jacobian at the
  // current offset for rotation parts.
  const StateBlock& x = values.at(keys_[0]);
  Eigen::MatrixXd J = Eigen::MatrixXd::Identity(dim_, dim_);
  if (const auto* rot = std::get_if<Rotation3>(&x)) {
    J = so3_left_jacobian_inverse(rot->boxminus(std::get<Rotation3>(mean_)));
  } else if (const auto* pose = std::get_if<RigidTransform>(&x)) {
    J.topLeftCorner<3, 3>() =
        so3_left_jacobian_inverse(pose->rotation().boxminus(std::get<RigidTransform>(mean_).rotation()));
  }
  jac.assign(1, J);
}

LinearizedQuadraticFactor::LinearizedQuadraticFactor(std::vector<VariableKey> key_order,
                                                     Eigen::MatrixXd H, Eigen::VectorXd b,
                                                     GraphValues fej, double constant)
    : keys_(std::move(key_order)),
      H_(std::move(H)),
      b_(std::move(b)),
      fej_(std::move(fej)),
      constant_(constant) {
  int n = 0;
  for (const auto& k : keys_) n += tangent_dim(k);
  if (H_.rows() != n || H_.cols() != n || b_.size() != n)
    throw StructuralError("quadratic factor: dimension mismatch");
  for (const auto& k : keys_)
    if (!fej_.has(k)) throw StructuralError("quadratic factor: fej missing " + to_string(k));
}

int LinearizedQuadraticFactor::offset(const VariableKey& key) const {
  int off = 0;
  for (const auto& k : keys_) {
    if (k == key) return off;
    off += tangent_dim(k);
  }
  throw StructuralError("quadratic factor: missing key " + to_string(key));
}

Eigen::VectorXd LinearizedQuadraticFactor::delta(const GraphValues& values) const {
  Eigen::VectorXd d(H_.rows());
  int off = 0;
  for (const auto& k : keys_) {
    const Eigen::VectorXd dk = block_boxminus(values.at(k), fej_.at(k));
    d.segment(off, dk.size()) = dk;
    off += static_cast<int>(dk.size());
  }
  return d;
}

double LinearizedQuadraticFactor::energy(const GraphValues& values) const {
  const Eigen::VectorXd d = delta(values);
  return 0.5 * d.dot(H_ * d) - b_.dot(d);
}

void LinearizedQuadraticFactor::accumulate(const GraphValues& values, LinearSystem& sys) const {
  const Eigen::VectorXd d = delta(values);
  const Eigen::VectorXd g = b_ - H_ * d;  // -gradient at current values
  int off_i = 0;
  for (const auto& ki : keys_) {
    const int di = tangent_dim(ki);
    const int oi = sys.offset(ki);
    sys.b.segment(oi, di) += g.segment(off_i, di);
    int off_j = 0;
    for (const auto& kj : keys_) {
      const int dj = tangent_dim(kj);
      sys.H.block(oi, sys.offset(kj), di, dj) += H_.block(off_i, off_j, di, dj);
      off_j += dj;
    }
    off_i += di;
  }
}

}  // namespace vifg
