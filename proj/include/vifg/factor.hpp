#pragma once

#include <map>
#include <memory>
#include <vector>

#include "vifg/values.hpp"

namespace vifg {

/// Dense symmetric system H x = b over an ordered set of variable blocks.
struct LinearSystem {
  std::vector<VariableKey> order;
  Eigen::MatrixXd H;
  Eigen::VectorXd b;

  static LinearSystem zeros(const std::vector<VariableKey>& order);

  int dim() const { return static_cast<int>(H.rows()); }
  bool has(const VariableKey& key) const { return offsets_.count(key) > 0; }
  int offset(const VariableKey& key) const;

 private:
  std::map<VariableKey, int> offsets_;
};

/// One energy term of the optimization problem.
///
/// Two energy conventions coexist, matching how the terms are written:
/// measurement factors report energy() = r^T W r (robust norm applied where
/// configured) while quadratic priors report .5 d^T H d - b^T d. The internal
/// objective() used by the optimizer is .5 * energy for measurement factors and
/// exactly the quadratic form for priors, which makes a prior an exact
/// replacement for the factors it absorbed.
class Factor {
 public:
  virtual ~Factor() = default;

  virtual const std::vector<VariableKey>& keys() const = 0;

  /// Reported energy contribution (paper-facing convention).
  virtual double energy(const GraphValues& values) const = 0;
  /// Optimizer objective contribution.
  virtual double objective(const GraphValues& values) const = 0;
  /// Add this factor's H and b contribution (b = -gradient) into the system.
  virtual void accumulate(const GraphValues& values, LinearSystem& sys) const = 0;

  /// Multiplier applied to this factor's objective and system contribution
  /// (the dynamic photometric weight is set here, held fixed within a solve).
  double group_weight = 1.0;
};

/// Factor defined by a residual with analytic Jacobians. Whitening via a
/// square-root information matrix, optional IRLS row weights for robust norms.
class MeasurementFactor : public Factor {
 public:
  virtual int residual_dim() const = 0;
  /// Raw (unwhitened) residual.
  virtual Eigen::VectorXd residual(const GraphValues& values) const = 0;
  /// Raw Jacobians d r / d tangent, one block per key in keys() order.
  virtual void jacobians(const GraphValues& values, std::vector<Eigen::MatrixXd>& jac) const = 0;
  /// Square root L of the information matrix (whitened residual = L r).
  virtual Eigen::MatrixXd sqrt_information(const GraphValues& values) const;
  /// Per-row robust reweighting evaluated on the raw residual. Default: ones.
  virtual Eigen::VectorXd irls_row_weights(const Eigen::VectorXd& raw_residual) const;

  double energy(const GraphValues& values) const override;
  double objective(const GraphValues& values) const override;
  void accumulate(const GraphValues& values, LinearSystem& sys) const override;

 protected:
  /// Shared accumulation loop: H += J^T W J, b -= J^T W r (W already scaled).
  static void accumulate_blocks(LinearSystem& sys, const std::vector<VariableKey>& keys,
                                const std::vector<Eigen::MatrixXd>& jac, const Eigen::MatrixXd& W,
                                const Eigen::VectorXd& r);
};

/// Unary prior r = x [-] x0 with given square-root information.
class PriorFactor : public MeasurementFactor {
 public:
  PriorFactor(const VariableKey& key, StateBlock mean, Eigen::MatrixXd sqrt_info);
  /// Isotropic prior with information = info * I.
  PriorFactor(const VariableKey& key, StateBlock mean, double info);

  const std::vector<VariableKey>& keys() const override { return keys_; }
  int residual_dim() const override { return dim_; }
  Eigen::VectorXd residual(const GraphValues& values) const override;
  void jacobians(const GraphValues& values, std::vector<Eigen::MatrixXd>& jac) const override;
  Eigen::MatrixXd sqrt_information(const GraphValues&) const override { return sqrt_info_; }

 private:
  std::vector<VariableKey> keys_;
  StateBlock mean_;
  Eigen::MatrixXd sqrt_info_;
  int dim_;
};

/// Quadratic energy .5 d^T H d - b^T d with d = values [-] fej_values, taken over
/// a fixed ordered key set. Serves as the marginalization prior and as the
/// linearized photometric factors kept in the delayed graph. Jacobians are the
/// first-estimates ones: the linearization point never moves off fej_values.
class LinearizedQuadraticFactor : public Factor {
 public:
  LinearizedQuadraticFactor() = default;
  LinearizedQuadraticFactor(std::vector<VariableKey> key_order, Eigen::MatrixXd H,
                            Eigen::VectorXd b, GraphValues fej, double constant = 0.0);

  const std::vector<VariableKey>& keys() const override { return keys_; }
  double energy(const GraphValues& values) const override;
  double objective(const GraphValues& values) const override { return energy(values); }
  void accumulate(const GraphValues& values, LinearSystem& sys) const override;

  const Eigen::MatrixXd& hessian() const { return H_; }
  const Eigen::VectorXd& rhs() const { return b_; }
  const GraphValues& fej_values() const { return fej_; }
  int dim() const { return static_cast<int>(H_.rows()); }

  /// Constant objective contribution carried through eliminations so that the
  /// reduced system reproduces the folded factors' objective exactly. Not part
  /// of energy(); it never influences the optimizer.
  double constant_offset() const { return constant_; }
  double energy_with_offset(const GraphValues& values) const { return energy(values) + constant_; }

  /// Tangent offset of the given key inside H/b.
  int offset(const VariableKey& key) const;

 private:
  Eigen::VectorXd delta(const GraphValues& values) const;

  std::vector<VariableKey> keys_;
  Eigen::MatrixXd H_;
  Eigen::VectorXd b_;
  GraphValues fej_;
  double constant_ = 0.0;
};

/// The marginalization prior is exactly a linearized quadratic factor over the
/// Markov blanket of everything eliminated so far.
using MarginalizationPrior = LinearizedQuadraticFactor;

}  // namespace vifg
