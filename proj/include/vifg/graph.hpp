#pragma once

#include <optional>
#include <set>

#include "vifg/factor.hpp"

namespace vifg {

struct LMConfig {
  double lambda0 = 1e-4;
  double* lambda_warm_start = nullptr;  // optional: reuse/persist lambda across solves
  double lambda_up = 2.0;
  double lambda_down = 0.5;
  double lambda_max = 1e12;
  int max_iterations = 50;
  double rel_decrease_tol = 1e-6;
  double step_norm_tol = 1e-8;
};

struct LMStats {
  int iterations = 0;
  int rejected_steps = 0;
  double initial_objective = 0.0;
  double final_objective = 0.0;
  bool converged = false;
  std::vector<VariableKey> order;              // block layout the solve used
  std::vector<Eigen::VectorXd> applied_steps;  // filled when record_steps is set
  bool record_steps = false;
};

/// Nonlinear least-squares factor graph with Levenberg-Marquardt solving.
/// Single writer; read-only sharing is safe.
class FactorGraph {
 public:
  size_t add(std::shared_ptr<const Factor> factor);
  const std::vector<std::shared_ptr<const Factor>>& factors() const { return factors_; }
  size_t size() const { return factors_.size(); }

  /// Fix one tangent coordinate of a variable (gauge fixing, e.g. the yaw
  /// coordinate of the gravity rotation). The solver never steps it.
  void fix_coordinate(const VariableKey& key, int coord);
  const std::set<std::pair<VariableKey, int>>& fixed_coordinates() const { return fixed_; }

  /// Keys referenced by any factor, in key order (deterministic layout).
  std::vector<VariableKey> variable_order() const;

  /// H = sum J^T W J, b = -sum J^T W r, assembled in factor insertion order.
  /// Fixed coordinates are cleared to an identity row/column.
  LinearSystem linearize(const GraphValues& values) const;
  LinearSystem linearize(const GraphValues& values, const std::vector<VariableKey>& order) const;

  double energy(const GraphValues& values) const;
  double objective(const GraphValues& values) const;

  /// Levenberg-Marquardt with multiplicative damping. Accepted steps never
  /// increase the objective. Throws DivergedError when no step can be accepted
  /// even at maximum damping.
  GraphValues solve_lm(const GraphValues& initial, const LMConfig& config = {},
                       LMStats* stats = nullptr) const;

  /// Diagonal block of H^-1 for one variable. Throws UnobservableError when
  /// the system is singular.
  Eigen::MatrixXd marginal_covariance(const GraphValues& values, const VariableKey& key) const;

 private:
  void apply_fixed(LinearSystem& sys) const;

  std::vector<std::shared_ptr<const Factor>> factors_;
  std::set<std::pair<VariableKey, int>> fixed_;
};

}  // namespace vifg
