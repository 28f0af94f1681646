#include "vifg/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace vifg {

size_t FactorGraph::add(std::shared_ptr<const Factor> factor) {
  if (!factor) throw StructuralError("graph: null factor");
  factors_.push_back(std::move(factor));
  return factors_.size() - 1;
}

void FactorGraph::fix_coordinate(const VariableKey& key, int coord) {
  if (coord < 0 || coord >= tangent_dim(key)) throw StructuralError("fix_coordinate: bad coord");
  fixed_.insert({key, coord});
}

std::vector<VariableKey> FactorGraph::variable_order() const {
  std::set<VariableKey> keys;
  for (const auto& f : factors_)
    for (const auto& k : f->keys()) keys.insert(k);
  return {keys.begin(), keys.end()};
}

void FactorGraph::apply_fixed(LinearSystem& sys) const {
  for (const auto& [key, coord] : fixed_) {
    if (!sys.has(key)) continue;
    const int i = sys.offset(key) + coord;
    sys.H.row(i).setZero();
    sys.H.col(i).setZero();
    sys.H(i, i) = 1.0;
    sys.b[i] = 0.0;
  }
}

LinearSystem FactorGraph::linearize(const GraphValues& values) const {
  return linearize(values, variable_order());
}

LinearSystem FactorGraph::linearize(const GraphValues& values,
                                    const std::vector<VariableKey>& order) const {
  LinearSystem sys = LinearSystem::zeros(order);
  for (const auto& f : factors_) f->accumulate(values, sys);
  apply_fixed(sys);
  return sys;
}

double FactorGraph::energy(const GraphValues& values) const {
  double e = 0.0;
  for (const auto& f : factors_) e += f->energy(values);
  return e;
}

double FactorGraph::objective(const GraphValues& values) const {
  double e = 0.0;
  for (const auto& f : factors_) e += f->objective(values);
  return e;
}

GraphValues FactorGraph::solve_lm(const GraphValues& initial, const LMConfig& config,
                                  LMStats* stats) const {
  if (factors_.empty()) throw StructuralError("solve_lm: empty graph");

  const std::vector<VariableKey> order = variable_order();
  GraphValues values = initial;
  double current = objective(values);

  LMStats local;
  LMStats& st = stats ? *stats : local;
  st.order = order;
  st.initial_objective = current;
  double lambda = config.lambda_warm_start && *config.lambda_warm_start > 0
                      ? *config.lambda_warm_start
                      : config.lambda0;
  bool any_accepted = false;
  struct LambdaSaver {
    double* slot;
    double* value;
    ~LambdaSaver() {
      if (slot) *slot = *value;
    }
  } saver{config.lambda_warm_start, &lambda};

  for (int iter = 0; iter < config.max_iterations; ++iter) {
    st.iterations = iter + 1;
    LinearSystem sys = linearize(values, order);

    bool accepted = false;
    while (!accepted) {
      Eigen::MatrixXd damped = sys.H;
      damped.diagonal() += (lambda * sys.H.diagonal().cwiseMax(1.0)).eval();
      Eigen::LDLT<Eigen::MatrixXd> ldlt(damped);
      if (ldlt.info() == Eigen::Success) {
        const Eigen::VectorXd delta = ldlt.solve(sys.b);
        if (delta.allFinite()) {
          if (delta.norm() < config.step_norm_tol) {
            st.final_objective = current;
            st.converged = true;
            return values;
          }
          const GraphValues candidate = values.boxplus(order, delta);
          const double next = objective(candidate);
          if (std::isfinite(next) && next <= current) {
            values = candidate;
            if (st.record_steps) st.applied_steps.push_back(delta);
            lambda = std::max(lambda * config.lambda_down, 1e-12);
            const double decrease = current - next;
            current = next;
            accepted = true;
            any_accepted = true;
            if (decrease < config.rel_decrease_tol * std::max(current, 1e-300)) {
              st.final_objective = current;
              st.converged = true;
              return values;
            }
            break;
          }
        }
      }
      st.rejected_steps++;
      lambda *= config.lambda_up;
      if (lambda > config.lambda_max) {
        if (!any_accepted) throw DivergedError("solve_lm: no acceptable step at maximum damping");
        st.final_objective = current;
        st.converged = false;
        return values;  // stalled after progress; keep best values
      }
    }
  }
  st.final_objective = current;
  st.converged = false;
  return values;
}

Eigen::MatrixXd FactorGraph::marginal_covariance(const GraphValues& values,
                                                 const VariableKey& key) const {
  const std::vector<VariableKey> order = variable_order();
  LinearSystem sys = linearize(values, order);
  if (!sys.has(key)) throw StructuralError("marginal_covariance: key not in graph");

  // Jacobi equilibration keeps the rank test meaningful across the wide
  // information range (inertial blocks reach 1e10, affine priors 1e-4).
  const Eigen::VectorXd diag = sys.H.diagonal().cwiseMax(1e-300);
  const Eigen::VectorXd scale = diag.cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd Hs = scale.asDiagonal() * sys.H * scale.asDiagonal();

  Eigen::LDLT<Eigen::MatrixXd> ldlt(Hs);
  const Eigen::VectorXd d = ldlt.vectorD();
  if (ldlt.info() != Eigen::Success || d.minCoeff() <= 1e-12) {
    throw UnobservableError("marginal_covariance: singular information matrix");
  }

  const int off = sys.offset(key);
  const int dim = tangent_dim(key);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(sys.dim(), dim);
  rhs.block(off, 0, dim, dim).setIdentity();
  const Eigen::MatrixXd cols =
      scale.asDiagonal() * ldlt.solve(scale.asDiagonal() * rhs);
  Eigen::MatrixXd cov = cols.block(off, 0, dim, dim);
  return 0.5 * (cov + cov.transpose());
}

}  // namespace vifg
