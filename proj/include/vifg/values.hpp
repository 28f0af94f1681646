#pragma once

#include <map>
#include <variant>
#include <vector>

#include "vifg/common.hpp"
#include "vifg/keys.hpp"
#include "vifg/lie.hpp"

namespace vifg {

/// Positive scalar with a logarithmic tangent: boxplus(s, d) = s * exp(d).
/// Used for the scale variable so the optimizer can never step to s <= 0.
struct PositiveScalar {
  double value = 1.0;
};

/// One state block. Plain double uses ordinary addition as its tangent.
using StateBlock = std::variant<double, PositiveScalar, Eigen::VectorXd, Rotation3, RigidTransform>;

int block_dim(const StateBlock& b);
StateBlock block_boxplus(const StateBlock& b, const Eigen::Ref<const Eigen::VectorXd>& delta);
/// Rotation parts use log(Ra * Rb^-1), vector parts plain subtraction.
/// Throws StructuralError on mismatched block layouts.
Eigen::VectorXd block_boxminus(const StateBlock& a, const StateBlock& b);

/// Map from variable key to state block value. Iteration order is the key
/// order, so layouts derived from it are stable across relinearization.
class GraphValues {
 public:
  void insert(const VariableKey& key, StateBlock value);
  void update(const VariableKey& key, StateBlock value);
  void erase(const VariableKey& key);
  bool has(const VariableKey& key) const { return blocks_.count(key) > 0; }
  size_t size() const { return blocks_.size(); }

  const StateBlock& at(const VariableKey& key) const;

  // Typed accessors; StructuralError if the key is missing or of another type.
  const RigidTransform& pose(const VariableKey& key) const;
  const Rotation3& rotation(const VariableKey& key) const;
  const Eigen::VectorXd& vector(const VariableKey& key) const;
  double scalar(const VariableKey& key) const;
  double positive(const VariableKey& key) const;

  GraphValues boxplus(const std::vector<VariableKey>& order,
                      const Eigen::VectorXd& delta) const;
  Eigen::VectorXd boxminus(const GraphValues& other,
                           const std::vector<VariableKey>& order) const;

  auto begin() const { return blocks_.begin(); }
  auto end() const { return blocks_.end(); }

  std::vector<VariableKey> keys() const;
  int total_dim(const std::vector<VariableKey>& order) const;

 private:
  std::map<VariableKey, StateBlock> blocks_;
};

}  // namespace vifg
