#include "vifg/values.hpp"

#include <cmath>

namespace vifg {

std::string to_string(const VariableKey& k) {
  static const char* names[] = {"pose", "vel", "bias", "affine", "idepth", "scale", "gravity"};
  return std::string(names[static_cast<int>(k.kind)]) + "/" + std::to_string(k.index);
}

int block_dim(const StateBlock& b) {
  switch (b.index()) {
    case 0: return 1;
    case 1: return 1;
    case 2: return static_cast<int>(std::get<Eigen::VectorXd>(b).size());
    case 3: return 3;
    case 4: return 6;
  }
  return 0;
}

StateBlock block_boxplus(const StateBlock& b, const Eigen::Ref<const Eigen::VectorXd>& delta) {
  if (delta.size() != block_dim(b)) throw StructuralError("boxplus: tangent dim mismatch");
  switch (b.index()) {
    case 0:
      return std::get<double>(b) + delta[0];
    case 1:
      return PositiveScalar{std::get<PositiveScalar>(b).value * std::exp(delta[0])};
    case 2:
      return Eigen::VectorXd(std::get<Eigen::VectorXd>(b) + delta);
    case 3:
      return std::get<Rotation3>(b).boxplus(delta);
    case 4:
      return std::get<RigidTransform>(b).boxplus(delta);
  }
  throw StructuralError("boxplus: unknown block");
}

Eigen::VectorXd block_boxminus(const StateBlock& a, const StateBlock& b) {
  if (a.index() != b.index() || block_dim(a) != block_dim(b))
    throw StructuralError("boxminus: mismatched block layout");
  Eigen::VectorXd d(block_dim(a));
  switch (a.index()) {
    case 0:
      d[0] = std::get<double>(a) - std::get<double>(b);
      return d;
    case 1:
      d[0] = std::log(std::get<PositiveScalar>(a).value / std::get<PositiveScalar>(b).value);
      return d;
    case 2:
      return Eigen::VectorXd(std::get<Eigen::VectorXd>(a) - std::get<Eigen::VectorXd>(b));
    case 3:
      return std::get<Rotation3>(a).boxminus(std::get<Rotation3>(b));
    case 4:
      return std::get<RigidTransform>(a).boxminus(std::get<RigidTransform>(b));
  }
  throw StructuralError("boxminus: unknown block");
}

void GraphValues::insert(const VariableKey& key, StateBlock value) {
  if (!blocks_.emplace(key, std::move(value)).second)
    throw StructuralError("insert: duplicate key " + to_string(key));
}

void GraphValues::update(const VariableKey& key, StateBlock value) {
  auto it = blocks_.find(key);
  if (it == blocks_.end()) throw StructuralError("update: missing key " + to_string(key));
  it->second = std::move(value);
}

void GraphValues::erase(const VariableKey& key) { blocks_.erase(key); }

const StateBlock& GraphValues::at(const VariableKey& key) const {
  auto it = blocks_.find(key);
  if (it == blocks_.end()) throw StructuralError("values: missing key " + to_string(key));
  return it->second;
}

const RigidTransform& GraphValues::pose(const VariableKey& key) const {
  const auto* p = std::get_if<RigidTransform>(&at(key));
  if (!p) throw StructuralError("values: not a pose: " + to_string(key));
  return *p;
}

const Rotation3& GraphValues::rotation(const VariableKey& key) const {
  const auto* p = std::get_if<Rotation3>(&at(key));
  if (!p) throw StructuralError("values: not a rotation: " + to_string(key));
  return *p;
}

const Eigen::VectorXd& GraphValues::vector(const VariableKey& key) const {
  const auto* p = std::get_if<Eigen::VectorXd>(&at(key));
  if (!p) throw StructuralError("values: not a vector: " + to_string(key));
  return *p;
}

double GraphValues::scalar(const VariableKey& key) const {
  const auto* p = std::get_if<double>(&at(key));
  if (!p) throw StructuralError("values: not a scalar: " + to_string(key));
  return *p;
}

double GraphValues::positive(const VariableKey& key) const {
  const auto* p = std::get_if<PositiveScalar>(&at(key));
  if (!p) throw StructuralError("values: not a positive scalar: " + to_string(key));
  return p->value;
}

GraphValues GraphValues::boxplus(const std::vector<VariableKey>& order,
                                 const Eigen::VectorXd& delta) const {
  GraphValues out = *this;
  int offset = 0;
  for (const auto& key : order) {
    const StateBlock& b = at(key);
    const int dim = block_dim(b);
    out.update(key, block_boxplus(b, delta.segment(offset, dim)));
    offset += dim;
  }
  if (offset != delta.size()) throw StructuralError("boxplus: tangent size mismatch");
  return out;
}

Eigen::VectorXd GraphValues::boxminus(const GraphValues& other,
                                      const std::vector<VariableKey>& order) const {
  Eigen::VectorXd d(total_dim(order));
  int offset = 0;
  for (const auto& key : order) {
    Eigen::VectorXd dk = block_boxminus(at(key), other.at(key));
    d.segment(offset, dk.size()) = dk;
    offset += static_cast<int>(dk.size());
  }
  return d;
}

std::vector<VariableKey> GraphValues::keys() const {
  std::vector<VariableKey> out;
  out.reserve(blocks_.size());
  for (const auto& [k, v] : blocks_) out.push_back(k);
  return out;
}

int GraphValues::total_dim(const std::vector<VariableKey>& order) const {
  int n = 0;
  for (const auto& key : order) n += block_dim(at(key));
  return n;
}

}  // namespace vifg
