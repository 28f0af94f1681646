#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <string>

namespace vifg {

/// Kind of state block a key refers to. The tangent dimension is a property of
/// the kind (poses 6, velocities 3, biases 6, affine 2, inverse depth 1,
/// scale 1, gravity rotation 3).
enum class VarKind : uint8_t {
  Pose = 0,      // keyframe pose in visual frame, SE(3)
  Velocity,      // metric world velocity, R^3
  Bias,          // gyro(3) + accel(3) bias, R^6
  Affine,        // brightness (a, b), R^2
  InvDepth,      // inverse depth of one landmark, R^1
  Scale,         // global scale s > 0 (log-parameterized tangent), R^1
  GravityRot,    // rotation between visual and gravity-aligned frame, SO(3)
};

struct VariableKey {
  VarKind kind;
  uint32_t index;  // keyframe id for per-frame blocks, landmark id for depths, 0 for globals

  auto operator<=>(const VariableKey&) const = default;
};

inline VariableKey pose_key(uint32_t frame) { return {VarKind::Pose, frame}; }
inline VariableKey velocity_key(uint32_t frame) { return {VarKind::Velocity, frame}; }
inline VariableKey bias_key(uint32_t frame) { return {VarKind::Bias, frame}; }
inline VariableKey affine_key(uint32_t frame) { return {VarKind::Affine, frame}; }
inline VariableKey depth_key(uint32_t landmark) { return {VarKind::InvDepth, landmark}; }
inline VariableKey scale_key() { return {VarKind::Scale, 0}; }
inline VariableKey gravity_key() { return {VarKind::GravityRot, 0}; }

inline int tangent_dim(VarKind k) {
  switch (k) {
    case VarKind::Pose: return 6;
    case VarKind::Velocity: return 3;
    case VarKind::Bias: return 6;
    case VarKind::Affine: return 2;
    case VarKind::InvDepth: return 1;
    case VarKind::Scale: return 1;
    case VarKind::GravityRot: return 3;
  }
  return 0;
}
inline int tangent_dim(const VariableKey& k) { return tangent_dim(k.kind); }

std::string to_string(const VariableKey& k);

}  // namespace vifg

template <>
struct std::hash<vifg::VariableKey> {
  size_t operator()(const vifg::VariableKey& k) const noexcept {
    return (static_cast<size_t>(k.kind) << 32) ^ k.index;
  }
};
