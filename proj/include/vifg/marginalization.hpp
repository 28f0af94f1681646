#pragma once

#include <deque>
#include <optional>

#include "vifg/graph.hpp"

namespace vifg {

/// Eliminate the beta keys from H x = b:
///   H_hat = H_aa - H_ab H_bb^-1 H_ba,  b_hat = b_a - H_ab H_bb^-1 b_b.
/// H_bb is inverted by LDL^T; if its conditioning demands, a diagonal
/// regularization of 1e-10 is added once. Singularity beyond that throws
/// DegenerateMarginalizationError. An empty beta returns the system unchanged.
/// `relaxation`, when given, receives .5 b_b^T H_bb^-1 b_b, the objective
/// decrease obtained by solving for the eliminated blocks.
LinearSystem schur_complement(const LinearSystem& sys, const std::vector<VariableKey>& beta,
                              double* relaxation = nullptr);

struct EliminationStats {
  int blanket_keys = 0;                 // variable count of the resulting blanket
  std::vector<VariableKey> dropped;     // rank-deficient depth blocks removed, with warning
};

/// Linearize the given factors at lin_values, eliminate elim_keys, and wrap the
/// reduced system as a quadratic factor over the Markov blanket with FEJ values
/// frozen at lin_values. Rank-deficient inverse-depth blocks among elim_keys
/// (no observations constraining them) are dropped rather than regularized.
std::shared_ptr<LinearizedQuadraticFactor> eliminate(
    const std::vector<std::shared_ptr<const Factor>>& factors, const GraphValues& lin_values,
    const std::vector<VariableKey>& elim_keys, EliminationStats* stats = nullptr);

/// Spec-facing helper: the quadratic prior energy .5 d^T H d - b^T d at values.
inline double prior_energy(const MarginalizationPrior& prior, const GraphValues& values) {
  return prior.energy(values);
}

/// Bookkeeping tag attached to factors of the windowed VIO graph.
struct FactorTag {
  std::optional<uint32_t> host_frame;     // photometric: hosting keyframe
  std::optional<uint32_t> target_frame;   // photometric: observed keyframe
  bool inertial = false;                  // IMU or bias random-walk factor
  std::optional<std::pair<uint32_t, uint32_t>> imu_pair;  // successive keyframe pair
};

struct FrameMarginalizationResult {
  /// Visual information of the frame's hosted points with depths eliminated,
  /// to be handed to the delayed graph before recording the marginalization.
  std::shared_ptr<LinearizedQuadraticFactor> delayed_payload;  // may be null (no visual factors)
  int blanket_keys = 0;                      // blanket of the frame elimination step
  std::vector<VariableKey> dropped_depths;
  std::vector<VariableKey> eliminated;       // all keys removed from the graph
  std::vector<std::pair<uint32_t, uint32_t>> folded_imu_pairs;
};

/// The main sliding-window graph: active factors, one marginalization prior,
/// frame/hosted-point registry, and the DSO-style partial marginalization of a
/// keyframe (drop cross residuals, eliminate hosted points, then the frame).
class WindowGraph {
 public:
  size_t add_factor(std::shared_ptr<Factor> factor, FactorTag tag = {});
  void register_frame(uint32_t frame, std::vector<VariableKey> blocks);
  void add_frame_block(uint32_t frame, const VariableKey& block);
  void register_hosted_depth(uint32_t frame, const VariableKey& depth);

  bool has_frame(uint32_t frame) const { return frame_blocks_.count(frame) > 0; }
  const std::vector<VariableKey>& frame_blocks(uint32_t frame) const;
  const std::vector<VariableKey>& hosted_depths(uint32_t frame) const;

  void set_prior(std::shared_ptr<LinearizedQuadraticFactor> prior) { prior_ = std::move(prior); }
  const std::shared_ptr<LinearizedQuadraticFactor>& prior() const { return prior_; }

  /// Active factors plus the prior, as a solvable graph.
  FactorGraph assemble() const;
  void fix_coordinate(const VariableKey& key, int coord) { fixed_.insert({key, coord}); }

  /// Linearization points for marginalization: current values overridden by the
  /// prior's first-estimates values for every key the prior already connects.
  GraphValues fej_linearization_values(const GraphValues& values) const;

  /// Marginalize one keyframe: (1) drop residuals of other frames' points
  /// observed in it, (2) eliminate its hosted points, (3) eliminate the frame
  /// blocks, folding the previous prior. Installs the new prior and removes the
  /// eliminated variables from the registry. The caller erases their values.
  FrameMarginalizationResult marginalize_frame(const GraphValues& values, uint32_t frame);

  /// Historical marginalization order (frame ids).
  const std::vector<uint32_t>& marginalized_order() const { return order_; }
  const std::map<uint32_t, int>& blanket_sizes() const { return blanket_sizes_; }

  /// Active (not folded, not dropped) factors with their tags.
  struct Entry {
    std::shared_ptr<Factor> factor;
    FactorTag tag;
    bool active = true;
  };
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<std::shared_ptr<const Factor>> active_factors() const;
  /// Active photometric (non-inertial, host/target tagged) factors, mutable so
  /// the dynamic weight can be set on them.
  std::vector<std::shared_ptr<Factor>> active_photometric() const;

 private:
  std::vector<Entry> entries_;
  std::shared_ptr<LinearizedQuadraticFactor> prior_;
  std::map<uint32_t, std::vector<VariableKey>> frame_blocks_;
  std::map<uint32_t, std::vector<VariableKey>> hosted_;
  std::set<std::pair<VariableKey, int>> fixed_;
  std::vector<uint32_t> order_;
  std::map<uint32_t, int> blanket_sizes_;
};

}  // namespace vifg
