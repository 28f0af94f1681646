#pragma once

#include <deque>
#include <functional>

#include "vifg/marginalization.hpp"

namespace vifg {

/// The delayed graph populated with inertial factors, ready for pose graph
/// bundle adjustment or for a readvance-only marginalization replacement.
struct PgbaGraph {
  FactorGraph graph;
  GraphValues values;  // initial values for optimization
  std::vector<uint32_t> eliminate_order;  // frames already marginalized in the main graph
  std::map<uint32_t, std::vector<VariableKey>> frame_blocks;
  std::vector<std::pair<uint32_t, uint32_t>> imu_pairs;  // successive pairs with IMU factors
  std::vector<uint32_t> poses_without_imu;  // alive frames older than the first connected one
  uint32_t first_connected = 0;
};

struct ReadvanceResult {
  MarginalizationPrior prior;
  std::vector<int> step_blanket_keys;  // per eliminated frame, in order
};

/// Readvance: linearize everything at `at_values` and successively eliminate,
/// in the main graph's historical order, every frame it already marginalized.
/// The remaining factors are folded into a single prior over the survivors,
/// with first-estimates values at `at_values`.
ReadvanceResult readvance(const PgbaGraph& pgba, const GraphValues& at_values);

/// Second factor graph that replays the main graph's frame marginalizations
/// with a delay of d steps, in identical order. Points are marginalized at the
/// same time as in the main graph, so this graph holds only linearized
/// photometric factors (plus its own prior); each such factor connects exactly
/// the keyframes that were active when it was created.
class DelayedGraph {
 public:
  explicit DelayedGraph(int delay = 100);

  int delay() const { return delay_; }

  /// Register a new keyframe (alive in the window).
  void add_keyframe(uint32_t frame);

  /// Store the linearized photometric factor produced when the main graph
  /// marginalized the points of some frame. First-estimates values of keys not
  /// seen before are frozen from the factor.
  void add_linearized_photometric(std::shared_ptr<LinearizedQuadraticFactor> factor);

  /// The main graph just marginalized this frame. Appends it to the pending
  /// queue; once more than `delay` frames are pending, the oldest pending frame
  /// is eliminated here, preserving the main graph's order.
  void record_marginalization(uint32_t frame);

  /// First frame still directly connected to the newest one: the earliest
  /// alive frame with no eliminated frame after it.
  uint32_t find_first_connected() const;

  uint32_t newest_frame() const;
  std::vector<uint32_t> alive_frames() const;  // ascending ids
  const std::deque<uint32_t>& pending() const { return pending_; }
  const std::vector<uint32_t>& eliminated_order() const { return eliminated_order_; }
  const std::map<uint32_t, int>& blanket_sizes() const { return blanket_sizes_; }
  const GraphValues& fej_state() const { return fej_state_; }

  using FactorBuilder = std::function<std::shared_ptr<Factor>(uint32_t, uint32_t)>;

  /// Build the PGBA graph: snapshot of this graph's factors plus IMU and bias
  /// random-walk factors between every successive pair from the first connected
  /// frame to the newest. The builders return the factor for a pair (i, i+1) or
  /// null when the preintegration segment is missing (DataGapError).
  /// `init_overrides` supplies or overrides initial values (window estimates,
  /// velocities, biases, scale, gravity rotation).
  PgbaGraph populate_with_imu(const FactorBuilder& imu_factor, const FactorBuilder& bias_factor,
                              const GraphValues& init_overrides) const;

  /// Drain the pending queue on a copy (visual factors only) and return the
  /// resulting prior. Equals the main graph's prior when nothing was
  /// relinearized in between.
  MarginalizationPrior readvance_visual() const;

  /// Seconds spent in the last record_marginalization call, and the total.
  double last_record_seconds() const { return last_record_seconds_; }
  double total_record_seconds() const { return total_record_seconds_; }

  /// Versioned dump; bit-faithful on H, b, and orders.
  std::string to_json() const;
  static DelayedGraph from_json(const std::string& text);

 private:
  void eliminate_frame(uint32_t frame);

  int delay_;
  std::vector<std::shared_ptr<LinearizedQuadraticFactor>> factors_;
  std::shared_ptr<LinearizedQuadraticFactor> prior_;
  GraphValues fej_state_;
  std::set<uint32_t> alive_;
  std::deque<uint32_t> pending_;
  std::vector<uint32_t> eliminated_order_;
  std::map<uint32_t, int> blanket_sizes_;
  double last_record_seconds_ = 0.0;
  double total_record_seconds_ = 0.0;
};

}  // namespace vifg
