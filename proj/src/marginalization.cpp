#include "vifg/marginalization.hpp"

#include <algorithm>
#include <iostream>

namespace vifg {

namespace {

bool contains(const std::vector<VariableKey>& keys, const VariableKey& k) {
  return std::find(keys.begin(), keys.end(), k) != keys.end();
}

bool touches(const Factor& f, const std::vector<VariableKey>& keys) {
  for (const auto& k : f.keys())
    if (contains(keys, k)) return true;
  return false;
}

}  // namespace

LinearSystem schur_complement(const LinearSystem& sys, const std::vector<VariableKey>& beta,
                              double* relaxation) {
  for (const auto& k : beta)
    if (!sys.has(k)) throw StructuralError("schur: beta key not in system: " + to_string(k));
  if (relaxation) *relaxation = 0.0;
  if (beta.empty()) return sys;

  std::vector<VariableKey> alpha;
  for (const auto& k : sys.order)
    if (!contains(beta, k)) alpha.push_back(k);

  std::vector<int> ia, ib;  // scalar index lists
  for (const auto& k : alpha) {
    const int o = sys.offset(k);
    for (int i = 0; i < tangent_dim(k); ++i) ia.push_back(o + i);
  }
  for (const auto& k : beta) {
    const int o = sys.offset(k);
    for (int i = 0; i < tangent_dim(k); ++i) ib.push_back(o + i);
  }

  const Eigen::MatrixXd Haa = sys.H(ia, ia);
  const Eigen::MatrixXd Hab = sys.H(ia, ib);
  Eigen::MatrixXd Hbb = sys.H(ib, ib);
  const Eigen::VectorXd ba = sys.b(ia);
  const Eigen::VectorXd bb = sys.b(ib);

  auto factorize = [](const Eigen::MatrixXd& m, bool strict) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(m);
    bool ok = ldlt.info() == Eigen::Success;
    if (ok) {
      const Eigen::VectorXd d = ldlt.vectorD();
      const double dmax = d.cwiseAbs().maxCoeff();
      ok = strict ? d.minCoeff() > 1e-12 * std::max(dmax, 1.0) : d.minCoeff() > 0.0;
    }
    return std::make_pair(ldlt, ok);
  };

  auto [ldlt, ok] = factorize(Hbb, true);
  if (!ok) {
    Hbb.diagonal().array() += 1e-10;
    std::tie(ldlt, ok) = factorize(Hbb, false);
    if (!ok) throw DegenerateMarginalizationError("schur: singular eliminated block");
  }

  const Eigen::MatrixXd X = ldlt.solve(Hab.transpose());  // H_bb^-1 H_ba
  const Eigen::VectorXd y = ldlt.solve(bb);
  if (relaxation) *relaxation = 0.5 * bb.dot(y);

  LinearSystem out = LinearSystem::zeros(alpha);
  out.H = Haa - Hab * X;
  out.H = 0.5 * (out.H + out.H.transpose()).eval();
  out.b = ba - Hab * y;
  return out;
}

std::shared_ptr<LinearizedQuadraticFactor> eliminate(
    const std::vector<std::shared_ptr<const Factor>>& factors, const GraphValues& lin_values,
    const std::vector<VariableKey>& elim_keys, EliminationStats* stats) {
  std::set<VariableKey> key_set;
  for (const auto& f : factors)
    for (const auto& k : f->keys()) key_set.insert(k);

  std::vector<VariableKey> order(key_set.begin(), key_set.end());
  LinearSystem sys = LinearSystem::zeros(order);
  for (const auto& f : factors) f->accumulate(lin_values, sys);

  // Rank-deficient depth blocks and keys without any information are dropped,
  // not regularized into fiction.
  std::vector<VariableKey> beta;
  std::vector<VariableKey> dropped;
  const double diag_max = sys.dim() > 0 ? std::max(sys.H.diagonal().cwiseAbs().maxCoeff(), 1.0) : 1.0;
  for (const auto& k : elim_keys) {
    if (!sys.has(k)) {
      dropped.push_back(k);
      continue;
    }
    if (k.kind == VarKind::InvDepth && sys.H(sys.offset(k), sys.offset(k)) <= 1e-12 * diag_max) {
      dropped.push_back(k);
      continue;
    }
    beta.push_back(k);
  }
  if (!dropped.empty()) {
    std::cerr << "[vifg] warning: dropping " << dropped.size()
              << " unconstrained block(s) during marginalization\n";
    // Remove their (numerically empty) rows so they do not poison the Schur step.
    std::vector<VariableKey> keep;
    for (const auto& k : sys.order)
      if (!contains(dropped, k)) keep.push_back(k);
    LinearSystem trimmed = LinearSystem::zeros(keep);
    std::vector<int> idx;
    for (const auto& k : keep) {
      const int o = sys.offset(k);
      for (int i = 0; i < tangent_dim(k); ++i) idx.push_back(o + i);
    }
    trimmed.H = sys.H(idx, idx);
    trimmed.b = sys.b(idx);
    sys = std::move(trimmed);
  }

  double relaxation = 0.0;
  LinearSystem reduced = schur_complement(sys, beta, &relaxation);

  // Objective value at the linearization point, carried so the reduced system
  // reproduces the folded factors' objective exactly.
  double constant = -relaxation;
  for (const auto& f : factors) {
    if (const auto* q = dynamic_cast<const LinearizedQuadraticFactor*>(f.get()))
      constant += q->energy_with_offset(lin_values);
    else
      constant += f->objective(lin_values);
  }

  GraphValues fej;
  for (const auto& k : reduced.order) fej.insert(k, lin_values.at(k));
  if (stats) {
    stats->blanket_keys = static_cast<int>(reduced.order.size());
    stats->dropped = dropped;
  }
  return std::make_shared<LinearizedQuadraticFactor>(reduced.order, reduced.H, reduced.b,
                                                     std::move(fej), constant);
}

size_t WindowGraph::add_factor(std::shared_ptr<Factor> factor, FactorTag tag) {
  if (!factor) throw StructuralError("window graph: null factor");
  entries_.push_back({std::move(factor), tag, true});
  return entries_.size() - 1;
}

void WindowGraph::register_frame(uint32_t frame, std::vector<VariableKey> blocks) {
  if (!frame_blocks_.emplace(frame, std::move(blocks)).second)
    throw StructuralError("window graph: frame already registered");
}

void WindowGraph::add_frame_block(uint32_t frame, const VariableKey& block) {
  frame_blocks_.at(frame).push_back(block);
}

void WindowGraph::register_hosted_depth(uint32_t frame, const VariableKey& depth) {
  hosted_[frame].push_back(depth);
}

const std::vector<VariableKey>& WindowGraph::frame_blocks(uint32_t frame) const {
  auto it = frame_blocks_.find(frame);
  if (it == frame_blocks_.end()) throw StructuralError("window graph: unknown frame");
  return it->second;
}

const std::vector<VariableKey>& WindowGraph::hosted_depths(uint32_t frame) const {
  static const std::vector<VariableKey> kEmpty;
  auto it = hosted_.find(frame);
  return it == hosted_.end() ? kEmpty : it->second;
}

FactorGraph WindowGraph::assemble() const {
  FactorGraph g;
  for (const auto& e : entries_)
    if (e.active) g.add(e.factor);
  if (prior_ && prior_->dim() > 0) g.add(prior_);
  for (const auto& [key, coord] : fixed_) g.fix_coordinate(key, coord);
  return g;
}

std::vector<std::shared_ptr<const Factor>> WindowGraph::active_factors() const {
  std::vector<std::shared_ptr<const Factor>> out;
  for (const auto& e : entries_)
    if (e.active) out.push_back(e.factor);
  return out;
}

std::vector<std::shared_ptr<Factor>> WindowGraph::active_photometric() const {
  std::vector<std::shared_ptr<Factor>> out;
  for (const auto& e : entries_)
    if (e.active && !e.tag.inertial && e.tag.host_frame) out.push_back(e.factor);
  return out;
}

GraphValues WindowGraph::fej_linearization_values(const GraphValues& values) const {
  GraphValues lin = values;
  if (prior_) {
    for (const auto& [key, block] : prior_->fej_values()) {
      if (lin.has(key)) lin.update(key, block);
    }
  }
  return lin;
}

FrameMarginalizationResult WindowGraph::marginalize_frame(const GraphValues& values,
                                                          uint32_t frame) {
  if (!has_frame(frame)) throw StructuralError("marginalize_frame: unknown frame");
  FrameMarginalizationResult result;

  // Factors are linearized at the current state estimate; the previous prior
  // folds in through its own first-estimates expansion (the recentering of a
  // quadratic is exact, so no information shifts).
  const GraphValues& lin = values;
  const std::vector<VariableKey>& fblocks = frame_blocks_.at(frame);
  const std::vector<VariableKey> depths = hosted_depths(frame);

  // (1) Drop residuals of other frames' points observed in this frame.
  for (auto& e : entries_) {
    if (!e.active) continue;
    if (e.tag.target_frame == frame && e.tag.host_frame && *e.tag.host_frame != frame)
      e.active = false;
  }

  // (2) Eliminate hosted points from the frame's visual factors. The result is
  // both the delayed-graph payload and the first stage of the frame fold.
  std::vector<std::shared_ptr<const Factor>> visual_fold;
  std::vector<std::shared_ptr<const Factor>> inertial_fold;
  for (auto& e : entries_) {
    if (!e.active) continue;
    const bool on_frame = touches(*e.factor, fblocks) || touches(*e.factor, depths);
    if (!on_frame) continue;
    (e.tag.inertial ? inertial_fold : visual_fold).push_back(e.factor);
    if (e.tag.imu_pair) result.folded_imu_pairs.push_back(*e.tag.imu_pair);
    e.active = false;
  }

  std::shared_ptr<LinearizedQuadraticFactor> payload;
  EliminationStats depth_stats;
  if (!visual_fold.empty()) {
    payload = eliminate(visual_fold, lin, depths, &depth_stats);
    result.dropped_depths = depth_stats.dropped;
  }
  result.delayed_payload = payload;

  // (3) Eliminate the frame blocks, folding the previous prior.
  std::vector<std::shared_ptr<const Factor>> fold;
  if (payload && payload->dim() > 0) fold.push_back(payload);
  for (const auto& f : inertial_fold) fold.push_back(f);
  if (prior_ && prior_->dim() > 0) fold.push_back(prior_);

  EliminationStats frame_stats;
  if (!fold.empty()) {
    auto new_prior = eliminate(fold, lin, fblocks, &frame_stats);
    prior_ = std::move(new_prior);
  } else {
    prior_.reset();
  }
  result.blanket_keys = frame_stats.blanket_keys;

  result.eliminated = fblocks;
  for (const auto& d : depths) result.eliminated.push_back(d);

  order_.push_back(frame);
  blanket_sizes_[frame] = frame_stats.blanket_keys;
  frame_blocks_.erase(frame);
  hosted_.erase(frame);
  return result;
}

}  // namespace vifg
