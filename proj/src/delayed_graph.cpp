#include "vifg/delayed_graph.hpp"

#include <algorithm>
#include <chrono>

#include "json.hpp"

namespace vifg {

namespace {

using nlohmann::json;

json key_to_json(const VariableKey& k) {
  return json::array({static_cast<int>(k.kind), k.index});
}

VariableKey key_from_json(const json& j) {
  return {static_cast<VarKind>(j[0].get<int>()), j[1].get<uint32_t>()};
}

json block_to_json(const StateBlock& b) {
  json j;
  switch (b.index()) {
    case 0:
      j["type"] = "scalar";
      j["data"] = {std::get<double>(b)};
      break;
    case 1:
      j["type"] = "positive";
      j["data"] = {std::get<PositiveScalar>(b).value};
      break;
    case 2: {
      j["type"] = "vector";
      for (double x : std::get<Eigen::VectorXd>(b)) j["data"].push_back(x);
      break;
    }
    case 3: {
      j["type"] = "rotation";
      const auto& q = std::get<Rotation3>(b).quaternion();
      j["data"] = {q.w(), q.x(), q.y(), q.z()};
      break;
    }
    case 4: {
      j["type"] = "pose";
      const auto& p = std::get<RigidTransform>(b);
      const auto& q = p.rotation().quaternion();
      const auto& t = p.translation();
      j["data"] = {q.w(), q.x(), q.y(), q.z(), t.x(), t.y(), t.z()};
      break;
    }
  }
  return j;
}

StateBlock block_from_json(const json& j) {
  const std::string type = j.at("type");
  const auto& d = j.at("data");
  if (type == "scalar") return d[0].get<double>();
  if (type == "positive") return PositiveScalar{d[0].get<double>()};
  if (type == "vector") {
    Eigen::VectorXd v(d.size());
    for (size_t i = 0; i < d.size(); ++i) v[static_cast<int>(i)] = d[i].get<double>();
    return v;
  }
  if (type == "rotation")
    return Rotation3::from_unit_quaternion(Eigen::Quaterniond(d[0], d[1], d[2], d[3]));
  if (type == "pose")
    return RigidTransform(
        Rotation3::from_unit_quaternion(Eigen::Quaterniond(d[0], d[1], d[2], d[3])),
        Vec3(d[4], d[5], d[6]));
  throw StructuralError("delayed graph json: unknown block type");
}

json quadratic_to_json(const LinearizedQuadraticFactor& f) {
  json j;
  for (const auto& k : f.keys()) j["keys"].push_back(key_to_json(k));
  const auto& H = f.hessian();
  for (int r = 0; r < H.rows(); ++r)
    for (int c = 0; c < H.cols(); ++c) j["H"].push_back(H(r, c));
  for (int i = 0; i < f.rhs().size(); ++i) j["b"].push_back(f.rhs()[i]);
  for (const auto& k : f.keys()) j["fej"].push_back(block_to_json(f.fej_values().at(k)));
  j["constant"] = f.constant_offset();
  return j;
}

std::shared_ptr<LinearizedQuadraticFactor> quadratic_from_json(const json& j) {
  std::vector<VariableKey> keys;
  for (const auto& k : j.at("keys")) keys.push_back(key_from_json(k));
  int n = 0;
  for (const auto& k : keys) n += tangent_dim(k);
  Eigen::MatrixXd H(n, n);
  const auto& hj = j.at("H");
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) H(r, c) = hj[r * n + c].get<double>();
  Eigen::VectorXd b(n);
  for (int i = 0; i < n; ++i) b[i] = j.at("b")[i].get<double>();
  GraphValues fej;
  for (size_t i = 0; i < keys.size(); ++i) fej.insert(keys[i], block_from_json(j.at("fej")[i]));
  return std::make_shared<LinearizedQuadraticFactor>(keys, std::move(H), std::move(b),
                                                     std::move(fej), j.value("constant", 0.0));
}

}  // namespace

ReadvanceResult readvance(const PgbaGraph& pgba, const GraphValues& at_values) {
  std::vector<std::shared_ptr<const Factor>> work = pgba.graph.factors();
  ReadvanceResult result;

  for (uint32_t frame : pgba.eliminate_order) {
    auto bit = pgba.frame_blocks.find(frame);
    if (bit == pgba.frame_blocks.end()) continue;

    std::vector<std::shared_ptr<const Factor>> touching, rest;
    std::set<VariableKey> touched_keys;
    for (const auto& f : work) {
      bool t = false;
      for (const auto& k : f->keys())
        if (std::find(bit->second.begin(), bit->second.end(), k) != bit->second.end()) {
          t = true;
          break;
        }
      if (t) {
        touching.push_back(f);
        for (const auto& k : f->keys()) touched_keys.insert(k);
      } else {
        rest.push_back(f);
      }
    }
    std::vector<VariableKey> elim;
    for (const auto& k : bit->second)
      if (touched_keys.count(k)) elim.push_back(k);
    if (elim.empty()) continue;

    EliminationStats stats;
    rest.push_back(eliminate(touching, at_values, elim, &stats));
    result.step_blanket_keys.push_back(stats.blanket_keys);
    work = std::move(rest);
  }

  // Fold everything that remains into a single prior over the survivors.
  auto folded = eliminate(work, at_values, {});
  result.prior = *folded;
  return result;
}

DelayedGraph::DelayedGraph(int delay) : delay_(delay) {
  if (delay <= 0) throw ConfigError("delayed graph: delay must be positive");
}

void DelayedGraph::add_keyframe(uint32_t frame) {
  if (alive_.count(frame)) throw StructuralError("delayed graph: frame already alive");
  alive_.insert(frame);
}

void DelayedGraph::add_linearized_photometric(std::shared_ptr<LinearizedQuadraticFactor> factor) {
  if (!factor || factor->dim() == 0) return;
  // Latest payload wins: eliminations here expand around the freshest
  // linearization points; older factors recenter through their own fej.
  for (const auto& k : factor->keys()) {
    if (fej_state_.has(k))
      fej_state_.update(k, factor->fej_values().at(k));
    else
      fej_state_.insert(k, factor->fej_values().at(k));
  }
  factors_.push_back(std::move(factor));
}

void DelayedGraph::record_marginalization(uint32_t frame) {
  if (std::find(pending_.begin(), pending_.end(), frame) != pending_.end())
    throw StructuralError("delayed graph: frame already pending");
  if (!alive_.count(frame)) throw StructuralError("delayed graph: unknown frame");

  const auto t0 = std::chrono::steady_clock::now();
  pending_.push_back(frame);
  if (static_cast<int>(pending_.size()) > delay_) {
    eliminate_frame(pending_.front());
    pending_.pop_front();
  }
  const auto t1 = std::chrono::steady_clock::now();
  last_record_seconds_ = std::chrono::duration<double>(t1 - t0).count();
  total_record_seconds_ += last_record_seconds_;
}

void DelayedGraph::eliminate_frame(uint32_t frame) {
  const std::vector<VariableKey> blocks = {pose_key(frame), affine_key(frame)};

  std::vector<std::shared_ptr<const Factor>> fold;
  std::vector<std::shared_ptr<LinearizedQuadraticFactor>> rest;
  std::set<VariableKey> fold_keys;
  for (const auto& f : factors_) {
    const auto& ks = f->keys();
    const bool touches = std::find(ks.begin(), ks.end(), blocks[0]) != ks.end() ||
                         std::find(ks.begin(), ks.end(), blocks[1]) != ks.end();
    if (touches) {
      fold.push_back(f);
      for (const auto& k : ks) fold_keys.insert(k);
    } else {
      rest.push_back(f);
    }
  }
  // The prior is always folded, mirroring the main graph's procedure.
  if (prior_ && prior_->dim() > 0) {
    fold.push_back(prior_);
    for (const auto& k : prior_->keys()) fold_keys.insert(k);
  }

  std::vector<VariableKey> elim;
  for (const auto& k : blocks)
    if (fold_keys.count(k)) elim.push_back(k);

  if (!elim.empty()) {
    EliminationStats stats;
    prior_ = eliminate(fold, fej_state_, elim, &stats);
    blanket_sizes_[frame] = stats.blanket_keys;
    factors_ = std::move(rest);
  } else {
    blanket_sizes_[frame] = 0;
  }
  alive_.erase(frame);
  eliminated_order_.push_back(frame);
}

uint32_t DelayedGraph::newest_frame() const {
  if (alive_.empty()) throw StructuralError("delayed graph: no alive frames");
  return *alive_.rbegin();
}

uint32_t DelayedGraph::find_first_connected() const {
  uint32_t conn = newest_frame();
  while (conn > 0 && alive_.count(conn - 1)) --conn;
  return conn;
}

std::vector<uint32_t> DelayedGraph::alive_frames() const {
  return {alive_.begin(), alive_.end()};
}

PgbaGraph DelayedGraph::populate_with_imu(const FactorBuilder& imu_factor,
                                          const FactorBuilder& bias_factor,
                                          const GraphValues& init_overrides) const {
  PgbaGraph pg;
  const uint32_t newest = newest_frame();
  const uint32_t conn = find_first_connected();
  pg.first_connected = conn;

  for (const auto& f : factors_) pg.graph.add(f);
  if (prior_ && prior_->dim() > 0) pg.graph.add(prior_);

  for (uint32_t f = conn; f < newest; ++f) {
    auto imu = imu_factor(f, f + 1);
    if (!imu) throw DataGapError("populate: missing preintegration for pair " + std::to_string(f));
    pg.graph.add(std::move(imu));
    pg.imu_pairs.emplace_back(f, f + 1);
    if (auto bias = bias_factor(f, f + 1)) pg.graph.add(std::move(bias));
  }

  for (uint32_t f : alive_) {
    std::vector<VariableKey> blocks = {pose_key(f), affine_key(f)};
    if (f >= conn) {
      blocks.push_back(velocity_key(f));
      blocks.push_back(bias_key(f));
    } else {
      pg.poses_without_imu.push_back(f);
    }
    pg.frame_blocks[f] = std::move(blocks);
  }
  pg.eliminate_order.assign(pending_.begin(), pending_.end());

  // Initial values: frozen estimates, overridden/extended by the caller.
  for (const auto& k : pg.graph.variable_order())
    if (fej_state_.has(k)) pg.values.insert(k, fej_state_.at(k));
  for (const auto& [k, block] : init_overrides) {
    if (pg.values.has(k))
      pg.values.update(k, block);
    else
      pg.values.insert(k, block);
  }
  for (const auto& k : pg.graph.variable_order()) {
    if (!pg.values.has(k))
      throw StructuralError("populate: no initial value for " + to_string(k));
  }
  return pg;
}

MarginalizationPrior DelayedGraph::readvance_visual() const {
  DelayedGraph copy = *this;
  while (!copy.pending_.empty()) {
    copy.eliminate_frame(copy.pending_.front());
    copy.pending_.pop_front();
  }
  if (copy.prior_) return *copy.prior_;
  return MarginalizationPrior();
}

std::string DelayedGraph::to_json() const {
  json j;
  j["version"] = 1;
  j["delay"] = delay_;
  j["alive"] = json::array();
  for (uint32_t f : alive_) j["alive"].push_back(f);
  j["pending"] = json::array();
  for (uint32_t f : pending_) j["pending"].push_back(f);
  j["eliminated_order"] = eliminated_order_;
  for (const auto& [f, n] : blanket_sizes_) j["blanket_sizes"].push_back({f, n});
  j["factors"] = json::array();
  for (const auto& f : factors_) j["factors"].push_back(quadratic_to_json(*f));
  if (prior_ && prior_->dim() > 0) j["prior"] = quadratic_to_json(*prior_);
  for (const auto& [k, block] : fej_state_) {
    j["fej_state"].push_back({{"key", key_to_json(k)}, {"value", block_to_json(block)}});
  }
  return j.dump();
}

DelayedGraph DelayedGraph::from_json(const std::string& text) {
  const json j = json::parse(text);
  if (j.at("version").get<int>() != 1)
    throw StructuralError("delayed graph json: unsupported version");
  DelayedGraph g(j.at("delay").get<int>());
  for (const auto& f : j.at("alive")) g.alive_.insert(f.get<uint32_t>());
  for (const auto& f : j.at("pending")) g.pending_.push_back(f.get<uint32_t>());
  for (const auto& f : j.value("eliminated_order", json::array()))
    g.eliminated_order_.push_back(f.get<uint32_t>());
  for (const auto& p : j.value("blanket_sizes", json::array()))
    g.blanket_sizes_[p[0].get<uint32_t>()] = p[1].get<int>();
  for (const auto& f : j.value("factors", json::array()))
    g.factors_.push_back(quadratic_from_json(f));
  if (j.contains("prior")) g.prior_ = quadratic_from_json(j.at("prior"));
  for (const auto& e : j.value("fej_state", json::array()))
    g.fej_state_.insert(key_from_json(e.at("key")), block_from_json(e.at("value")));
  return g;
}

}  // namespace vifg
