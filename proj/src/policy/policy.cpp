#include "policy/policy.hpp"

#include <algorithm>

namespace flextender::policy {

std::string view_name(View v) {
  switch (v) {
    case View::Endorse: return "endorse";
    case View::OpposeResult: return "oppose_result";
    case View::OpposeAlways: return "oppose_always";
  }
  throw Error(ErrorCode::Internal, "bad view");
}

View view_from_name(const std::string& s) {
  if (s == "endorse") return View::Endorse;
  if (s == "oppose_result") return View::OpposeResult;
  if (s == "oppose_always") return View::OpposeAlways;
  throw Error(ErrorCode::Config, "unknown endorsement view: " + s);
}

PolicyExpr PolicyExpr::leaf(NodeId id) {
  PolicyExpr e;
  e.kind = Kind::Leaf;
  e.node = std::move(id);
  return e;
}

PolicyExpr PolicyExpr::all_of(std::vector<PolicyExpr> cs) {
  PolicyExpr e;
  e.kind = Kind::And;
  e.children = std::move(cs);
  return e;
}

PolicyExpr PolicyExpr::any_of(std::vector<PolicyExpr> cs) {
  PolicyExpr e;
  e.kind = Kind::Or;
  e.children = std::move(cs);
  return e;
}

PolicyExpr PolicyExpr::threshold(int t, std::vector<PolicyExpr> cs) {
  PolicyExpr e;
  e.kind = Kind::Threshold;
  e.t = t;
  e.children = std::move(cs);
  return e;
}

bool PolicyExpr::satisfied_by(const std::set<NodeId>& endorsers) const {
  switch (kind) {
    case Kind::Leaf:
      return endorsers.count(node) > 0;
    case Kind::And:
      return std::all_of(children.begin(), children.end(),
                         [&](const PolicyExpr& c) { return c.satisfied_by(endorsers); });
    case Kind::Or:
      return std::any_of(children.begin(), children.end(),
                         [&](const PolicyExpr& c) { return c.satisfied_by(endorsers); });
    case Kind::Threshold: {
      int hits = 0;
      for (const auto& c : children) {
        if (c.satisfied_by(endorsers)) ++hits;
      }
      return hits >= t;
    }
  }
  throw Error(ErrorCode::Internal, "bad policy kind");
}

void PolicyExpr::collect_leaves(std::set<NodeId>& out) const {
  if (kind == Kind::Leaf) {
    out.insert(node);
    return;
  }
  for (const auto& c : children) c.collect_leaves(out);
}

std::set<NodeId> PolicyExpr::leaves() const {
  std::set<NodeId> out;
  collect_leaves(out);
  return out;
}

void PolicyExpr::validate(const ClusterConfig& cluster) const {
  switch (kind) {
    case Kind::Leaf:
      if (!cluster.has_node(node)) throw Error(ErrorCode::Config, "policy names unknown node: " + node);
      return;
    case Kind::And:
    case Kind::Or:
      if (children.empty()) throw Error(ErrorCode::Config, "and/or policy needs children");
      break;
    case Kind::Threshold:
      if (children.empty()) throw Error(ErrorCode::Config, "threshold policy needs children");
      if (t < 1 || t > static_cast<int>(children.size())) {
        throw Error(ErrorCode::Config, "threshold t out of range: " + std::to_string(t));
      }
      break;
  }
  for (const auto& c : children) c.validate(cluster);
}

nlohmann::json PolicyExpr::to_json() const {
  nlohmann::json j;
  switch (kind) {
    case Kind::Leaf:
      j["node"] = node;
      break;
    case Kind::And: {
      auto arr = nlohmann::json::array();
      for (const auto& c : children) arr.push_back(c.to_json());
      j["and"] = std::move(arr);
      break;
    }
    case Kind::Or: {
      auto arr = nlohmann::json::array();
      for (const auto& c : children) arr.push_back(c.to_json());
      j["or"] = std::move(arr);
      break;
    }
    case Kind::Threshold: {
      auto arr = nlohmann::json::array();
      for (const auto& c : children) arr.push_back(c.to_json());
      j["threshold"] = {{"t", t}, {"of", std::move(arr)}};
      break;
    }
  }
  return j;
}

PolicyExpr PolicyExpr::from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.size() != 1) {
    throw Error(ErrorCode::Config, "policy must be a single-key object: " + j.dump());
  }
  if (j.contains("node")) {
    if (!j["node"].is_string()) throw Error(ErrorCode::Config, "policy node must be a string");
    return leaf(j["node"].get<std::string>());
  }
  auto parse_children = [](const nlohmann::json& arr) {
    if (!arr.is_array()) throw Error(ErrorCode::Config, "policy children must be an array");
    std::vector<PolicyExpr> cs;
    for (const auto& c : arr) cs.push_back(from_json(c));
    return cs;
  };
  if (j.contains("and")) return all_of(parse_children(j["and"]));
  if (j.contains("or")) return any_of(parse_children(j["or"]));
  if (j.contains("threshold")) {
    const auto& th = j["threshold"];
    if (!th.is_object() || !th.contains("t") || !th.contains("of")) {
      throw Error(ErrorCode::Config, "threshold policy needs {t, of}");
    }
    return threshold(th["t"].get<int>(), parse_children(th["of"]));
  }
  throw Error(ErrorCode::Config, "unknown policy operator in: " + j.dump());
}

PolicyExpr default_quorum_policy(const ClusterConfig& cluster) {
  std::vector<PolicyExpr> cs;
  for (const auto& id : cluster.node_ids) cs.push_back(PolicyExpr::leaf(id));
  return PolicyExpr::threshold(quorum_size(cluster), std::move(cs));
}

PolicyExpr default_f_plus_1_policy(const ClusterConfig& cluster) {
  std::vector<PolicyExpr> cs;
  for (const auto& id : cluster.node_ids) cs.push_back(PolicyExpr::leaf(id));
  return PolicyExpr::threshold(removal_threshold(cluster), std::move(cs));
}

namespace {

using CustomPredicate = std::function<bool(const Transaction&, const ExecResult*)>;

const std::map<std::string, CustomPredicate>& custom_registry() {
  static const std::map<std::string, CustomPredicate> reg = {
      {"insufficient",
       [](const Transaction&, const ExecResult* r) {
         return r != nullptr && r->status == ExecStatus::Insufficient;
       }},
      {"any", [](const Transaction&, const ExecResult*) { return true; }},
  };
  return reg;
}

} // namespace

bool custom_predicate_known(const std::string& id) { return custom_registry().count(id) > 0; }

bool Trigger::fires(const Transaction& tx, const ExecResult* result) const {
  switch (kind) {
    case TriggerKind::Always:
      return true;
    case TriggerKind::AmountExceeds:
      return tx.amount > limit;
    case TriggerKind::Custom: {
      auto it = custom_registry().find(custom_id);
      if (it == custom_registry().end()) {
        throw Error(ErrorCode::Config, "unknown custom trigger: " + custom_id);
      }
      return it->second(tx, result);
    }
  }
  throw Error(ErrorCode::Internal, "bad trigger kind");
}

nlohmann::json Trigger::to_json() const {
  switch (kind) {
    case TriggerKind::Always: return "always";
    case TriggerKind::AmountExceeds: return nlohmann::json{{"amount_exceeds", limit}};
    case TriggerKind::Custom: return nlohmann::json{{"custom", custom_id}};
  }
  throw Error(ErrorCode::Internal, "bad trigger kind");
}

Trigger Trigger::from_json(const nlohmann::json& j) {
  Trigger t;
  if (j.is_string() && j.get<std::string>() == "always") {
    t.kind = TriggerKind::Always;
    return t;
  }
  if (j.is_object() && j.contains("amount_exceeds")) {
    t.kind = TriggerKind::AmountExceeds;
    t.limit = j["amount_exceeds"].get<int64_t>();
    return t;
  }
  if (j.is_object() && j.contains("custom")) {
    t.kind = TriggerKind::Custom;
    t.custom_id = j["custom"].get<std::string>();
    if (!custom_predicate_known(t.custom_id)) {
      throw Error(ErrorCode::Config, "unknown custom trigger: " + t.custom_id);
    }
    return t;
  }
  throw Error(ErrorCode::Config, "bad trigger: " + j.dump());
}

std::vector<const PolicyBinding*> applicable_policies(const Transaction& tx, const ExecResult* result,
                                                      const std::vector<PolicyBinding>& bindings) {
  std::vector<const PolicyBinding*> out;
  for (const auto& b : bindings) {
    if (b.matches_target(tx) && b.trigger.fires(tx, result)) out.push_back(&b);
  }
  return out;
}

bool is_properly_endorsed(const std::vector<const PolicyBinding*>& applicable,
                          const PolicyExpr& default_policy, const std::set<NodeId>& endorsers) {
  if (applicable.empty()) return default_policy.satisfied_by(endorsers);
  return std::all_of(applicable.begin(), applicable.end(),
                     [&](const PolicyBinding* b) { return b->policy.satisfied_by(endorsers); });
}

bool is_vetoed(const std::vector<const PolicyBinding*>& applicable, const PolicyExpr& default_policy,
               const std::set<NodeId>& opposers, const std::set<NodeId>& all_nodes) {
  std::set<NodeId> remaining;
  for (const auto& id : all_nodes) {
    if (!opposers.count(id)) remaining.insert(id);
  }
  if (applicable.empty()) return !default_policy.satisfied_by(remaining);
  return std::any_of(applicable.begin(), applicable.end(),
                     [&](const PolicyBinding* b) { return !b->policy.satisfied_by(remaining); });
}

std::set<NodeId> EndorsementRecord::endorsers_of(const TxId& txid) const {
  std::set<NodeId> out = endorse_all;
  auto it = by_tx.find(txid);
  if (it != by_tx.end()) {
    for (const auto& [node, view] : it->second) {
      if (view == View::Endorse) out.insert(node);
    }
  }
  return out;
}

std::set<NodeId> EndorsementRecord::opposers_of(const TxId& txid) const {
  std::set<NodeId> out;
  auto it = by_tx.find(txid);
  if (it != by_tx.end()) {
    for (const auto& [node, view] : it->second) {
      if (view != View::Endorse && !endorse_all.count(node)) out.insert(node);
    }
  }
  return out;
}

std::set<NodeId> EndorsementRecord::always_opposers_of(const TxId& txid) const {
  std::set<NodeId> out;
  auto it = by_tx.find(txid);
  if (it != by_tx.end()) {
    for (const auto& [node, view] : it->second) {
      if (view == View::OpposeAlways && !endorse_all.count(node)) out.insert(node);
    }
  }
  return out;
}

std::set<NodeId> EndorsementRecord::participants() const {
  std::set<NodeId> out = endorse_all;
  for (const auto& [txid, views] : by_tx) {
    for (const auto& [node, view] : views) out.insert(node);
  }
  return out;
}

EndorsementRecord aggregate_prevotes(const std::vector<PrevoteViews>& msgs,
                                     const std::vector<TxId>& value_txids) {
  std::set<TxId> known(value_txids.begin(), value_txids.end());
  std::map<NodeId, std::vector<std::map<TxId, View>>> per_endorser;
  for (const auto& m : msgs) {
    auto& seen = per_endorser[m.from];
    if (std::find(seen.begin(), seen.end(), m.views) != seen.end()) continue; // identical duplicate
    if (seen.size() >= 2) continue;                                           // retain at most two
    seen.push_back(m.views);
  }

  EndorsementRecord rec;
  for (const auto& [node, maps] : per_endorser) {
    if (maps.size() >= 2) {
      // Differing duplicates prove misbehaviour; jointly they endorse the
      // whole value, which only helps the txs they tried to split.
      rec.endorse_all.insert(node);
      for (const auto& txid : value_txids) rec.by_tx[txid][node] = View::Endorse;
      continue;
    }
    for (const auto& [txid, view] : maps.front()) {
      if (!known.count(txid)) continue;
      rec.by_tx[txid][node] = view;
    }
  }
  return rec;
}

void invalidate_conditional_views(EndorsementRecord& record, const std::vector<TxId>& value_order,
                                  const std::set<TxId>& removed) {
  bool removal_seen = false;
  for (const auto& txid : value_order) {
    if (removed.count(txid)) {
      removal_seen = true;
      continue;
    }
    if (!removal_seen) continue;
    auto it = record.by_tx.find(txid);
    if (it == record.by_tx.end()) continue;
    for (auto vit = it->second.begin(); vit != it->second.end();) {
      if (vit->second == View::OpposeResult) {
        vit = it->second.erase(vit);
      } else {
        ++vit;
      }
    }
  }
}

std::string tx_status_name(TxStatus s) {
  switch (s) {
    case TxStatus::Endorsed: return "endorsed";
    case TxStatus::Vetoed: return "vetoed";
    case TxStatus::Pending: return "pending";
  }
  throw Error(ErrorCode::Internal, "bad tx status");
}

std::map<TxId, TxStatus> mutual_exclusion_check(const EndorsementRecord& record, const Value& value,
                                                const std::vector<PolicyBinding>& bindings,
                                                const PolicyExpr& default_policy,
                                                const std::set<NodeId>& all_nodes) {
  std::map<TxId, TxStatus> out;
  for (size_t i = 0; i < value.txs.size(); ++i) {
    const auto& tx = value.txs[i];
    const ExecResult* result = i < value.exec_results.size() ? &value.exec_results[i] : nullptr;
    auto applicable = applicable_policies(tx, result, bindings);
    auto endorsers = record.endorsers_of(tx.txid);
    auto opposers = record.opposers_of(tx.txid);
    if (is_properly_endorsed(applicable, default_policy, endorsers)) {
      out[tx.txid] = TxStatus::Endorsed;
    } else if (is_vetoed(applicable, default_policy, opposers, all_nodes)) {
      out[tx.txid] = TxStatus::Vetoed;
    } else {
      out[tx.txid] = TxStatus::Pending;
    }
  }
  return out;
}

} // namespace flextender::policy
