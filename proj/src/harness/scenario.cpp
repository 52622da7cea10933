#include "harness/scenario.hpp"

#include <fstream>
#include <sstream>

namespace flextender::harness {

using nlohmann::json;
using nlohmann::ordered_json;

std::string mode_name(Mode m) { return m == Mode::Flextender ? "flextender" : "eov"; }

Mode mode_from_name(const std::string& s) {
  if (s == "flextender") return Mode::Flextender;
  if (s == "eov") return Mode::Eov;
  throw Error(ErrorCode::Config, "unknown mode '" + s + "' (want flextender|eov)");
}

namespace {
const char* kWorkloadNames[] = {"conflict_free", "all_conflict", "zipf", "scripted"};
}

std::string workload_kind_name(WorkloadKind k) { return kWorkloadNames[static_cast<int>(k)]; }

WorkloadKind workload_kind_from_name(const std::string& s) {
  for (int i = 0; i < 4; ++i)
    if (s == kWorkloadNames[i]) return static_cast<WorkloadKind>(i);
  throw Error(ErrorCode::Config,
              "unknown workload kind '" + s + "' (want conflict_free|all_conflict|zipf|scripted)");
}

// ---------------------------------------------------------------------------
// Strict field access. Every reader carries the JSON path so a bad value is
// reported as e.g. "scenario.json: /sim/delta: expected a positive integer".

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::Config, path + ": " + what);
}

void expect_object(const json& j, const std::string& path) {
  if (!j.is_object()) fail(path, "expected an object");
}

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& path) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok) fail(path + "/" + it.key(), "unknown key");
  }
}

const json* opt_key(const json& j, const char* k) {
  auto it = j.find(k);
  return it == j.end() || it->is_null() ? nullptr : &*it;
}

const json& req_key(const json& j, const char* k, const std::string& path) {
  const json* p = opt_key(j, k);
  if (!p) fail(path, "missing required key '" + std::string(k) + "'");
  return *p;
}

int64_t get_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) fail(path, "expected an integer");
  return j.get<int64_t>();
}

uint64_t get_uint(const json& j, const std::string& path) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<int64_t>() >= 0))
    fail(path, "expected an unsigned integer");
  return j.get<uint64_t>();
}

double get_num(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  return j.get<double>();
}

std::string get_str(const json& j, const std::string& path) {
  if (!j.is_string()) fail(path, "expected a string");
  return j.get<std::string>();
}

bool get_bool(const json& j, const std::string& path) {
  if (!j.is_boolean()) fail(path, "expected a boolean");
  return j.get<bool>();
}

template <typename F>
void rethrow_at(const std::string& path, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    if (std::string(e.what()).rfind(path, 0) == 0) throw; // already prefixed
    throw Error(e.code(), path + ": " + e.what());
  }
}

Transaction tx_from_json(const json& j, const std::string& path) {
  expect_object(j, path);
  check_keys(j, {"txid", "from", "to", "amount", "group_tag", "owner"}, path);
  Transaction tx;
  tx.txid = get_str(req_key(j, "txid", path), path + "/txid");
  tx.from = get_str(req_key(j, "from", path), path + "/from");
  tx.to = get_str(req_key(j, "to", path), path + "/to");
  tx.amount = get_int(req_key(j, "amount", path), path + "/amount");
  if (const json* g = opt_key(j, "group_tag")) tx.group_tag = get_str(*g, path + "/group_tag");
  return tx;
}

ordered_json tx_to_json(const Transaction& tx) {
  ordered_json j{{"txid", tx.txid}, {"from", tx.from}, {"to", tx.to}, {"amount", tx.amount}};
  if (!tx.group_tag.empty()) j["group_tag"] = tx.group_tag;
  return j;
}

ClusterConfig cluster_from_json(const json& j, const std::string& path) {
  expect_object(j, path);
  check_keys(j, {"nodes", "f"}, path);
  ClusterConfig c;
  const json& nodes = req_key(j, "nodes", path);
  if (!nodes.is_array()) fail(path + "/nodes", "expected an array of node ids");
  for (size_t i = 0; i < nodes.size(); ++i)
    c.node_ids.push_back(get_str(nodes[i], path + "/nodes/" + std::to_string(i)));
  c.f = static_cast<int>(get_int(req_key(j, "f", path), path + "/f"));
  return c;
}

sim::SimConfig sim_from_json(const json& j, const std::string& path) {
  expect_object(j, path);
  check_keys(j,
             {"seed", "delta", "gst", "pre_gst_min", "pre_gst_max", "fanout",
              "duplicate_suppression", "max_sim_time", "partitions"},
             path);
  sim::SimConfig c;
  if (const json* p = opt_key(j, "seed")) c.seed = get_uint(*p, path + "/seed");
  if (const json* p = opt_key(j, "delta")) c.delta = get_int(*p, path + "/delta");
  if (const json* p = opt_key(j, "gst")) c.gst = get_int(*p, path + "/gst");
  if (const json* p = opt_key(j, "pre_gst_min")) c.pre_gst_min = get_int(*p, path + "/pre_gst_min");
  if (const json* p = opt_key(j, "pre_gst_max")) c.pre_gst_max = get_int(*p, path + "/pre_gst_max");
  if (const json* p = opt_key(j, "fanout"))
    rethrow_at(path + "/fanout",
               [&] { c.fanout = sim::fanout_from_name(get_str(*p, path + "/fanout")); });
  if (const json* p = opt_key(j, "duplicate_suppression"))
    c.duplicate_suppression = get_bool(*p, path + "/duplicate_suppression");
  if (const json* p = opt_key(j, "max_sim_time"))
    c.max_sim_time = get_int(*p, path + "/max_sim_time");
  if (const json* p = opt_key(j, "partitions")) {
    if (!p->is_array()) fail(path + "/partitions", "expected an array");
    for (size_t i = 0; i < p->size(); ++i) {
      std::string pp = path + "/partitions/" + std::to_string(i);
      const json& w = (*p)[i];
      expect_object(w, pp);
      check_keys(w, {"node", "from", "until"}, pp);
      sim::PartitionWindow win;
      win.node = get_str(req_key(w, "node", pp), pp + "/node");
      win.from = get_int(req_key(w, "from", pp), pp + "/from");
      win.until = get_int(req_key(w, "until", pp), pp + "/until");
      c.partitions.push_back(std::move(win));
    }
  }
  return c;
}

ordered_json sim_to_json(const sim::SimConfig& c) {
  ordered_json j{{"seed", c.seed},
                 {"delta", c.delta},
                 {"gst", c.gst},
                 {"pre_gst_min", c.pre_gst_min},
                 {"pre_gst_max", c.pre_gst_max},
                 {"fanout", sim::fanout_name(c.fanout)},
                 {"duplicate_suppression", c.duplicate_suppression},
                 {"max_sim_time", c.max_sim_time}};
  if (!c.partitions.empty()) {
    ordered_json arr = ordered_json::array();
    for (const auto& w : c.partitions)
      arr.push_back(ordered_json{{"node", w.node}, {"from", w.from}, {"until", w.until}});
    j["partitions"] = std::move(arr);
  }
  return j;
}

consensus::TimerConfig timers_from_json(const json& j, int64_t delta, const std::string& path) {
  expect_object(j, path);
  check_keys(j,
             {"propose_base", "propose_backoff", "prevote_base", "prevote_backoff",
              "precommit_base", "precommit_backoff"},
             path);
  consensus::TimerConfig t = consensus::TimerConfig::defaults(delta);
  if (const json* p = opt_key(j, "propose_base")) t.propose_base = get_int(*p, path + "/propose_base");
  if (const json* p = opt_key(j, "propose_backoff"))
    t.propose_backoff = get_int(*p, path + "/propose_backoff");
  if (const json* p = opt_key(j, "prevote_base")) t.prevote_base = get_int(*p, path + "/prevote_base");
  if (const json* p = opt_key(j, "prevote_backoff"))
    t.prevote_backoff = get_int(*p, path + "/prevote_backoff");
  if (const json* p = opt_key(j, "precommit_base"))
    t.precommit_base = get_int(*p, path + "/precommit_base");
  if (const json* p = opt_key(j, "precommit_backoff"))
    t.precommit_backoff = get_int(*p, path + "/precommit_backoff");
  return t;
}

ordered_json timers_to_json(const consensus::TimerConfig& t) {
  return ordered_json{{"propose_base", t.propose_base},
                      {"propose_backoff", t.propose_backoff},
                      {"prevote_base", t.prevote_base},
                      {"prevote_backoff", t.prevote_backoff},
                      {"precommit_base", t.precommit_base},
                      {"precommit_backoff", t.precommit_backoff}};
}

} // namespace

// ---------------------------------------------------------------------------
// WorkloadSpec

void WorkloadSpec::validate() const {
  if (kind == WorkloadKind::Scripted) {
    if (scripted.empty()) throw Error(ErrorCode::Config, "workload: scripted tx list is empty");
    std::set<TxId> seen;
    for (const auto& tx : scripted) {
      if (tx.txid.empty() || tx.from.empty() || tx.to.empty())
        throw Error(ErrorCode::Config, "workload: scripted tx with empty txid/from/to");
      if (!seen.insert(tx.txid).second)
        throw Error(ErrorCode::Config, "workload: duplicate scripted txid '" + tx.txid + "'");
    }
  } else {
    if (tx_count < 0) throw Error(ErrorCode::Config, "workload: tx_count must be >= 0");
  }
  if (batch < 1) throw Error(ErrorCode::Config, "workload: batch must be >= 1");
  if (kind == WorkloadKind::Zipf) {
    if (accounts < 2) throw Error(ErrorCode::Config, "workload: zipf needs >= 2 accounts");
    if (skew < 0.0) throw Error(ErrorCode::Config, "workload: zipf skew must be >= 0");
  }
}

ordered_json WorkloadSpec::to_json() const {
  ordered_json j{{"kind", workload_kind_name(kind)}};
  if (kind == WorkloadKind::Scripted) {
    ordered_json arr = ordered_json::array();
    for (size_t i = 0; i < scripted.size(); ++i) {
      ordered_json tj = tx_to_json(scripted[i]);
      if (i < scripted_owners.size() && !scripted_owners[i].empty())
        tj["owner"] = scripted_owners[i];
      arr.push_back(std::move(tj));
    }
    j["txs"] = std::move(arr);
  } else {
    j["tx_count"] = tx_count;
  }
  j["batch"] = batch;
  if (kind == WorkloadKind::Zipf) {
    j["accounts"] = accounts;
    j["skew"] = skew;
  }
  return j;
}

namespace {

WorkloadSpec workload_from_json(const json& j, const std::string& path) {
  expect_object(j, path);
  check_keys(j, {"kind", "tx_count", "batch", "accounts", "skew", "txs"}, path);
  WorkloadSpec w;
  rethrow_at(path + "/kind", [&] {
    w.kind = workload_kind_from_name(get_str(req_key(j, "kind", path), path + "/kind"));
  });
  if (const json* p = opt_key(j, "tx_count")) w.tx_count = get_int(*p, path + "/tx_count");
  if (const json* p = opt_key(j, "batch")) w.batch = get_int(*p, path + "/batch");
  if (const json* p = opt_key(j, "accounts")) w.accounts = get_int(*p, path + "/accounts");
  if (const json* p = opt_key(j, "skew")) w.skew = get_num(*p, path + "/skew");
  if (const json* p = opt_key(j, "txs")) {
    if (!p->is_array()) fail(path + "/txs", "expected an array of transactions");
    for (size_t i = 0; i < p->size(); ++i) {
      std::string tp = path + "/txs/" + std::to_string(i);
      w.scripted.push_back(tx_from_json((*p)[i], tp));
      std::string owner;
      if (const json* o = opt_key((*p)[i], "owner")) owner = get_str(*o, tp + "/owner");
      w.scripted_owners.push_back(std::move(owner));
    }
  }
  if (w.kind == WorkloadKind::Scripted) w.tx_count = static_cast<int64_t>(w.scripted.size());
  return w;
}

} // namespace

// ---------------------------------------------------------------------------
// Scenario

void Scenario::validate() const {
  cluster.validate();
  if (cluster.n() < 2)
    throw Error(ErrorCode::Config,
                "cluster: need at least 2 nodes; a single node forms a quorum by itself and "
                "commits empty heights in a zero-latency cascade");
  sim.validate();
  timers.validate(sim.delta);
  for (const auto& w : sim.partitions)
    if (!cluster.has_node(w.node))
      throw Error(ErrorCode::Config, "sim: partition references unknown node '" + w.node + "'");
  default_policy.validate(cluster);
  for (size_t i = 0; i < policies.size(); ++i) {
    const auto& b = policies[i];
    if (b.target.empty())
      throw Error(ErrorCode::Config, "policies/" + std::to_string(i) + ": empty target account");
    b.policy.validate(cluster);
    if (b.trigger.kind == policy::TriggerKind::Custom &&
        !policy::custom_predicate_known(b.trigger.custom_id))
      throw Error(ErrorCode::Config, "policies/" + std::to_string(i) + ": unknown custom trigger '" +
                                         b.trigger.custom_id + "'");
  }
  for (const auto& [nid, _] : verdicts)
    if (!cluster.has_node(nid))
      throw Error(ErrorCode::Config, "verdicts: unknown node '" + nid + "'");
  if (static_cast<int>(adversaries.size()) > cluster.f)
    throw Error(ErrorCode::Config, "adversaries: " + std::to_string(adversaries.size()) +
                                       " byzantine nodes exceed f=" + std::to_string(cluster.f));
  for (const auto& [nid, strategies] : adversaries) {
    if (!cluster.has_node(nid))
      throw Error(ErrorCode::Config, "adversaries: unknown node '" + nid + "'");
    if (strategies.empty())
      throw Error(ErrorCode::Config, "adversaries/" + nid + ": empty strategy list");
    for (const auto& s : strategies) s.validate(cluster);
  }
  workload.validate();
  for (const auto& owner : workload.scripted_owners)
    if (!owner.empty() && !cluster.has_node(owner))
      throw Error(ErrorCode::Config, "workload: tx owner '" + owner + "' is not in the cluster");
  if (target_heights < 1) throw Error(ErrorCode::Config, "target_heights must be >= 1");
  if (default_balance < 0) throw Error(ErrorCode::Config, "balances: default must be >= 0");
  for (const auto& [acct, bal] : balances) {
    if (acct.empty()) throw Error(ErrorCode::Config, "balances: empty account name");
    if (bal < 0)
      throw Error(ErrorCode::Config, "balances: negative balance for '" + acct + "'");
  }
  if (eov_sign_cost_per_tx < 0)
    throw Error(ErrorCode::Config, "eov: sign_cost_per_tx must be >= 0");
}

ordered_json Scenario::to_json() const {
  ordered_json j;
  j["name"] = name;
  j["mode"] = mode_name(mode);
  ordered_json nodes = ordered_json::array();
  for (const auto& id : cluster.node_ids) nodes.push_back(id);
  j["cluster"] = ordered_json{{"nodes", std::move(nodes)}, {"f", cluster.f}};
  j["sim"] = sim_to_json(sim);
  j["timers"] = timers_to_json(timers);
  if (!policies.empty()) {
    ordered_json arr = ordered_json::array();
    for (const auto& b : policies) {
      ordered_json e{{"target", b.target}, {"policy", b.policy.to_json()}};
      if (b.trigger.kind != policy::TriggerKind::Always) e["trigger"] = b.trigger.to_json();
      arr.push_back(std::move(e));
    }
    j["policies"] = std::move(arr);
  }
  j["default_policy"] = default_policy_spec.is_null() ? ordered_json("quorum")
                                                      : default_policy_spec;
  if (!verdicts.empty()) {
    ordered_json v;
    for (const auto& [nid, m] : verdicts) {
      ordered_json inner;
      for (const auto& [txid, view] : m) inner[txid] = policy::view_name(view);
      v[nid] = std::move(inner);
    }
    j["verdicts"] = std::move(v);
  }
  j["workload"] = workload.to_json();
  if (!adversaries.empty()) {
    ordered_json a;
    for (const auto& [nid, strategies] : adversaries) {
      ordered_json arr = ordered_json::array();
      for (const auto& s : strategies) arr.push_back(ordered_json(s.to_json()));
      a[nid] = std::move(arr);
    }
    j["adversaries"] = std::move(a);
  }
  j["target_heights"] = target_heights;
  j["optimizations"] = ordered_json{{"hash_only_reproposal", hash_only_reproposal},
                                    {"dependency_reexec", dependency_reexec}};
  ordered_json bal{{"default", default_balance}};
  if (!balances.empty()) {
    ordered_json ov;
    for (const auto& [acct, b] : balances) ov[acct] = b;
    bal["overrides"] = std::move(ov);
  }
  j["balances"] = std::move(bal);
  if (mode == Mode::Eov || eov_sign_cost_per_tx > 0)
    j["eov"] = ordered_json{{"sign_cost_per_tx", eov_sign_cost_per_tx}};
  return j;
}

Scenario Scenario::from_json(const json& j, const std::string& origin) {
  expect_object(j, origin);
  check_keys(j,
             {"name", "mode", "cluster", "sim", "timers", "policies", "default_policy", "verdicts",
              "workload", "adversaries", "target_heights", "optimizations", "balances", "eov"},
             origin);
  Scenario sc;
  if (const json* p = opt_key(j, "name")) sc.name = get_str(*p, origin + "/name");
  if (const json* p = opt_key(j, "mode"))
    rethrow_at(origin + "/mode", [&] { sc.mode = mode_from_name(get_str(*p, origin + "/mode")); });
  sc.cluster = cluster_from_json(req_key(j, "cluster", origin), origin + "/cluster");
  rethrow_at(origin + "/cluster", [&] { sc.cluster.validate(); });
  if (const json* p = opt_key(j, "sim")) sc.sim = sim_from_json(*p, origin + "/sim");
  sc.timers = consensus::TimerConfig::defaults(sc.sim.delta);
  if (const json* p = opt_key(j, "timers"))
    sc.timers = timers_from_json(*p, sc.sim.delta, origin + "/timers");
  if (const json* p = opt_key(j, "policies")) {
    if (!p->is_array()) fail(origin + "/policies", "expected an array");
    for (size_t i = 0; i < p->size(); ++i) {
      std::string path = origin + "/policies/" + std::to_string(i);
      const json& e = (*p)[i];
      expect_object(e, path);
      check_keys(e, {"target", "policy", "trigger"}, path);
      policy::PolicyBinding b;
      b.target = get_str(req_key(e, "target", path), path + "/target");
      rethrow_at(path + "/policy",
                 [&] { b.policy = policy::PolicyExpr::from_json(req_key(e, "policy", path)); });
      if (const json* t = opt_key(e, "trigger"))
        rethrow_at(path + "/trigger", [&] { b.trigger = policy::Trigger::from_json(*t); });
      sc.policies.push_back(std::move(b));
    }
  }
  sc.default_policy_spec = "quorum";
  if (const json* p = opt_key(j, "default_policy")) sc.default_policy_spec = *p;
  {
    const std::string path = origin + "/default_policy";
    const ordered_json& spec = sc.default_policy_spec;
    if (spec.is_string() && spec.get<std::string>() == "quorum") {
      sc.default_policy = policy::default_quorum_policy(sc.cluster);
    } else if (spec.is_string() && spec.get<std::string>() == "f_plus_1") {
      sc.default_policy = policy::default_f_plus_1_policy(sc.cluster);
    } else if (spec.is_object()) {
      rethrow_at(path, [&] { sc.default_policy = policy::PolicyExpr::from_json(spec); });
    } else {
      fail(path, "expected \"quorum\", \"f_plus_1\", or a policy expression object");
    }
  }
  if (const json* p = opt_key(j, "verdicts")) {
    expect_object(*p, origin + "/verdicts");
    for (auto it = p->begin(); it != p->end(); ++it) {
      std::string path = origin + "/verdicts/" + it.key();
      expect_object(it.value(), path);
      for (auto vt = it.value().begin(); vt != it.value().end(); ++vt)
        rethrow_at(path + "/" + vt.key(), [&] {
          sc.verdicts[it.key()][vt.key()] =
              policy::view_from_name(get_str(vt.value(), path + "/" + vt.key()));
        });
    }
  }
  if (const json* p = opt_key(j, "workload"))
    sc.workload = workload_from_json(*p, origin + "/workload");
  if (const json* p = opt_key(j, "adversaries")) {
    expect_object(*p, origin + "/adversaries");
    for (auto it = p->begin(); it != p->end(); ++it) {
      std::string path = origin + "/adversaries/" + it.key();
      if (!it.value().is_array()) fail(path, "expected an array of strategies");
      std::vector<adversary::Strategy> list;
      for (size_t i = 0; i < it.value().size(); ++i)
        rethrow_at(path + "/" + std::to_string(i), [&] {
          list.push_back(adversary::Strategy::from_json(it.value()[i]));
        });
      sc.adversaries[it.key()] = std::move(list);
    }
  }
  if (const json* p = opt_key(j, "target_heights"))
    sc.target_heights = get_int(*p, origin + "/target_heights");
  if (const json* p = opt_key(j, "optimizations")) {
    std::string path = origin + "/optimizations";
    expect_object(*p, path);
    check_keys(*p, {"hash_only_reproposal", "dependency_reexec"}, path);
    if (const json* q = opt_key(*p, "hash_only_reproposal"))
      sc.hash_only_reproposal = get_bool(*q, path + "/hash_only_reproposal");
    if (const json* q = opt_key(*p, "dependency_reexec"))
      sc.dependency_reexec = get_bool(*q, path + "/dependency_reexec");
  }
  if (const json* p = opt_key(j, "balances")) {
    std::string path = origin + "/balances";
    expect_object(*p, path);
    check_keys(*p, {"default", "overrides"}, path);
    if (const json* q = opt_key(*p, "default"))
      sc.default_balance = get_int(*q, path + "/default");
    if (const json* q = opt_key(*p, "overrides")) {
      expect_object(*q, path + "/overrides");
      for (auto it = q->begin(); it != q->end(); ++it)
        sc.balances[it.key()] = get_int(it.value(), path + "/overrides/" + it.key());
    }
  }
  if (const json* p = opt_key(j, "eov")) {
    std::string path = origin + "/eov";
    expect_object(*p, path);
    check_keys(*p, {"sign_cost_per_tx"}, path);
    if (const json* q = opt_key(*p, "sign_cost_per_tx"))
      sc.eov_sign_cost_per_tx = get_int(*q, path + "/sign_cost_per_tx");
  }
  rethrow_at(origin, [&] { sc.validate(); });
  return sc;
}

Scenario Scenario::parse(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Config, origin + ": " + e.what());
  }
  return from_json(j, origin);
}

Scenario Scenario::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, path + ": cannot open scenario file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

} // namespace flextender::harness
