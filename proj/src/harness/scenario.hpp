#pragma once

#include "adversary/adversary.hpp"
#include "consensus/node.hpp"
#include "core/types.hpp"
#include "policy/policy.hpp"
#include "sim/netsim.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <string>
#include <vector>

namespace flextender::harness {

enum class Mode : uint8_t { Flextender, Eov };

std::string mode_name(Mode m);
Mode mode_from_name(const std::string& s);

enum class WorkloadKind : uint8_t { ConflictFree, AllConflict, Zipf, Scripted };

std::string workload_kind_name(WorkloadKind k);
WorkloadKind workload_kind_from_name(const std::string& s);

/// Parameterized transaction stream. Everything but Scripted is synthesized
/// deterministically from (spec, seed); Scripted carries the txs verbatim.
struct WorkloadSpec {
  WorkloadKind kind = WorkloadKind::ConflictFree;
  int64_t tx_count = 16;
  int64_t batch = 8;     // proposer block size, forwarded to every node
  int64_t accounts = 64; // Zipf only
  double skew = 1.0;     // Zipf only
  std::vector<Transaction> scripted;
  // Aligned with `scripted`; "" keeps the round-robin slot. Lets a script
  // pin txs to a particular proposer's mempool.
  std::vector<NodeId> scripted_owners;

  void validate() const;
  nlohmann::ordered_json to_json() const;
};

/// One self-contained run description: cluster, network, policies, workload,
/// faults, and stopping condition. Serializable both ways; the effective
/// (post-seed-override) form is embedded in every trace so a trace can be
/// audited without the original file.
struct Scenario {
  std::string name = "scenario";
  Mode mode = Mode::Flextender;
  ClusterConfig cluster;
  sim::SimConfig sim;
  consensus::TimerConfig timers; // defaulted from sim.delta unless given
  std::vector<policy::PolicyBinding> policies;
  policy::PolicyExpr default_policy;        // resolved against the cluster
  nlohmann::ordered_json default_policy_spec; // as written: "quorum" | "f_plus_1" | expr
  std::map<NodeId, std::map<TxId, policy::View>> verdicts;
  WorkloadSpec workload;
  std::map<NodeId, std::vector<adversary::Strategy>> adversaries;
  int64_t target_heights = 1;
  bool hash_only_reproposal = true;
  bool dependency_reexec = true;
  int64_t default_balance = 1'000'000;
  std::map<AccountId, int64_t> balances; // per-account overrides
  int64_t eov_sign_cost_per_tx = 0;      // ticks of proposer work per tx (eov mode)

  void validate() const;
  nlohmann::ordered_json to_json() const;

  /// Parse + validate. `origin` prefixes every error message; syntax errors
  /// carry the line and column reported by the JSON parser.
  static Scenario parse(const std::string& text, const std::string& origin);
  static Scenario from_json(const nlohmann::json& j, const std::string& origin);
  static Scenario load_file(const std::string& path);
};

} // namespace flextender::harness
