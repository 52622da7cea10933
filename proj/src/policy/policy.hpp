#pragma once

#include "core/types.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <optional>

namespace flextender::policy {

/// Endorser's view of one transaction, carried in prevotes.
enum class View : uint8_t { Endorse, OpposeResult, OpposeAlways };

std::string view_name(View v);
View view_from_name(const std::string& s);

/// Monotone expression over endorser identities.
struct PolicyExpr {
  enum class Kind : uint8_t { Leaf, And, Or, Threshold };

  Kind kind = Kind::Leaf;
  NodeId node;                      // Leaf
  int t = 0;                        // Threshold
  std::vector<PolicyExpr> children; // And / Or / Threshold

  static PolicyExpr leaf(NodeId id);
  static PolicyExpr all_of(std::vector<PolicyExpr> cs);
  static PolicyExpr any_of(std::vector<PolicyExpr> cs);
  static PolicyExpr threshold(int t, std::vector<PolicyExpr> cs);

  bool satisfied_by(const std::set<NodeId>& endorsers) const;
  void collect_leaves(std::set<NodeId>& out) const;
  std::set<NodeId> leaves() const;
  void validate(const ClusterConfig& cluster) const;

  nlohmann::json to_json() const;
  static PolicyExpr from_json(const nlohmann::json& j);
};

/// Default policy: any quorum of the whole cluster.
PolicyExpr default_quorum_policy(const ClusterConfig& cluster);
/// Alternative default: any f+1 nodes.
PolicyExpr default_f_plus_1_policy(const ClusterConfig& cluster);

enum class TriggerKind : uint8_t { Always, AmountExceeds, Custom };

struct Trigger {
  TriggerKind kind = TriggerKind::Always;
  int64_t limit = 0;      // AmountExceeds
  std::string custom_id;  // Custom

  /// Custom predicates read execution results, so their applicability can
  /// change when upstream transactions are removed. Always/AmountExceeds
  /// depend only on static tx fields.
  bool result_dependent() const { return kind == TriggerKind::Custom; }

  bool fires(const Transaction& tx, const ExecResult* result) const;

  nlohmann::json to_json() const;
  static Trigger from_json(const nlohmann::json& j);
};

bool custom_predicate_known(const std::string& id);

/// Attaches a policy to an account; the policy governs any tx touching it.
struct PolicyBinding {
  AccountId target;
  PolicyExpr policy;
  Trigger trigger;

  bool matches_target(const Transaction& tx) const { return tx.from == target || tx.to == target; }
};

/// Bindings whose target matches the tx and whose trigger fires.
std::vector<const PolicyBinding*> applicable_policies(const Transaction& tx, const ExecResult* result,
                                                      const std::vector<PolicyBinding>& bindings);

/// Every applicable policy satisfied; with no applicable bindings the default applies.
bool is_properly_endorsed(const std::vector<const PolicyBinding*>& applicable,
                          const PolicyExpr& default_policy, const std::set<NodeId>& endorsers);

/// Some applicable policy (or the default) cannot be satisfied even if every
/// non-opposing node endorses. Monotonicity makes the full remaining set the
/// best case, so one evaluation decides unsatisfiability.
bool is_vetoed(const std::vector<const PolicyBinding*>& applicable, const PolicyExpr& default_policy,
               const std::set<NodeId>& opposers, const std::set<NodeId>& all_nodes);

/// One endorser's contribution extracted from a single prevote.
struct PrevoteViews {
  NodeId from;
  std::map<TxId, View> views;
};

/// Merge of one round's prevote views for a fixed (height, round, digest).
struct EndorsementRecord {
  std::map<TxId, std::map<NodeId, View>> by_tx;
  std::set<NodeId> endorse_all; // endorsers caught sending differing view maps

  std::set<NodeId> endorsers_of(const TxId& txid) const;
  std::set<NodeId> opposers_of(const TxId& txid) const;
  std::set<NodeId> always_opposers_of(const TxId& txid) const;
  /// Nodes contributing any view (or an endorse-all proof) this round.
  std::set<NodeId> participants() const;
};

/// Duplicate differing view maps from one endorser become an endorsement of
/// every tx in the value; byte-identical duplicates collapse to one.
EndorsementRecord aggregate_prevotes(const std::vector<PrevoteViews>& msgs,
                                     const std::vector<TxId>& value_txids);

/// Conditional opposition stands only while everything before the tx stays.
/// Dropping a preceding tx resets OPPOSE_RESULT views on later txs to no-view.
void invalidate_conditional_views(EndorsementRecord& record, const std::vector<TxId>& value_order,
                                  const std::set<TxId>& removed);

enum class TxStatus : uint8_t { Endorsed, Vetoed, Pending };

std::string tx_status_name(TxStatus s);

/// Per-tx classification; a tx both endorsable and vetoable counts as ENDORSED.
std::map<TxId, TxStatus> mutual_exclusion_check(const EndorsementRecord& record, const Value& value,
                                                const std::vector<PolicyBinding>& bindings,
                                                const PolicyExpr& default_policy,
                                                const std::set<NodeId>& all_nodes);

} // namespace flextender::policy
