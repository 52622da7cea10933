#pragma once

#include "consensus/messages.hpp"
#include "eov/eovsim.hpp"
#include "exec/execution.hpp"
#include "policy/policy.hpp"

#include <deque>
#include <functional>

namespace flextender::consensus {

enum class Step : uint8_t { Propose, Prevote, Precommit };

std::string step_name(Step s);

struct TimerConfig {
  int64_t propose_base = 0, propose_backoff = 0;
  int64_t prevote_base = 0, prevote_backoff = 0;
  int64_t precommit_base = 0, precommit_backoff = 0;

  static TimerConfig defaults(int64_t delta);
  int64_t duration(TimerKind k, int64_t round) const;
  void validate(int64_t delta) const;
};

struct NodeConfig {
  NodeId id;
  ClusterConfig cluster;
  std::vector<policy::PolicyBinding> bindings;
  policy::PolicyExpr default_policy;
  /// Scripted application-level endorsement views; anything absent is ENDORSE.
  std::map<TxId, policy::View> verdicts;
  TimerConfig timers;
  int batch_size = 8;
  bool hash_only_reproposal = true;
  bool dependency_reexec = true;
  /// Off in EOV mode: prevotes carry no views, blocks carry snapshot results,
  /// removal never triggers, and the machine degenerates to plain three-phase
  /// consensus over pre-executed blocks.
  bool endorsement_enabled = true;
};

/// A human-readable state transition the harness turns into a trace record.
struct NoteRec {
  std::string event;
  int64_t height = 0;
  int64_t round = 0;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

struct Action {
  enum class Kind : uint8_t { Send, Timer, Decide, Note };

  Kind kind = Kind::Note;
  Message msg;      // Send
  TimerKind timer = TimerKind::Propose;
  int64_t timer_height = 0, timer_round = 0, timer_duration = 0; // Timer
  int64_t decide_height = 0, decide_round = 0;                   // Decide
  Value decided;                                                  // Decide
  NoteRec note;                                                   // Note

  static Action send(Message m);
  static Action set_timer(TimerKind k, int64_t h, int64_t r, int64_t duration);
  static Action decide(int64_t h, int64_t r, Value v);
  static Action make_note(NoteRec n);
};

/// One replica of the endorsement-embedded consensus state machine. All
/// methods are deterministic transitions; outputs are returned, never sent.
/// A node's own broadcasts are fed into its log synchronously.
class Node {
public:
  Node(NodeConfig cfg, exec::WorldState genesis);

  std::vector<Action> start();
  std::vector<Action> on_message(const Message& m);
  std::vector<Action> on_timer(TimerKind kind, int64_t height, int64_t round);

  // Mempool: the harness feeds txs, decisions drop them.
  void push_tx(Transaction tx);
  void push_front_txs(const std::vector<Transaction>& txs);
  void drop_txs(const std::set<TxId>& txids);
  size_t mempool_size() const { return mempool_.size(); }

  const NodeId& id() const { return cfg_.id; }
  int64_t height() const { return height_; }
  int64_t round() const { return round_; }
  Step step() const { return step_; }
  int64_t locked_round() const { return locked_round_; }
  int64_t valid_round() const { return valid_round_; }
  int64_t ref_round() const { return ref_round_; }
  const std::optional<Value>& ref_value() const { return ref_value_; }
  const std::optional<Value>& valid_value() const { return valid_value_; }
  const std::map<int64_t, Value>& decisions() const { return decisions_; }
  const exec::WorldState& world() const { return world_; }
  int64_t recompute_count() const { return recompute_count_; }

  // Reference/endorsement verification against this node's message log,
  // exposed for tests and the trace auditor.
  bool verify_endorsement(int64_t r, const Value& v) const;
  bool verify_reference(int64_t rr, const Value& v) const;
  std::map<TxId, ExclusionKind> get_excluded_tx(int64_t r, const Value& v) const;
  std::vector<Transaction> extract(int64_t r, const Value& v) const;

private:
  struct RoundLog {
    std::vector<Message> proposals;
    std::vector<Message> prevotes;
    std::vector<Message> precommits;
    std::set<std::string> body_keys;
    std::map<NodeId, int> per_sender[3]; // distinct bodies retained by type
  };

  struct HeightLog {
    std::map<int64_t, RoundLog> rounds;
    std::map<std::string, Value> values; // digest hex -> full value
  };

  struct ExecArtifacts {
    std::vector<ExecResult> results;
    exec::DepDag dag;
  };

  // Log plumbing
  bool log_insert(const Message& m);
  HeightLog& hlog(int64_t h) { return log_[h]; }
  const RoundLog* rlog(int64_t h, int64_t r) const;
  const Value* resolved_value(const Message& proposal) const;
  void remember_value(const Value& v);

  // Quorum arithmetic over the current height's log
  int count_prevotes(int64_t r, const std::optional<Digest>& digest) const;
  int count_prevotes_any(int64_t r) const;
  int count_precommits(int64_t r, const Digest& digest, bool require_clean) const;
  int count_precommits_any(int64_t r) const;
  std::map<TxId, std::set<NodeId>> suggestion_senders(int64_t r, const Digest& digest,
                                                      bool always_only) const;
  policy::EndorsementRecord round_record(int64_t r, const Digest& digest,
                                         const std::vector<TxId>& txids) const;
  std::set<NodeId> all_nodes() const;

  // Execution with per-height caching
  std::string txs_key(const std::vector<Transaction>& txs) const;
  const ExecArtifacts& exec_full(const std::vector<Transaction>& txs);
  const ExecArtifacts* exec_cached(const std::vector<Transaction>& txs) const;
  std::vector<ExecResult> exec_for_proposal(const std::vector<Transaction>& txs, int64_t rr);

  bool valid_structure(const Value& v) const;
  bool valid_execution(const Value& v, int64_t rr);
  std::map<TxId, policy::View> own_views(const Value& v) const;
  bool designated_endorser_for_some_tx(const Value& v) const;

  // Clause evaluation; each returns true when it changed state or emitted.
  void poll(std::vector<Action>& out);
  bool try_reconstruct(std::vector<Action>& out);
  bool try_commit(std::vector<Action>& out);
  bool try_propose_new(std::vector<Action>& out);
  bool try_propose_requeued(std::vector<Action>& out);
  bool try_nil_quorum(std::vector<Action>& out);
  bool try_lock(std::vector<Action>& out);
  bool try_rapid_removal(std::vector<Action>& out);
  bool try_prevote_any_timer(std::vector<Action>& out);
  bool try_valid_update(std::vector<Action>& out);
  bool try_examined(std::vector<Action>& out);
  bool try_precommit_any_timer(std::vector<Action>& out);
  bool try_conflict(std::vector<Action>& out);
  bool try_catch_up(std::vector<Action>& out);
  bool try_endorsement_only(std::vector<Action>& out);

  void start_round(int64_t r, std::vector<Action>& out);
  void broadcast(Message m, std::vector<Action>& out);
  void send_prevote(const std::optional<Digest>& digest,
                    std::optional<std::map<TxId, policy::View>> views, bool con,
                    std::vector<Action>& out);
  void send_precommit(const std::optional<Digest>& digest, std::map<TxId, ExclusionKind> excl,
                      std::vector<Action>& out);
  void note(std::vector<Action>& out, std::string event, nlohmann::ordered_json extra = {});
  void suggestion_notes(const Value& v, const std::map<TxId, ExclusionKind>& excl,
                        const std::map<TxId, policy::TxStatus>& statuses,
                        std::vector<Action>& out);

  NodeConfig cfg_;
  int quorum_;
  int fplus1_;

  int64_t height_ = 0;
  int64_t round_ = 0;
  Step step_ = Step::Propose;

  std::optional<Value> locked_value_;
  int64_t locked_round_ = -1;
  std::optional<Value> valid_value_;
  int64_t valid_round_ = -1;
  std::optional<Value> ref_value_;
  int64_t ref_round_ = -1;

  std::map<int64_t, Value> decisions_;
  exec::WorldState world_;
  std::deque<Transaction> mempool_;

  std::map<int64_t, HeightLog> log_;
  std::map<std::string, ExecArtifacts> exec_cache_; // cleared at commit

  // Per-height bookkeeping, cleared at commit
  std::set<int64_t> sent_endorsement_rounds_;
  std::map<int64_t, std::optional<Digest>> my_prevote_; // consensus prevote per round
  std::set<int64_t> prevote_timer_armed_;
  std::set<int64_t> precommit_timer_armed_;
  std::set<int64_t> lock_done_rounds_;
  std::set<std::string> noted_suggestions_; // txid dedup for removal notes

  int64_t recompute_count_ = 0;
  bool started_ = false;
};

} // namespace flextender::consensus
