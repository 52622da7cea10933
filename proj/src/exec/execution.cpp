#include "exec/execution.hpp"

#include <algorithm>

namespace flextender::exec {

namespace {

/// Copy-on-write view over a base state; only touched accounts live here.
class Scratch {
public:
  explicit Scratch(const WorldState& base) : base_(base) {}

  int64_t read(const AccountId& a) const {
    auto it = touched_.find(a);
    return it != touched_.end() ? it->second : base_.balance(a);
  }

  void write(const AccountId& a, int64_t bal) { touched_[a] = bal; }

private:
  const WorldState& base_;
  std::map<AccountId, int64_t> touched_;
};

ExecResult run_tx(Scratch& scratch, const Transaction& tx) {
  ExecResult r;
  r.txid = tx.txid;
  r.read_set = {tx.from, tx.to};
  int64_t from_bal = scratch.read(tx.from);
  r.status = from_bal < tx.amount ? ExecStatus::Insufficient : ExecStatus::Ok;
  scratch.write(tx.from, from_bal - tx.amount);
  scratch.write(tx.to, scratch.read(tx.to) + tx.amount);
  r.write_set[tx.from] = scratch.read(tx.from);
  r.write_set[tx.to] = scratch.read(tx.to);
  return r;
}

void link_deps(DepDag& dag, std::map<AccountId, TxId>& last_toucher, const Transaction& tx) {
  auto& entry = dag.deps[tx.txid];
  for (const AccountId& a : {tx.from, tx.to}) {
    auto it = last_toucher.find(a);
    if (it != last_toucher.end() && it->second != tx.txid) entry.insert(it->second);
  }
  last_toucher[tx.from] = tx.txid;
  last_toucher[tx.to] = tx.txid;
}

} // namespace

ExecOutput execute_block(const WorldState& state, const std::vector<Transaction>& txs) {
  ExecOutput out;
  out.results.reserve(txs.size());
  Scratch scratch(state);
  std::map<AccountId, TxId> last_toucher;
  for (const auto& tx : txs) {
    out.results.push_back(run_tx(scratch, tx));
    link_deps(out.dag, last_toucher, tx);
  }
  return out;
}

ReexecOutput reexecute_after_removal(const WorldState& state, const std::vector<Transaction>& txs,
                                     const std::set<TxId>& removed,
                                     const std::vector<ExecResult>& prev_results,
                                     const DepDag& prev_dag, bool optimized) {
  std::set<TxId> known;
  for (const auto& tx : txs) known.insert(tx.txid);
  for (const auto& r : removed) {
    if (!known.count(r)) {
      throw Error(ErrorCode::RemovedNotPresent, "removed txid not in block: " + r);
    }
  }

  std::vector<Transaction> reduced;
  reduced.reserve(txs.size());
  for (const auto& tx : txs) {
    if (!removed.count(tx.txid)) reduced.push_back(tx);
  }

  if (!optimized) {
    auto full = execute_block(state, reduced);
    return {std::move(full.results), std::move(full.dag), static_cast<int>(reduced.size())};
  }

  std::map<TxId, const ExecResult*> prev_by_id;
  for (const auto& r : prev_results) prev_by_id[r.txid] = &r;

  // Walk in order; a tx is affected when any backward edge lands on a removed
  // or already-affected tx.
  std::set<TxId> affected(removed.begin(), removed.end());
  ReexecOutput out;
  out.results.reserve(reduced.size());
  Scratch scratch(state);
  std::map<AccountId, TxId> last_toucher;
  for (const auto& tx : reduced) {
    bool must_recompute = true;
    auto dit = prev_dag.deps.find(tx.txid);
    auto pit = prev_by_id.find(tx.txid);
    if (pit != prev_by_id.end()) {
      must_recompute = false;
      if (dit != prev_dag.deps.end()) {
        for (const auto& dep : dit->second) {
          if (affected.count(dep)) {
            must_recompute = true;
            break;
          }
        }
      }
    }
    if (must_recompute) {
      affected.insert(tx.txid);
      ExecResult r = run_tx(scratch, tx);
      ++out.recomputed;
      if (pit != prev_by_id.end()) {
        const ExecResult& prev = *pit->second;
        auto keys = [](const std::map<AccountId, int64_t>& m) {
          std::set<AccountId> s;
          for (const auto& [k, v] : m) s.insert(k);
          return s;
        };
        if (r.read_set != prev.read_set || keys(r.write_set) != keys(prev.write_set)) {
          // New dependency structure; the copied prefix may be stale.
          auto full = execute_block(state, reduced);
          return {std::move(full.results), std::move(full.dag), static_cast<int>(reduced.size())};
        }
      }
      out.results.push_back(std::move(r));
    } else {
      // Untouched by the removal: prior result still holds, replay its writes
      // so downstream recomputation sees consistent balances.
      out.results.push_back(*pit->second);
      for (const auto& [a, bal] : pit->second->write_set) scratch.write(a, bal);
    }
    link_deps(out.dag, last_toucher, tx);
  }
  return out;
}

WorldState apply_committed(const WorldState& state, const std::vector<ExecResult>& results,
                           int64_t height) {
  if (height != state.version + 1) {
    throw Error(ErrorCode::VersionMismatch,
                "apply at height " + std::to_string(height) + " onto version " +
                    std::to_string(state.version));
  }
  WorldState next = state;
  for (const auto& r : results) {
    for (const auto& [a, bal] : r.write_set) next.balances[a] = bal;
  }
  next.version = height;
  return next;
}

} // namespace flextender::exec
