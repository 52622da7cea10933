#pragma once

#include "core/types.hpp"

namespace flextender::exec {

/// Account balances as of the last committed height.
struct WorldState {
  std::map<AccountId, int64_t> balances;
  int64_t version = -1; // height of the last committed block, -1 at genesis

  int64_t balance(const AccountId& a) const {
    auto it = balances.find(a);
    return it == balances.end() ? 0 : it->second;
  }
};

/// Backward dependency edges: each tx points at the nearest preceding tx per
/// shared account. Transitive closure over these edges recovers every tx whose
/// outcome can change when an upstream tx is dropped.
struct DepDag {
  std::map<TxId, std::set<TxId>> deps;

  bool operator==(const DepDag&) const = default;
};

struct ExecOutput {
  std::vector<ExecResult> results;
  DepDag dag;
};

/// Serial in-order execution. Transfers debit/credit unconditionally on signed
/// balances; an overdraft marks the result INSUFFICIENT instead of aborting.
ExecOutput execute_block(const WorldState& state, const std::vector<Transaction>& txs);

struct ReexecOutput {
  std::vector<ExecResult> results;
  DepDag dag;
  int recomputed = 0; // txs actually executed (not copied) in the final pass
};

/// Re-runs a block with `removed` txs dropped. With `optimized` set, only
/// transitive dependents of removed txs are recomputed and every other result
/// is copied from `prev_results`; if a recomputed tx's read or write account
/// set differs from its prior one, the whole reduced block is re-executed.
ReexecOutput reexecute_after_removal(const WorldState& state, const std::vector<Transaction>& txs,
                                     const std::set<TxId>& removed,
                                     const std::vector<ExecResult>& prev_results,
                                     const DepDag& prev_dag, bool optimized);

/// Next committed state; throws VERSION_MISMATCH unless height == version + 1.
WorldState apply_committed(const WorldState& state, const std::vector<ExecResult>& results,
                           int64_t height);

} // namespace flextender::exec
