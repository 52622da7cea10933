#include "eov/eovsim.hpp"

namespace flextender::eov {

std::vector<ExecResult> pre_execute(const exec::WorldState& state,
                                    const std::vector<Transaction>& txs) {
  std::vector<ExecResult> results;
  results.reserve(txs.size());
  for (const auto& tx : txs) {
    auto single = exec::execute_block(state, {tx});
    results.push_back(std::move(single.results.front()));
  }
  return results;
}

ValidationOutcome validate_and_apply(const exec::WorldState& state, const Value& block,
                                     int64_t height) {
  if (block.exec_results.size() != block.txs.size()) {
    throw Error(ErrorCode::InvalidArgument, "block must carry one result per tx");
  }
  if (height != state.version + 1) {
    throw Error(ErrorCode::VersionMismatch,
                "validate at height " + std::to_string(height) + " onto version " +
                    std::to_string(state.version));
  }
  ValidationOutcome out;
  out.new_state = state;
  std::set<AccountId> written;
  for (size_t i = 0; i < block.txs.size(); ++i) {
    const auto& r = block.exec_results[i];
    bool conflict = false;
    for (const auto& a : r.read_set) {
      if (written.count(a)) {
        conflict = true;
        break;
      }
    }
    if (conflict) {
      out.aborted.push_back(block.txs[i].txid);
      continue;
    }
    out.committed.push_back(block.txs[i].txid);
    for (const auto& [a, bal] : r.write_set) {
      written.insert(a);
      out.new_state.balances[a] = bal;
    }
  }
  out.new_state.version = height;
  return out;
}

} // namespace flextender::eov
