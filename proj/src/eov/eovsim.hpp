#pragma once

#include "exec/execution.hpp"

namespace flextender::eov {

/// Primary-side speculation: every tx executes against the same committed
/// snapshot, blind to the others in the batch.
std::vector<ExecResult> pre_execute(const exec::WorldState& state,
                                    const std::vector<Transaction>& txs);

struct ValidationOutcome {
  std::vector<TxId> committed; // block order
  std::vector<TxId> aborted;   // block order
  exec::WorldState new_state;
};

/// Serial validation of an ordered block of snapshot results: a tx aborts iff
/// its read set intersects the union of write sets of preceding non-aborted
/// txs; surviving write sets apply as-is.
ValidationOutcome validate_and_apply(const exec::WorldState& state, const Value& block,
                                     int64_t height);

} // namespace flextender::eov
