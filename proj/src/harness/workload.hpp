#pragma once

#include "harness/scenario.hpp"

#include <map>
#include <vector>

namespace flextender::harness {

struct GeneratedWorkload {
  std::vector<Transaction> all; // global submission order
  std::map<NodeId, std::vector<Transaction>> per_node;
};

/// Deterministic function of (spec, cluster, seed): same inputs, same stream.
/// Transactions are dealt round-robin across node mempools in global order,
/// so node i holds txs i, i+n, i+2n, ... and proposers drain them in order.
GeneratedWorkload generate_workload(const WorkloadSpec& spec, const ClusterConfig& cluster,
                                    uint64_t seed);

/// Zipf access-share helper: fraction of account references that hit the
/// single most popular account in `txs` (both endpoints counted).
double top_account_share(const std::vector<Transaction>& txs);

} // namespace flextender::harness
