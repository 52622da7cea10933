#include "harness/workload.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace flextender::harness {

namespace {

std::string acct(int64_t k) { return "a" + std::to_string(k); }

/// Inverse-CDF sampler over ranks 0..n-1 with weight (rank+1)^-skew.
class ZipfSampler {
public:
  ZipfSampler(int64_t n, double skew) {
    cum_.reserve(static_cast<size_t>(n));
    double total = 0.0;
    for (int64_t k = 0; k < n; ++k) {
      total += std::pow(static_cast<double>(k + 1), -skew);
      cum_.push_back(total);
    }
  }

  int64_t draw(std::mt19937_64& rng) const {
    double u = std::ldexp(static_cast<double>(rng() >> 11), -53) * cum_.back();
    auto it = std::lower_bound(cum_.begin(), cum_.end(), u);
    if (it == cum_.end()) --it;
    return static_cast<int64_t>(it - cum_.begin());
  }

private:
  std::vector<double> cum_;
};

} // namespace

GeneratedWorkload generate_workload(const WorkloadSpec& spec, const ClusterConfig& cluster,
                                    uint64_t seed) {
  spec.validate();
  GeneratedWorkload out;
  std::mt19937_64 rng(seed);

  switch (spec.kind) {
  case WorkloadKind::ConflictFree:
    for (int64_t i = 0; i < spec.tx_count; ++i)
      out.all.push_back(
          {"tx" + std::to_string(i), acct(2 * i), acct(2 * i + 1), 1 + i % 97, ""});
    break;
  case WorkloadKind::AllConflict:
    for (int64_t i = 0; i < spec.tx_count; ++i)
      out.all.push_back({"tx" + std::to_string(i), acct(0), acct(1), 1 + i % 97, ""});
    break;
  case WorkloadKind::Zipf: {
    ZipfSampler z(spec.accounts, spec.skew);
    for (int64_t i = 0; i < spec.tx_count; ++i) {
      int64_t from = z.draw(rng);
      int64_t to = z.draw(rng);
      while (to == from) to = z.draw(rng);
      out.all.push_back({"tx" + std::to_string(i), acct(from), acct(to), 1 + i % 97, ""});
    }
    break;
  }
  case WorkloadKind::Scripted:
    out.all = spec.scripted;
    break;
  }

  const auto& ids = cluster.node_ids;
  for (const auto& id : ids) out.per_node[id]; // every node present, even if empty
  for (size_t i = 0; i < out.all.size(); ++i) {
    const NodeId& owner = i < spec.scripted_owners.size() && !spec.scripted_owners[i].empty()
                              ? spec.scripted_owners[i]
                              : ids[i % ids.size()];
    out.per_node[owner].push_back(out.all[i]);
  }
  return out;
}

double top_account_share(const std::vector<Transaction>& txs) {
  std::map<AccountId, int64_t> hits;
  int64_t total = 0;
  for (const auto& tx : txs) {
    ++hits[tx.from];
    ++hits[tx.to];
    total += 2;
  }
  int64_t best = 0;
  for (const auto& [_, c] : hits) best = std::max(best, c);
  return total == 0 ? 0.0 : static_cast<double>(best) / static_cast<double>(total);
}

} // namespace flextender::harness
