#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace flextender {

using NodeId = std::string;
using TxId = std::string;
using AccountId = std::string;

enum class ErrorCode {
  Config,
  Io,
  InvalidArgument,
  RemovedNotPresent,
  VersionMismatch,
  MaxTimeExceeded,
  Internal,
};

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

private:
  ErrorCode code_;
};

/// Static cluster membership. Requires n >= 3f + 1.
struct ClusterConfig {
  std::vector<NodeId> node_ids;
  int f = 0;

  int n() const { return static_cast<int>(node_ids.size()); }
  void validate() const;
  bool has_node(const NodeId& id) const;
  /// Rotating proposer: node_ids[(height + round) % n].
  const NodeId& proposer(int64_t height, int64_t round) const;
};

/// Smallest integer strictly above (n + f) / 2; equals 2f+1 when n = 3f+1.
int quorum_size(const ClusterConfig& cfg);
/// f + 1: any set this large contains a correct node.
int removal_threshold(const ClusterConfig& cfg);

struct Transaction {
  TxId txid;
  AccountId from;
  AccountId to;
  int64_t amount = 0;
  std::string group_tag; // reserved for workload bookkeeping

  bool operator==(const Transaction&) const = default;
};

enum class ExecStatus : uint8_t { Ok = 0, Insufficient = 1 };

struct ExecResult {
  TxId txid;
  std::set<AccountId> read_set;
  std::map<AccountId, int64_t> write_set; // account -> resulting balance
  ExecStatus status = ExecStatus::Ok;

  bool operator==(const ExecResult&) const = default;
};

/// Ordered transaction batch plus (once executed) per-tx results.
struct Value {
  std::vector<Transaction> txs;
  std::vector<ExecResult> exec_results; // empty, or exactly one per tx
  int64_t origin_height = 0;

  size_t size() const { return txs.size(); }
  std::vector<TxId> txids() const;
  bool operator==(const Value&) const = default;
};

using Digest = std::array<uint8_t, 32>;

std::string to_hex(const Digest& d);
Digest digest_from_hex(const std::string& hex);

Digest sha256(const uint8_t* data, size_t len);
Digest sha256(const std::vector<uint8_t>& data);

/// Little-endian, length-prefixed encoding of txs then exec_results.
/// origin_height is routing metadata and stays out of the digest.
std::vector<uint8_t> canonical_value_bytes(const Value& v);
Digest value_digest(const Value& v);

struct RoundId {
  int64_t height = 0;
  int64_t round = 0;

  auto operator<=>(const RoundId&) const = default;
};

} // namespace flextender
