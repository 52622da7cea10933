#include "core/types.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <set>

namespace flextender {

void ClusterConfig::validate() const {
  if (f < 0) throw Error(ErrorCode::Config, "f must be non-negative");
  if (n() < 3 * f + 1) {
    throw Error(ErrorCode::Config, "cluster needs n >= 3f+1, got n=" + std::to_string(n()) +
                                       " f=" + std::to_string(f));
  }
  std::set<NodeId> uniq(node_ids.begin(), node_ids.end());
  if (uniq.size() != node_ids.size()) throw Error(ErrorCode::Config, "duplicate node ids");
  for (const auto& id : node_ids) {
    if (id.empty()) throw Error(ErrorCode::Config, "empty node id");
  }
}

bool ClusterConfig::has_node(const NodeId& id) const {
  return std::find(node_ids.begin(), node_ids.end(), id) != node_ids.end();
}

const NodeId& ClusterConfig::proposer(int64_t height, int64_t round) const {
  if (node_ids.empty()) throw Error(ErrorCode::Config, "empty cluster");
  return node_ids[static_cast<size_t>((height + round) % n())];
}

int quorum_size(const ClusterConfig& cfg) { return (cfg.n() + cfg.f) / 2 + 1; }

int removal_threshold(const ClusterConfig& cfg) { return cfg.f + 1; }

std::vector<TxId> Value::txids() const {
  std::vector<TxId> ids;
  ids.reserve(txs.size());
  for (const auto& tx : txs) ids.push_back(tx.txid);
  return ids;
}

std::string to_hex(const Digest& d) {
  static const char* k = "0123456789abcdef";
  std::string out;
  out.reserve(64);
  for (uint8_t b : d) {
    out.push_back(k[b >> 4]);
    out.push_back(k[b & 0xf]);
  }
  return out;
}

static int hex_nibble(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  throw Error(ErrorCode::InvalidArgument, "bad hex digit");
}

Digest digest_from_hex(const std::string& hex) {
  if (hex.size() != 64) throw Error(ErrorCode::InvalidArgument, "digest hex must be 64 chars");
  Digest d{};
  for (size_t i = 0; i < 32; ++i) {
    d[i] = static_cast<uint8_t>((hex_nibble(hex[2 * i]) << 4) | hex_nibble(hex[2 * i + 1]));
  }
  return d;
}

Digest sha256(const uint8_t* data, size_t len) {
  Digest out{};
  unsigned int out_len = 0;
  if (EVP_Digest(data, len, out.data(), &out_len, EVP_sha256(), nullptr) != 1 || out_len != 32) {
    throw Error(ErrorCode::Internal, "sha256 failed");
  }
  return out;
}

Digest sha256(const std::vector<uint8_t>& data) { return sha256(data.data(), data.size()); }

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_str(std::vector<uint8_t>& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

} // namespace

std::vector<uint8_t> canonical_value_bytes(const Value& v) {
  std::vector<uint8_t> out;
  put_u32(out, static_cast<uint32_t>(v.txs.size()));
  for (const auto& tx : v.txs) {
    put_str(out, tx.txid);
    put_str(out, tx.from);
    put_str(out, tx.to);
    put_u64(out, static_cast<uint64_t>(tx.amount));
    put_str(out, tx.group_tag);
  }
  put_u32(out, static_cast<uint32_t>(v.exec_results.size()));
  for (const auto& r : v.exec_results) {
    put_str(out, r.txid);
    out.push_back(static_cast<uint8_t>(r.status));
    put_u32(out, static_cast<uint32_t>(r.read_set.size()));
    for (const auto& a : r.read_set) put_str(out, a); // std::set iterates sorted
    put_u32(out, static_cast<uint32_t>(r.write_set.size()));
    for (const auto& [a, bal] : r.write_set) {
      put_str(out, a);
      put_u64(out, static_cast<uint64_t>(bal));
    }
  }
  return out;
}

Digest value_digest(const Value& v) { return sha256(canonical_value_bytes(v)); }

} // namespace flextender
