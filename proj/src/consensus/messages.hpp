#pragma once

#include "core/types.hpp"
#include "policy/policy.hpp"

#include <nlohmann/json.hpp>

#include <optional>

namespace flextender::consensus {

enum class MsgType : uint8_t { Proposal, Prevote, Precommit };

std::string msg_type_name(MsgType t);

enum class ExclusionKind : uint8_t { IfFirst, Always };

std::string exclusion_kind_name(ExclusionKind k);
ExclusionKind exclusion_kind_from_name(const std::string& s);

enum class TimerKind : uint8_t { Propose, Prevote, Precommit };

std::string timer_kind_name(TimerKind k);

/// Wire message. Proposals carry either a full value or just its digest
/// (hash-only re-proposal); prevotes carry an optional endorsement view map
/// and the consensus flag; precommits carry removal suggestions.
struct Message {
  MsgType type = MsgType::Proposal;
  int64_t height = 0;
  int64_t round = 0;
  NodeId from;

  // Proposal payload
  std::optional<Value> value;
  std::optional<Digest> proposal_digest; // set when the value payload is omitted
  int64_t vr = -1;
  int64_t rr = -1;

  // Prevote / precommit payload; nullopt digest = nil vote
  std::optional<Digest> digest;
  std::optional<std::map<TxId, policy::View>> endorsements; // prevote only
  bool con = true;                                          // prevote only
  std::map<TxId, ExclusionKind> exclusions;                 // precommit only

  /// Digest a vote targets, or the digest a proposal resolves to.
  std::optional<Digest> target_digest() const;

  nlohmann::ordered_json to_json() const;
  static Message from_json(const nlohmann::json& j);

  /// Canonical identity for duplicate suppression and retention limits.
  std::string body_key() const { return to_json().dump(); }
};

nlohmann::ordered_json value_to_json(const Value& v);
Value value_from_json(const nlohmann::json& j);

nlohmann::ordered_json exec_result_to_json(const ExecResult& r);
ExecResult exec_result_from_json(const nlohmann::json& j);

} // namespace flextender::consensus
