#include "consensus/messages.hpp"

namespace flextender::consensus {

std::string msg_type_name(MsgType t) {
  switch (t) {
    case MsgType::Proposal: return "proposal";
    case MsgType::Prevote: return "prevote";
    case MsgType::Precommit: return "precommit";
  }
  throw Error(ErrorCode::Internal, "bad message type");
}

std::string exclusion_kind_name(ExclusionKind k) {
  return k == ExclusionKind::IfFirst ? "if_first" : "always";
}

ExclusionKind exclusion_kind_from_name(const std::string& s) {
  if (s == "if_first") return ExclusionKind::IfFirst;
  if (s == "always") return ExclusionKind::Always;
  throw Error(ErrorCode::Config, "unknown exclusion kind: " + s);
}

std::string timer_kind_name(TimerKind k) {
  switch (k) {
    case TimerKind::Propose: return "propose";
    case TimerKind::Prevote: return "prevote";
    case TimerKind::Precommit: return "precommit";
  }
  throw Error(ErrorCode::Internal, "bad timer kind");
}

std::optional<Digest> Message::target_digest() const {
  if (type == MsgType::Proposal) {
    if (value) return value_digest(*value);
    return proposal_digest;
  }
  return digest;
}

namespace {

std::string view_code(policy::View v) {
  switch (v) {
    case policy::View::Endorse: return "e";
    case policy::View::OpposeResult: return "or";
    case policy::View::OpposeAlways: return "oa";
  }
  throw Error(ErrorCode::Internal, "bad view");
}

policy::View view_from_code(const std::string& s) {
  if (s == "e") return policy::View::Endorse;
  if (s == "or") return policy::View::OpposeResult;
  if (s == "oa") return policy::View::OpposeAlways;
  throw Error(ErrorCode::Config, "bad view code: " + s);
}

} // namespace

nlohmann::ordered_json exec_result_to_json(const ExecResult& r) {
  nlohmann::ordered_json j;
  j["id"] = r.txid;
  j["st"] = r.status == ExecStatus::Ok ? "ok" : "insufficient";
  j["reads"] = r.read_set;
  nlohmann::ordered_json writes;
  for (const auto& [a, bal] : r.write_set) writes[a] = bal;
  j["writes"] = std::move(writes);
  return j;
}

ExecResult exec_result_from_json(const nlohmann::json& j) {
  ExecResult r;
  r.txid = j.at("id").get<std::string>();
  std::string st = j.at("st").get<std::string>();
  if (st == "ok") {
    r.status = ExecStatus::Ok;
  } else if (st == "insufficient") {
    r.status = ExecStatus::Insufficient;
  } else {
    throw Error(ErrorCode::Config, "bad exec status: " + st);
  }
  for (const auto& a : j.at("reads")) r.read_set.insert(a.get<std::string>());
  for (const auto& [a, bal] : j.at("writes").items()) r.write_set[a] = bal.get<int64_t>();
  return r;
}

nlohmann::ordered_json value_to_json(const Value& v) {
  nlohmann::ordered_json j;
  auto txs = nlohmann::ordered_json::array();
  for (const auto& tx : v.txs) {
    nlohmann::ordered_json t;
    t["id"] = tx.txid;
    t["from"] = tx.from;
    t["to"] = tx.to;
    t["amt"] = tx.amount;
    if (!tx.group_tag.empty()) t["tag"] = tx.group_tag;
    txs.push_back(std::move(t));
  }
  j["txs"] = std::move(txs);
  auto res = nlohmann::ordered_json::array();
  for (const auto& r : v.exec_results) res.push_back(exec_result_to_json(r));
  j["res"] = std::move(res);
  j["oh"] = v.origin_height;
  return j;
}

Value value_from_json(const nlohmann::json& j) {
  Value v;
  for (const auto& t : j.at("txs")) {
    Transaction tx;
    tx.txid = t.at("id").get<std::string>();
    tx.from = t.at("from").get<std::string>();
    tx.to = t.at("to").get<std::string>();
    tx.amount = t.at("amt").get<int64_t>();
    if (t.contains("tag")) tx.group_tag = t["tag"].get<std::string>();
    v.txs.push_back(std::move(tx));
  }
  for (const auto& r : j.at("res")) v.exec_results.push_back(exec_result_from_json(r));
  v.origin_height = j.at("oh").get<int64_t>();
  return v;
}

nlohmann::ordered_json Message::to_json() const {
  nlohmann::ordered_json j;
  switch (type) {
    case MsgType::Proposal: {
      j["type"] = "proposal";
      j["h"] = height;
      j["r"] = round;
      j["from"] = from;
      j["vr"] = vr;
      j["rr"] = rr;
      if (value) {
        j["value"] = value_to_json(*value);
      } else if (proposal_digest) {
        j["digest"] = to_hex(*proposal_digest);
      }
      break;
    }
    case MsgType::Prevote: {
      j["type"] = "prevote";
      j["h"] = height;
      j["r"] = round;
      j["from"] = from;
      j["digest"] = digest ? nlohmann::ordered_json(to_hex(*digest)) : nullptr;
      j["con"] = con;
      if (endorsements) {
        nlohmann::ordered_json views;
        for (const auto& [txid, v] : *endorsements) views[txid] = view_code(v);
        j["views"] = std::move(views);
      } else {
        j["views"] = nullptr;
      }
      break;
    }
    case MsgType::Precommit: {
      j["type"] = "precommit";
      j["h"] = height;
      j["r"] = round;
      j["from"] = from;
      j["digest"] = digest ? nlohmann::ordered_json(to_hex(*digest)) : nullptr;
      nlohmann::ordered_json excl;
      for (const auto& [txid, k] : exclusions) excl[txid] = exclusion_kind_name(k);
      j["excl"] = std::move(excl);
      break;
    }
  }
  return j;
}

Message Message::from_json(const nlohmann::json& j) {
  Message m;
  std::string type = j.at("type").get<std::string>();
  m.height = j.at("h").get<int64_t>();
  m.round = j.at("r").get<int64_t>();
  m.from = j.at("from").get<std::string>();
  if (type == "proposal") {
    m.type = MsgType::Proposal;
    m.vr = j.at("vr").get<int64_t>();
    m.rr = j.at("rr").get<int64_t>();
    if (j.contains("value")) {
      m.value = value_from_json(j["value"]);
    } else if (j.contains("digest")) {
      m.proposal_digest = digest_from_hex(j["digest"].get<std::string>());
    } else {
      throw Error(ErrorCode::Config, "proposal needs value or digest");
    }
  } else if (type == "prevote") {
    m.type = MsgType::Prevote;
    if (!j.at("digest").is_null()) m.digest = digest_from_hex(j["digest"].get<std::string>());
    m.con = j.at("con").get<bool>();
    if (j.contains("views") && !j["views"].is_null()) {
      std::map<TxId, policy::View> views;
      for (const auto& [txid, code] : j["views"].items()) {
        views[txid] = view_from_code(code.get<std::string>());
      }
      m.endorsements = std::move(views);
    }
  } else if (type == "precommit") {
    m.type = MsgType::Precommit;
    if (!j.at("digest").is_null()) m.digest = digest_from_hex(j["digest"].get<std::string>());
    if (j.contains("excl")) {
      for (const auto& [txid, k] : j["excl"].items()) {
        m.exclusions[txid] = exclusion_kind_from_name(k.get<std::string>());
      }
    }
  } else {
    throw Error(ErrorCode::Config, "unknown message type: " + type);
  }
  return m;
}

} // namespace flextender::consensus
