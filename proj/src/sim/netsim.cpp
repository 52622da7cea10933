#include "sim/netsim.hpp"

#include <algorithm>
#include <cmath>

namespace flextender::sim {

std::string fanout_name(Fanout f) { return f == Fanout::All ? "all" : "log2n"; }

Fanout fanout_from_name(const std::string& s) {
  if (s == "all") return Fanout::All;
  if (s == "log2n") return Fanout::Log2N;
  throw Error(ErrorCode::Config, "unknown fanout '" + s + "' (expected all | log2n)");
}

void SimConfig::validate() const {
  if (delta < 1) throw Error(ErrorCode::Config, "delta must be >= 1 tick");
  if (gst < 0) throw Error(ErrorCode::Config, "gst must be >= 0");
  if (pre_gst_min < 1) throw Error(ErrorCode::Config, "pre_gst_delay.min must be >= 1 tick");
  if (pre_gst_max < pre_gst_min)
    throw Error(ErrorCode::Config, "pre_gst_delay.max must be >= pre_gst_delay.min");
  if (max_sim_time < 1) throw Error(ErrorCode::Config, "max_sim_time must be >= 1 tick");
  for (const auto& w : partitions) {
    if (w.from < 0 || w.until < w.from)
      throw Error(ErrorCode::Config, "partition window must satisfy 0 <= from <= until");
    if (w.until > gst)
      throw Error(ErrorCode::Config, "partition windows must close by gst");
  }
}

Scheduler::Scheduler(SimConfig cfg, ClusterConfig cluster, std::set<NodeId> byzantine)
    : cfg_(std::move(cfg)), cluster_(std::move(cluster)), byzantine_(std::move(byzantine)),
      rng_(cfg_.seed) {
  cfg_.validate();
  cluster_.validate();
  if (cfg_.gst > 0) {
    Event ev;
    ev.kind = Event::Kind::GstFlush;
    push_event(cfg_.gst, ev);
  }
}

uint64_t Scheduler::rand_range(uint64_t lo, uint64_t hi) { return rng_() % (hi - lo + 1) + lo; }

size_t Scheduler::fanout_width() const {
  int n = cluster_.n();
  if (n <= 1) return 0;
  return static_cast<size_t>(std::ceil(std::log2(static_cast<double>(n))));
}

Mid Scheduler::new_envelope(const NodeId& from, const consensus::Message& msg) {
  Mid mid = next_mid_++;
  envelopes_.emplace(mid, Envelope{msg, from, now_});
  received_[mid].insert(from);
  covered_[mid].insert(from);
  return mid;
}

void Scheduler::push_event(Tick at, Event ev) {
  queue_.emplace(std::make_pair(at, next_seq_++), std::move(ev));
}

Mid Scheduler::broadcast(const NodeId& from, const consensus::Message& msg, Tick send_delay) {
  if (crashed_.count(from)) return 0;
  Mid mid = new_envelope(from, msg);
  if (send_delay > 0) envelopes_.at(mid).created_at = now_ + send_delay;
  relay(mid, from, now_ + std::max<Tick>(send_delay, 0));
  return mid;
}

Mid Scheduler::targeted_send(const NodeId& from, const consensus::Message& msg,
                             const std::set<NodeId>& targets) {
  if (crashed_.count(from)) return 0;
  Mid mid = new_envelope(from, msg);
  for (const auto& nid : cluster_.node_ids)
    if (nid != from && targets.count(nid)) schedule_delivery(mid, nid, from, now_, std::nullopt);
  return mid;
}

void Scheduler::release_to(Mid mid, const NodeId& to, Tick at) {
  auto it = envelopes_.find(mid);
  if (it == envelopes_.end()) throw Error(ErrorCode::InvalidArgument, "release_to: unknown mid");
  if (received_[mid].count(to)) return;
  schedule_delivery(mid, to, it->second.origin, now_, at);
}

void Scheduler::schedule_timer(const NodeId& node, consensus::TimerKind kind, int64_t height,
                               int64_t round, Tick duration) {
  if (crashed_.count(node)) return;
  Tick fire = now_ + duration;
  Event ev;
  ev.kind = Event::Kind::TimerFire;
  ev.node = node;
  ev.timer = kind;
  ev.height = height;
  ev.round = round;
  push_event(fire, ev);
  if (on_timer_armed) on_timer_armed(TimerArmed{node, kind, height, round, now_, fire});
}

void Scheduler::schedule_crash(const NodeId& node, Tick at) {
  Event ev;
  ev.kind = Event::Kind::Crash;
  ev.node = node;
  push_event(std::max(at, now_), ev);
}

void Scheduler::schedule_recover(const NodeId& node, Tick at) {
  Event ev;
  ev.kind = Event::Kind::Recover;
  ev.node = node;
  push_event(std::max(at, now_), ev);
}

void Scheduler::flush_missing() {
  for (const auto& [mid, env] : envelopes_) {
    const auto& rec = received_[mid];
    const NodeId* holder = nullptr;
    for (const auto& nid : cluster_.node_ids) {
      if (rec.count(nid) && !byzantine_.count(nid) && !crashed_.count(nid)) {
        holder = &nid;
        break;
      }
    }
    if (!holder) continue;
    for (const auto& nid : cluster_.node_ids) {
      if (rec.count(nid) || byzantine_.count(nid) || crashed_.count(nid)) continue;
      schedule_delivery(mid, nid, *holder, now_, std::nullopt);
    }
  }
}

bool Scheduler::step(bool ignore_time_limit) {
  if (queue_.empty()) return false;
  auto it = queue_.begin();
  Tick at = it->first.first;
  if (!ignore_time_limit && at > cfg_.max_sim_time) {
    exhausted_ = true;
    return false;
  }
  Event ev = std::move(it->second);
  queue_.erase(it);
  now_ = at;
  dispatch(ev);
  return true;
}

void Scheduler::dispatch(const Event& ev) {
  switch (ev.kind) {
  case Event::Kind::Deliver:
    dispatch_deliver(ev);
    break;
  case Event::Kind::TimerFire:
    if (!crashed_.count(ev.node) && on_timer)
      on_timer(TimerFire{ev.node, ev.timer, ev.height, ev.round, now_});
    break;
  case Event::Kind::Crash:
    if (crashed_.insert(ev.node).second && on_crash) on_crash(ev.node, now_);
    break;
  case Event::Kind::Recover:
    crashed_.erase(ev.node);
    break;
  case Event::Kind::GstFlush:
    flush_missing();
    break;
  }
}

void Scheduler::dispatch_deliver(const Event& ev) {
  if (crashed_.count(ev.node)) return;
  auto& rec = received_[ev.mid];
  bool first = rec.insert(ev.node).second;
  if (!first && cfg_.duplicate_suppression) return;
  const Envelope& env = envelopes_.at(ev.mid);
  if (on_deliver) {
    Delivery d;
    d.mid = ev.mid;
    d.msg = &env.msg;
    d.origin = env.origin;
    d.relayer = ev.relayer;
    d.to = ev.node;
    d.created_at = env.created_at;
    d.sent_at = ev.sent_at;
    d.at = now_;
    on_deliver(d);
  }
  if (first && !byzantine_.count(ev.node)) relay(ev.mid, ev.node, now_);
}

void Scheduler::relay(Mid mid, const NodeId& holder, Tick sent_at) {
  const auto& cov = covered_[mid];
  std::vector<NodeId> pool;
  for (const auto& nid : cluster_.node_ids) {
    if (nid == holder || crashed_.count(nid)) continue;
    if (cfg_.duplicate_suppression && cov.count(nid)) continue;
    pool.push_back(nid);
  }
  if (cfg_.fanout == Fanout::Log2N && pool.size() > fanout_width()) {
    std::vector<NodeId> picked;
    for (size_t i = 0; i < fanout_width(); ++i) {
      size_t idx = static_cast<size_t>(rand_range(0, pool.size() - 1));
      picked.push_back(std::move(pool[idx]));
      pool.erase(pool.begin() + static_cast<ptrdiff_t>(idx));
    }
    pool = std::move(picked);
  }
  for (const auto& nid : pool) schedule_delivery(mid, nid, holder, sent_at, std::nullopt);
}

void Scheduler::schedule_delivery(Mid mid, const NodeId& to, const NodeId& relayer, Tick sent_at,
                                  std::optional<Tick> forced_at) {
  covered_[mid].insert(to);
  Tick at = forced_at ? std::max(*forced_at, sent_at) : hop_arrival(relayer, to, sent_at);
  Event ev;
  ev.kind = Event::Kind::Deliver;
  ev.mid = mid;
  ev.node = to;
  ev.relayer = relayer;
  ev.sent_at = sent_at;
  push_event(at, ev);
}

Tick Scheduler::hop_arrival(const NodeId& relayer, const NodeId& to, Tick sent_at) {
  Tick heal = -1;
  for (const auto& w : cfg_.partitions)
    if ((w.node == relayer || w.node == to) && sent_at >= w.from && sent_at < w.until)
      heal = std::max(heal, w.until);
  if (heal >= 0) return heal + static_cast<Tick>(rand_range(1, static_cast<uint64_t>(cfg_.delta)));
  if (sent_at < cfg_.gst)
    return sent_at + static_cast<Tick>(rand_range(static_cast<uint64_t>(cfg_.pre_gst_min),
                                                  static_cast<uint64_t>(cfg_.pre_gst_max)));
  return sent_at + static_cast<Tick>(rand_range(1, static_cast<uint64_t>(cfg_.delta)));
}

} // namespace flextender::sim
