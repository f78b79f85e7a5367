#pragma once

#include <algorithm>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "itv/error.hpp"
#include "itv/ingest.hpp"

namespace itv {

struct DisentangleConfig {
  double window_seconds = 7200.0;
  std::size_t max_context_before = 50;
  std::size_t max_context_after = 50;
  bool include_bots = false;

  void validate() const {
    if (!(window_seconds > 0)) throw ConfigError("window_seconds must be positive");
    if (max_context_before == 0 || max_context_after == 0) throw ConfigError("context caps must be positive");
  }
  Nanos window() const { return seconds_to_nanos(window_seconds); }
};

struct Conversation {
  std::string conversation_id;
  std::string source_thread_id;
  std::vector<RawMessage> messages;
  std::set<std::string> merged_context_ids;
};

// Time from a candidate to the nearer boundary of the thread it could join.
inline Nanos boundary_distance(const Thread& t, const RawMessage& m) {
  if (m.timestamp < t.t_start) return t.t_start.nanos() - m.timestamp.nanos();
  return m.timestamp.nanos() - t.t_end.nanos();
}

// Unthreaded messages in [t_start - w, t_start) and (t_end, t_end + w], each
// side capped nearest-first. `pool` must be in log order.
inline std::vector<RawMessage> candidate_context(std::span<const RawMessage> pool, const Thread& thread,
                                                 const DisentangleConfig& config) {
  const Nanos w = config.window();
  const Nanos lo = thread.t_start.nanos() - w;
  const Nanos hi = thread.t_end.nanos() + w;
  std::vector<const RawMessage*> before;
  std::vector<const RawMessage*> after;
  for (const auto& m : pool) {
    if (m.is_bot && !config.include_bots) continue;
    const Nanos ts = m.timestamp.nanos();
    if (m.timestamp < thread.t_start) {
      if (ts >= lo) before.push_back(&m);
    } else if (thread.t_end < m.timestamp) {
      if (ts <= hi) after.push_back(&m);
    }
  }
  // `before` is ascending, so the nearest are at the back; `after` nearest at the front.
  if (before.size() > config.max_context_before) {
    before.erase(before.begin(), before.end() - static_cast<std::ptrdiff_t>(config.max_context_before));
  }
  if (after.size() > config.max_context_after) after.resize(config.max_context_after);
  std::vector<RawMessage> out;
  out.reserve(before.size() + after.size());
  for (const auto* m : before) out.push_back(*m);
  for (const auto* m : after) out.push_back(*m);
  return out;
}

inline std::vector<RawMessage> candidate_context(const ChannelLog& log, const Thread& thread,
                                                 const DisentangleConfig& config) {
  const auto pool = native_threads(log).unthreaded;
  return candidate_context(std::span<const RawMessage>(pool), thread, config);
}

// The user-overlap rule: a candidate joins iff its author took part in the thread.
inline bool merges_into(const Thread& thread, const RawMessage& candidate) {
  return thread.participants.count(candidate.author) > 0;
}

inline Conversation make_conversation(const Thread& thread, std::vector<RawMessage> merged) {
  Conversation c;
  c.conversation_id = thread.id;
  c.source_thread_id = thread.id;
  for (const auto& m : merged) c.merged_context_ids.insert(m.id);
  c.messages = std::move(merged);
  c.messages.push_back(thread.root);
  c.messages.insert(c.messages.end(), thread.replies.begin(), thread.replies.end());
  std::sort(c.messages.begin(), c.messages.end(), message_before);
  return c;
}

inline Conversation merge_contextual(const Thread& thread, std::span<const RawMessage> candidates) {
  std::vector<RawMessage> merged;
  for (const auto& m : candidates) {
    if (merges_into(thread, m)) merged.push_back(m);
  }
  return make_conversation(thread, std::move(merged));
}

struct DisentangleResult {
  std::vector<Conversation> conversations;
  std::size_t discarded = 0;
  std::vector<Warning> warnings;
};

// Runs both rules over every native thread. A message eligible for several
// threads goes to the one with the nearest boundary; ties go to the earlier
// thread (threads are ordered by t_start, then id).
inline DisentangleResult disentangle_all(const ChannelLog& log, const DisentangleConfig& config) {
  config.validate();
  DisentangleResult out;
  ThreadSet ts = native_threads(log);
  out.warnings = ts.warnings;
  const std::span<const RawMessage> pool(ts.unthreaded);

  struct Claim {
    std::size_t thread;
    Nanos distance;
  };
  std::unordered_map<std::string, Claim> best;
  std::unordered_map<std::string, const RawMessage*> by_id;
  for (const auto& m : pool) by_id.emplace(m.id, &m);

  for (std::size_t t = 0; t < ts.threads.size(); ++t) {
    for (const auto& c : candidate_context(pool, ts.threads[t], config)) {
      if (!merges_into(ts.threads[t], c)) continue;
      const Nanos d = boundary_distance(ts.threads[t], c);
      auto it = best.find(c.id);
      if (it == best.end()) {
        best.emplace(c.id, Claim{t, d});
      } else if (d < it->second.distance) {
        it->second = Claim{t, d};
      }
    }
  }

  std::vector<std::vector<RawMessage>> merged(ts.threads.size());
  for (const auto& m : pool) {
    if (auto it = best.find(m.id); it != best.end()) merged[it->second.thread].push_back(m);
  }
  out.discarded = pool.size() - best.size();
  for (std::size_t t = 0; t < ts.threads.size(); ++t) {
    out.conversations.push_back(make_conversation(ts.threads[t], std::move(merged[t])));
  }
  return out;
}

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::optional<double> precision() const {
    if (tp + fp == 0) return std::nullopt;
    return static_cast<double>(tp) / static_cast<double>(tp + fp);
  }
  std::optional<double> recall() const {
    if (tp + fn == 0) return std::nullopt;
    return static_cast<double>(tp) / static_cast<double>(tp + fn);
  }
};

inline ConfusionCounts eval_disentanglement(const std::vector<bool>& predicted, const std::vector<bool>& gold) {
  if (predicted.size() != gold.size()) {
    throw LengthMismatch("predicted has " + std::to_string(predicted.size()) + " labels, gold has " +
                         std::to_string(gold.size()));
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (predicted[i] && gold[i]) ++c.tp;
    else if (predicted[i]) ++c.fp;
    else if (gold[i]) ++c.fn;
    else ++c.tn;
  }
  return c;
}

// Evaluation protocol only: at most one conversation per period (UTC days by
// default), the one whose thread root comes first. Not used by disentangle_all.
inline std::vector<Conversation> sample_per_period(std::span<const Conversation> conversations,
                                                   Nanos period = seconds_to_nanos(86400)) {
  if (period <= 0) throw ConfigError("sampling period must be positive");
  auto root_time = [](const Conversation& c) {
    for (const auto& m : c.messages) {
      if (m.id == c.source_thread_id) return m.timestamp.nanos();
    }
    return c.messages.empty() ? Nanos{0} : c.messages.front().timestamp.nanos();
  };
  auto floor_div = [](Nanos a, Nanos b) { return a / b - (a % b < 0 ? 1 : 0); };
  std::map<Nanos, std::pair<Nanos, const Conversation*>> best;
  for (const auto& c : conversations) {
    const Nanos t = root_time(c);
    auto [it, fresh] = best.try_emplace(floor_div(t, period), t, &c);
    if (!fresh && t < it->second.first) it->second = {t, &c};
  }
  std::vector<Conversation> out;
  for (const auto& [_, v] : best) out.push_back(*v.second);
  return out;
}

inline nlohmann::ordered_json to_json(const Conversation& c) {
  nlohmann::ordered_json j;
  j["conversation_id"] = c.conversation_id;
  j["source_thread_id"] = c.source_thread_id;
  auto ids = nlohmann::ordered_json::array();
  for (const auto& m : c.messages) ids.push_back(m.id);
  j["message_ids"] = std::move(ids);
  j["merged_context_ids"] = c.merged_context_ids;
  return j;
}

inline void write_conversations(std::ostream& out, std::span<const Conversation> conversations) {
  for (const auto& c : conversations) out << to_json(c).dump() << '\n';
}

// Rehydrates conversations against the log they were cut from.
inline std::vector<Conversation> read_conversations(std::istream& in, const ChannelLog& log) {
  std::unordered_map<std::string, const RawMessage*> by_id;
  for (const auto& m : log.messages) by_id.emplace(m.id, &m);
  std::vector<Conversation> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      Conversation c;
      c.conversation_id = j.at("conversation_id").get<std::string>();
      c.source_thread_id = j.at("source_thread_id").get<std::string>();
      for (const auto& id : j.at("message_ids")) {
        auto it = by_id.find(id.get<std::string>());
        if (it == by_id.end()) throw MalformedRecord(lineno, "unknown message id " + id.dump());
        c.messages.push_back(*it->second);
      }
      for (const auto& id : j.at("merged_context_ids")) c.merged_context_ids.insert(id.get<std::string>());
      out.push_back(std::move(c));
    } catch (const nlohmann::json::exception& e) {
      throw MalformedRecord(lineno, e.what());
    }
  }
  return out;
}

}  // namespace itv
