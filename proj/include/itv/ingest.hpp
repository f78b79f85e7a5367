#pragma once

#include <algorithm>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "itv/error.hpp"
#include "itv/timestamp.hpp"

namespace itv {

struct RawMessage {
  std::string id;
  std::string channel_id;
  std::string author;
  Timestamp timestamp;
  std::string text;
  std::optional<std::string> parent_thread_id;
  bool is_bot = false;

  friend bool operator==(const RawMessage&, const RawMessage&) = default;
};

// Strict log order: (timestamp, id).
inline bool message_before(const RawMessage& a, const RawMessage& b) {
  if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
  return a.id < b.id;
}

struct ChannelLog {
  std::string channel_id;
  std::vector<RawMessage> messages;
};

struct Warning {
  std::string kind;
  std::string detail;
};

struct ParseOptions {
  bool skip_malformed = false;
};

struct ParsedLog {
  ChannelLog log;
  std::size_t records = 0;
  std::size_t skipped = 0;
  std::vector<Warning> warnings;
};

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw MissingField(key);
  return *it;
}

inline std::string require_string(const nlohmann::json& obj, const char* key, std::size_t line) {
  const auto& v = require(obj, key);
  if (!v.is_string()) throw MalformedRecord(line, std::string("field \"") + key + "\" must be a string");
  return v.get<std::string>();
}

inline RawMessage message_from_json(const nlohmann::json& obj, std::size_t line) {
  if (!obj.is_object()) throw MalformedRecord(line, "record is not a JSON object");
  RawMessage m;
  m.id = require_string(obj, "id", line);
  if (m.id.empty()) throw MalformedRecord(line, "empty id");
  const std::string ts = require_string(obj, "ts", line);
  auto parsed = Timestamp::parse(ts);
  if (!parsed) throw MalformedRecord(line, "ts \"" + ts + "\" is not a non-negative decimal");
  m.timestamp = *parsed;
  m.author = require_string(obj, "user", line);
  m.text = require_string(obj, "text", line);
  if (auto it = obj.find("thread_ts"); it != obj.end() && !it->is_null()) {
    if (!it->is_string()) throw MalformedRecord(line, "thread_ts must be a string");
    m.parent_thread_id = it->get<std::string>();
  }
  if (auto it = obj.find("bot"); it != obj.end() && !it->is_null()) {
    if (!it->is_boolean()) throw MalformedRecord(line, "bot must be a boolean");
    m.is_bot = it->get<bool>();
  }
  if (auto it = obj.find("channel"); it != obj.end() && !it->is_null()) {
    if (!it->is_string()) throw MalformedRecord(line, "channel must be a string");
    m.channel_id = it->get<std::string>();
  }
  if (m.text.empty() && !m.is_bot) throw MalformedRecord(line, "empty text on a non-system message");
  return m;
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const RawMessage& m) {
  nlohmann::ordered_json j;
  j["id"] = m.id;
  j["ts"] = m.timestamp.text();
  j["user"] = m.author;
  j["text"] = m.text;
  if (m.parent_thread_id) j["thread_ts"] = *m.parent_thread_id;
  if (m.is_bot) j["bot"] = true;
  if (!m.channel_id.empty()) j["channel"] = m.channel_id;
  return j;
}

// Reads the JSON-lines chat export. Blank lines are ignored. Malformed
// records abort unless options.skip_malformed, in which case they are
// skipped with a warning. MissingField always aborts.
inline ParsedLog parse_chat_export(std::istream& in, const ParseOptions& options = {}) {
  ParsedLog out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      nlohmann::json obj;
      try {
        obj = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw MalformedRecord(lineno, std::string("invalid JSON: ") + e.what());
      }
      RawMessage m = detail::message_from_json(obj, lineno);
      if (!seen.insert(m.id).second) throw MalformedRecord(lineno, "duplicate id \"" + m.id + "\"");
      out.log.messages.push_back(std::move(m));
    } catch (const MalformedRecord& e) {
      if (!options.skip_malformed) throw;
      ++out.skipped;
      out.warnings.push_back({"MalformedRecord", e.what()});
    }
  }
  std::sort(out.log.messages.begin(), out.log.messages.end(), message_before);
  if (!out.log.messages.empty()) {
    out.log.channel_id = out.log.messages.front().channel_id;
    for (const auto& m : out.log.messages) {
      if (m.channel_id != out.log.channel_id) {
        throw Error("MixedChannels", "message \"" + m.id + "\" belongs to channel \"" + m.channel_id + "\"");
      }
    }
  }
  out.records = out.log.messages.size();
  return out;
}

inline void write_chat_export(std::ostream& out, const ChannelLog& log) {
  for (const auto& m : log.messages) out << to_json(m).dump() << '\n';
}

// A native thread. The root of an orphan thread (replies whose root is not in
// the log) is its earliest reply.
struct Thread {
  std::string id;
  RawMessage root;
  std::vector<RawMessage> replies;
  std::set<std::string> participants;
  Timestamp t_start;
  Timestamp t_end;
  bool orphan = false;

  std::vector<const RawMessage*> messages() const {
    std::vector<const RawMessage*> all{&root};
    for (const auto& r : replies) all.push_back(&r);
    return all;
  }
};

struct ThreadSet {
  std::vector<Thread> threads;
  std::vector<RawMessage> unthreaded;
  std::vector<Warning> warnings;
};

inline ThreadSet native_threads(const ChannelLog& log) {
  ThreadSet out;
  const auto& msgs = log.messages;
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < msgs.size(); ++i) by_id.emplace(msgs[i].id, i);

  // Thread id -> reply indices, in log order. A message whose thread_ts names
  // itself is a root marker, not a reply.
  std::map<std::string, std::vector<std::size_t>> groups;
  std::vector<bool> is_reply(msgs.size(), false);
  for (std::size_t i = 0; i < msgs.size(); ++i) {
    const auto& p = msgs[i].parent_thread_id;
    if (!p) continue;
    auto& g = groups[*p];
    if (*p != msgs[i].id) {
      g.push_back(i);
      is_reply[i] = true;
    }
  }

  std::vector<bool> used(msgs.size(), false);
  for (auto& [tid, replies] : groups) {
    Thread t;
    t.id = tid;
    auto root_it = by_id.find(tid);
    if (root_it != by_id.end() && !is_reply[root_it->second]) {
      t.root = msgs[root_it->second];
      used[root_it->second] = true;
    } else {
      t.orphan = true;
      out.warnings.push_back({"OrphanReply", tid});
      t.root = msgs[replies.front()];
      used[replies.front()] = true;
      replies.erase(replies.begin());
    }
    for (std::size_t r : replies) {
      t.replies.push_back(msgs[r]);
      used[r] = true;
    }
    t.participants.insert(t.root.author);
    t.t_start = t.root.timestamp;
    t.t_end = t.root.timestamp;
    for (const auto& r : t.replies) {
      t.participants.insert(r.author);
      t.t_start = std::min(t.t_start, r.timestamp);
      t.t_end = std::max(t.t_end, r.timestamp);
    }
    out.threads.push_back(std::move(t));
  }
  std::sort(out.threads.begin(), out.threads.end(), [](const Thread& a, const Thread& b) {
    if (a.t_start != b.t_start) return a.t_start < b.t_start;
    return a.id < b.id;
  });
  for (std::size_t i = 0; i < msgs.size(); ++i) {
    if (!used[i]) out.unthreaded.push_back(msgs[i]);
  }
  return out;
}

}  // namespace itv
