#pragma once

#include <algorithm>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "itv/annotate.hpp"
#include "itv/disentangle.hpp"
#include "itv/error.hpp"
#include "itv/query.hpp"

namespace itv {

class Stopwords {
 public:
  Stopwords() = default;
  explicit Stopwords(std::set<std::string> words) : words_(std::move(words)) {}

  bool contains(const std::string& lower) const { return words_.count(lower) > 0; }
  std::size_t size() const { return words_.size(); }

  static Stopwords parse(std::istream& in) {
    std::set<std::string> words;
    std::string line;
    while (std::getline(in, line)) {
      const auto w = text::trim(line);
      if (w.empty() || w[0] == '#') continue;
      words.insert(text::lower(w));
    }
    return Stopwords(std::move(words));
  }

  static Stopwords load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open stopword list " + path);
    return parse(in);
  }

 private:
  std::set<std::string> words_;
};

namespace detail {

inline bool is_vowel(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }

// Consonant-vowel-consonant ending where the final consonant is doubled
// before -ed/-ing in monosyllables ("stop" -> "stopped").
inline bool cvc_ending(const std::string& w) {
  if (w.size() < 3) return false;
  const char a = w[w.size() - 3], b = w[w.size() - 2], c = w[w.size() - 1];
  return !is_vowel(a) && is_vowel(b) && !is_vowel(c) && c != 'w' && c != 'x' && c != 'y';
}

inline std::set<std::string> inflections(const std::string& lemma) {
  std::set<std::string> out{lemma};
  if (lemma.empty()) return out;
  const char last = lemma.back();
  const bool consonant_y = last == 'y' && lemma.size() > 1 && !is_vowel(lemma[lemma.size() - 2]);
  if (text::ends_with(lemma, "s") || text::ends_with(lemma, "x") || text::ends_with(lemma, "z") ||
      text::ends_with(lemma, "ch") || text::ends_with(lemma, "sh")) {
    out.insert(lemma + "es");
  } else if (consonant_y) {
    out.insert(lemma.substr(0, lemma.size() - 1) + "ies");
  } else {
    out.insert(lemma + "s");
  }
  if (last == 'e') {
    out.insert(lemma + "d");
    if (text::ends_with(lemma, "ie")) out.insert(lemma.substr(0, lemma.size() - 2) + "ying");
    else if (text::ends_with(lemma, "ee")) out.insert(lemma + "ing");
    else out.insert(lemma.substr(0, lemma.size() - 1) + "ing");
  } else if (consonant_y) {
    out.insert(lemma.substr(0, lemma.size() - 1) + "ied");
    out.insert(lemma + "ing");
  } else {
    out.insert(lemma + "ed");
    out.insert(lemma + "ing");
    if (cvc_ending(lemma)) {
      out.insert(lemma + last + "ed");
      out.insert(lemma + last + "ing");
    }
  }
  return out;
}

}  // namespace detail

// Closed set of state-change verbs. Each lemma's variants are its generated
// inflections, any listed irregular forms, and the members of its synonym
// groups (with their inflections).
class ActionDictionary {
 public:
  ActionDictionary() = default;

  void add_verb(const std::string& lemma) {
    const auto l = text::lower(lemma);
    verbs_.insert(l);
    for (const auto& f : detail::inflections(l)) {
      forms_.emplace(f, l);
      variants_[l].insert(f);
    }
  }

  void add_irregular(const std::string& lemma, const std::vector<std::string>& forms) {
    const auto l = text::lower(lemma);
    for (const auto& f : forms) {
      forms_[text::lower(f)] = l;
      variants_[l].insert(text::lower(f));
    }
  }

  // Members of one synonym group become variants of each other.
  void add_synonyms(const std::vector<std::string>& group) {
    for (const auto& a : group) {
      const auto la = text::lower(a);
      for (const auto& b : group) {
        for (const auto& f : detail::inflections(text::lower(b))) variants_[la].insert(f);
      }
    }
  }

  bool contains(const std::string& lemma) const { return verbs_.count(lemma) > 0; }
  const std::set<std::string>& verbs() const { return verbs_; }

  const std::set<std::string>& variants(const std::string& lemma) const {
    static const std::set<std::string> empty;
    auto it = variants_.find(lemma);
    return it == variants_.end() ? empty : it->second;
  }

  // Maps an inflected surface form to its dictionary lemma.
  std::optional<std::string> lemma_of(const std::string& lower) const {
    if (verbs_.count(lower)) return lower;
    auto it = forms_.find(lower);
    if (it == forms_.end()) return std::nullopt;
    return it->second;
  }

  bool verbs_match(const std::string& a, const std::string& b) const {
    if (a == b) return true;
    return variants(a).count(b) > 0 || variants(b).count(a) > 0;
  }

  static ActionDictionary from_json(const nlohmann::json& j) {
    ActionDictionary d;
    for (const auto& v : j.at("verbs")) d.add_verb(v.get<std::string>());
    if (j.contains("irregular")) {
      for (const auto& [lemma, forms] : j.at("irregular").items()) {
        d.add_irregular(lemma, forms.get<std::vector<std::string>>());
      }
    }
    if (j.contains("synonyms")) {
      for (const auto& g : j.at("synonyms")) d.add_synonyms(g.get<std::vector<std::string>>());
    }
    return d;
  }

  static ActionDictionary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open action dictionary " + path);
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }

 private:
  std::set<std::string> verbs_;
  std::unordered_map<std::string, std::string> forms_;
  std::map<std::string, std::set<std::string>> variants_;
};

struct Entity {
  std::string phrase;
  std::size_t begin = 0;  // token span [begin, end)
  std::size_t end = 0;
  std::optional<std::string> dep_rel_of_head;

  friend bool operator==(const Entity&, const Entity&) = default;
};

struct ActionEntityLink {
  std::string verb_lemma;
  Entity entity;
  std::string source_message_id;

  friend bool operator==(const ActionEntityLink&, const ActionEntityLink&) = default;
};

namespace detail {

inline bool is_nominal(const Token& t) { return t.has_pos("NOUN") || t.has_pos("PROPN") || t.has_pos("ADJ"); }

inline std::string base_relation(const std::string& rel) { return rel.substr(0, rel.find(':')); }

// Trims stopword tokens from both edges of [begin, end) and builds the phrase.
inline std::optional<Entity> make_entity(const AnnotatedUtterance& u, std::size_t begin, std::size_t end,
                                         const Stopwords& stopwords) {
  while (begin < end && (stopwords.contains(u.tokens[begin].lower) || is_punct_token(u.tokens[begin]))) ++begin;
  while (end > begin && (stopwords.contains(u.tokens[end - 1].lower) || is_punct_token(u.tokens[end - 1]))) --end;
  if (begin == end) return std::nullopt;
  Entity e;
  e.begin = begin;
  e.end = end;
  std::vector<std::string> words;
  for (std::size_t i = begin; i < end; ++i) words.push_back(u.tokens[i].lower);
  e.phrase = text::join(words, " ");
  return e;
}

inline bool has_case_child(const AnnotatedUtterance& u, std::size_t i) {
  for (const auto& t : u.tokens) {
    if (t.head && *t.head == static_cast<int>(i) + 1 && t.dep_rel && base_relation(*t.dep_rel) == "case") return true;
  }
  return false;
}

inline std::vector<Entity> dependency_entities(const AnnotatedUtterance& u, const Stopwords& stopwords) {
  static const std::set<std::string> core = {"acl", "obj", "dobj", "pobj", "nsubj", "nsubjpass"};
  static const std::set<std::string> prepositional = {"obl", "nmod"};
  std::vector<Entity> out;
  std::vector<bool> covered(u.tokens.size(), false);
  for (std::size_t i = 0; i < u.tokens.size(); ++i) {
    const Token& t = u.tokens[i];
    const std::string rel = base_relation(*t.dep_rel);
    const bool key = core.count(rel) || (prepositional.count(rel) && has_case_child(u, i));
    if (!key || covered[i]) continue;
    std::size_t begin = i;
    std::size_t end = i + 1;
    if (is_nominal(t) || t.has_pos("NUM")) {
      // Grow left over nominal modifiers attached inside the chunk, right over
      // compound/flat parts headed by it.
      while (begin > 0) {
        const Token& p = u.tokens[begin - 1];
        if (!(is_nominal(p) || p.has_pos("NUM")) || !p.head) break;
        const int h = *p.head - 1;
        if (h < static_cast<int>(begin) || h > static_cast<int>(i)) break;
        --begin;
      }
      while (end < u.tokens.size()) {
        const Token& n = u.tokens[end];
        if (!n.head || *n.head != static_cast<int>(i) + 1 || !n.dep_rel) break;
        const auto r = base_relation(*n.dep_rel);
        if (r != "compound" && r != "flat") break;
        ++end;
      }
    } else if (!t.has_pos("VERB")) {
      continue;
    }
    if (auto e = make_entity(u, begin, end, stopwords)) {
      e->dep_rel_of_head = *t.dep_rel;
      for (std::size_t k = begin; k < end; ++k) covered[k] = true;
      out.push_back(std::move(*e));
    }
  }
  std::sort(out.begin(), out.end(), [](const Entity& a, const Entity& b) { return a.begin < b.begin; });
  return out;
}

inline std::vector<Entity> chunk_entities(const AnnotatedUtterance& u, const Stopwords& stopwords) {
  std::vector<Entity> out;
  std::size_t i = 0;
  while (i < u.tokens.size()) {
    if (!is_nominal(u.tokens[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < u.tokens.size() && is_nominal(u.tokens[j])) ++j;
    if (auto e = make_entity(u, i, j, stopwords)) out.push_back(std::move(*e));
    i = j;
  }
  return out;
}

}  // namespace detail

// Key entities: with dependency annotations, nominal chunks (and verbs)
// whose head relation is acl, obj/dobj, pobj, nsubj, or a prepositional
// obl/nmod; without them, maximal NOUN/PROPN/ADJ runs. Stopwords are
// trimmed from chunk edges.
inline std::vector<Entity> extract_entities(const AnnotatedUtterance& u, const Stopwords& stopwords) {
  return u.has_dependencies() ? detail::dependency_entities(u, stopwords) : detail::chunk_entities(u, stopwords);
}

// Finds the A1 (patient) argument for the predicate at token index `predicate`.
class RoleLabeler {
 public:
  virtual ~RoleLabeler() = default;
  virtual std::optional<Entity> patient(const AnnotatedUtterance& u, std::size_t predicate,
                                        std::span<const Entity> entities) const = 0;
};

// A1 is the nearest entity to the right of the verb inside its clause. For a
// passive verb with nothing to its right, the nearest subject to its left.
class PatternRoleLabeler : public RoleLabeler {
 public:
  std::optional<Entity> patient(const AnnotatedUtterance& u, std::size_t predicate,
                                std::span<const Entity> entities) const override {
    const auto& toks = u.tokens;
    std::size_t clause_end = toks.size();
    for (std::size_t k = predicate + 1; k < toks.size(); ++k) {
      if (is_boundary(toks[k])) {
        clause_end = k;
        break;
      }
    }
    for (const auto& e : entities) {
      if (e.begin > predicate && e.begin < clause_end) return e;
    }
    if (!is_passive(u, predicate)) return std::nullopt;
    std::size_t clause_start = 0;
    for (std::size_t k = predicate; k-- > 0;) {
      if (is_boundary(toks[k])) {
        clause_start = k + 1;
        break;
      }
    }
    const Entity* best = nullptr;
    for (const auto& e : entities) {
      if (e.end > predicate || e.begin < clause_start) continue;
      if (e.dep_rel_of_head && detail::base_relation(*e.dep_rel_of_head).rfind("nsubj", 0) != 0) continue;
      if (!best || e.begin > best->begin) best = &e;
    }
    if (best) return *best;
    return std::nullopt;
  }

 private:
  static bool is_boundary(const Token& t) {
    static const std::set<std::string> stops = {",", ";", ".", "!", "?", ":", "(", ")"};
    return stops.count(t.surface) || t.has_pos("CCONJ") || t.has_pos("SCONJ") || t.has_pos("VERB");
  }

  static bool is_passive(const AnnotatedUtterance& u, std::size_t predicate) {
    static const std::set<std::string> be = {"is", "are", "was", "were", "be", "been", "being", "got", "gets", "get"};
    for (std::size_t k = predicate; k-- > 0;) {
      const Token& t = u.tokens[k];
      if (be.count(t.lower)) return true;
      if (!(t.has_pos("ADV") || t.has_pos("PART"))) return false;
    }
    return false;
  }
};

// Reads A1 spans from `Pred=<i>|Role=A1` tags supplied with the annotations.
class AnnotationRoleLabeler : public RoleLabeler {
 public:
  explicit AnnotationRoleLabeler(const Stopwords& stopwords) : stopwords_(&stopwords) {}

  std::optional<Entity> patient(const AnnotatedUtterance& u, std::size_t predicate,
                                std::span<const Entity>) const override {
    std::optional<std::size_t> begin;
    std::size_t end = 0;
    for (std::size_t k = 0; k < u.tokens.size(); ++k) {
      for (const auto& r : u.tokens[k].roles) {
        if (r.predicate == static_cast<int>(predicate) + 1 && (r.role == "A1" || r.role == "ARG1")) {
          if (!begin) begin = k;
          end = k + 1;
        }
      }
    }
    if (!begin) return std::nullopt;
    auto e = detail::make_entity(u, *begin, end, *stopwords_);
    if (e && u.tokens[e->end - 1].dep_rel) e->dep_rel_of_head = u.tokens[e->end - 1].dep_rel;
    return e;
  }

 private:
  const Stopwords* stopwords_;
};

inline bool has_role_annotations(const AnnotatedUtterance& u) {
  return std::any_of(u.tokens.begin(), u.tokens.end(), [](const Token& t) { return !t.roles.empty(); });
}

inline std::optional<std::string> action_lemma(const Token& t, const ActionDictionary& dict) {
  if (!t.has_pos("VERB")) return std::nullopt;
  if (t.lemma && dict.contains(*t.lemma)) return t.lemma;
  return dict.lemma_of(t.lower);
}

// One link per dictionary verb that has a locatable A1 argument.
inline std::vector<ActionEntityLink> link_action_entity(const AnnotatedUtterance& u, const ActionDictionary& dict,
                                                        const RoleLabeler& labeler, const Stopwords& stopwords) {
  const auto entities = extract_entities(u, stopwords);
  std::vector<ActionEntityLink> out;
  for (std::size_t i = 0; i < u.tokens.size(); ++i) {
    const auto lemma = action_lemma(u.tokens[i], dict);
    if (!lemma) continue;
    if (auto e = labeler.patient(u, i, entities)) out.push_back({*lemma, std::move(*e), u.message_id});
  }
  return out;
}

inline std::vector<ActionEntityLink> link_action_entity(const AnnotatedUtterance& u, const ActionDictionary& dict,
                                                        const Stopwords& stopwords) {
  if (has_role_annotations(u)) return link_action_entity(u, dict, AnnotationRoleLabeler(stopwords), stopwords);
  return link_action_entity(u, dict, PatternRoleLabeler(), stopwords);
}

// ---------------------------------------------------------------------------
// Issue Total View records

enum class IssueCategory { Issue, ChangeRequest, Other };

inline const char* to_string(IssueCategory c) {
  switch (c) {
    case IssueCategory::Issue: return "Issue";
    case IssueCategory::ChangeRequest: return "ChangeRequest";
    case IssueCategory::Other: break;
  }
  return "Other";
}

inline IssueCategory parse_category(const std::string& s) {
  if (s == "Issue") return IssueCategory::Issue;
  if (s == "ChangeRequest") return IssueCategory::ChangeRequest;
  if (s == "Other") return IssueCategory::Other;
  throw FormatError("unknown issue category \"" + s + "\"");
}

struct Utterance {
  std::string message_id;
  std::string user;
  Timestamp timestamp;
  std::string text;
  friend bool operator==(const Utterance&, const Utterance&) = default;
};

struct IssueRecord {
  static constexpr int kSchema = 1;

  std::string conversation_id;
  std::string issue_message_id;
  std::string issue_text;
  IssueCategory category = IssueCategory::Other;
  std::vector<Utterance> diagnostics;
  std::vector<Utterance> resolutions;
  std::vector<ActionEntityLink> resolution_summaries;
  std::set<std::string> participants;
  Timestamp opened_at;
  Timestamp closed_at;

  friend bool operator==(const IssueRecord&, const IssueRecord&) = default;
};

// Supplies annotations for messages: CoNLL-U parses where provided, the
// fallback tagger otherwise.
class Annotator {
 public:
  explicit Annotator(const PosLexicon& lexicon) : lexicon_(&lexicon) {}

  void add(std::vector<AnnotatedUtterance> parsed) {
    for (auto& u : parsed) provided_[u.message_id] = std::move(u);
  }

  AnnotatedUtterance annotate(const RawMessage& m) const {
    AnnotatedUtterance u;
    if (auto it = provided_.find(m.id); it != provided_.end()) {
      u = it->second;
    } else {
      u = annotate_text(m.text, *lexicon_);
    }
    u.message_id = m.id;
    u.speaker = m.author;
    u.timestamp = m.timestamp;
    return u;
  }

  AnnotatedUtterance annotate(std::string_view text) const { return annotate_text(text, *lexicon_); }

  const PosLexicon& lexicon() const { return *lexicon_; }

 private:
  const PosLexicon* lexicon_;
  std::unordered_map<std::string, AnnotatedUtterance> provided_;
};

struct UtterancePartition {
  std::vector<Utterance> diagnostics;
  std::vector<Utterance> resolutions;
  std::vector<ActionEntityLink> resolution_summaries;
};

// Everything artefact extraction needs, bundled so call sites stay short.
struct ExtractionContext {
  const Annotator& annotator;
  const QueryDetector& detector;
  const ActionDictionary& dictionary;
  const Stopwords& stopwords;
};

inline Utterance to_utterance(const RawMessage& m) { return {m.id, m.author, m.timestamp, m.text}; }

// The first turn is the issue statement; every later utterance is either
// diagnostic or a resolution. Resolutions with action-entity links also
// contribute resolution summaries.
inline UtterancePartition classify_utterances(const Conversation& conversation, const ExtractionContext& ctx) {
  UtterancePartition out;
  for (std::size_t i = 1; i < conversation.messages.size(); ++i) {
    const RawMessage& m = conversation.messages[i];
    const AnnotatedUtterance u = ctx.annotator.annotate(m);
    if (is_diagnostic(u, ctx.detector).diagnostic) {
      out.diagnostics.push_back(to_utterance(m));
      continue;
    }
    out.resolutions.push_back(to_utterance(m));
    auto links = link_action_entity(u, ctx.dictionary, ctx.stopwords);
    out.resolution_summaries.insert(out.resolution_summaries.end(), links.begin(), links.end());
  }
  return out;
}

inline IssueRecord build_issue_record(const Conversation& conversation, const ExtractionContext& ctx,
                                      IssueCategory category) {
  if (conversation.messages.empty()) throw EmptyConversation("conversation " + conversation.conversation_id + " is empty");
  IssueRecord r;
  r.conversation_id = conversation.conversation_id;
  r.issue_message_id = conversation.messages.front().id;
  r.issue_text = conversation.messages.front().text;
  r.category = category;
  auto parts = classify_utterances(conversation, ctx);
  r.diagnostics = std::move(parts.diagnostics);
  r.resolutions = std::move(parts.resolutions);
  r.resolution_summaries = std::move(parts.resolution_summaries);
  for (const auto& m : conversation.messages) r.participants.insert(m.author);
  r.opened_at = conversation.messages.front().timestamp;
  r.closed_at = conversation.messages.back().timestamp;
  return r;
}

inline nlohmann::ordered_json to_json(const Utterance& u) {
  nlohmann::ordered_json j;
  j["message_id"] = u.message_id;
  j["user"] = u.user;
  j["ts"] = u.timestamp.text();
  j["text"] = u.text;
  return j;
}

inline nlohmann::ordered_json to_json(const ActionEntityLink& l) {
  nlohmann::ordered_json j;
  j["verb"] = l.verb_lemma;
  j["entity"] = l.entity.phrase;
  j["message_id"] = l.source_message_id;
  j["span"] = {l.entity.begin, l.entity.end};
  if (l.entity.dep_rel_of_head) j["dep_rel"] = *l.entity.dep_rel_of_head;
  return j;
}

inline nlohmann::ordered_json to_json(const IssueRecord& r) {
  nlohmann::ordered_json j;
  j["schema"] = IssueRecord::kSchema;
  j["conversation_id"] = r.conversation_id;
  j["issue_message_id"] = r.issue_message_id;
  j["issue_text"] = r.issue_text;
  j["category"] = to_string(r.category);
  auto utterances = [](const std::vector<Utterance>& us) {
    auto a = nlohmann::ordered_json::array();
    for (const auto& u : us) a.push_back(to_json(u));
    return a;
  };
  j["diagnostics"] = utterances(r.diagnostics);
  j["resolutions"] = utterances(r.resolutions);
  auto links = nlohmann::ordered_json::array();
  for (const auto& l : r.resolution_summaries) links.push_back(to_json(l));
  j["resolution_summaries"] = std::move(links);
  j["participants"] = r.participants;
  j["opened_at"] = r.opened_at.text();
  j["closed_at"] = r.closed_at.text();
  return j;
}

namespace detail {

inline Timestamp timestamp_field(const nlohmann::json& j, const char* key) {
  auto t = Timestamp::parse(j.at(key).get<std::string>());
  if (!t) throw FormatError(std::string("bad timestamp in field ") + key);
  return *t;
}

inline Utterance utterance_from_json(const nlohmann::json& j) {
  return {j.at("message_id").get<std::string>(), j.at("user").get<std::string>(), timestamp_field(j, "ts"),
          j.at("text").get<std::string>()};
}

}  // namespace detail

inline IssueRecord issue_record_from_json(const nlohmann::json& j) {
  try {
    const int schema = j.at("schema").get<int>();
    if (schema != IssueRecord::kSchema) throw VersionError("unsupported IssueRecord schema " + std::to_string(schema));
    IssueRecord r;
    r.conversation_id = j.at("conversation_id").get<std::string>();
    r.issue_message_id = j.at("issue_message_id").get<std::string>();
    r.issue_text = j.at("issue_text").get<std::string>();
    r.category = parse_category(j.at("category").get<std::string>());
    for (const auto& u : j.at("diagnostics")) r.diagnostics.push_back(detail::utterance_from_json(u));
    for (const auto& u : j.at("resolutions")) r.resolutions.push_back(detail::utterance_from_json(u));
    for (const auto& l : j.at("resolution_summaries")) {
      ActionEntityLink link;
      link.verb_lemma = l.at("verb").get<std::string>();
      link.entity.phrase = l.at("entity").get<std::string>();
      link.source_message_id = l.at("message_id").get<std::string>();
      link.entity.begin = l.at("span").at(0).get<std::size_t>();
      link.entity.end = l.at("span").at(1).get<std::size_t>();
      if (l.contains("dep_rel")) link.entity.dep_rel_of_head = l.at("dep_rel").get<std::string>();
      r.resolution_summaries.push_back(std::move(link));
    }
    r.participants = j.at("participants").get<std::set<std::string>>();
    r.opened_at = detail::timestamp_field(j, "opened_at");
    r.closed_at = detail::timestamp_field(j, "closed_at");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad IssueRecord: ") + e.what());
  }
}

inline void write_issue_records(std::ostream& out, std::span<const IssueRecord> records) {
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

inline std::vector<IssueRecord> read_issue_records(std::istream& in) {
  std::vector<IssueRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(issue_record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw MalformedRecord(lineno, e.what());
    }
  }
  return out;
}

}  // namespace itv
