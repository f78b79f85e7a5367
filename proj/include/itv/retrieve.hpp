#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "itv/artefacts.hpp"
#include "itv/embed.hpp"
#include "itv/error.hpp"
#include "itv/jaro.hpp"

namespace itv {

// Rule-based symptom detector standing in for a learned question-quality
// model: regular expressions over the lowercased first turn.
class SymptomLexicon {
 public:
  SymptomLexicon() = default;
  explicit SymptomLexicon(const std::vector<std::string>& patterns) {
    for (const auto& p : patterns) add(p);
  }

  void add(const std::string& pattern) {
    sources_.push_back(pattern);
    patterns_.emplace_back(pattern, std::regex::ECMAScript | std::regex::icase | std::regex::optimize);
  }

  bool detects(std::string_view text) const {
    const std::string lowered = text::lower(text);
    return std::any_of(patterns_.begin(), patterns_.end(),
                       [&](const std::regex& r) { return std::regex_search(lowered, r); });
  }

  const std::vector<std::string>& patterns() const { return sources_; }

  static SymptomLexicon load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open symptom lexicon " + path);
    try {
      const auto j = nlohmann::json::parse(in);
      return SymptomLexicon(j.at("patterns").get<std::vector<std::string>>());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path + ": " + e.what());
    } catch (const std::regex_error& e) {
      throw ConfigError(path + ": bad pattern: " + e.what());
    }
  }

 private:
  std::vector<std::string> sources_;
  std::vector<std::regex> patterns_;
};

inline IssueCategory categorize_first_turn(const AnnotatedUtterance& u, const ActionDictionary& dict,
                                           const SymptomLexicon& symptoms) {
  if (symptoms.detects(u.raw)) return IssueCategory::Issue;
  for (const auto& t : u.tokens) {
    if (action_lemma(t, dict)) return IssueCategory::ChangeRequest;
  }
  return IssueCategory::Other;
}

enum class Mode { M1, M2 };

inline const char* to_string(Mode m) { return m == Mode::M1 ? "M1" : "M2"; }

inline Mode parse_mode(const std::string& s) {
  if (s == "M1") return Mode::M1;
  if (s == "M2") return Mode::M2;
  throw ConfigError("mode must be M1 or M2, got \"" + s + "\"");
}

// How entity weights derive from normalized idf: `literal` is n/(n+idf),
// `rarity` uses idf itself.
enum class Weighting { literal, rarity };

struct SimilarityConfig {
  double jaro_gate = 0.95;
  double weight_gate = 0.8;
  double threshold = 0.35;
  bool clamp_negative = true;
  Mode mode = Mode::M2;
  Weighting weighting = Weighting::literal;

  void validate() const {
    if (jaro_gate < 0 || jaro_gate > 1 || weight_gate < 0 || weight_gate > 1) throw ConfigError("gates must lie in [0,1]");
  }
};

// M1 drops the verb-match indicator; M2 is the full measure.
inline bool uses_verb_indicator(const SimilarityConfig& c) { return c.mode == Mode::M2; }

struct WeightedEntity {
  std::string phrase;
  double weight = 0;
  std::optional<std::string> verb;
  std::vector<float> vector;  // unit embedding of the phrase
};

struct EntityTermSet {
  std::string issue_id;
  std::vector<WeightedEntity> entities;

  bool rankable() const { return !entities.empty(); }
};

struct EntityMention {
  std::string phrase;
  std::optional<std::string> verb;
  friend bool operator==(const EntityMention&, const EntityMention&) = default;
};

// Entities of an utterance with the action verb (if any) whose A1 argument
// they are. Duplicate phrases collapse onto the first mention that carries a verb.
inline std::vector<EntityMention> entity_mentions(const AnnotatedUtterance& u, const ActionDictionary& dict,
                                                  const Stopwords& stopwords) {
  const auto entities = extract_entities(u, stopwords);
  const auto links = link_action_entity(u, dict, stopwords);
  std::vector<EntityMention> out;
  auto upsert = [&](const std::string& phrase, std::optional<std::string> verb) {
    for (auto& m : out) {
      if (m.phrase == phrase) {
        if (!m.verb && verb) m.verb = std::move(verb);
        return;
      }
    }
    out.push_back({phrase, std::move(verb)});
  };
  for (const auto& e : entities) {
    std::optional<std::string> verb;
    for (const auto& l : links) {
      if (l.entity.begin == e.begin && l.entity.end == e.end) {
        verb = l.verb_lemma;
        break;
      }
    }
    upsert(e.phrase, verb);
  }
  // Links whose A1 span came from role annotations rather than a chunk.
  for (const auto& l : links) upsert(l.entity.phrase, l.verb_lemma);
  return out;
}

class IdfTable {
 public:
  IdfTable() = default;
  IdfTable(std::size_t n, std::map<std::string, std::size_t> df, Weighting weighting)
      : n_(n), df_(std::move(df)), weighting_(weighting) {}

  std::size_t issue_count() const { return n_; }
  const std::map<std::string, std::size_t>& document_frequency() const { return df_; }
  Weighting weighting() const { return weighting_; }

  // log(n/df) / log(max(n,2)); a phrase never seen in the corpus counts as maximally rare.
  double idf(const std::string& phrase) const {
    auto it = df_.find(phrase);
    if (it == df_.end() || it->second == 0) return 1.0;
    const double n = static_cast<double>(n_);
    return std::log(n / static_cast<double>(it->second)) / std::log(std::max(n, 2.0));
  }

  double weight(const std::string& phrase) const {
    const double i = idf(phrase);
    if (weighting_ == Weighting::rarity) return i;
    const double n = static_cast<double>(n_);
    return n / (n + i);
  }

  std::map<std::string, double> weights() const {
    std::map<std::string, double> out;
    for (const auto& [p, _] : df_) out[p] = weight(p);
    return out;
  }

 private:
  std::size_t n_ = 0;
  std::map<std::string, std::size_t> df_;
  Weighting weighting_ = Weighting::literal;
};

inline IdfTable idf_weights(std::span<const std::vector<EntityMention>> issues, Weighting weighting = Weighting::literal) {
  if (issues.empty()) throw EmptyCorpus("idf needs at least one issue");
  std::map<std::string, std::size_t> df;
  for (const auto& issue : issues) {
    std::set<std::string> seen;
    for (const auto& m : issue) seen.insert(m.phrase);
    for (const auto& p : seen) ++df[p];
  }
  return IdfTable(issues.size(), std::move(df), weighting);
}

inline IdfTable idf_weights(std::span<const EntityTermSet> corpus, Weighting weighting = Weighting::literal) {
  std::vector<std::vector<EntityMention>> issues;
  for (const auto& s : corpus) {
    std::vector<EntityMention> ms;
    for (const auto& e : s.entities) ms.push_back({e.phrase, e.verb});
    issues.push_back(std::move(ms));
  }
  return idf_weights(std::span<const std::vector<EntityMention>>(issues), weighting);
}

inline EntityTermSet make_term_set(std::string issue_id, std::span<const EntityMention> mentions, const IdfTable& idf,
                                   const embed::EmbeddingModel& model) {
  EntityTermSet s;
  s.issue_id = std::move(issue_id);
  for (const auto& m : mentions) s.entities.push_back({m.phrase, idf.weight(m.phrase), m.verb, model.vector(m.phrase)});
  return s;
}

// delta_ij: a spelling-variant branch when the strings nearly coincide and
// at least one side is heavy, weighted cosine otherwise.
inline double entity_similarity(const WeightedEntity& a, const WeightedEntity& b, const SimilarityConfig& config) {
  const double w = std::max(a.weight, b.weight);
  const double j = jaro(a.phrase, b.phrase);
  if (j > config.jaro_gate && w > config.weight_gate) return w * j;
  double c = embed::cosine(a.vector, b.vector);
  if (config.clamp_negative) c = std::clamp(c, 0.0, 1.0);
  return w * c;
}

inline bool verb_indicator(const WeightedEntity& query, const WeightedEntity& candidate, const ActionDictionary& dict) {
  if (!query.verb) return true;
  return candidate.verb && dict.verbs_match(*query.verb, *candidate.verb);
}

// Mean over the query's entities of the best indicator-gated match in the
// candidate. Normalized by the query's entity count, so not symmetric.
inline double issue_sim(const EntityTermSet& query, const EntityTermSet& candidate, const SimilarityConfig& config,
                        const ActionDictionary& dict) {
  if (query.entities.empty()) throw EmptyQueryEntities("issue " + query.issue_id + " has no entities");
  const bool gated = uses_verb_indicator(config);
  double total = 0;
  for (const auto& ei : query.entities) {
    double best = 0;
    for (const auto& ej : candidate.entities) {
      if (gated && !verb_indicator(ei, ej, dict)) continue;
      best = std::max(best, entity_similarity(ei, ej, config));
    }
    total += best;
  }
  return std::clamp(total / static_cast<double>(query.entities.size()), 0.0, 1.0);
}

struct RankedResult {
  std::string issue_id;
  double score = 0;
};

inline void sort_ranking(std::vector<RankedResult>& r) {
  std::sort(r.begin(), r.end(), [](const RankedResult& a, const RankedResult& b) {
    return a.score != b.score ? a.score > b.score : a.issue_id < b.issue_id;
  });
}

inline std::vector<RankedResult> retrieve_similar(const EntityTermSet& query, std::span<const EntityTermSet> store,
                                                  const SimilarityConfig& config, const ActionDictionary& dict,
                                                  std::size_t k) {
  if (query.entities.empty()) throw EmptyQueryEntities("query has no entities");
  std::vector<RankedResult> out;
  for (const auto& s : store) {
    if (s.issue_id == query.issue_id || !s.rankable()) continue;
    const double score = issue_sim(query, s, config, dict);
    if (score > config.threshold) out.push_back({s.issue_id, score});
  }
  sort_ranking(out);
  if (out.size() > k) out.resize(k);
  return out;
}

// ---------------------------------------------------------------------------
// TF-IDF cosine baseline over raw text.

inline std::vector<std::string> tfidf_terms(std::string_view text) {
  std::vector<std::string> out;
  for (auto& t : tokenize(text)) {
    if (!is_punct_token(t)) out.push_back(std::move(t.lower));
  }
  return out;
}

// Raw term frequency times smoothed idf ln((1+N)/(1+df)) + 1.
class TfIdfIndex {
 public:
  struct Document {
    std::string id;
    std::string text;
  };

  explicit TfIdfIndex(std::vector<Document> docs) : docs_(std::move(docs)) {
    for (const auto& d : docs_) {
      const auto terms = tfidf_terms(d.text);
      for (const auto& t : std::set<std::string>(terms.begin(), terms.end())) ++df_[t];
    }
    for (const auto& d : docs_) vectors_.push_back(weigh(d.text));
  }

  double idf(const std::string& term) const {
    auto it = df_.find(term);
    const double df = it == df_.end() ? 0.0 : static_cast<double>(it->second);
    return std::log((1.0 + static_cast<double>(docs_.size())) / (1.0 + df)) + 1.0;
  }

  std::map<std::string, double> weigh(std::string_view text) const {
    std::map<std::string, double> v;
    for (const auto& t : tfidf_terms(text)) v[t] += 1.0;
    for (auto& [t, x] : v) x *= idf(t);
    return v;
  }

  static double cosine(const std::map<std::string, double>& a, const std::map<std::string, double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (const auto& [t, x] : a) {
      na += x * x;
      if (auto it = b.find(t); it != b.end()) dot += x * it->second;
    }
    for (const auto& [t, x] : b) nb += x * x;
    if (na == 0 || nb == 0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
  }

  std::vector<RankedResult> rank(std::string_view query, std::size_t k, const std::string& exclude_id = {}) const {
    const auto q = weigh(query);
    std::vector<RankedResult> out;
    for (std::size_t i = 0; i < docs_.size(); ++i) {
      if (!exclude_id.empty() && docs_[i].id == exclude_id) continue;
      out.push_back({docs_[i].id, cosine(q, vectors_[i])});
    }
    sort_ranking(out);
    if (out.size() > k) out.resize(k);
    return out;
  }

 private:
  std::vector<Document> docs_;
  std::map<std::string, std::size_t> df_;
  std::vector<std::map<std::string, double>> vectors_;
};

inline std::vector<RankedResult> tfidf_baseline(std::string_view query, std::vector<TfIdfIndex::Document> store,
                                                std::size_t k) {
  return TfIdfIndex(std::move(store)).rank(query, k);
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalMetrics {
  std::map<std::size_t, double> p_at;
  double map = 0;
  std::map<std::size_t, double> a_at;
};

using Rankings = std::map<std::string, std::vector<std::string>>;
using GoldSets = std::map<std::string, std::set<std::string>>;

// P@N counts hits in the top N over N; AP averages precision at each hit
// over all gold items (unretrieved ones contribute 0); A@N is the share of
// queries with any hit in the top N.
inline EvalMetrics evaluate(const Rankings& rankings, const GoldSets& gold, std::span<const std::size_t> ns) {
  if (rankings.size() != gold.size() ||
      !std::equal(rankings.begin(), rankings.end(), gold.begin(), [](const auto& a, const auto& b) { return a.first == b.first; })) {
    throw QueryMismatch("rankings and gold cover different queries");
  }
  EvalMetrics m;
  for (auto n : ns) {
    if (n == 0) throw ConfigError("cutoff N must be positive");
    m.p_at[n] = 0;
    m.a_at[n] = 0;
  }
  if (gold.empty()) return m;
  for (const auto& [qid, ranked] : rankings) {
    const auto& relevant = gold.at(qid);
    std::size_t hits = 0;
    double ap = 0;
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      if (relevant.count(ranked[r])) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(r + 1);
      }
    }
    m.map += relevant.empty() ? 0.0 : ap / static_cast<double>(relevant.size());
    for (auto n : ns) {
      std::size_t in_top = 0;
      for (std::size_t r = 0; r < std::min(n, ranked.size()); ++r) in_top += relevant.count(ranked[r]);
      m.p_at[n] += static_cast<double>(in_top) / static_cast<double>(n);
      m.a_at[n] += in_top > 0 ? 1.0 : 0.0;
    }
  }
  const double q = static_cast<double>(gold.size());
  m.map /= q;
  for (auto& [_, v] : m.p_at) v /= q;
  for (auto& [_, v] : m.a_at) v /= q;
  return m;
}

inline nlohmann::ordered_json to_json(const EvalMetrics& m) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json p = nlohmann::ordered_json::object();
  for (const auto& [n, v] : m.p_at) p[std::to_string(n)] = v;
  nlohmann::ordered_json a = nlohmann::ordered_json::object();
  for (const auto& [n, v] : m.a_at) a[std::to_string(n)] = v;
  j["p_at"] = std::move(p);
  j["map"] = m.map;
  j["a_at"] = std::move(a);
  return j;
}

// Aligned text table: Method | P@5 | P@10 | MAP | A@3 | A@5.
inline std::string render_metrics_table(const std::vector<std::pair<std::string, EvalMetrics>>& rows) {
  std::ostringstream out;
  std::size_t width = 6;
  for (const auto& [name, _] : rows) width = std::max(width, name.size());
  auto cell = [&](const EvalMetrics& m, const std::map<std::size_t, double>& table, std::size_t n) {
    (void)m;
    auto it = table.find(n);
    std::ostringstream c;
    if (it == table.end()) c << "-";
    else c << std::fixed << std::setprecision(2) << it->second;
    return c.str();
  };
  out << std::left << std::setw(static_cast<int>(width)) << "Method";
  for (const char* h : {"P@5", "P@10", "MAP", "A@3", "A@5"}) out << "  " << std::right << std::setw(5) << h;
  out << '\n';
  for (const auto& [name, m] : rows) {
    std::ostringstream map;
    map << std::fixed << std::setprecision(2) << m.map;
    out << std::left << std::setw(static_cast<int>(width)) << name;
    out << "  " << std::right << std::setw(5) << cell(m, m.p_at, 5);
    out << "  " << std::right << std::setw(5) << cell(m, m.p_at, 10);
    out << "  " << std::right << std::setw(5) << map.str();
    out << "  " << std::right << std::setw(5) << cell(m, m.a_at, 3);
    out << "  " << std::right << std::setw(5) << cell(m, m.a_at, 5);
    out << '\n';
  }
  return out.str();
}

inline GoldSets read_gold(std::istream& in) {
  GoldSets gold;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      gold[j.at("query_id").get<std::string>()] = j.at("relevant").get<std::set<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw MalformedRecord(lineno, e.what());
    }
  }
  return gold;
}

}  // namespace itv
