#pragma once

#include <chrono>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "itv/artefacts.hpp"
#include "itv/disentangle.hpp"
#include "itv/embed.hpp"
#include "itv/resources.hpp"
#include "itv/retrieve.hpp"

namespace itv {

inline constexpr int kStoreSchema = 1;

struct StoreConfig {
  Weighting weighting = Weighting::literal;
};

// Immutable once built. Term sets exist only for Issue records; their
// vectors are derived from the model named by model_ref and are not persisted.
class IssueStore {
 public:
  const std::vector<IssueRecord>& records() const { return records_; }
  const std::vector<EntityTermSet>& term_sets() const { return term_sets_; }
  const std::vector<std::vector<EntityMention>>& mentions() const { return mentions_; }
  const IdfTable& weights() const { return idf_; }
  const std::string& model_ref() const { return model_ref_; }
  const std::optional<Timestamp>& built_at() const { return built_at_; }
  const std::string& snapshot() const { return snapshot_; }

  const IssueRecord* find(const std::string& issue_id) const {
    auto it = by_id_.find(issue_id);
    return it == by_id_.end() ? nullptr : &records_[it->second];
  }

  std::string serialize() const {
    std::ostringstream out;
    nlohmann::ordered_json header;
    header["store_schema"] = kStoreSchema;
    header["model_ref"] = model_ref_;
    header["built_at"] = built_at_ ? nlohmann::ordered_json(built_at_->text()) : nlohmann::ordered_json(nullptr);
    header["weighting"] = idf_.weighting() == Weighting::rarity ? "rarity" : "literal";
    header["issue_count"] = idf_.issue_count();
    header["df"] = idf_.document_frequency();
    out << header.dump() << '\n';
    std::size_t t = 0;
    for (const auto& r : records_) {
      nlohmann::ordered_json line;
      line["record"] = to_json(r);
      if (r.category == IssueCategory::Issue) {
        auto ts = nlohmann::ordered_json::array();
        for (const auto& e : term_sets_[t].entities) {
          nlohmann::ordered_json je;
          je["phrase"] = e.phrase;
          je["weight"] = e.weight;
          if (e.verb) je["verb"] = *e.verb;
          ts.push_back(std::move(je));
        }
        line["term_set"] = std::move(ts);
        ++t;
      } else {
        line["term_set"] = nullptr;
      }
      out << line.dump() << '\n';
    }
    return out.str();
  }

  static IssueStore parse(const std::string& bytes, const embed::EmbeddingModel& model) {
    IssueStore s;
    std::istringstream in(bytes);
    std::string line;
    std::size_t lineno = 0;
    std::optional<nlohmann::json> header;
    try {
      while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        if (!header) {
          header = j;
          const int schema = j.at("store_schema").get<int>();
          if (schema != kStoreSchema) throw VersionError("unsupported store schema " + std::to_string(schema));
          s.model_ref_ = j.at("model_ref").get<std::string>();
          if (!j.at("built_at").is_null()) s.built_at_ = Timestamp::parse(j.at("built_at").get<std::string>());
          const auto weighting = j.at("weighting").get<std::string>() == "rarity" ? Weighting::rarity : Weighting::literal;
          s.idf_ = IdfTable(j.at("issue_count").get<std::size_t>(),
                            j.at("df").get<std::map<std::string, std::size_t>>(), weighting);
          continue;
        }
        s.records_.push_back(issue_record_from_json(j.at("record")));
        if (s.records_.back().category == IssueCategory::Issue) {
          std::vector<EntityMention> ms;
          for (const auto& e : j.at("term_set")) {
            EntityMention m{e.at("phrase").get<std::string>(), std::nullopt};
            if (e.contains("verb")) m.verb = e.at("verb").get<std::string>();
            ms.push_back(std::move(m));
          }
          s.mentions_.push_back(std::move(ms));
        }
      }
    } catch (const nlohmann::json::exception& e) {
      throw MalformedRecord(lineno, e.what());
    }
    if (!header) throw FormatError("store file has no header");
    const std::string actual = text::hex64(model.fingerprint());
    if (s.model_ref_ != actual) {
      throw ModelMismatch("store was built against model " + s.model_ref_ + ", loaded model is " + actual);
    }
    s.finish(model);
    s.snapshot_ = text::hex64(text::fnv1a64(bytes));
    return s;
  }

  friend IssueStore build_store(std::span<const Conversation>, const ExtractionContext&, const SymptomLexicon&,
                                const embed::EmbeddingModel&, const StoreConfig&);

 private:
  void finish(const embed::EmbeddingModel& model) {
    by_id_.clear();
    for (std::size_t i = 0; i < records_.size(); ++i) {
      if (!by_id_.emplace(records_[i].conversation_id, i).second) {
        throw FormatError("duplicate issue id " + records_[i].conversation_id);
      }
    }
    term_sets_.clear();
    std::size_t t = 0;
    for (const auto& r : records_) {
      if (r.category != IssueCategory::Issue) continue;
      term_sets_.push_back(make_term_set(r.conversation_id, mentions_[t], idf_, model));
      ++t;
    }
  }

  std::vector<IssueRecord> records_;
  std::vector<std::vector<EntityMention>> mentions_;  // per Issue record, in record order
  std::vector<EntityTermSet> term_sets_;
  IdfTable idf_;
  std::string model_ref_;
  std::optional<Timestamp> built_at_;
  std::string snapshot_;
  std::map<std::string, std::size_t> by_id_;
};

inline IssueStore build_store(std::span<const Conversation> conversations, const ExtractionContext& ctx,
                              const SymptomLexicon& symptoms, const embed::EmbeddingModel& model,
                              const StoreConfig& config = {}) {
  IssueStore s;
  for (const auto& c : conversations) {
    if (c.messages.empty()) throw EmptyConversation("conversation " + c.conversation_id + " is empty");
    const AnnotatedUtterance first = ctx.annotator.annotate(c.messages.front());
    const IssueCategory category = categorize_first_turn(first, ctx.dictionary, symptoms);
    s.records_.push_back(build_issue_record(c, ctx, category));
    if (category == IssueCategory::Issue) s.mentions_.push_back(entity_mentions(first, ctx.dictionary, ctx.stopwords));
    const Timestamp& closed = s.records_.back().closed_at;
    if (!s.built_at_ || *s.built_at_ < closed) s.built_at_ = closed;
  }
  s.idf_ = s.mentions_.empty() ? IdfTable(0, {}, config.weighting)
                               : idf_weights(std::span<const std::vector<EntityMention>>(s.mentions_), config.weighting);
  s.model_ref_ = text::hex64(model.fingerprint());
  s.finish(model);
  s.snapshot_ = text::hex64(text::fnv1a64(s.serialize()));
  return s;
}

inline void save_store(const IssueStore& store, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write store " + path);
  out << store.serialize();
  if (!out) throw IoError("write failed for " + path);
}

inline IssueStore load_store(const std::string& path, const embed::EmbeddingModel& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open store " + path);
  std::ostringstream bytes;
  bytes << in.rdbuf();
  return IssueStore::parse(bytes.str(), model);
}

// ---------------------------------------------------------------------------
// Querying a store with free text. Shared by the CLI and the HTTP service.

struct QueryRequest {
  std::string text;
  std::size_t k = 10;
  Mode mode = Mode::M2;
};

inline EntityTermSet query_term_set(const IssueStore& store, const embed::EmbeddingModel& model, const Toolkit& kit,
                                    std::string_view text) {
  const Annotator annotator(kit.lexicon);
  const auto mentions = entity_mentions(annotator.annotate(text), kit.dictionary, kit.stopwords);
  return make_term_set("", mentions, store.weights(), model);
}

inline std::string query_id(const IssueStore& store, const QueryRequest& req) {
  std::uint64_t h = text::fnv1a64(store.snapshot() + "\n");
  h = text::fnv1a64(std::string(to_string(req.mode)) + "\n" + std::to_string(req.k) + "\n", h);
  return text::hex64(text::fnv1a64(req.text, h));
}

inline nlohmann::ordered_json result_json(const IssueRecord& r, double score) {
  nlohmann::ordered_json j;
  j["issue_id"] = r.conversation_id;
  j["score"] = score;
  j["issue_text"] = r.issue_text;
  auto diags = nlohmann::ordered_json::array();
  for (const auto& d : r.diagnostics) diags.push_back(to_json(d));
  j["diagnostics"] = std::move(diags);
  auto links = nlohmann::ordered_json::array();
  for (const auto& l : r.resolution_summaries) links.push_back({{"verb", l.verb_lemma}, {"entity", l.entity.phrase}});
  j["resolution_summaries"] = std::move(links);
  j["opened_at"] = r.opened_at.text();
  return j;
}

// A query without any extractable entity yields an empty result list.
inline nlohmann::ordered_json run_query(const IssueStore& store, const embed::EmbeddingModel& model, const Toolkit& kit,
                                        SimilarityConfig config, const QueryRequest& req) {
  if (text::trim(req.text).empty()) throw EmptyText("query text is empty");
  config.mode = req.mode;
  const auto q = query_term_set(store, model, kit, req.text);
  std::vector<RankedResult> ranked;
  if (q.rankable()) ranked = retrieve_similar(q, store.term_sets(), config, kit.dictionary, req.k);
  nlohmann::ordered_json out;
  out["query_id"] = query_id(store, req);
  auto results = nlohmann::ordered_json::array();
  for (const auto& r : ranked) results.push_back(result_json(*store.find(r.issue_id), r.score));
  out["results"] = std::move(results);
  out["snapshot"] = store.snapshot();
  return out;
}

// ---------------------------------------------------------------------------
// Offline evaluation over the store's own Issue records.

enum class Method { M1, M2, tfidf };

inline const char* to_string(Method m) { return m == Method::M1 ? "M1" : m == Method::M2 ? "M2" : "tfidf"; }

// Full rankings (every candidate above threshold) for each gold query. A
// query issue without entities gets an empty ranking.
inline Rankings rank_store(const IssueStore& store, const ActionDictionary& dict, SimilarityConfig config,
                           const GoldSets& gold, Method method) {
  std::map<std::string, const EntityTermSet*> sets;
  for (const auto& s : store.term_sets()) sets[s.issue_id] = &s;
  for (const auto& [qid, _] : gold) {
    if (!sets.count(qid)) throw QueryMismatch("gold query " + qid + " is not an Issue record in the store");
  }
  Rankings out;
  const std::size_t all = store.term_sets().size();
  if (method == Method::tfidf) {
    std::vector<TfIdfIndex::Document> docs;
    for (const auto& r : store.records()) {
      if (r.category == IssueCategory::Issue) docs.push_back({r.conversation_id, r.issue_text});
    }
    const TfIdfIndex index(std::move(docs));
    for (const auto& [qid, _] : gold) {
      auto& ids = out[qid];
      for (const auto& r : index.rank(store.find(qid)->issue_text, all, qid)) ids.push_back(r.issue_id);
    }
    return out;
  }
  config.mode = method == Method::M1 ? Mode::M1 : Mode::M2;
  for (const auto& [qid, _] : gold) {
    auto& ids = out[qid];
    const EntityTermSet& q = *sets.at(qid);
    if (!q.rankable()) continue;
    for (const auto& r : retrieve_similar(q, store.term_sets(), config, dict, all)) ids.push_back(r.issue_id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Relevance feedback

enum class Verdict { relevant, not_relevant };

inline const char* to_string(Verdict v) { return v == Verdict::relevant ? "relevant" : "not_relevant"; }

inline std::optional<Verdict> parse_verdict(const std::string& s) {
  if (s == "relevant") return Verdict::relevant;
  if (s == "not_relevant") return Verdict::not_relevant;
  return std::nullopt;
}

struct FeedbackEvent {
  std::string query_id;
  std::string result_issue_id;
  Verdict verdict = Verdict::relevant;
  std::string user;
  Timestamp timestamp;
  friend bool operator==(const FeedbackEvent&, const FeedbackEvent&) = default;
};

inline nlohmann::ordered_json to_json(const FeedbackEvent& e) {
  nlohmann::ordered_json j;
  j["query_id"] = e.query_id;
  j["result_issue_id"] = e.result_issue_id;
  j["verdict"] = to_string(e.verdict);
  j["user"] = e.user;
  j["ts"] = e.timestamp.text();
  return j;
}

inline FeedbackEvent feedback_from_json(const nlohmann::json& j) {
  FeedbackEvent e;
  e.query_id = j.at("query_id").get<std::string>();
  e.result_issue_id = j.at("result_issue_id").get<std::string>();
  auto v = parse_verdict(j.at("verdict").get<std::string>());
  if (!v) throw FormatError("bad verdict");
  e.verdict = *v;
  e.user = j.at("user").get<std::string>();
  auto ts = Timestamp::parse(j.at("ts").get<std::string>());
  if (!ts) throw FormatError("bad feedback timestamp");
  e.timestamp = *ts;
  return e;
}

// Latest verdict per (query, result) pair.
using FeedbackState = std::map<std::pair<std::string, std::string>, FeedbackEvent>;

inline void apply_feedback(FeedbackState& state, const FeedbackEvent& e) { state[{e.query_id, e.result_issue_id}] = e; }

inline FeedbackState replay_feedback(std::istream& in) {
  FeedbackState state;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      apply_feedback(state, feedback_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw MalformedRecord(lineno, e.what());
    }
  }
  return state;
}

// Append-only JSONL log; one writer at a time.
class FeedbackLog {
 public:
  explicit FeedbackLog(std::string path) : path_(std::move(path)) {
    std::ifstream in(path_);
    if (in) state_ = replay_feedback(in);
    out_.open(path_, std::ios::app | std::ios::binary);
    if (!out_) throw IoError("cannot open feedback log " + path_);
  }

  void append(const FeedbackEvent& e) {
    std::lock_guard lock(mu_);
    out_ << to_json(e).dump() << '\n';
    out_.flush();
    if (!out_) throw IoError("write failed for " + path_);
    apply_feedback(state_, e);
  }

  FeedbackState state() const {
    std::lock_guard lock(mu_);
    return state_;
  }

  const std::string& path() const { return path_; }

 private:
  std::string path_;
  mutable std::mutex mu_;
  std::ofstream out_;
  FeedbackState state_;
};

inline Timestamp now_timestamp() {
  const auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(
                      std::chrono::system_clock::now().time_since_epoch())
                      .count();
  return Timestamp::from_nanos(static_cast<Nanos>(ns));
}

}  // namespace itv
