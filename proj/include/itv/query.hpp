#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "itv/annotate.hpp"
#include "itv/error.hpp"

namespace itv {

// Lexical question triggers. Loaded from a config file; the defaults only
// cover the 5W1H words and the question mark.
struct QueryTriggers {
  std::set<std::string> wh_words = {"who", "what", "when", "where", "why", "how"};
  std::set<std::string> modal_triggers;
  std::size_t interrogative_window = 3;
  std::size_t verb_lookahead = 3;

  static QueryTriggers from_json(const nlohmann::json& j) {
    QueryTriggers t;
    if (j.contains("wh_words")) t.wh_words = j.at("wh_words").get<std::set<std::string>>();
    if (j.contains("modal_triggers")) t.modal_triggers = j.at("modal_triggers").get<std::set<std::string>>();
    t.interrogative_window = j.value("interrogative_window", t.interrogative_window);
    t.verb_lookahead = j.value("verb_lookahead", t.verb_lookahead);
    return t;
  }

  static QueryTriggers load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open trigger config " + path);
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }
};

inline bool lexical_query_rule(const AnnotatedUtterance& u, const QueryTriggers& triggers) {
  const auto& toks = u.tokens;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (toks[i].surface == "?") return true;
    if (i < triggers.interrogative_window && triggers.wh_words.count(toks[i].lower)) return true;
    if (triggers.modal_triggers.count(toks[i].lower)) {
      for (std::size_t k = i + 1; k < toks.size() && k <= i + triggers.verb_lookahead; ++k) {
        if (toks[k].has_pos("VERB")) return true;
      }
    }
  }
  return false;
}

struct LabeledUtterance {
  std::string text;
  bool is_question = false;
};

inline std::vector<LabeledUtterance> read_labeled_corpus(std::istream& in) {
  std::vector<LabeledUtterance> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("text").get<std::string>(), j.at("is_question").get<bool>()});
    } catch (const nlohmann::json::exception& e) {
      throw MalformedRecord(lineno, e.what());
    }
  }
  return out;
}

inline std::vector<LabeledUtterance> load_labeled_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open labeled corpus " + path);
  return read_labeled_corpus(in);
}

inline std::vector<std::string> bag_of_words(std::string_view text) {
  std::vector<std::string> out;
  for (auto& t : tokenize(text)) out.push_back(std::move(t.lower));
  return out;
}

// Multinomial Naive Bayes over lowercased tokens, question vs. non-question,
// with additive smoothing. The vocabulary carries one extra unknown slot so
// each class distribution sums to one over vocab + unknown.
class QueryNaiveBayes {
 public:
  static constexpr int kQuestion = 1;
  static constexpr int kOther = 0;

  static QueryNaiveBayes train(std::span<const LabeledUtterance> corpus, double alpha = 1.0) {
    QueryNaiveBayes nb;
    nb.alpha_ = alpha;
    for (const auto& u : corpus) {
      const int c = u.is_question ? kQuestion : kOther;
      ++nb.docs_[c];
      for (const auto& w : bag_of_words(u.text)) {
        ++nb.counts_[w][c];
        ++nb.totals_[c];
      }
    }
    if (nb.docs_[kQuestion] == 0 || nb.docs_[kOther] == 0) {
      throw DegenerateCorpus("query corpus needs both question and non-question utterances");
    }
    return nb;
  }

  double log_prior(int c) const {
    return std::log(static_cast<double>(docs_[c]) / static_cast<double>(docs_[0] + docs_[1]));
  }

  double log_likelihood(const std::string& word, int c) const {
    double count = 0;
    if (auto it = counts_.find(word); it != counts_.end()) count = static_cast<double>(it->second[c]);
    const double denom = static_cast<double>(totals_[c]) + alpha_ * static_cast<double>(counts_.size() + 1);
    return std::log((count + alpha_) / denom);
  }

  // P(question | text).
  double posterior(std::string_view text) const {
    double lq = log_prior(kQuestion);
    double lo = log_prior(kOther);
    for (const auto& w : bag_of_words(text)) {
      lq += log_likelihood(w, kQuestion);
      lo += log_likelihood(w, kOther);
    }
    const double m = std::max(lq, lo);
    const double eq = std::exp(lq - m);
    const double eo = std::exp(lo - m);
    return eq / (eq + eo);
  }

  std::size_t vocabulary_size() const { return counts_.size(); }
  std::size_t documents(int c) const { return docs_[c]; }

 private:
  double alpha_ = 1.0;
  std::map<std::string, std::array<std::size_t, 2>> counts_;
  std::array<std::size_t, 2> docs_{0, 0};
  std::array<std::size_t, 2> totals_{0, 0};
};

inline QueryNaiveBayes train_query_nb(std::span<const LabeledUtterance> corpus) {
  return QueryNaiveBayes::train(corpus);
}

enum class Provenance { none, lexical, bayes, both };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::lexical: return "lexical";
    case Provenance::bayes: return "bayes";
    case Provenance::both: return "both";
    case Provenance::none: break;
  }
  return "none";
}

struct Diagnosis {
  bool diagnostic = false;
  Provenance provenance = Provenance::none;
};

struct QueryDetector {
  QueryTriggers triggers;
  QueryNaiveBayes nb;
  double threshold = 0.5;
};

// Negative only when both the lexical rule and the classifier say negative.
inline Diagnosis is_diagnostic(const AnnotatedUtterance& u, const QueryDetector& detector) {
  const bool lexical = lexical_query_rule(u, detector.triggers);
  const bool bayes = detector.nb.posterior(u.raw) > detector.threshold;
  Diagnosis d;
  d.diagnostic = lexical || bayes;
  d.provenance = lexical && bayes ? Provenance::both
                 : lexical        ? Provenance::lexical
                 : bayes          ? Provenance::bayes
                                  : Provenance::none;
  return d;
}

}  // namespace itv
