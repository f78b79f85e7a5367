#pragma once

#include <algorithm>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "itv/error.hpp"
#include "itv/text.hpp"
#include "itv/timestamp.hpp"

namespace itv {

// Semantic-role tag carried by an argument token: `role` relative to the
// predicate at 1-based token position `predicate`.
struct RoleTag {
  int predicate = 0;
  std::string role;
  friend bool operator==(const RoleTag&, const RoleTag&) = default;
};

struct Token {
  std::string surface;
  std::string lower;
  std::optional<std::string> pos;  // universal POS tag
  std::optional<std::string> lemma;
  std::optional<std::string> dep_rel;
  std::optional<int> head;  // CoNLL convention: 0 = synthetic root, else 1-based position
  std::vector<RoleTag> roles;

  bool has_pos(std::string_view tag) const { return pos && *pos == tag; }
};

struct AnnotatedUtterance {
  std::string message_id;
  std::string speaker;
  Timestamp timestamp;
  std::string raw;
  std::vector<Token> tokens;

  bool has_dependencies() const {
    return !tokens.empty() && std::all_of(tokens.begin(), tokens.end(), [](const Token& t) {
             return t.dep_rel.has_value() && t.head.has_value();
           });
  }
};

namespace detail {

inline bool is_word_byte(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u >= 0x80 || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

// Characters that may join two word runs into one token ("node.js", "api-server", "don't").
inline bool is_connector(char c) { return c == '.' || c == '-' || c == '\'' || c == '/' || c == ':' || c == '+'; }

inline bool is_url_trailer(char c) {
  return c == '.' || c == ',' || c == ';' || c == ':' || c == '!' || c == '?' || c == ')' || c == ']' ||
         c == '}' || c == '\'' || c == '"' || c == '>';
}

inline Token make_token(std::string surface) {
  Token t;
  t.lower = text::lower(surface);
  t.surface = std::move(surface);
  return t;
}

}  // namespace detail

// Whitespace/punctuation tokenizer. URLs, @mentions and `code spans` survive
// as single tokens; every other punctuation character is its own token.
// Concatenating the surfaces gives the input with whitespace removed.
inline std::vector<Token> tokenize(std::string_view s) {
  using namespace detail;
  std::vector<Token> out;
  std::size_t i = 0;
  const std::size_t n = s.size();
  while (i < n) {
    if (text::is_space(s[i])) {
      ++i;
      continue;
    }
    const std::string_view rest = s.substr(i);
    if (s[i] == '`') {
      const auto close = s.find('`', i + 1);
      if (close != std::string_view::npos) {
        out.push_back(make_token(std::string(s.substr(i, close - i + 1))));
        i = close + 1;
        continue;
      }
    }
    if (text::starts_with(rest, "http://") || text::starts_with(rest, "https://") ||
        text::starts_with(rest, "www.")) {
      std::size_t j = i;
      while (j < n && !text::is_space(s[j])) ++j;
      while (j > i + 4 && is_url_trailer(s[j - 1])) --j;
      out.push_back(make_token(std::string(s.substr(i, j - i))));
      i = j;
      continue;
    }
    if (s[i] == '@' && i + 1 < n && is_word_byte(s[i + 1])) {
      std::size_t j = i + 1;
      while (j < n && (is_word_byte(s[j]) || ((s[j] == '.' || s[j] == '-') && j + 1 < n && is_word_byte(s[j + 1])))) {
        ++j;
      }
      out.push_back(make_token(std::string(s.substr(i, j - i))));
      i = j;
      continue;
    }
    if (is_word_byte(s[i])) {
      std::size_t j = i;
      while (j < n) {
        if (is_word_byte(s[j])) {
          ++j;
        } else if (is_connector(s[j]) && j + 1 < n && is_word_byte(s[j + 1])) {
          j += 2;
        } else {
          break;
        }
      }
      out.push_back(make_token(std::string(s.substr(i, j - i))));
      i = j;
      continue;
    }
    out.push_back(make_token(std::string(1, s[i])));
    ++i;
  }
  return out;
}

inline bool is_punct_token(const Token& t) {
  return !t.surface.empty() && std::none_of(t.surface.begin(), t.surface.end(), detail::is_word_byte);
}

inline bool is_url_token(const Token& t) {
  return text::starts_with(t.lower, "http://") || text::starts_with(t.lower, "https://") ||
         text::starts_with(t.lower, "www.");
}

// ---------------------------------------------------------------------------
// CoNLL-U

namespace detail {

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.emplace_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

inline std::optional<std::string> conll_field(const std::string& f) {
  if (f == "_") return std::nullopt;
  return f;
}

inline std::vector<RoleTag> parse_roles(const std::string& misc, std::size_t lineno) {
  if (misc == "_") return {};
  std::vector<std::string> preds;
  std::vector<std::string> roles;
  for (const auto& kv : split(misc, '|')) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) continue;
    const auto key = kv.substr(0, eq);
    const auto value = kv.substr(eq + 1);
    if (key == "Pred") preds = split(value, ',');
    if (key == "Role") roles = split(value, ',');
  }
  if (preds.size() != roles.size()) throw ParseError(lineno, "Pred and Role lists differ in length");
  std::vector<RoleTag> out;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    try {
      out.push_back(RoleTag{std::stoi(preds[k]), roles[k]});
    } catch (const std::exception&) {
      throw ParseError(lineno, "bad predicate index \"" + preds[k] + "\"");
    }
  }
  return out;
}

inline void check_heads(const AnnotatedUtterance& u, std::size_t lineno) {
  const int n = static_cast<int>(u.tokens.size());
  for (int i = 0; i < n; ++i) {
    const auto& h = u.tokens[static_cast<std::size_t>(i)].head;
    if (h && (*h < 0 || *h > n)) throw ParseError(lineno, "head out of range in sentence " + u.message_id);
  }
  // Each token's head chain must reach the root (or an unannotated head)
  // within n steps, otherwise it loops.
  for (int i = 0; i < n; ++i) {
    int cur = i + 1;
    for (int steps = 0;; ++steps) {
      if (steps > n) throw ParseError(lineno, "cyclic heads in sentence " + u.message_id);
      const auto& h = u.tokens[static_cast<std::size_t>(cur - 1)].head;
      if (!h || *h == 0) break;
      cur = *h;
    }
  }
  for (const auto& t : u.tokens) {
    for (const auto& r : t.roles) {
      if (r.predicate < 1 || r.predicate > n) throw ParseError(lineno, "role predicate out of range");
    }
  }
}

}  // namespace detail

// Reads CoNLL-U where each sentence carries `# message_id = <id>`.
// Multi-word token ranges and empty nodes are skipped. The MISC column may
// carry semantic roles as `Pred=<i>[,<j>...]|Role=<label>[,<label>...]`.
inline std::vector<AnnotatedUtterance> load_annotations(std::istream& in) {
  std::vector<AnnotatedUtterance> out;
  AnnotatedUtterance cur;
  bool have_id = false;
  bool have_text = false;
  bool open = false;
  std::size_t start_line = 0;
  std::size_t lineno = 0;

  auto flush = [&]() {
    if (!open) return;
    if (!have_id) throw ParseError(start_line, "sentence without a message_id comment");
    if (cur.tokens.empty()) throw ParseError(start_line, "sentence without tokens");
    if (!have_text) {
      std::vector<std::string> parts;
      for (const auto& t : cur.tokens) parts.push_back(t.surface);
      cur.raw = text::join(parts, " ");
    }
    detail::check_heads(cur, start_line);
    out.push_back(std::move(cur));
    cur = AnnotatedUtterance{};
    have_id = have_text = open = false;
  };

  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) {
      flush();
      continue;
    }
    if (!open) {
      open = true;
      start_line = lineno;
    }
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const auto key = std::string(text::trim(std::string_view(line).substr(1, eq - 1)));
      const auto value = std::string(text::trim(std::string_view(line).substr(eq + 1)));
      if (key == "message_id") {
        cur.message_id = value;
        have_id = !value.empty();
      } else if (key == "text") {
        cur.raw = value;
        have_text = true;
      }
      continue;
    }
    const auto cols = detail::split(line, '\t');
    if (cols.size() != 10) throw ParseError(lineno, "expected 10 tab-separated columns, got " + std::to_string(cols.size()));
    if (cols[0].find_first_of("-.") != std::string::npos) continue;
    int id = 0;
    try {
      id = std::stoi(cols[0]);
    } catch (const std::exception&) {
      throw ParseError(lineno, "bad token id \"" + cols[0] + "\"");
    }
    if (id != static_cast<int>(cur.tokens.size()) + 1) throw ParseError(lineno, "token ids not consecutive");
    Token t = detail::make_token(cols[1]);
    t.lemma = detail::conll_field(cols[2]);
    if (t.lemma) t.lemma = text::lower(*t.lemma);
    t.pos = detail::conll_field(cols[3]);
    if (cols[6] != "_") {
      try {
        t.head = std::stoi(cols[6]);
      } catch (const std::exception&) {
        throw ParseError(lineno, "bad head \"" + cols[6] + "\"");
      }
    }
    t.dep_rel = detail::conll_field(cols[7]);
    t.roles = detail::parse_roles(cols[9], lineno);
    cur.tokens.push_back(std::move(t));
  }
  flush();
  return out;
}

// ---------------------------------------------------------------------------
// Fallback tagging

// Word -> candidate UPOS tags (first is the default) and an optional lemma.
class PosLexicon {
 public:
  struct Entry {
    std::vector<std::string> tags;
    std::optional<std::string> lemma;
  };

  void add(const std::string& word, std::vector<std::string> tags, std::optional<std::string> lemma = std::nullopt) {
    entries_[text::lower(word)] = Entry{std::move(tags), std::move(lemma)};
  }

  const Entry* find(const std::string& lower) const {
    auto it = entries_.find(lower);
    return it == entries_.end() ? nullptr : &it->second;
  }

  std::size_t size() const { return entries_.size(); }

  // TSV: word<TAB>TAG[|TAG...][<TAB>lemma]; '#' starts a comment line.
  static PosLexicon parse(std::istream& in) {
    PosLexicon lex;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      const auto cols = detail::split(line, '\t');
      if (cols.size() < 2) throw ParseError(lineno, "lexicon line needs word and tag");
      std::optional<std::string> lemma;
      if (cols.size() > 2 && !cols[2].empty()) lemma = cols[2];
      lex.add(cols[0], detail::split(cols[1], '|'), lemma);
    }
    return lex;
  }

  static PosLexicon load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open POS lexicon " + path);
    return parse(in);
  }

 private:
  std::unordered_map<std::string, Entry> entries_;
};

namespace detail {

inline std::string suffix_tag(const std::string& w) {
  using text::ends_with;
  if (w.size() > 4 && (ends_with(w, "ify") || ends_with(w, "ize") || ends_with(w, "ise"))) return "VERB";
  if (w.size() > 4 && (ends_with(w, "ing") || ends_with(w, "ed"))) return "VERB";
  if (w.size() > 4 && (ends_with(w, "tion") || ends_with(w, "sion") || ends_with(w, "ment") || ends_with(w, "ness") ||
                       ends_with(w, "ity") || ends_with(w, "ance") || ends_with(w, "ence") || ends_with(w, "ship"))) {
    return "NOUN";
  }
  if (w.size() > 4 && (ends_with(w, "able") || ends_with(w, "ible") || ends_with(w, "ful") || ends_with(w, "less") ||
                       ends_with(w, "ous") || ends_with(w, "ive"))) {
    return "ADJ";
  }
  if (w.size() > 3 && ends_with(w, "ly")) return "ADV";
  return "NOUN";
}

inline bool is_number(const std::string& w) {
  bool digit = false;
  for (char c : w) {
    if (c >= '0' && c <= '9') digit = true;
    else if (c != '.' && c != ',' && c != ':' && c != '%') return false;
  }
  return digit;
}

// Whether the previous token forces the noun reading of a noun/verb word.
// Infinitival "to" selects the verb.
inline bool selects_noun(const Token& prev) {
  static const std::set<std::string> possessives = {"my", "your", "our", "their", "its", "his", "her"};
  if (prev.lower == "to") return false;
  return prev.has_pos("DET") || prev.has_pos("ADJ") || prev.has_pos("NUM") || prev.has_pos("ADP") ||
         possessives.count(prev.lower) > 0;
}

}  // namespace detail

// POS from the lexicon plus suffix heuristics. Dependency fields stay empty,
// which routes entity extraction through the chunk path.
inline AnnotatedUtterance fallback_annotate(std::vector<Token> tokens, const PosLexicon& lexicon) {
  AnnotatedUtterance u;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    Token& t = tokens[i];
    t.dep_rel.reset();
    t.head.reset();
    if (is_punct_token(t)) {
      t.pos = "PUNCT";
    } else if (is_url_token(t) || t.surface.front() == '`') {
      t.pos = "X";
    } else if (t.surface.front() == '@') {
      t.pos = "PROPN";
    } else if (detail::is_number(t.lower)) {
      t.pos = "NUM";
    } else if (const auto* e = lexicon.find(t.lower)) {
      t.pos = e->tags.front();
      t.lemma = e->lemma;
      const bool noun_or_verb = std::find(e->tags.begin(), e->tags.end(), "NOUN") != e->tags.end() &&
                                std::find(e->tags.begin(), e->tags.end(), "VERB") != e->tags.end();
      if (noun_or_verb) {
        t.pos = (i > 0 && detail::selects_noun(tokens[i - 1])) ? "NOUN" : "VERB";
      }
    } else {
      const bool capitalized = t.surface[0] >= 'A' && t.surface[0] <= 'Z';
      const bool sentence_initial = i == 0 || tokens[i - 1].has_pos("PUNCT");
      std::string tag = detail::suffix_tag(t.lower);
      if (tag == "NOUN" && capitalized && !sentence_initial) tag = "PROPN";
      t.pos = tag;
    }
  }
  std::vector<std::string> parts;
  for (const auto& t : tokens) parts.push_back(t.surface);
  u.raw = text::join(parts, " ");
  u.tokens = std::move(tokens);
  return u;
}

inline AnnotatedUtterance annotate_text(std::string_view raw, const PosLexicon& lexicon) {
  AnnotatedUtterance u = fallback_annotate(tokenize(raw), lexicon);
  u.raw = std::string(raw);
  return u;
}

}  // namespace itv
