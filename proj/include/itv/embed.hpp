#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include "itv/annotate.hpp"
#include "itv/error.hpp"
#include "itv/text.hpp"

namespace itv::embed {

using Sentence = std::vector<std::string>;
using Corpus = std::vector<Sentence>;

struct TrainConfig {
  std::size_t dim = 300;
  std::size_t epochs = 300;
  std::size_t minn = 3;
  std::size_t maxn = 20;
  std::size_t window = 5;
  std::size_t negatives = 5;
  double learning_rate = 0.05;
  std::uint32_t bucket_count = 1u << 21;
  std::size_t min_count = 1;
  double sample = 1e-4;  // frequent-word subsampling threshold, 0 disables
  double phrase_mix = 0.5;  // weight of the cross-boundary subword vector for phrases
  std::uint64_t seed = 1;
  std::size_t workers = 1;

  // Laptop-scale profile.
  static TrainConfig desk() {
    TrainConfig c;
    c.dim = 50;
    c.epochs = 200;
    c.bucket_count = 1u << 18;
    return c;
  }

  void validate() const {
    if (dim == 0) throw ConfigError("dim must be positive");
    if (minn == 0 || minn > maxn) throw ConfigError("need 0 < minn <= maxn");
    if (bucket_count == 0) throw ConfigError("bucket_count must be positive");
    if (window == 0 || epochs == 0 || workers == 0) throw ConfigError("window, epochs and workers must be positive");
    if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
    if (phrase_mix < 0 || phrase_mix > 1) throw ConfigError("phrase_mix must lie in [0,1]");
  }
};

// Lowercased word tokens of one line; punctuation is dropped.
inline Sentence corpus_sentence(std::string_view line) {
  Sentence s;
  for (auto& t : tokenize(line)) {
    if (!is_punct_token(t)) s.push_back(std::move(t.lower));
  }
  return s;
}

inline Corpus read_corpus(std::istream& in) {
  Corpus c;
  std::string line;
  while (std::getline(in, line)) {
    auto s = corpus_sentence(line);
    if (!s.empty()) c.push_back(std::move(s));
  }
  return c;
}

class Vocab {
 public:
  std::size_t size() const { return words_.size(); }
  bool empty() const { return words_.empty(); }
  const std::string& word(std::size_t id) const { return words_[id]; }
  std::uint64_t count(std::size_t id) const { return counts_[id]; }
  std::uint64_t total_tokens() const { return total_; }
  std::size_t min_count() const { return min_count_; }
  const std::vector<std::string>& words() const { return words_; }

  std::optional<std::size_t> id(const std::string& w) const {
    auto it = index_.find(w);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  void add(std::string w, std::uint64_t count) {
    index_.emplace(w, words_.size());
    words_.push_back(std::move(w));
    counts_.push_back(count);
  }

  // Ids are assigned by descending count, then lexicographically.
  static Vocab build(const Corpus& corpus, std::size_t min_count) {
    std::unordered_map<std::string, std::uint64_t> counts;
    std::uint64_t total = 0;
    for (const auto& s : corpus) {
      for (const auto& w : s) {
        ++counts[w];
        ++total;
      }
    }
    if (total == 0) throw EmptyCorpus("embedding corpus has no tokens");
    std::vector<std::pair<std::string, std::uint64_t>> kept;
    for (auto& [w, c] : counts) {
      if (c >= min_count) kept.emplace_back(w, c);
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    Vocab v;
    v.min_count_ = min_count;
    for (auto& [w, c] : kept) {
      v.total_ += c;
      v.add(w, c);
    }
    return v;
  }

 private:
  std::vector<std::string> words_;
  std::vector<std::uint64_t> counts_;
  std::unordered_map<std::string, std::size_t> index_;
  std::uint64_t total_ = 0;
  std::size_t min_count_ = 1;
};

inline Vocab build_vocab(const Corpus& corpus, std::size_t min_count) { return Vocab::build(corpus, min_count); }

// Character n-grams of "<" + word + ">" for n in [minn, maxn], over code points.
inline std::vector<std::string> subword_strings(std::string_view word, std::size_t minn, std::size_t maxn) {
  std::u32string bracketed = U"<" + text::to_u32(word) + U">";
  std::vector<std::string> out;
  for (std::size_t start = 0; start < bracketed.size(); ++start) {
    for (std::size_t n = minn; n <= maxn && start + n <= bracketed.size(); ++n) {
      out.push_back(text::to_utf8(std::u32string_view(bracketed).substr(start, n)));
    }
  }
  return out;
}

inline std::uint32_t fnv1a32(std::string_view s) {
  std::uint32_t h = 2166136261u;
  for (unsigned char c : s) {
    h ^= c;
    h *= 16777619u;
  }
  return h;
}

inline std::vector<std::uint32_t> subword_ngrams(std::string_view word, std::size_t minn, std::size_t maxn,
                                                 std::uint32_t bucket_count) {
  std::vector<std::uint32_t> out;
  for (const auto& g : subword_strings(word, minn, maxn)) out.push_back(fnv1a32(g) % bucket_count);
  return out;
}

// Cosine in double precision, clamped to [-1, 1]; 0 when either side has zero norm.
inline double cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw LengthMismatch("cosine of vectors with different dimension");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

struct Neighbor {
  std::string word;
  double cosine = 0;
};

class EmbeddingModel {
 public:
  EmbeddingModel() = default;

  std::size_t dim() const { return dim_; }
  std::size_t minn() const { return minn_; }
  std::size_t maxn() const { return maxn_; }
  std::uint32_t bucket_count() const { return bucket_count_; }
  const Vocab& vocab() const { return vocab_; }
  double phrase_mix() const { return phrase_mix_; }
  void set_phrase_mix(double m) { phrase_mix_ = m; }

  std::span<const float> row(std::size_t r) const { return {input_.data() + r * dim_, dim_}; }

  // Input rows composing a single token: its word row (if in vocab) plus subwords.
  std::vector<std::size_t> rows_for(std::string_view token) const {
    std::vector<std::size_t> rows;
    if (auto id = vocab_.id(std::string(token))) rows.push_back(*id);
    for (auto b : subword_ngrams(token, minn_, maxn_, bucket_count_)) rows.push_back(vocab_.size() + b);
    return rows;
  }

  std::vector<double> mean_of_rows(std::span<const std::size_t> rows) const {
    std::vector<double> v(dim_, 0.0);
    for (auto r : rows) {
      const float* p = input_.data() + r * dim_;
      for (std::size_t i = 0; i < dim_; ++i) v[i] += p[i];
    }
    if (!rows.empty()) {
      for (auto& x : v) x /= static_cast<double>(rows.size());
    }
    return v;
  }

  // Unit vector for a word or multi-word phrase. A phrase mixes the subwords
  // of the whole bracketed string (so n-grams span the word boundary) with
  // the mean of its per-word vectors.
  std::vector<float> vector(std::string_view text) const {
    const std::string norm = text::join(text::split_whitespace(text::lower(text)), " ");
    if (norm.empty()) throw EmptyText("cannot embed empty text");
    std::vector<double> v;
    const auto words = text::split_whitespace(norm);
    if (words.size() == 1) {
      v = mean_of_rows(rows_for(norm));
    } else {
      const auto whole = mean_of_rows(rows_for(norm));
      std::vector<double> per_word(dim_, 0.0);
      for (const auto& w : words) {
        const auto wv = mean_of_rows(rows_for(w));
        for (std::size_t i = 0; i < dim_; ++i) per_word[i] += wv[i] / static_cast<double>(words.size());
      }
      v.resize(dim_);
      for (std::size_t i = 0; i < dim_; ++i) v[i] = phrase_mix_ * whole[i] + (1.0 - phrase_mix_) * per_word[i];
    }
    double n = 0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    std::vector<float> out(dim_, 0.0f);
    if (n > 0) {
      for (std::size_t i = 0; i < dim_; ++i) out[i] = static_cast<float>(v[i] / n);
    }
    return out;
  }

  // k nearest vocabulary words by cosine, excluding the query itself; ties
  // break lexicographically.
  std::vector<Neighbor> nearest(std::string_view query, std::size_t k) const {
    if (k == 0) return {};
    const auto q = vector(query);
    const std::string self = text::join(text::split_whitespace(text::lower(query)), " ");
    std::vector<Neighbor> all;
    all.reserve(vocab_.size());
    for (std::size_t id = 0; id < vocab_.size(); ++id) {
      if (vocab_.word(id) == self) continue;
      all.push_back({vocab_.word(id), cosine(q, word_vector(id))});
    }
    const auto cmp = [](const Neighbor& a, const Neighbor& b) {
      return a.cosine != b.cosine ? a.cosine > b.cosine : a.word < b.word;
    };
    const std::size_t take = std::min(k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(), cmp);
    all.resize(take);
    return all;
  }

  std::span<const float> word_vector(std::size_t id) const { return {word_vectors_.data() + id * dim_, dim_}; }

  std::uint64_t fingerprint() const {
    std::uint64_t h = text::fnv1a64(std::to_string(dim_) + ":" + std::to_string(minn_) + ":" + std::to_string(maxn_) +
                                    ":" + std::to_string(bucket_count_));
    for (const auto& w : vocab_.words()) h = text::fnv1a64(w + "\n", h);
    h = text::fnv1a64(std::string_view(reinterpret_cast<const char*>(input_.data()), input_.size() * sizeof(float)), h);
    return h;
  }

  friend class Trainer;
  friend struct ModelIo;

 private:
  void finalize() {
    word_vectors_.assign(vocab_.size() * dim_, 0.0f);
    for (std::size_t id = 0; id < vocab_.size(); ++id) {
      const auto v = vector(vocab_.word(id));
      std::copy(v.begin(), v.end(), word_vectors_.begin() + static_cast<std::ptrdiff_t>(id * dim_));
    }
  }

  std::size_t dim_ = 0;
  std::size_t minn_ = 3;
  std::size_t maxn_ = 20;
  std::uint32_t bucket_count_ = 1;
  double phrase_mix_ = 0.5;
  Vocab vocab_;
  std::vector<float> input_;   // (V + buckets) x dim
  std::vector<float> output_;  // V x dim, dropped on save
  std::vector<float> word_vectors_;  // cached unit vectors of vocabulary words
};

struct TrainResult {
  EmbeddingModel model;
  std::vector<double> epoch_loss;  // mean negative-sampling loss per (centre, context) pair
  // Same objective on a fixed sample of training pairs and negatives, read
  // after each epoch without updating; free of per-epoch sampling noise.
  std::vector<double> probe_loss;
};

// Skip-gram with negative sampling over subword-composed input vectors.
class Trainer {
 public:
  Trainer(const Corpus& corpus, const TrainConfig& config) : corpus_(corpus), config_(config) {}

  TrainResult run() {
    config_.validate();
    TrainResult result;
    EmbeddingModel& m = result.model;
    m.dim_ = config_.dim;
    m.minn_ = config_.minn;
    m.maxn_ = config_.maxn;
    m.bucket_count_ = config_.bucket_count;
    m.phrase_mix_ = config_.phrase_mix;
    m.vocab_ = build_vocab(corpus_, config_.min_count);
    if (m.vocab_.empty()) throw EmptyCorpus("no word reaches min_count");
    const std::size_t V = m.vocab_.size();
    const std::size_t dim = config_.dim;

    std::mt19937_64 rng(config_.seed);
    m.input_.resize((V + config_.bucket_count) * dim);
    std::uniform_real_distribution<float> init(-1.0f / static_cast<float>(dim), 1.0f / static_cast<float>(dim));
    for (auto& x : m.input_) x = init(rng);
    m.output_.assign(V * dim, 0.0f);

    rows_.resize(V);
    for (std::size_t id = 0; id < V; ++id) rows_[id] = m.rows_for(m.vocab_.word(id));
    build_negative_table(m.vocab_);
    build_keep_probabilities(m.vocab_);

    ids_.clear();
    for (const auto& s : corpus_) {
      std::vector<std::uint32_t> ids;
      for (const auto& w : s) {
        if (auto id = m.vocab_.id(w)) ids.push_back(static_cast<std::uint32_t>(*id));
      }
      if (!ids.empty()) ids_.push_back(std::move(ids));
    }
    build_probe();
    total_steps_ = static_cast<double>(config_.epochs) * static_cast<double>(m.vocab_.total_tokens());
    processed_.store(0);

    for (std::size_t epoch = 0; epoch < config_.epochs; ++epoch) {
      double loss = 0;
      std::uint64_t pairs = 0;
      if (config_.workers == 1) {
        auto [l, p] = run_slice<false>(m, 0, ids_.size(), rng);
        loss = l;
        pairs = p;
      } else {
        std::vector<std::thread> pool;
        std::vector<double> losses(config_.workers, 0);
        std::vector<std::uint64_t> counts(config_.workers, 0);
        const std::size_t per = (ids_.size() + config_.workers - 1) / config_.workers;
        for (std::size_t w = 0; w < config_.workers; ++w) {
          const std::size_t lo = std::min(ids_.size(), w * per);
          const std::size_t hi = std::min(ids_.size(), lo + per);
          const std::uint64_t wseed = config_.seed * 1000003u + epoch * 7919u + w;
          pool.emplace_back([&, lo, hi, w, wseed] {
            std::mt19937_64 local(wseed);
            auto [l, p] = run_slice<true>(m, lo, hi, local);
            losses[w] = l;
            counts[w] = p;
          });
        }
        for (auto& t : pool) t.join();
        loss = std::accumulate(losses.begin(), losses.end(), 0.0);
        pairs = std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
      }
      result.epoch_loss.push_back(pairs ? loss / static_cast<double>(pairs) : 0.0);
      result.probe_loss.push_back(probe(m));
    }
    m.output_.clear();
    m.output_.shrink_to_fit();
    m.finalize();
    return result;
  }

 private:
  static constexpr std::size_t kNegativeTableSize = 10'000'000;
  static constexpr std::size_t kProbePairs = 20'000;

  struct ProbePair {
    std::uint32_t centre;
    std::uint32_t context;
    std::vector<std::uint32_t> negatives;
  };

  // Drawn from its own generator so the training stream is unaffected.
  void build_probe() {
    probe_.clear();
    std::size_t tokens = 0;
    for (const auto& s : ids_) tokens += s.size();
    if (tokens < 2) return;
    std::mt19937_64 rng(config_.seed ^ 0x9e3779b97f4a7c15ull);
    std::uniform_int_distribution<std::size_t> sent(0, ids_.size() - 1);
    std::uniform_int_distribution<std::size_t> neg(0, negative_table_.size() - 1);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::size_t attempts = 0;
    while (probe_.size() < kProbePairs && attempts++ < kProbePairs * 200) {
      const auto& s = ids_[sent(rng)];
      if (s.size() < 2) continue;
      std::uniform_int_distribution<std::size_t> pos(0, s.size() - 1);
      const std::size_t w = pos(rng);
      const std::size_t lo = w >= config_.window ? w - config_.window : 0;
      const std::size_t hi = std::min(s.size() - 1, w + config_.window);
      std::uniform_int_distribution<std::size_t> ctx(lo, hi);
      std::size_t c = ctx(rng);
      if (c == w) continue;
      // Same pair distribution as training: both ends survive subsampling.
      if (uni(rng) >= keep_[s[w]] || uni(rng) >= keep_[s[c]]) continue;
      ProbePair p{s[w], s[c], {}};
      for (std::size_t k = 0; k < config_.negatives; ++k) p.negatives.push_back(negative_table_[neg(rng)]);
      probe_.push_back(std::move(p));
    }
  }

  double probe(const EmbeddingModel& m) const {
    if (probe_.empty()) return 0.0;
    const std::size_t dim = m.dim_;
    std::vector<double> hidden(dim);
    double loss = 0;
    std::size_t terms = 0;
    auto score = [&](std::uint32_t target) {
      const float* out = m.output_.data() + static_cast<std::size_t>(target) * dim;
      double x = 0;
      for (std::size_t i = 0; i < dim; ++i) x += out[i] * hidden[i];
      return x;
    };
    for (const auto& p : probe_) {
      const auto& rows = rows_[p.centre];
      std::fill(hidden.begin(), hidden.end(), 0.0);
      for (auto r : rows) {
        const float* in = m.input_.data() + r * dim;
        for (std::size_t i = 0; i < dim; ++i) hidden[i] += in[i];
      }
      for (auto& x : hidden) x /= static_cast<double>(rows.size());
      loss += log_sigmoid_loss(score(p.context), true);
      for (auto n : p.negatives) {
        if (n == p.context) continue;
        loss += log_sigmoid_loss(score(n), false);
      }
      ++terms;
    }
    return loss / static_cast<double>(terms);
  }

  void build_negative_table(const Vocab& v) {
    negative_table_.clear();
    double z = 0;
    for (std::size_t i = 0; i < v.size(); ++i) z += std::pow(static_cast<double>(v.count(i)), 0.75);
    const std::size_t target = std::min<std::size_t>(kNegativeTableSize, std::max<std::size_t>(v.size() * 1000, 100000));
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double c = std::pow(static_cast<double>(v.count(i)), 0.75);
      const auto n = static_cast<std::size_t>(std::ceil(c * static_cast<double>(target) / z));
      negative_table_.insert(negative_table_.end(), n, static_cast<std::uint32_t>(i));
    }
  }

  void build_keep_probabilities(const Vocab& v) {
    keep_.assign(v.size(), 1.0);
    if (config_.sample <= 0) return;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double f = static_cast<double>(v.count(i)) / static_cast<double>(v.total_tokens());
      keep_[i] = std::sqrt(config_.sample / f) + config_.sample / f;
    }
  }

  template <bool Shared>
  static float load(const float& x) {
    if constexpr (Shared) return std::atomic_ref<const float>(x).load(std::memory_order_relaxed);
    else return x;
  }

  template <bool Shared>
  static void add(float& x, float d) {
    if constexpr (Shared) {
      std::atomic_ref<float> r(x);
      r.store(r.load(std::memory_order_relaxed) + d, std::memory_order_relaxed);
    } else {
      x += d;
    }
  }

  static double log_sigmoid_loss(double score, bool label) {
    const double p = 1.0 / (1.0 + std::exp(-score));
    const double q = label ? p : 1.0 - p;
    return -std::log(std::max(q, 1e-12));
  }

  // Returns (summed loss, number of centre-context pairs).
  template <bool Shared>
  std::pair<double, std::uint64_t> run_slice(EmbeddingModel& m, std::size_t lo, std::size_t hi, std::mt19937_64& rng) {
    const std::size_t dim = config_.dim;
    std::vector<double> hidden(dim);
    std::vector<double> grad(dim);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> win(1, config_.window);
    std::uniform_int_distribution<std::size_t> neg(0, negative_table_.size() - 1);
    double loss = 0;
    std::uint64_t pairs = 0;
    std::vector<std::uint32_t> line;
    for (std::size_t s = lo; s < hi; ++s) {
      const auto& sentence = ids_[s];
      line.clear();
      for (auto id : sentence) {
        if (keep_[id] >= 1.0 || uni(rng) < keep_[id]) line.push_back(id);
      }
      const double progress = static_cast<double>(processed_.fetch_add(sentence.size(), std::memory_order_relaxed)) / total_steps_;
      const double lr = config_.learning_rate * std::max(0.0, 1.0 - progress);
      for (std::size_t w = 0; w < line.size(); ++w) {
        const auto& rows = rows_[line[w]];
        std::fill(hidden.begin(), hidden.end(), 0.0);
        for (auto r : rows) {
          const float* p = m.input_.data() + r * dim;
          for (std::size_t i = 0; i < dim; ++i) hidden[i] += load<Shared>(p[i]);
        }
        const double inv = 1.0 / static_cast<double>(rows.size());
        for (auto& x : hidden) x *= inv;
        std::fill(grad.begin(), grad.end(), 0.0);
        const std::size_t b = win(rng);
        const std::size_t c0 = w >= b ? w - b : 0;
        const std::size_t c1 = std::min(line.size() - 1, w + b);
        for (std::size_t c = c0; c <= c1; ++c) {
          if (c == w) continue;
          ++pairs;
          const std::uint32_t target = line[c];
          loss += update_output<Shared>(m, target, true, hidden, grad, lr);
          for (std::size_t k = 0; k < config_.negatives; ++k) {
            std::uint32_t n = negative_table_[neg(rng)];
            if (n == target) continue;
            loss += update_output<Shared>(m, n, false, hidden, grad, lr);
          }
        }
        for (auto r : rows) {
          float* p = m.input_.data() + r * dim;
          for (std::size_t i = 0; i < dim; ++i) add<Shared>(p[i], static_cast<float>(grad[i]));
        }
      }
    }
    return {loss, pairs};
  }

  template <bool Shared>
  static double update_output(EmbeddingModel& m, std::uint32_t target, bool label, const std::vector<double>& hidden,
                              std::vector<double>& grad, double lr) {
    const std::size_t dim = m.dim_;
    float* out = m.output_.data() + static_cast<std::size_t>(target) * dim;
    double score = 0;
    for (std::size_t i = 0; i < dim; ++i) score += load<Shared>(out[i]) * hidden[i];
    const double l = log_sigmoid_loss(score, label);
    const double p = 1.0 / (1.0 + std::exp(-score));
    const double alpha = lr * ((label ? 1.0 : 0.0) - p);
    for (std::size_t i = 0; i < dim; ++i) {
      grad[i] += alpha * load<Shared>(out[i]);
      add<Shared>(out[i], static_cast<float>(alpha * hidden[i]));
    }
    return l;
  }

  const Corpus& corpus_;
  TrainConfig config_;
  std::vector<std::vector<std::size_t>> rows_;
  std::vector<std::vector<std::uint32_t>> ids_;
  std::vector<std::uint32_t> negative_table_;
  std::vector<double> keep_;
  std::vector<ProbePair> probe_;
  std::atomic<std::uint64_t> processed_{0};
  double total_steps_ = 1;
};

inline TrainResult train(const Corpus& corpus, const TrainConfig& config) { return Trainer(corpus, config).run(); }

// ---------------------------------------------------------------------------
// Persistence: "<V> <dim>" text vectors for vocabulary rows, plus a sidecar
// holding the subword buckets: "ITVE", u32 version, u32 bucket_count,
// u32 dim, u32 minn, u32 maxn, then row-major little-endian f32.

inline constexpr std::uint32_t kModelVersion = 1;

inline std::string sidecar_path(const std::string& vec_path) { return vec_path + ".bin"; }

struct ModelIo {
  static void write_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  }

  static std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated model sidecar header");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  static void save(const EmbeddingModel& m, std::ostream& vec, std::ostream& bin) {
    const std::size_t V = m.vocab_.size();
    vec << V << ' ' << m.dim_ << '\n';
    char buf[64];
    for (std::size_t id = 0; id < V; ++id) {
      vec << m.vocab_.word(id);
      for (float x : m.row(id)) {
        auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
        vec << ' ' << std::string_view(buf, static_cast<std::size_t>(end - buf));
      }
      vec << '\n';
    }
    bin.write("ITVE", 4);
    write_u32(bin, kModelVersion);
    write_u32(bin, m.bucket_count_);
    write_u32(bin, static_cast<std::uint32_t>(m.dim_));
    write_u32(bin, static_cast<std::uint32_t>(m.minn_));
    write_u32(bin, static_cast<std::uint32_t>(m.maxn_));
    const float* p = m.input_.data() + V * m.dim_;
    const std::size_t n = static_cast<std::size_t>(m.bucket_count_) * m.dim_;
    std::vector<unsigned char> bytes(n * 4);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t u;
      std::memcpy(&u, p + i, 4);
      bytes[4 * i] = static_cast<unsigned char>(u);
      bytes[4 * i + 1] = static_cast<unsigned char>(u >> 8);
      bytes[4 * i + 2] = static_cast<unsigned char>(u >> 16);
      bytes[4 * i + 3] = static_cast<unsigned char>(u >> 24);
    }
    bin.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }

  static EmbeddingModel load(std::istream& vec, std::istream& bin) {
    char magic[4];
    if (!bin.read(magic, 4) || std::memcmp(magic, "ITVE", 4) != 0) throw FormatError("model sidecar has bad magic bytes");
    const std::uint32_t version = read_u32(bin);
    if (version != kModelVersion) throw VersionError("unsupported model version " + std::to_string(version));
    EmbeddingModel m;
    m.bucket_count_ = read_u32(bin);
    m.dim_ = read_u32(bin);
    m.minn_ = read_u32(bin);
    m.maxn_ = read_u32(bin);
    if (m.bucket_count_ == 0 || m.dim_ == 0 || m.minn_ == 0 || m.minn_ > m.maxn_) throw FormatError("bad model header");

    std::string header;
    if (!std::getline(vec, header)) throw FormatError("empty vector file");
    std::istringstream hs(header);
    std::size_t V = 0, dim = 0;
    if (!(hs >> V >> dim)) throw FormatError("vector file header must be \"V dim\"");
    if (dim != m.dim_) throw FormatError("vector file dim does not match sidecar");
    m.input_.assign((V + m.bucket_count_) * m.dim_, 0.0f);
    std::string line;
    for (std::size_t id = 0; id < V; ++id) {
      if (!std::getline(vec, line)) throw FormatError("vector file truncated");
      const auto fields = text::split_whitespace(line);
      if (fields.size() != dim + 1) throw FormatError("vector row " + std::to_string(id) + " has wrong width");
      m.vocab_.add(fields[0], 0);
      for (std::size_t i = 0; i < dim; ++i) {
        float x = 0;
        const auto& f = fields[i + 1];
        auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), x);
        if (ec != std::errc() || ptr != f.data() + f.size()) throw FormatError("bad number \"" + f + "\"");
        m.input_[id * dim + i] = x;
      }
    }
    const std::size_t n = static_cast<std::size_t>(m.bucket_count_) * m.dim_;
    std::vector<unsigned char> bytes(n * 4);
    if (!bin.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
      throw FormatError("model sidecar truncated");
    }
    float* p = m.input_.data() + V * m.dim_;
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t u = static_cast<std::uint32_t>(bytes[4 * i]) | (static_cast<std::uint32_t>(bytes[4 * i + 1]) << 8) |
                              (static_cast<std::uint32_t>(bytes[4 * i + 2]) << 16) |
                              (static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24);
      std::memcpy(p + i, &u, 4);
    }
    m.finalize();
    return m;
  }
};

inline void save_model(const EmbeddingModel& m, const std::string& vec_path) {
  std::ofstream vec(vec_path, std::ios::binary);
  std::ofstream bin(sidecar_path(vec_path), std::ios::binary);
  if (!vec || !bin) throw IoError("cannot write model to " + vec_path);
  ModelIo::save(m, vec, bin);
  if (!vec || !bin) throw IoError("failed writing model to " + vec_path);
}

inline EmbeddingModel load_model(const std::string& vec_path) {
  std::ifstream vec(vec_path, std::ios::binary);
  std::ifstream bin(sidecar_path(vec_path), std::ios::binary);
  if (!vec || !bin) throw IoError("cannot open model " + vec_path + " (and its .bin sidecar)");
  return ModelIo::load(vec, bin);
}

}  // namespace itv::embed
