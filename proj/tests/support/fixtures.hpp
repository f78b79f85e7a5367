#pragma once

// Shared helpers for the unit suites: bundled resources, scratch
// directories, and a small model trained on the generated incident channel.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <unistd.h>

#include "itv/disentangle.hpp"
#include "itv/embed.hpp"
#include "itv/resources.hpp"
#include "itv/store.hpp"
#include "support/issue_gen.hpp"

#ifndef ITV_DATA_DIR
#error "ITV_DATA_DIR must point at the bundled data directory"
#endif

namespace itv::testing {

inline std::filesystem::path data_dir() { return ITV_DATA_DIR; }

inline const Toolkit& toolkit() {
  static const Toolkit kit = Toolkit::load(data_dir());
  return kit;
}

// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("itv-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void spit(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out << bytes;
}

inline embed::TrainConfig tiny_config(std::uint64_t seed = 3) {
  embed::TrainConfig c;
  c.dim = 16;
  c.epochs = 8;
  c.bucket_count = 1u << 14;
  c.maxn = 6;
  c.seed = seed;
  return c;
}

inline const IssueFixture& small_fixture() {
  static const IssueFixture fx = make_issue_fixture(5, 3);
  return fx;
}

// Trained once per process on the small fixture's own messages.
inline const embed::EmbeddingModel& small_model() {
  static const embed::EmbeddingModel m = [] {
    embed::Corpus c;
    for (const auto& t : small_fixture().texts) c.push_back(embed::corpus_sentence(t));
    return embed::train(c, tiny_config()).model;
  }();
  return m;
}

// Disentangles the fixture channel and indexes it against `model`.
inline IssueStore fixture_store(const IssueFixture& fx, const embed::EmbeddingModel& model) {
  const auto res = disentangle_all(fx.log, DisentangleConfig{});
  const Annotator annotator(toolkit().lexicon);
  const ExtractionContext ctx{annotator, toolkit().detector, toolkit().dictionary, toolkit().stopwords};
  return build_store(res.conversations, ctx, toolkit().symptoms, model);
}

inline const IssueStore& small_store() {
  static const IssueStore s = fixture_store(small_fixture(), small_model());
  return s;
}

// Six hand-written conversations: four incidents, one change request, one
// announcement.
inline std::vector<Conversation> incident_conversations() {
  const std::vector<std::vector<std::pair<std::string, std::string>>> threads = {
      {{"ana", "the ceph volume is full and writes fail"}, {"ben", "which cluster is it ?"}, {"ben", "expanded the ceph volume"}},
      {{"cyd", "grafana dashboard crashes on login"}, {"ana", "could you share the logs ?"}, {"ana", "patched the grafana dashboard"}},
      {{"dev", "tekton pipeline hangs after the build stage"}, {"ben", "restarted the tekton pipeline"}},
      {{"eve", "the ingress controller returns 503 errors"}, {"cyd", "bounced the ingress controller"}},
      {{"fay", "please add the new people to the quay organization"}, {"ben", "added them"}},
      {{"gus", "FYI: maintenance window tonight"}, {"ana", "thanks for the heads up"}},
  };
  std::vector<Conversation> out;
  long long t = 1'700'000'000;
  for (std::size_t i = 0; i < threads.size(); ++i) {
    Conversation c;
    c.conversation_id = c.source_thread_id = "c" + std::to_string(i + 1);
    for (const auto& [who, text] : threads[i]) {
      RawMessage m;
      m.id = c.messages.empty() ? c.conversation_id : c.conversation_id + "." + std::to_string(c.messages.size());
      m.author = who;
      m.timestamp = *Timestamp::parse(std::to_string(t) + ".5");
      m.text = text;
      if (!c.messages.empty()) m.parent_thread_id = c.conversation_id;
      c.messages.push_back(m);
      t += 60;
    }
    t += 7200;
    out.push_back(std::move(c));
  }
  return out;
}

inline IssueStore incident_store(const embed::EmbeddingModel& model) {
  const auto cs = incident_conversations();
  const Annotator annotator(toolkit().lexicon);
  const ExtractionContext ctx{annotator, toolkit().detector, toolkit().dictionary, toolkit().stopwords};
  return build_store(cs, ctx, toolkit().symptoms, model);
}

inline Conversation whole_thread(const ChannelLog& log, const std::string& root) {
  Conversation c;
  c.conversation_id = c.source_thread_id = root;
  for (const auto& m : log.messages) {
    if (m.id == root || (m.parent_thread_id && *m.parent_thread_id == root)) c.messages.push_back(m);
  }
  return c;
}

}  // namespace itv::testing
