// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Tolerances and runtime limits are fixed below; nothing is read from outside.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <sys/wait.h>

#include "itv/service.hpp"
#include "support/corpus_gen.hpp"
#include "support/fixtures.hpp"
#include "support/log_gen.hpp"
#include "support/oracles.hpp"
#include "support/termset_gen.hpp"

using namespace itv;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects failed checks with a short reason each.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok) {
      pass_ = false;
      failed_.push_back(what);
    }
  }
  void note(const std::string& s) { notes_.push_back(s); }
  Outcome done() const {
    Outcome o{pass_, ""};
    for (const auto& n : notes_) o.detail += (o.detail.empty() ? "" : "; ") + n;
    for (const auto& f : failed_) o.detail += (o.detail.empty() ? "" : "; ") + ("failed: " + f);
    return o;
  }

 private:
  bool pass_ = true;
  std::vector<std::string> notes_, failed_;
};

std::string fmt(double x, int digits = 3) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << x;
  return s.str();
}

const Toolkit& kit() { return testing::toolkit(); }

// ---------------------------------------------------------------------------

Outcome confusion_arithmetic() {
  std::vector<bool> pred, gold;
  auto push = [&](std::size_t n, bool p, bool g) {
    pred.insert(pred.end(), n, p);
    gold.insert(gold.end(), n, g);
  };
  push(58, true, true);
  push(29, true, false);
  push(409, false, false);
  push(12, false, true);
  const auto c = eval_disentanglement(pred, gold);
  Checks k;
  const double p = c.precision().value_or(-1), r = c.recall().value_or(-1);
  k.note("precision " + fmt(p, 4) + " recall " + fmt(r, 4));
  k.expect(c.tp == 58 && c.fp == 29 && c.tn == 409 && c.fn == 12, "counts");
  k.expect(std::abs(p - 0.667) <= 0.001, "precision within 0.001 of 0.667");
  k.expect(std::abs(r - 0.829) <= 0.001, "recall within 0.001 of 0.829");
  return k.done();
}

Outcome disentangle_rules() {
  Checks k;
  std::size_t candidates = 0, agree = 0, merged = 0;
  for (bool bots : {false, true}) {
    const auto log = testing::make_disentangle_log(17, 500);
    DisentangleConfig cfg;
    cfg.include_bots = bots;
    const auto res = disentangle_all(log, cfg);
    std::map<std::string, std::string> assigned;
    for (const auto& c : res.conversations) {
      for (const auto& id : c.merged_context_ids) assigned[id] = c.conversation_id;
    }
    const auto expected = testing::disentangle_oracle(log, cfg.window(), cfg.max_context_before, bots);
    for (const auto& [id, thread] : expected) {
      ++candidates;
      const auto it = assigned.find(id);
      const bool same = thread ? (it != assigned.end() && it->second == *thread) : it == assigned.end();
      agree += same;
      merged += thread.has_value();
    }
    k.expect(cfg.max_context_before == cfg.max_context_after, "symmetric default caps");
  }
  k.note(std::to_string(agree) + "/" + std::to_string(candidates) + " decisions agree, " + std::to_string(merged) +
         " merges, bots off and on");
  k.expect(candidates > 0 && merged > 0, "log exercises merging");
  k.expect(agree == candidates, "100% agreement");
  return k.done();
}

Outcome jaro_oracle() {
  Checks k;
  const double mm = jaro("martha", "marhta");
  k.note("martha/marhta " + fmt(mm, 4));
  k.expect(std::abs(mm - 0.944) <= 0.001, "martha/marhta within 0.001 of 0.944");
  k.expect(jaro("kubernetes", "kubernetes") == 1.0, "identity is 1");
  k.expect(jaro("abc", "xyz") == 0.0, "disjoint is 0");
  std::mt19937_64 rng(2024);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto a = testing::random_word(rng, 0, 14, "abcdef");
    const auto b = testing::random_word(rng, 0, 14, "abcdef");
    worst = std::max(worst, std::abs(jaro(a, b) - testing::jaro_reference(a, b)));
  }
  k.note("max deviation over 1000 pairs " + std::to_string(worst));
  k.expect(worst <= 1e-12, "random pairs within 1e-12 of the reference");
  return k.done();
}

Outcome similarity_invariants() {
  Checks k;
  const SimilarityConfig m2{};
  SimilarityConfig m1;
  m1.mode = Mode::M1;
  const auto& dict = kit().dictionary;
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> w(0.0, 1.0);

  // Short words over two letters hit the spelling-variant branch often.
  std::size_t out_of_range = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto p = testing::random_word(rng, 1, 8, "ab");
    const auto q = i % 4 == 0 ? p : testing::random_word(rng, 1, 8, "ab");
    const WeightedEntity a{p, w(rng), std::nullopt, testing::random_unit_vector(rng, 6)};
    const WeightedEntity b{q, w(rng), std::nullopt, testing::random_unit_vector(rng, 6)};
    const double d = entity_similarity(a, b, m2);
    out_of_range += !(d >= 0.0 && d <= 1.0);
  }
  k.expect(out_of_range == 0, "delta in [0,1] on 10000 pairs (" + std::to_string(out_of_range) + " outside)");

  std::size_t self_bad = 0;
  double self_worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto s = testing::separated_term_set(rng, "s", 8);
    double mean = 0;
    for (const auto& e : s.entities) mean += e.weight;
    mean /= static_cast<double>(s.entities.size());
    const double dev = std::abs(issue_sim(s, s, m2, dict) - mean);
    self_worst = std::max(self_worst, dev);
    self_bad += dev > 1e-9;
  }
  k.expect(self_bad == 0, "self similarity equals mean weight to 1e-9 on 1000 sets");
  k.note("self-similarity max deviation " + std::to_string(self_worst));

  // Informational: without separation a heavier similar sibling can lift a row.
  std::size_t lifted = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto s = testing::random_term_set(rng, "s", 8);
    double mean = 0;
    for (const auto& e : s.entities) mean += e.weight;
    mean /= static_cast<double>(s.entities.size());
    lifted += std::abs(issue_sim(s, s, m2, dict) - mean) > 1e-9;
  }
  k.note("unconstrained sets above mean weight: " + std::to_string(lifted) + "/1000 (informational)");

  std::size_t order_bad = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto a = testing::random_term_set(rng, "a", 6), b = testing::random_term_set(rng, "b", 6);
    order_bad += issue_sim(a, b, m1, dict) < issue_sim(a, b, m2, dict);
  }
  k.expect(order_bad == 0, "M1 >= M2 on 1000 random pairs");

  auto axis = [](std::size_t i) {
    std::vector<float> v(2, 0.0f);
    v[i] = 1.0f;
    return v;
  };
  const EntityTermSet small{"m", {{"etcd", 0.9, std::nullopt, axis(0)}}};
  const EntityTermSet large{"n", {{"etcd", 0.9, std::nullopt, axis(0)}, {"quota", 0.6, std::nullopt, axis(1)}}};
  const double mn = issue_sim(small, large, m2, dict), nm = issue_sim(large, small, m2, dict);
  k.note("asymmetry " + fmt(mn) + " vs " + fmt(nm));
  k.expect(std::abs(mn - 0.9) < 1e-9 && std::abs(nm - 0.45) < 1e-9, "sizes 1 and 2 give 0.9 and 0.45");
  return k.done();
}

Outcome metric_oracle() {
  Checks k;
  struct Case {
    std::vector<std::string> ranked;
    std::set<std::string> gold;
    double p1, p3, ap, a1, a3, a5;
  };
  const std::vector<Case> cases = {
      {{"b", "a", "c"}, {"a"}, 0.0, 1.0 / 3.0, 0.5, 0.0, 1.0, 1.0},
      {{"a", "b"}, {"a", "b"}, 1.0, 2.0 / 3.0, 1.0, 1.0, 1.0, 1.0},
      {{}, {"a"}, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0},
      {{"a", "x", "b"}, {"a", "b", "z"}, 1.0, 2.0 / 3.0, (1.0 + 2.0 / 3.0) / 3.0, 1.0, 1.0, 1.0},
      {{"x", "y", "z", "a"}, {"a"}, 0.0, 0.0, 0.25, 0.0, 0.0, 1.0},
  };
  const std::vector<std::size_t> ns = {1, 3, 5};
  std::size_t exact = 0;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& c = cases[i];
    const auto m = evaluate({{"q", c.ranked}}, {{"q", c.gold}}, ns);
    const bool ok = m.p_at.at(1) == c.p1 && m.p_at.at(3) == c.p3 && m.map == c.ap && m.a_at.at(1) == c.a1 &&
                    m.a_at.at(3) == c.a3 && m.a_at.at(5) == c.a5;
    exact += ok;
    k.expect(ok, "fixture " + std::to_string(i + 1));
  }
  k.note(std::to_string(exact) + "/5 fixtures exact");
  return k.done();
}

// Trained once and shared by the embedding and retrieval criteria.
struct EmbeddingRun {
  testing::ClusterCorpus corpus;
  embed::TrainResult result;
};

const EmbeddingRun& desk_embedding() {
  static const EmbeddingRun run = [] {
    EmbeddingRun r{testing::make_cluster_corpus(7, 50000), {}};
    auto cfg = embed::TrainConfig::desk();
    cfg.seed = 7;
    r.result = embed::train(r.corpus.corpus, cfg);
    return r;
  }();
  return run;
}

std::size_t regressing_spans(const std::vector<double>& loss) {
  std::size_t bad = 0;
  for (std::size_t e = 0; e + 10 < loss.size(); ++e) bad += !(loss[e + 10] < loss[e]);
  return bad;
}

Outcome embedding_quality() {
  Checks k;
  const auto& run = desk_embedding();
  const auto& m = run.result.model;
  k.note(std::to_string(run.corpus.tokens) + " tokens, dim " + std::to_string(m.dim()));

  const auto& loss = run.result.epoch_loss;
  const std::size_t spans = loss.size() > 10 ? loss.size() - 10 : 0;
  const std::size_t bad = regressing_spans(loss);
  k.note("(a) " + std::to_string(spans - bad) + "/" + std::to_string(spans) + " 10-epoch spans decrease, loss " +
         fmt(loss.front()) + " -> " + fmt(loss.back()) + ", fixed-sample probe " +
         std::to_string(spans - regressing_spans(run.result.probe_loss)) + "/" + std::to_string(spans));
  k.expect(spans == 190 && bad == 0, "(a) every 10-epoch span net-decreases");

  std::size_t hits = 0;
  for (const auto& [typo, correct] : run.corpus.misspellings) {
    for (const auto& n : m.nearest(typo, 3)) hits += n.word == correct;
  }
  const double share = static_cast<double>(hits) / static_cast<double>(run.corpus.misspellings.size());
  k.note("(b) " + std::to_string(hits) + "/" + std::to_string(run.corpus.misspellings.size()) + " misspellings top-3");
  k.expect(share >= 0.80, "(b) >= 80% misspellings with the correct form in the top-3");

  double intra = 0, inter = 0;
  std::size_t ni = 0, nx = 0;
  const auto& cl = run.corpus.clusters;
  for (std::size_t a = 0; a < cl.size(); ++a) {
    for (std::size_t b = a; b < cl.size(); ++b) {
      for (std::size_t i = 0; i < cl[a].size(); ++i) {
        for (std::size_t j = a == b ? i + 1 : 0; j < cl[b].size(); ++j) {
          const double c = embed::cosine(m.vector(cl[a][i]), m.vector(cl[b][j]));
          (a == b ? intra : inter) += c;
          ++(a == b ? ni : nx);
        }
      }
    }
  }
  const double gap = intra / static_cast<double>(ni) - inter / static_cast<double>(nx);
  k.note("(c) intra " + fmt(intra / static_cast<double>(ni)) + " inter " + fmt(inter / static_cast<double>(nx)));
  k.expect(gap >= 0.15, "(c) intra minus inter cosine >= 0.15");
  return k.done();
}

Outcome end_to_end_ordering() {
  Checks k;
  const auto fx = testing::make_issue_fixture(11, 10);
  const auto background = testing::make_cluster_corpus(7, 50000);
  auto cfg = embed::TrainConfig::desk();
  cfg.seed = 7;
  const auto model = embed::train(testing::fixture_corpus(fx, background.corpus), cfg).model;
  const auto store = testing::fixture_store(fx, model);
  k.note(std::to_string(store.term_sets().size()) + " indexed issues, " + std::to_string(fx.gold.size()) + " queries");
  k.expect(store.term_sets().size() == 60, "60 indexed issues");
  const std::vector<std::size_t> ns = {3, 5, 10};
  std::map<Method, EvalMetrics> r;
  for (auto m : {Method::M1, Method::M2, Method::tfidf}) {
    r[m] = evaluate(rank_store(store, kit().dictionary, {}, fx.gold, m), fx.gold, ns);
  }
  k.note("MAP M2 " + fmt(r[Method::M2].map) + " M1 " + fmt(r[Method::M1].map) + " tfidf " +
         fmt(r[Method::tfidf].map) + ", A@3 M2 " + fmt(r[Method::M2].a_at.at(3)));
  k.expect(r[Method::M2].a_at.at(3) >= 0.8, "A@3(M2) >= 0.8");
  k.expect(r[Method::M2].map >= r[Method::M1].map, "MAP(M2) >= MAP(M1)");
  k.expect(r[Method::M1].map >= r[Method::tfidf].map - 0.02, "MAP(M1) >= MAP(tfidf) - 0.02");
  return k.done();
}

Outcome query_detection() {
  Checks k;
  const auto eval = load_labeled_corpus((testing::data_dir() / "query_eval.jsonl").string());
  std::size_t right = 0;
  for (const auto& u : eval) right += is_diagnostic(annotate_text(u.text, kit().lexicon), kit().detector).diagnostic == u.is_question;
  const double acc = static_cast<double>(right) / static_cast<double>(eval.size());
  k.note("accuracy " + std::to_string(right) + "/" + std::to_string(eval.size()));
  k.expect(eval.size() == 100, "100 labeled utterances");
  k.expect(acc >= 0.85, "accuracy >= 0.85");
  for (const char* s : {"Which services are affected ?", "I was wondering what is the latest impact."}) {
    k.expect(is_diagnostic(annotate_text(s, kit().lexicon), kit().detector).diagnostic, std::string("diagnostic: ") + s);
  }
  return k.done();
}

// ---------------------------------------------------------------------------
// CLI-driven criteria share one scratch workspace.

int run_cli(const std::string& args, const std::string& log) {
  const std::string cmd = std::string("'") + ITV_CLI + "' " + args + " >>'" + log + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const std::string& s) { return "'" + s + "'"; }

struct Workspace {
  testing::ScratchDir dir{"acceptance"};
  testing::IssueFixture fx = testing::make_issue_fixture(11, 10);
  std::string log = dir.file("export.jsonl"), corpus = dir.file("corpus.txt"), cli_log = dir.file("cli.log");

  Workspace() {
    std::ostringstream l;
    write_chat_export(l, fx.log);
    testing::spit(log, l.str());
    std::string c;
    for (const auto& t : fx.texts) c += t + "\n";
    testing::spit(corpus, c);
  }

  bool pipeline(const std::string& tag) const {
    const auto convs = dir.file(tag + ".convs.jsonl"), model = dir.file(tag + ".vec"), store = dir.file(tag + ".store.jsonl");
    return run_cli("disentangle --input " + q(log) + " --out " + q(convs), cli_log) == 0 &&
           run_cli("train-embed --corpus " + q(corpus) + " --seed 7 --workers 1 --out " + q(model), cli_log) == 0 &&
           run_cli("index --input " + q(log) + " --conversations " + q(convs) + " --model " + q(model) + " --out " + q(store),
                   cli_log) == 0;
  }
};

Outcome determinism(const Workspace& w) {
  Checks k;
  const bool ok = w.pipeline("a") && w.pipeline("b");
  k.expect(ok, "pipeline commands exit 0");
  if (!ok) return k.done();
  const auto ma = testing::slurp(w.dir.file("a.vec")), mb = testing::slurp(w.dir.file("b.vec"));
  const auto sa = testing::slurp(w.dir.file("a.store.jsonl")), sb = testing::slurp(w.dir.file("b.store.jsonl"));
  k.note("model " + std::to_string(ma.size()) + " bytes, store " + std::to_string(sa.size()) + " bytes");
  k.expect(!ma.empty() && ma == mb, "train-embed --seed 7 --workers 1 twice gives identical model bytes");
  k.expect(testing::slurp(w.dir.file("a.vec.bin")) == testing::slurp(w.dir.file("b.vec.bin")), "identical sidecars");
  k.expect(!sa.empty() && sa == sb, "pipeline rerun gives an identical store");
  return k.done();
}

Outcome service_contract(const Workspace& w) {
  Checks k;
  auto model = std::make_shared<const embed::EmbeddingModel>(embed::load_model(w.dir.file("a.vec")));
  auto store = std::make_shared<const IssueStore>(load_store(w.dir.file("a.store.jsonl"), *model));
  const auto feedback_path = w.dir.file("feedback.jsonl");
  FeedbackLog feedback(feedback_path);
  Service service(kit(), SimilarityConfig{}, feedback, {store, model});
  httplib::Server server;
  install_routes(server, service);
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client c("127.0.0.1", port);
  c.set_read_timeout(30);
  const std::string snap = store->snapshot();
  std::size_t calls = 0, headers = 0;
  auto seen = [&](const httplib::Result& r) {
    ++calls;
    headers += r && r->get_header_value(kSnapshotHeader) == snap;
    return static_cast<bool>(r);
  };

  const auto& first = store->term_sets().front().issue_id;
  const auto query_text = store->find(first)->issue_text;
  auto qr = c.Post("/v1/query", nlohmann::json{{"text", query_text}, {"k", 5}}.dump(), "application/json");
  std::string top;
  if (seen(qr) && qr->status == 200) {
    const auto body = nlohmann::json::parse(qr->body);
    k.expect(body["results"].is_array() && !body["results"].empty() && body["results"].size() <= 5, "query results 1..k");
    if (!body["results"].empty()) top = body["results"][0]["issue_id"];
    k.expect(body.contains("query_id") && body["snapshot"] == snap, "query carries id and snapshot");
  } else {
    k.expect(false, "query 200");
  }
  k.expect(top == first, "query by an issue's own text ranks it first");

  for (const char* bad : {"{", R"({"text":""})", R"({"text":"x","k":0})", R"({"text":"x","mode":"M9"})"}) {
    auto r = c.Post("/v1/query", bad, "application/json");
    k.expect(seen(r) && r->status == 400 && nlohmann::json::parse(r->body)["error"] == "InvalidPayload",
             std::string("400 for ") + bad);
  }

  auto issue = c.Get("/v1/issues/" + first);
  k.expect(seen(issue) && issue->status == 200, "browse existing issue");
  if (issue && issue->status == 200) {
    const auto body = nlohmann::json::parse(issue->body);
    k.expect(body.value("conversation_id", "") == first, "browse returns the requested record");
    for (const char* key : {"issue_text", "category", "diagnostics", "resolutions", "resolution_summaries"}) {
      k.expect(body.contains(key), std::string("issue field ") + key);
    }
  }
  auto missing = c.Get("/v1/issues/does-not-exist");
  k.expect(seen(missing) && missing->status == 404, "browse unknown issue 404");

  const auto event = nlohmann::json{{"query_id", "q1"}, {"result_issue_id", first}, {"verdict", "relevant"}, {"user", "sre"}};
  auto fb = c.Post("/v1/feedback", event.dump(), "application/json");
  k.expect(seen(fb) && fb->status == 202, "feedback accepted 202");
  auto unknown = event;
  unknown["result_issue_id"] = "does-not-exist";
  auto conflict = c.Post("/v1/feedback", unknown.dump(), "application/json");
  k.expect(seen(conflict) && conflict->status == 409, "feedback on unknown issue 409");
  auto bad_verdict = event;
  bad_verdict["verdict"] = "maybe";
  auto invalid = c.Post("/v1/feedback", bad_verdict.dump(), "application/json");
  k.expect(seen(invalid) && invalid->status == 400, "feedback with bad verdict 400");
  std::size_t lines = 0;
  for (char ch : testing::slurp(feedback_path)) lines += ch == '\n';
  k.expect(lines == 1, "exactly one feedback line appended");

  auto health = c.Get("/v1/health");
  k.expect(seen(health) && health->status == 200 && nlohmann::json::parse(health->body)["snapshot"] == snap, "health");
  auto pre = c.Options("/v1/query");
  k.expect(pre && pre->status == 204 && pre->get_header_value("Access-Control-Allow-Origin") == "*", "CORS preflight");

  k.expect(headers == calls, "snapshot header on every response");
  k.note(std::to_string(calls) + " requests against the CLI-built store");
  server.stop();
  t.join();
  return k.done();
}

}  // namespace

int main() {
  struct Criterion {
    std::string name;
    double limit_seconds;
    std::function<Outcome()> run;
  };
  std::unique_ptr<Workspace> ws;
  const std::vector<Criterion> criteria = {
      {"confusion arithmetic", 1, confusion_arithmetic},
      {"disentanglement rule semantics", 5, disentangle_rules},
      {"jaro oracle", 5, jaro_oracle},
      {"similarity invariants", 10, similarity_invariants},
      {"metric oracle", 1, metric_oracle},
      {"embedding quality", 300, embedding_quality},
      {"end-to-end retrieval ordering", 360, end_to_end_ordering},
      {"query detection", 5, query_detection},
      {"determinism", 600, [&] { return determinism(*(ws = std::make_unique<Workspace>())); }},
      {"service contract", 60, [&] { return service_contract(*ws); }},
  };

  std::size_t failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs >= c.limit_seconds) {
      o.pass = false;
      o.detail += "; failed: runtime limit " + fmt(c.limit_seconds, 0) + " s";
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << std::left << std::setw(32) << c.name << std::right << std::setw(8)
              << fmt(secs, 2) << " s  " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
