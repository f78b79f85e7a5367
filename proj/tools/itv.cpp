// itv: command-line driver for the issue retrieval pipeline.
//
//   itv ingest       normalize a chat export
//   itv disentangle  reconstruct conversations
//   itv extract      build IssueRecords
//   itv train-embed  train subword embeddings
//   itv index        build the issue store
//   itv query        rank stored issues against free text
//   itv eval         score M1 / M2 / tf-idf against gold sets
//   itv serve        HTTP service over a store
//
// Exit codes: 0 success, 1 validation error, 2 IO error. Errors are printed
// to stderr as a JSON object.

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "itv/disentangle.hpp"
#include "itv/embed.hpp"
#include "itv/ingest.hpp"
#include "itv/resources.hpp"
#include "itv/retrieve.hpp"
#include "itv/service.hpp"
#include "itv/store.hpp"

namespace {

namespace fs = std::filesystem;

// JSON config: top-level scalars apply to the active subcommand, objects
// named after a subcommand apply to that subcommand.
class JsonConfig : public CLI::Config {
 public:
  JsonConfig(std::string active, std::vector<std::string> subcommands)
      : active_(std::move(active)), subcommands_(std::move(subcommands)) {}

  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConversionError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config must be a JSON object");
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      const bool section = value.is_object() &&
                           std::find(subcommands_.begin(), subcommands_.end(), key) != subcommands_.end();
      if (section) {
        for (const auto& [k, v] : value.items()) items.push_back(item({key}, k, v));
      } else if (!active_.empty()) {
        items.push_back(item({active_}, key, value));
      }
    }
    return items;
  }

 private:
  static CLI::ConfigItem item(std::vector<std::string> parents, const std::string& name, const nlohmann::json& v) {
    CLI::ConfigItem it;
    it.parents = std::move(parents);
    it.name = name;
    auto scalar = [](const nlohmann::json& x) { return x.is_string() ? x.get<std::string>() : x.dump(); };
    if (v.is_array()) {
      for (const auto& x : v) it.inputs.push_back(scalar(x));
    } else {
      it.inputs.push_back(scalar(v));
    }
    return it;
  }

  std::string active_;
  std::vector<std::string> subcommands_;
};

void fail_json(const std::string& kind, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["message"] = message;
  std::cerr << j.dump() << '\n';
}

void require_file(const std::string& path) {
  if (path.empty()) return;
  if (!fs::is_regular_file(path)) throw itv::IoError("no such file: " + path);
}

std::ifstream open_in(const std::string& path) {
  require_file(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw itv::IoError("cannot open " + path);
  return in;
}

// Writes to --out when given, stdout otherwise.
void emit(const std::string& out_path, const std::string& bytes) {
  if (out_path.empty() || out_path == "-") {
    std::cout << bytes;
    std::cout.flush();
    return;
  }
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw itv::IoError("cannot write " + out_path);
  out << bytes;
  if (!out) throw itv::IoError("write failed for " + out_path);
}

itv::ChannelLog read_log(const std::string& path, bool skip_malformed) {
  auto in = open_in(path);
  auto parsed = itv::parse_chat_export(in, {skip_malformed});
  for (const auto& w : parsed.warnings) {
    std::cerr << nlohmann::ordered_json{{"warning", w.kind}, {"detail", w.detail}}.dump() << '\n';
  }
  return std::move(parsed.log);
}

std::vector<itv::Conversation> read_convs(const std::string& path, const itv::ChannelLog& log) {
  auto in = open_in(path);
  return itv::read_conversations(in, log);
}

void add_annotations(itv::Annotator& annotator, const std::string& path) {
  if (path.empty()) return;
  auto in = open_in(path);
  annotator.add(itv::load_annotations(in));
}

std::atomic<bool> g_stop{false};
std::atomic<bool> g_reload{false};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"issue retrieval pipeline over chat conversations"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string data_dir = ITV_DATA_DIR;
  std::string out_path;
  app.add_option("--data", data_dir, "directory with lexicons, dictionaries and seed corpora")->capture_default_str();

  // ingest
  auto* ingest = app.add_subcommand("ingest", "validate and normalize a chat export");
  std::string export_path;
  bool skip_malformed = false;
  ingest->add_option("--input", export_path, "chat export, JSON lines")->required();
  ingest->add_flag("--skip-malformed", skip_malformed, "skip bad lines with a warning instead of failing");

  // disentangle
  auto* dis = app.add_subcommand("disentangle", "reconstruct conversations from native threads and context");
  itv::DisentangleConfig dcfg;
  std::optional<std::size_t> max_context;
  dis->add_option("--input", export_path, "chat export")->required();
  dis->add_option("--window", dcfg.window_seconds, "context window in seconds")->capture_default_str();
  dis->add_option("--max-context", max_context, "cap on candidates per side of a thread");
  dis->add_option("--max-context-before", dcfg.max_context_before)->capture_default_str();
  dis->add_option("--max-context-after", dcfg.max_context_after)->capture_default_str();
  dis->add_flag("--include-bots", dcfg.include_bots, "let bot messages merge as context");
  dis->add_flag("--skip-malformed", skip_malformed);

  // extract
  auto* extract = app.add_subcommand("extract", "categorize conversations and extract artefacts");
  std::string conv_path, annotations_path;
  extract->add_option("--input", export_path, "chat export")->required();
  extract->add_option("--conversations", conv_path, "conversations JSONL from disentangle")->required();
  extract->add_option("--annotations", annotations_path, "CoNLL-U parses keyed by message id");
  extract->add_flag("--skip-malformed", skip_malformed);

  // train-embed
  auto* train = app.add_subcommand("train-embed", "train subword skip-gram embeddings");
  std::string corpus_path, profile = "desk";
  std::optional<std::size_t> dim, epochs, minn, maxn, window, negatives, min_count, workers;
  std::optional<std::uint32_t> bucket;
  std::optional<double> lr, sample, mix;
  std::optional<std::uint64_t> seed;
  train->add_option("--corpus", corpus_path, "text corpus, one sentence per line")->required();
  train->add_option("--profile", profile, "desk or full")->check(CLI::IsMember({"desk", "full"}))->capture_default_str();
  train->add_option("--dim", dim);
  train->add_option("--epochs", epochs);
  train->add_option("--minn", minn);
  train->add_option("--maxn", maxn);
  train->add_option("--window", window);
  train->add_option("--negatives", negatives);
  train->add_option("--min-count", min_count);
  train->add_option("--bucket", bucket);
  train->add_option("--lr", lr);
  train->add_option("--sample", sample);
  train->add_option("--phrase-mix", mix);
  train->add_option("--seed", seed);
  train->add_option("--workers", workers, "N > 1 trains lock-free and is not deterministic");

  // index
  auto* index = app.add_subcommand("index", "build the issue store");
  std::string model_path, weighting = "literal";
  index->add_option("--input", export_path, "chat export")->required();
  index->add_option("--conversations", conv_path)->required();
  index->add_option("--annotations", annotations_path);
  index->add_option("--model", model_path, "embedding model .vec (sidecar alongside)")->required();
  index->add_option("--weighting", weighting)->check(CLI::IsMember({"literal", "rarity"}))->capture_default_str();
  index->add_flag("--skip-malformed", skip_malformed);

  // query
  auto* query = app.add_subcommand("query", "rank stored issues against a query text");
  std::string store_path, text, mode = "M2";
  std::size_t k = 10;
  itv::SimilarityConfig scfg;
  query->add_option("--store", store_path)->required();
  query->add_option("--model", model_path)->required();
  query->add_option("--text", text)->required();
  query->add_option("--k", k)->check(CLI::Range(std::size_t{1}, itv::kMaxK))->capture_default_str();
  query->add_option("--mode", mode)->check(CLI::IsMember({"M1", "M2"}))->capture_default_str();
  for (auto* sub : {query}) {
    sub->add_option("--threshold", scfg.threshold)->capture_default_str();
    sub->add_option("--jaro-gate", scfg.jaro_gate)->capture_default_str();
    sub->add_option("--weight-gate", scfg.weight_gate)->capture_default_str();
  }

  // eval
  auto* eval = app.add_subcommand("eval", "score retrieval against gold relevance sets");
  std::string gold_path;
  std::optional<std::string> eval_mode;
  eval->add_option("--store", store_path)->required();
  eval->add_option("--model", model_path)->required();
  eval->add_option("--gold", gold_path, "JSONL {query_id, relevant:[...]}")->required();
  eval->add_option("--mode", eval_mode, "evaluate one mode (plus the tf-idf baseline)")->check(CLI::IsMember({"M1", "M2"}));
  eval->add_option("--threshold", scfg.threshold)->capture_default_str();
  eval->add_option("--jaro-gate", scfg.jaro_gate)->capture_default_str();
  eval->add_option("--weight-gate", scfg.weight_gate)->capture_default_str();

  // serve
  auto* serve = app.add_subcommand("serve", "HTTP service; SIGHUP reloads store and model");
  std::string host = "127.0.0.1";
  int port = 8080;
  serve->add_option("--store", store_path)->required();
  serve->add_option("--model", model_path)->required();
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->check(CLI::Range(0, 65535))->capture_default_str();
  serve->add_option("--threshold", scfg.threshold)->capture_default_str();

  std::vector<std::string> names;
  for (auto* sub : app.get_subcommands({})) {
    names.push_back(sub->get_name());
    sub->add_option("--out", out_path, "output path (stdout when omitted; feedback log for serve)");
  }
  std::string active;
  for (int i = 1; i < argc && active.empty(); ++i) {
    if (std::find(names.begin(), names.end(), argv[i]) != names.end()) active = argv[i];
  }
  app.set_config("--config", "", "JSON config overriding defaults");
  app.config_formatter(std::make_shared<JsonConfig>(active, names));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::FileError& e) {
    fail_json("IoError", e.what());
    return 2;
  } catch (const CLI::ParseError& e) {
    fail_json("UsageError", e.what());
    return 1;
  }

  try {
    if (*ingest) {
      auto log = read_log(export_path, skip_malformed);
      std::ostringstream out;
      itv::write_chat_export(out, log);
      emit(out_path, out.str());
    } else if (*dis) {
      if (max_context) dcfg.max_context_before = dcfg.max_context_after = *max_context;
      dcfg.validate();
      auto log = read_log(export_path, skip_malformed);
      auto result = itv::disentangle_all(log, dcfg);
      for (const auto& w : result.warnings) {
        std::cerr << nlohmann::ordered_json{{"warning", w.kind}, {"detail", w.detail}}.dump() << '\n';
      }
      std::ostringstream out;
      itv::write_conversations(out, result.conversations);
      emit(out_path, out.str());
    } else if (*extract) {
      const auto kit = itv::Toolkit::load(data_dir);
      auto log = read_log(export_path, skip_malformed);
      auto convs = read_convs(conv_path, log);
      itv::Annotator annotator(kit.lexicon);
      add_annotations(annotator, annotations_path);
      const itv::ExtractionContext ctx{annotator, kit.detector, kit.dictionary, kit.stopwords};
      std::vector<itv::IssueRecord> records;
      for (const auto& c : convs) {
        if (c.messages.empty()) throw itv::EmptyConversation("conversation " + c.conversation_id + " is empty");
        const auto first = annotator.annotate(c.messages.front());
        records.push_back(itv::build_issue_record(c, ctx, itv::categorize_first_turn(first, kit.dictionary, kit.symptoms)));
      }
      std::ostringstream out;
      itv::write_issue_records(out, records);
      emit(out_path, out.str());
    } else if (*train) {
      if (out_path.empty() || out_path == "-") throw itv::ConfigError("train-embed needs --out <model.vec>");
      itv::embed::TrainConfig cfg = profile == "desk" ? itv::embed::TrainConfig::desk() : itv::embed::TrainConfig{};
      if (dim) cfg.dim = *dim;
      if (epochs) cfg.epochs = *epochs;
      if (minn) cfg.minn = *minn;
      if (maxn) cfg.maxn = *maxn;
      if (window) cfg.window = *window;
      if (negatives) cfg.negatives = *negatives;
      if (min_count) cfg.min_count = *min_count;
      if (bucket) cfg.bucket_count = *bucket;
      if (lr) cfg.learning_rate = *lr;
      if (sample) cfg.sample = *sample;
      if (mix) cfg.phrase_mix = *mix;
      if (seed) cfg.seed = *seed;
      if (workers) cfg.workers = *workers;
      cfg.validate();
      auto in = open_in(corpus_path);
      const auto corpus = itv::embed::read_corpus(in);
      auto result = itv::embed::train(corpus, cfg);
      itv::embed::save_model(result.model, out_path);
      nlohmann::ordered_json summary;
      summary["vocab"] = result.model.vocab().size();
      summary["epochs"] = result.epoch_loss.size();
      summary["first_loss"] = result.epoch_loss.empty() ? 0.0 : result.epoch_loss.front();
      summary["final_loss"] = result.epoch_loss.empty() ? 0.0 : result.epoch_loss.back();
      summary["fingerprint"] = itv::text::hex64(result.model.fingerprint());
      std::cerr << summary.dump() << '\n';
    } else if (*index) {
      const auto kit = itv::Toolkit::load(data_dir);
      require_file(model_path);
      const auto model = itv::embed::load_model(model_path);
      auto log = read_log(export_path, skip_malformed);
      auto convs = read_convs(conv_path, log);
      itv::Annotator annotator(kit.lexicon);
      add_annotations(annotator, annotations_path);
      const itv::ExtractionContext ctx{annotator, kit.detector, kit.dictionary, kit.stopwords};
      itv::StoreConfig cfg;
      cfg.weighting = weighting == "rarity" ? itv::Weighting::rarity : itv::Weighting::literal;
      const auto store = itv::build_store(convs, ctx, kit.symptoms, model, cfg);
      emit(out_path, store.serialize());
    } else if (*query) {
      scfg.validate();
      const auto kit = itv::Toolkit::load(data_dir);
      require_file(model_path);
      require_file(store_path);
      const auto model = itv::embed::load_model(model_path);
      const auto store = itv::load_store(store_path, model);
      const itv::QueryRequest req{text, k, itv::parse_mode(mode)};
      emit(out_path, itv::run_query(store, model, kit, scfg, req).dump() + "\n");
    } else if (*eval) {
      scfg.validate();
      const auto kit = itv::Toolkit::load(data_dir);
      require_file(model_path);
      require_file(store_path);
      const auto model = itv::embed::load_model(model_path);
      const auto store = itv::load_store(store_path, model);
      auto gin = open_in(gold_path);
      const auto gold = itv::read_gold(gin);
      std::vector<itv::Method> methods;
      if (!eval_mode || *eval_mode == "M1") methods.push_back(itv::Method::M1);
      if (!eval_mode || *eval_mode == "M2") methods.push_back(itv::Method::M2);
      methods.push_back(itv::Method::tfidf);
      const std::vector<std::size_t> ns = {1, 3, 5, 10};
      nlohmann::ordered_json report;
      report["queries"] = gold.size();
      report["snapshot"] = store.snapshot();
      std::vector<std::pair<std::string, itv::EvalMetrics>> rows;
      for (auto m : methods) {
        const auto metrics = itv::evaluate(itv::rank_store(store, kit.dictionary, scfg, gold, m), gold, ns);
        report["methods"][itv::to_string(m)] = itv::to_json(metrics);
        rows.emplace_back(itv::to_string(m), metrics);
      }
      std::cerr << itv::render_metrics_table(rows);
      emit(out_path, report.dump(2) + "\n");
    } else if (*serve) {
      scfg.validate();
      const auto kit = itv::Toolkit::load(data_dir);
      require_file(model_path);
      require_file(store_path);
      auto load_snapshot = [&] {
        auto model = std::make_shared<const itv::embed::EmbeddingModel>(itv::embed::load_model(model_path));
        auto store = std::make_shared<const itv::IssueStore>(itv::load_store(store_path, *model));
        return itv::Snapshot{store, model};
      };
      itv::FeedbackLog feedback(out_path.empty() ? "feedback.jsonl" : out_path);
      itv::Service service(kit, scfg, feedback, load_snapshot());
      httplib::Server server;
      itv::install_routes(server, service);
      std::signal(SIGINT, [](int) { g_stop = true; });
      std::signal(SIGTERM, [](int) { g_stop = true; });
      std::signal(SIGHUP, [](int) { g_reload = true; });
      std::thread watcher([&] {
        while (!g_stop) {
          if (g_reload.exchange(false)) {
            try {
              service.swap(load_snapshot());
              std::cerr << nlohmann::ordered_json{{"reloaded", service.current()->store->snapshot()}}.dump() << '\n';
            } catch (const std::exception& e) {
              fail_json("ReloadFailed", e.what());
            }
          }
          std::this_thread::sleep_for(std::chrono::milliseconds(100));
        }
        server.stop();
      });
      const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
      if (bound < 0) {
        g_stop = true;
        watcher.join();
        throw itv::IoError("cannot bind " + host + ":" + std::to_string(port));
      }
      port = bound;
      std::cerr << nlohmann::ordered_json{{"listening", host + ":" + std::to_string(port)},
                                          {"snapshot", service.current()->store->snapshot()}}
                       .dump()
                << '\n';
      server.listen_after_bind();
      g_stop = true;
      watcher.join();
    }
  } catch (const itv::Error& e) {
    fail_json(e.kind(), e.what());
    return 1;
  } catch (const itv::IoError& e) {
    fail_json("IoError", e.what());
    return 2;
  } catch (const std::exception& e) {
    fail_json("Internal", e.what());
    return 1;
  }
  return 0;
}
