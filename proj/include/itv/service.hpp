#pragma once

#include <functional>
#include <memory>
#include <mutex>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "itv/store.hpp"

namespace itv {

inline constexpr const char* kSnapshotHeader = "X-ITV-Snapshot";
inline constexpr std::size_t kMaxK = 1000;

struct Response {
  int status = 200;
  nlohmann::ordered_json body;
  std::string snapshot;
};

// Store and model that were built together; replaced as a unit on reindex.
struct Snapshot {
  std::shared_ptr<const IssueStore> store;
  std::shared_ptr<const embed::EmbeddingModel> model;
};

// Request handlers, independent of the transport. Each request pins the
// snapshot current at its start.
class Service {
 public:
  using Clock = std::function<Timestamp()>;

  Service(const Toolkit& kit, SimilarityConfig similarity, FeedbackLog& feedback, Snapshot snapshot,
          Clock clock = now_timestamp)
      : kit_(kit), similarity_(similarity), feedback_(feedback), clock_(std::move(clock)) {
    swap(std::move(snapshot));
  }

  std::shared_ptr<const Snapshot> current() const {
    std::lock_guard lock(mu_);
    return snapshot_;
  }

  void swap(Snapshot next) {
    if (!next.store || !next.model) throw ConfigError("snapshot needs a store and a model");
    auto p = std::make_shared<const Snapshot>(std::move(next));
    std::lock_guard lock(mu_);
    snapshot_ = std::move(p);
  }

  Response query(const std::string& body) const {
    const auto snap = current();
    nlohmann::json j;
    if (auto bad = parse_object(body, j, *snap)) return *bad;
    QueryRequest req;
    if (!j.contains("text") || !j["text"].is_string()) return invalid(*snap, "\"text\" must be a string");
    req.text = j["text"].get<std::string>();
    if (text::trim(req.text).empty()) return invalid(*snap, "\"text\" is empty");
    if (j.contains("k") && !j["k"].is_null()) {
      if (!j["k"].is_number_integer() || j["k"].get<long long>() < 1 || j["k"].get<long long>() > static_cast<long long>(kMaxK)) {
        return invalid(*snap, "\"k\" must be an integer in [1, " + std::to_string(kMaxK) + "]");
      }
      req.k = j["k"].get<std::size_t>();
    }
    if (j.contains("mode") && !j["mode"].is_null()) {
      if (!j["mode"].is_string()) return invalid(*snap, "\"mode\" must be \"M1\" or \"M2\"");
      const auto m = j["mode"].get<std::string>();
      if (m != "M1" && m != "M2") return invalid(*snap, "\"mode\" must be \"M1\" or \"M2\"");
      req.mode = parse_mode(m);
    }
    return {200, run_query(*snap->store, *snap->model, kit_, similarity_, req), snap->store->snapshot()};
  }

  Response issue(const std::string& id) const {
    const auto snap = current();
    const IssueRecord* r = snap->store->find(id);
    if (!r) return error(404, *snap, "UnknownIssue", "no issue with id \"" + id + "\"");
    return {200, to_json(*r), snap->store->snapshot()};
  }

  Response feedback(const std::string& body) {
    const auto snap = current();
    nlohmann::json j;
    if (auto bad = parse_object(body, j, *snap)) return *bad;
    for (const char* key : {"query_id", "result_issue_id", "verdict", "user"}) {
      if (!j.contains(key) || !j[key].is_string() || j[key].get<std::string>().empty()) {
        return invalid(*snap, std::string("\"") + key + "\" must be a non-empty string");
      }
    }
    const auto verdict = parse_verdict(j["verdict"].get<std::string>());
    if (!verdict) return invalid(*snap, "\"verdict\" must be \"relevant\" or \"not_relevant\"");
    FeedbackEvent e;
    e.query_id = j["query_id"].get<std::string>();
    e.result_issue_id = j["result_issue_id"].get<std::string>();
    e.verdict = *verdict;
    e.user = j["user"].get<std::string>();
    if (!snap->store->find(e.result_issue_id)) {
      return error(409, *snap, "UnknownIssue", "result \"" + e.result_issue_id + "\" is not in the store");
    }
    e.timestamp = clock_();
    feedback_.append(e);
    nlohmann::ordered_json out;
    out["status"] = "accepted";
    out["event"] = to_json(e);
    return {202, std::move(out), snap->store->snapshot()};
  }

  Response health() const {
    const auto snap = current();
    nlohmann::ordered_json out;
    out["status"] = "ok";
    out["snapshot"] = snap->store->snapshot();
    return {200, std::move(out), snap->store->snapshot()};
  }

 private:
  static Response error(int status, const Snapshot& snap, const std::string& kind, const std::string& message) {
    nlohmann::ordered_json body;
    body["error"] = kind;
    body["message"] = message;
    return {status, std::move(body), snap.store->snapshot()};
  }

  static Response invalid(const Snapshot& snap, const std::string& message) {
    return error(400, snap, "InvalidPayload", message);
  }

  static std::optional<Response> parse_object(const std::string& body, nlohmann::json& out, const Snapshot& snap) {
    out = nlohmann::json::parse(body, nullptr, false);
    if (out.is_discarded()) return invalid(snap, "body is not valid JSON");
    if (!out.is_object()) return invalid(snap, "body must be a JSON object");
    return std::nullopt;
  }

  const Toolkit& kit_;
  SimilarityConfig similarity_;
  FeedbackLog& feedback_;
  Clock clock_;
  mutable std::mutex mu_;
  std::shared_ptr<const Snapshot> snapshot_;
};

inline void send(httplib::Response& res, const Response& r) {
  res.status = r.status;
  res.set_header(kSnapshotHeader, r.snapshot);
  res.set_header("Access-Control-Allow-Origin", "*");
  res.set_header("Access-Control-Expose-Headers", kSnapshotHeader);
  res.set_content(r.body.dump(), "application/json");
}

inline void install_routes(httplib::Server& server, Service& service) {
  server.Post("/v1/query", [&](const httplib::Request& req, httplib::Response& res) { send(res, service.query(req.body)); });
  server.Get(R"(/v1/issues/([^/]+))", [&](const httplib::Request& req, httplib::Response& res) {
    send(res, service.issue(req.matches[1].str()));
  });
  server.Post("/v1/feedback", [&](const httplib::Request& req, httplib::Response& res) {
    send(res, service.feedback(req.body));
  });
  server.Get("/v1/health", [&](const httplib::Request&, httplib::Response& res) { send(res, service.health()); });
  server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    nlohmann::ordered_json body;
    try {
      std::rethrow_exception(ep);
    } catch (const Error& e) {
      res.status = 400;
      body["error"] = e.kind();
      body["message"] = e.what();
    } catch (const std::exception& e) {
      res.status = 500;
      body["error"] = "Internal";
      body["message"] = e.what();
    }
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(body.dump(), "application/json");
  });
}

}  // namespace itv
