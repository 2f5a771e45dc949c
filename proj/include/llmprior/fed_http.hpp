#pragma once

// HTTP transport for the federated protocol.
//
//   POST /tasks                       TaskSpec            -> 201 {"task_id": ...}
//   GET  /tasks/{id}                                      -> TaskSpec (no token)
//   POST /tasks/{id}/submissions      AgentSubmission     -> {"accepted": true, "replaced": bool}
//   POST /tasks/{id}/aggregate        {"close": bool}     -> AggregationRecord
//
// Submissions and aggregation carry the task token in the X-Task-Token header.
// Errors are {"error": <kind>, "message": ...} with a 4xx status.

#include "llmprior/backends.hpp"
#include "llmprior/fed.hpp"

#include <httplib.h>

#include <stdexcept>
#include <string>
#include <thread>

namespace llmprior {

inline constexpr const char* kTaskTokenHeader = "X-Task-Token";

inline int http_status(FedErrorKind k) {
  switch (k) {
    case FedErrorKind::invalid_spec: return 400;
    case FedErrorKind::unauthorized: return 401;
    case FedErrorKind::unknown_task: return 404;
    case FedErrorKind::duplicate_task:
    case FedErrorKind::task_closed:
    case FedErrorKind::no_submissions: return 409;
    case FedErrorKind::invalid_submission:
    case FedErrorKind::weight_mismatch: return 422;
    case FedErrorKind::transport: return 400;
  }
  return 400;
}

/// Serves a FedServer over HTTP on a background thread.
class FedHttpServer {
 public:
  explicit FedHttpServer(FedServer& server) : fed_(server) { routes(); }
  FedHttpServer(const FedHttpServer&) = delete;
  FedHttpServer& operator=(const FedHttpServer&) = delete;
  ~FedHttpServer() { stop(); }

  /// Binds and starts serving; port 0 picks a free port. Returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    port_ = port == 0 ? http_.bind_to_any_port(host) : (http_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { http_.listen_after_bind(); });
    http_.wait_until_ready();
    return port_;
  }

  /// Serves on the calling thread until stop() is called from elsewhere.
  void listen(const std::string& host, int port) {
    if (!http_.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
  }

  void stop() {
    http_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const noexcept { return port_; }

 private:
  static void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  template <class F>
  static void guarded(httplib::Response& res, F&& f) {
    try {
      f();
    } catch (const FedError& e) {
      reply(res, http_status(e.kind()), {{"error", std::string(to_string(e.kind()))}, {"message", e.what()}});
    } catch (const json::exception& e) {
      reply(res, 400, {{"error", "bad_request"}, {"message", e.what()}});
    } catch (const std::invalid_argument& e) {
      reply(res, 400, {{"error", "bad_request"}, {"message", e.what()}});
    } catch (const std::exception& e) {
      reply(res, 500, {{"error", "internal"}, {"message", e.what()}});
    }
  }

  static json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    return json::parse(req.body);
  }

  void routes() {
    http_.Post("/tasks", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const std::string id = fed_.open_task(task_spec_from_json(parse_body(req)));
        reply(res, 201, {{"task_id", id}});
      });
    });
    http_.Get(R"(/tasks/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { reply(res, 200, to_json(fed_.get_task(req.matches[1]))); });
    });
    http_.Post(R"(/tasks/([^/]+)/submissions)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        AgentSubmission sub = submission_from_json(parse_body(req));
        if (sub.task_id != req.matches[1].str())
          throw FedError(FedErrorKind::invalid_submission, "submission task id does not match the URL");
        const auto r = fed_.submit(sub, req.get_header_value(kTaskTokenHeader));
        reply(res, 200, {{"accepted", r.accepted}, {"replaced", r.replaced}});
      });
    });
    http_.Post(R"(/tasks/([^/]+)/aggregate)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const json body = parse_body(req);
        const bool close = body.value("close", false);
        reply(res, 200, to_json(fed_.aggregate(req.matches[1], close, req.get_header_value(kTaskTokenHeader))));
      });
    });
  }

  FedServer& fed_;
  httplib::Server http_;
  std::thread thread_;
  int port_ = -1;
};

/// Client side of the HTTP protocol.
class FedClient {
 public:
  explicit FedClient(std::string base_url, std::string token = {}) : token_(std::move(token)) {
    std::tie(origin_, prefix_) = detail::split_url(base_url);
  }

  std::string open_task(const TaskSpec& spec) const {
    return request("POST", "/tasks", to_json(spec, /*include_token=*/true)).at("task_id").get<std::string>();
  }

  TaskSpec get_task(const std::string& id) const { return task_spec_from_json(request("GET", "/tasks/" + id, {})); }

  SubmitResult submit(const AgentSubmission& sub) const {
    const json r = request("POST", "/tasks/" + sub.task_id + "/submissions", to_json(sub));
    return {r.value("accepted", false), r.value("replaced", false)};
  }

  /// The aggregation record as served, unparsed.
  json aggregate_json(const std::string& id, bool close = false) const {
    return request("POST", "/tasks/" + id + "/aggregate", {{"close", close}});
  }

  AggregationRecord aggregate(const std::string& id, bool close = false) const {
    return aggregation_record_from_json(aggregate_json(id, close));
  }

 private:
  json request(const std::string& method, const std::string& path, const json& body) const {
    httplib::Client cli(origin_);
    cli.set_connection_timeout(10);
    cli.set_read_timeout(120);
    httplib::Headers headers;
    if (!token_.empty()) headers.emplace(kTaskTokenHeader, token_);
    const std::string url = prefix_ + path;
    auto res = method == "GET" ? cli.Get(url, headers) : cli.Post(url, headers, body.dump(), "application/json");
    if (!res) throw FedError(FedErrorKind::transport, "federation server unreachable: " + httplib::to_string(res.error()));
    json j = json::parse(res->body, nullptr, false);
    if (res->status >= 400) {
      if (!j.is_discarded() && j.contains("error"))
        throw FedError(fed_error_kind_from_string(j["error"].get<std::string>()), j.value("message", "request failed"));
      throw FedError(FedErrorKind::transport, "HTTP " + std::to_string(res->status));
    }
    if (j.is_discarded()) throw FedError(FedErrorKind::transport, "federation server returned a non-JSON body");
    return j;
  }

  std::string origin_;
  std::string prefix_;
  std::string token_;
};

}  // namespace llmprior
