#pragma once

// Federated prior aggregation: a server opens a task, agents elicit priors from
// their private contexts and send only the validated parameters, and the server
// pools the collected parameter sets with the logarithmic pool.

#include "llmprior/distributions.hpp"
#include "llmprior/elicitation.hpp"
#include "llmprior/pooling.hpp"
#include "llmprior/serialization.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

namespace llmprior {

enum class FedErrorKind {
  invalid_spec,
  duplicate_task,
  unknown_task,
  task_closed,
  unauthorized,
  invalid_submission,
  no_submissions,
  weight_mismatch,
  transport,
};

inline std::string_view to_string(FedErrorKind k) {
  switch (k) {
    case FedErrorKind::invalid_spec: return "invalid_spec";
    case FedErrorKind::duplicate_task: return "duplicate_task";
    case FedErrorKind::unknown_task: return "unknown_task";
    case FedErrorKind::task_closed: return "task_closed";
    case FedErrorKind::unauthorized: return "unauthorized";
    case FedErrorKind::invalid_submission: return "invalid_submission";
    case FedErrorKind::no_submissions: return "no_submissions";
    case FedErrorKind::weight_mismatch: return "weight_mismatch";
    case FedErrorKind::transport: return "transport";
  }
  return "?";
}

inline FedErrorKind fed_error_kind_from_string(std::string_view s) {
  for (auto k : {FedErrorKind::invalid_spec, FedErrorKind::duplicate_task, FedErrorKind::unknown_task,
                 FedErrorKind::task_closed, FedErrorKind::unauthorized, FedErrorKind::invalid_submission,
                 FedErrorKind::no_submissions, FedErrorKind::weight_mismatch, FedErrorKind::transport}) {
    if (to_string(k) == s) return k;
  }
  return FedErrorKind::transport;
}

class FedError : public std::runtime_error {
 public:
  FedError(FedErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  FedErrorKind kind() const noexcept { return kind_; }

 private:
  FedErrorKind kind_;
};

/// An agent's elicitation failed; `cause()` holds the original exception.
class AgentFailure : public std::runtime_error {
 public:
  AgentFailure(std::string agent_id, std::exception_ptr cause, const std::string& what)
      : std::runtime_error(agent_id + ": " + what), agent_id_(std::move(agent_id)), cause_(std::move(cause)) {}
  const std::string& agent_id() const noexcept { return agent_id_; }
  std::exception_ptr cause() const noexcept { return cause_; }

 private:
  std::string agent_id_;
  std::exception_ptr cause_;
};

/// What the server broadcasts: the variable's dimension, the prior family, K, the
/// prompt template, and the pooling weights. Explicit weights are matched to agents
/// in ascending agent-id order.
struct TaskSpec {
  std::string task_id;
  std::size_t dimension = 1;
  Family family = Family::beta;
  std::size_t components = 2;
  std::string prompt_template;  ///< empty selects the family default
  std::optional<std::vector<double>> weights;
  std::string token;  ///< shared secret for submissions; never served back by GET

  void validate() const {
    if (dimension < 1) throw FedError(FedErrorKind::invalid_spec, "dimension must be at least 1");
    if (components < 1) throw FedError(FedErrorKind::invalid_spec, "components must be at least 1");
    if (family == Family::beta && dimension != 1) throw FedError(FedErrorKind::invalid_spec, "beta tasks are 1-D");
    if (weights) {
      try {
        WeightVector{*weights};
      } catch (const std::invalid_argument& e) {
        throw FedError(FedErrorKind::invalid_spec, std::string("explicit weights: ") + e.what());
      }
    }
    if (!prompt_template.empty()) {
      try {
        if (template_by_id(prompt_template, components, dimension).family != family)
          throw FedError(FedErrorKind::invalid_spec, "prompt template elicits a different family");
      } catch (const std::invalid_argument& e) {
        throw FedError(FedErrorKind::invalid_spec, e.what());
      }
    }
  }

  Context context(std::string text) const { return {std::move(text), family, components, dimension}; }

  PromptTemplate prompt() const {
    return prompt_template.empty() ? default_template(context("-")) : template_by_id(prompt_template, components, dimension);
  }
};

/// Parameters one agent sends to the server. Carries no context text.
struct AgentSubmission {
  std::string agent_id;
  std::string task_id;
  Prior prior;
  Provenance provenance;
};

struct SubmitResult {
  bool accepted = false;
  bool replaced = false;  ///< an earlier submission from the same agent was overwritten
};

struct AggregationRecord {
  std::string task_id;
  std::vector<AgentSubmission> submissions;  ///< ascending agent id
  std::vector<double> weights;               ///< aligned with `submissions`
  PoolReport report;
  Prior final_prior;
  std::string opened_at;
  std::string aggregated_at;
};

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline json to_json(const TaskSpec& s, bool include_token = false) {
  json j{{"task_id", s.task_id},
         {"dimension", s.dimension},
         {"family", std::string(to_string(s.family))},
         {"components", s.components},
         {"prompt_template", s.prompt_template}};
  j["weights"] = s.weights ? json(*s.weights) : json("uniform");
  if (include_token && !s.token.empty()) j["token"] = s.token;
  return j;
}

inline TaskSpec task_spec_from_json(const json& j) {
  if (!j.is_object()) throw FedError(FedErrorKind::invalid_spec, "task spec must be a JSON object");
  try {
    TaskSpec s;
    s.task_id = j.value("task_id", "");
    s.dimension = j.value("dimension", std::size_t{1});
    s.family = family_from_string(j.value("family", "beta"));
    s.components = j.value("components", std::size_t{2});
    s.prompt_template = j.value("prompt_template", "");
    s.token = j.value("token", "");
    if (auto it = j.find("weights"); it != j.end() && !it->is_null()) {
      if (it->is_string()) {
        if (it->get<std::string>() != "uniform") throw FedError(FedErrorKind::invalid_spec, "weights must be \"uniform\" or a list");
      } else {
        s.weights = it->get<std::vector<double>>();
      }
    }
    return s;
  } catch (const json::exception& e) {
    throw FedError(FedErrorKind::invalid_spec, std::string("malformed task spec: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FedError(FedErrorKind::invalid_spec, e.what());
  }
}

inline json to_json(const AgentSubmission& s) {
  return {{"agent_id", s.agent_id}, {"task_id", s.task_id}, {"prior", to_json(s.prior)}, {"provenance", to_json(s.provenance)}};
}

inline AgentSubmission submission_from_json(const json& j) {
  try {
    AgentSubmission s{j.at("agent_id").get<std::string>(), j.at("task_id").get<std::string>(), prior_from_json(j.at("prior")), {}};
    if (j.contains("provenance")) s.provenance = provenance_from_json(j["provenance"]);
    return s;
  } catch (const json::exception& e) {
    throw FedError(FedErrorKind::invalid_submission, std::string("malformed submission: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FedError(FedErrorKind::invalid_submission, std::string("invalid prior in submission: ") + e.what());
  }
}

inline json to_json(const AggregationRecord& r) {
  json subs = json::array();
  for (const auto& s : r.submissions) subs.push_back(to_json(s));
  return {{"task_id", r.task_id},          {"submissions", subs},
          {"weights", r.weights},          {"report", to_json(r.report)},
          {"final_prior", to_json(r.final_prior)}, {"opened_at", r.opened_at},
          {"aggregated_at", r.aggregated_at}};
}

inline AggregationRecord aggregation_record_from_json(const json& j) {
  AggregationRecord r{j.at("task_id").get<std::string>(), {}, j.at("weights").get<std::vector<double>>(),
                      pool_report_from_json(j.at("report")), prior_from_json(j.at("final_prior")),
                      j.value("opened_at", ""), j.value("aggregated_at", "")};
  for (const auto& s : j.at("submissions")) r.submissions.push_back(submission_from_json(s));
  return r;
}

/// The record's JSON with the timestamp fields removed, for transport comparisons.
inline json record_without_timestamps(json j) {
  j.erase("opened_at");
  j.erase("aggregated_at");
  return j;
}

inline std::string utc_timestamp() {
  using namespace std::chrono;
  const auto now = system_clock::now();
  const auto ms = duration_cast<milliseconds>(now.time_since_epoch()).count() % 1000;
  const std::time_t t = system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

// ---------------------------------------------------------------------------
// Server
// ---------------------------------------------------------------------------

/// Task registry plus aggregation. Registry access is guarded by a shared mutex;
/// each task has its own mutex, so submissions to a task are linearizable and an
/// aggregation runs exclusively with respect to that task.
class FedServer {
 public:
  struct Options {
    std::optional<std::filesystem::path> records_dir;  ///< one JSON file per aggregation, never overwritten
    std::function<void(std::string_view)> log;         ///< defaults to std::clog
    ApproxOptions approx;
  };

  FedServer() : FedServer(Options{}) {}
  explicit FedServer(Options opt) : opt_(std::move(opt)) {
    if (!opt_.log) opt_.log = [](std::string_view m) { std::clog << "[fed] " << m << '\n'; };
  }

  /// Registers a task. An empty task id is replaced by a generated "task-<n>".
  std::string open_task(TaskSpec spec) {
    spec.validate();
    std::unique_lock lock(registry_);
    if (spec.task_id.empty()) {
      do {
        spec.task_id = "task-" + std::to_string(++counter_);
      } while (tasks_.contains(spec.task_id));
    }
    if (tasks_.contains(spec.task_id)) throw FedError(FedErrorKind::duplicate_task, "task '" + spec.task_id + "' already exists");
    auto st = std::make_shared<TaskState>();
    st->spec = spec;
    st->opened_at = utc_timestamp();
    tasks_.emplace(spec.task_id, st);
    return spec.task_id;
  }

  /// The task spec as agents see it (without the token).
  TaskSpec get_task(const std::string& id) const {
    auto st = find(id);
    std::lock_guard g(st->m);
    TaskSpec s = st->spec;
    s.token.clear();
    return s;
  }

  bool is_open(const std::string& id) const {
    auto st = find(id);
    std::lock_guard g(st->m);
    return st->open;
  }

  std::size_t submission_count(const std::string& id) const {
    auto st = find(id);
    std::lock_guard g(st->m);
    return st->submissions.size();
  }

  /// Accepts a submission; a repeat from the same agent replaces the earlier one.
  SubmitResult submit(const AgentSubmission& sub, std::string_view token = {}) {
    auto st = find(sub.task_id);
    std::lock_guard g(st->m);
    check_token(*st, token);
    if (!st->open) throw FedError(FedErrorKind::task_closed, "task '" + sub.task_id + "' is closed");
    if (sub.agent_id.empty()) throw FedError(FedErrorKind::invalid_submission, "submission has no agent id");
    check_shape(st->spec, sub.prior);
    const bool replaced = st->submissions.contains(sub.agent_id);
    st->submissions.insert_or_assign(sub.agent_id, sub);
    if (replaced) opt_.log("task " + sub.task_id + ": submission from " + sub.agent_id + " replaced an earlier one");
    return {true, replaced};
  }

  /// Pools every accepted submission with the logarithmic pool.
  AggregationRecord aggregate(const std::string& id, bool close = false, std::string_view token = {}) {
    auto st = find(id);
    std::lock_guard g(st->m);
    check_token(*st, token);
    if (st->submissions.empty()) throw FedError(FedErrorKind::no_submissions, "task '" + id + "' has no submissions");

    AggregationRecord rec{id, {}, {}, PoolReport{BetaParams(1, 1), PoolMethod::logp_exact, {}}, BetaParams(1, 1),
                          st->opened_at, {}};
    std::vector<Prior> priors;
    for (const auto& [agent, sub] : st->submissions) {
      rec.submissions.push_back(sub);
      priors.push_back(sub.prior);
    }
    const auto& spec = st->spec;
    if (spec.weights && spec.weights->size() != priors.size())
      throw FedError(FedErrorKind::weight_mismatch, "task has " + std::to_string(spec.weights->size()) +
                                                        " explicit weights but " + std::to_string(priors.size()) + " submissions");
    const WeightVector w = spec.weights ? WeightVector(*spec.weights) : WeightVector::uniform(priors.size());
    rec.weights = w.values();
    rec.report = pool_logp(priors, w, spec.components, opt_.approx);
    rec.final_prior = std::visit(
        [](const auto& r) -> Prior {
          using T = std::decay_t<decltype(r)>;
          if constexpr (std::is_same_v<T, DensityGrid>) {
            throw std::logic_error("logarithmic pool returned a grid");
          } else {
            return r;
          }
        },
        rec.report.result);
    rec.aggregated_at = utc_timestamp();
    if (close) st->open = false;
    persist(rec, st->aggregations++);
    return rec;
  }

 private:
  struct TaskState {
    TaskSpec spec;
    bool open = true;
    std::map<std::string, AgentSubmission> submissions;
    std::string opened_at;
    std::size_t aggregations = 0;
    mutable std::mutex m;
  };

  std::shared_ptr<TaskState> find(const std::string& id) const {
    std::shared_lock lock(registry_);
    auto it = tasks_.find(id);
    if (it == tasks_.end()) throw FedError(FedErrorKind::unknown_task, "unknown task '" + id + "'");
    return it->second;
  }

  static void check_token(const TaskState& st, std::string_view token) {
    if (!st.spec.token.empty() && token != st.spec.token) throw FedError(FedErrorKind::unauthorized, "task token mismatch");
  }

  static void check_shape(const TaskSpec& spec, const Prior& p) {
    if (family_of(p) != spec.family)
      throw FedError(FedErrorKind::invalid_submission, "submission family does not match the task family");
    if (const auto* g = std::get_if<Gmm>(&p)) {
      if (static_cast<std::size_t>(g->dimension()) != spec.dimension)
        throw FedError(FedErrorKind::invalid_submission, "submission dimension does not match the task");
      if (g->size() != spec.components)
        throw FedError(FedErrorKind::invalid_submission, "submission component count does not match the task");
    }
  }

  void persist(const AggregationRecord& rec, std::size_t seq) const {
    if (!opt_.records_dir) return;
    namespace fs = std::filesystem;
    fs::create_directories(*opt_.records_dir);
    fs::path p;
    do {
      char name[32];
      std::snprintf(name, sizeof name, "-%04zu.json", seq++);
      p = *opt_.records_dir / (rec.task_id + name);
    } while (fs::exists(p));
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::ios_base::failure("cannot write aggregation record '" + p.string() + "'");
    out << to_json(rec).dump(2) << '\n';
  }

  Options opt_;
  mutable std::shared_mutex registry_;
  std::map<std::string, std::shared_ptr<TaskState>> tasks_;
  std::size_t counter_ = 0;
};

// ---------------------------------------------------------------------------
// Agents
// ---------------------------------------------------------------------------

/// Elicits a prior from a private context and packages only its parameters.
inline AgentSubmission agent_run(const Context& c, const TaskSpec& spec, const LlmBackend& backend, std::string agent_id,
                                 const RetryPolicy& policy = {}) {
  if (c.family != spec.family) throw std::invalid_argument("context family does not match the task family");
  if (c.family == Family::gmm && (c.components != spec.components || c.dimension != spec.dimension))
    throw std::invalid_argument("context mixture shape does not match the task");
  auto result = elicit(c, backend, policy, spec.prompt());
  return {std::move(agent_id), spec.task_id, std::move(result.prior), std::move(result.provenance)};
}

struct AgentContext {
  std::string agent_id;
  std::string text;
};

/// Runs every agent concurrently against an in-process server and aggregates.
/// `weights`, when given, overrides the spec's weight policy.
inline AggregationRecord run_pipeline(const std::vector<AgentContext>& agents, TaskSpec spec, const LlmBackend& backend,
                                      std::optional<std::vector<double>> weights = std::nullopt,
                                      const RetryPolicy& policy = {}, FedServer::Options server_options = {}) {
  if (agents.empty()) throw std::invalid_argument("run_pipeline needs at least one agent context");
  if (weights) spec.weights = std::move(weights);
  FedServer server(std::move(server_options));
  const std::string token = spec.token;
  spec.task_id = server.open_task(spec);
  const TaskSpec published = server.get_task(spec.task_id);

  std::vector<std::future<AgentSubmission>> futures;
  futures.reserve(agents.size());
  for (const auto& a : agents) {
    futures.push_back(std::async(std::launch::async, [&published, &backend, &policy, &a] {
      return agent_run(published.context(a.text), published, backend, a.agent_id, policy);
    }));
  }
  std::vector<AgentSubmission> subs;
  std::optional<AgentFailure> first_failure;
  for (std::size_t i = 0; i < futures.size(); ++i) {
    try {
      subs.push_back(futures[i].get());
    } catch (const std::exception& e) {
      if (!first_failure) first_failure.emplace(agents[i].agent_id, std::current_exception(), e.what());
    }
  }
  if (first_failure) throw *first_failure;
  for (const auto& s : subs) server.submit(s, token);
  return server.aggregate(spec.task_id, /*close=*/true, token);
}

}  // namespace llmprior
