// llmprior: elicit, pool, update and federate priors from the command line.
//
//   llmprior --backend mock:fixtures/reported.json elicit --context "..." --family beta
//   llmprior pool priors.json --method logp --weights 0.5,0.5
//   llmprior update prior.json --heads 8 --tails 2
//   llmprior density prior.json --lo 0 --hi 1 --n 1001 --format csv
//   llmprior --backend mock:fixtures/reported.json fed run --contexts fixtures/task2.json

#include "llmprior/llmprior.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace llmprior;
namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 2, kValidation = 3, kBackend = 4, kIo = 5 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UnsupportedFamily : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CliConfig {
  std::string backend = "http";
  std::string llm_config;
  std::string out_dir;
  std::uint64_t seed = 0;
};

json read_json_file(const std::string& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const std::ios_base::failure& e) {
    throw IoError(e.what());
  }
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw std::invalid_argument("'" + path + "' is not valid JSON");
  return j;
}

/// Accepts a bare prior or one wrapped under "prior", "final_prior" or "result".
Prior prior_from_any(const json& j) {
  for (const char* key : {"prior", "final_prior", "result"})
    if (j.is_object() && j.contains(key) && !j.contains("family")) return prior_from_any(j.at(key));
  return prior_from_json(j);
}

std::vector<Prior> priors_from_any(const json& j) {
  const json& list = j.is_object() && j.contains("priors") ? j.at("priors") : j;
  std::vector<Prior> out;
  if (list.is_array()) {
    for (const auto& p : list) out.push_back(prior_from_any(p));
  } else {
    out.push_back(prior_from_any(list));
  }
  if (out.empty()) throw std::invalid_argument("no priors in input");
  return out;
}

std::vector<double> parse_weights(const std::string& s) {
  std::vector<double> w;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      w.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("--weights must be a comma-separated list of numbers, got '" + s + "'");
    }
  }
  return w;
}

/// Writes to <out-dir>/<name> when an output directory is configured, else to stdout.
void emit(const CliConfig& cfg, const std::string& name, const std::string& content) {
  if (cfg.out_dir.empty()) {
    std::cout << content;
    std::cout.flush();
    return;
  }
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + cfg.out_dir + "': " + ec.message());
  const fs::path p = fs::path(cfg.out_dir) / name;
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write '" + p.string() + "'");
  out << content;
  if (!out) throw IoError("write failed for '" + p.string() + "'");
  std::cerr << "wrote " << p.string() << '\n';
}

void emit_json(const CliConfig& cfg, const std::string& name, const json& j) { emit(cfg, name, j.dump(2) + "\n"); }

std::unique_ptr<LlmBackend> backend_for(const CliConfig& cfg) { return make_backend(cfg.backend, cfg.llm_config); }

std::string context_from(const std::string& text, const std::string& file) {
  if (!text.empty() && !file.empty()) throw UsageError("give --context or --context-file, not both");
  if (!file.empty()) {
    try {
      return read_text_file(file);
    } catch (const std::ios_base::failure& e) {
      throw IoError(e.what());
    }
  }
  if (text.empty()) throw UsageError("--context or --context-file is required");
  return text;
}

json mode_json(const BetaParams& p) {
  const BetaMode m = beta_mode(p);
  json j{{"kind", std::string(to_string(m.kind))}};
  j["value"] = m.value ? json(*m.value) : json(nullptr);
  return j;
}

/// Contexts file: {"task": TaskSpec, "agents": [{"agent_id": ..., "context": ...}]}.
struct ContextsFile {
  TaskSpec spec;
  std::vector<AgentContext> agents;
};

ContextsFile read_contexts(const std::string& path) {
  const json j = read_json_file(path);
  ContextsFile f;
  if (j.contains("task")) f.spec = task_spec_from_json(j["task"]);
  if (!j.contains("agents") || !j["agents"].is_array()) throw std::invalid_argument("contexts file needs an 'agents' list");
  for (const auto& a : j["agents"]) f.agents.push_back({a.at("agent_id").get<std::string>(), a.at("context").get<std::string>()});
  return f;
}

int exit_code_for(std::exception_ptr ep) {
  try {
    std::rethrow_exception(ep);
  } catch (const AgentFailure& e) {
    std::cerr << "error: agent " << e.agent_id() << " failed\n";
    return exit_code_for(e.cause());
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const std::ios_base::failure& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const BackendError& e) {
    std::cerr << "backend error: " << e.what() << '\n';
    return kBackend;
  } catch (const FedError& e) {
    std::cerr << "federation error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return e.kind() == FedErrorKind::transport ? kBackend : kValidation;
  } catch (const ExhaustedRetries& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kValidation;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CliConfig cfg;
  CLI::App app{"Elicit priors from text with an LLM and pool them across agents."};
  app.require_subcommand(1);
  app.add_option("--backend", cfg.backend, "LLM backend: mock:<fixture.json> or http")->capture_default_str();
  app.add_option("--llm-config", cfg.llm_config, "JSON file with base_url, api_key, model, temperature, timeout");
  app.add_option("--out-dir", cfg.out_dir, "write results into this directory instead of stdout");
  app.add_option("--seed", cfg.seed, "random seed for sampling")->capture_default_str();

  // elicit
  std::string context, context_file, family_name = "beta", template_id;
  std::size_t k = 2, d = 1, max_attempts = 3;
  auto* elicit_cmd = app.add_subcommand("elicit", "elicit a prior from a context");
  elicit_cmd->add_option("--context", context, "context text");
  elicit_cmd->add_option("--context-file", context_file, "file holding the context text");
  elicit_cmd->add_option("--family", family_name, "beta or gmm")->check(CLI::IsMember({"beta", "gmm"}))->capture_default_str();
  elicit_cmd->add_option("--components,-k", k, "mixture components K")->check(CLI::PositiveNumber)->capture_default_str();
  elicit_cmd->add_option("--dimension,-d", d, "mixture dimension d")->check(CLI::PositiveNumber)->capture_default_str();
  elicit_cmd->add_option("--template", template_id, "coin-beta, geyser-gmm or gmm-general");
  elicit_cmd->add_option("--max-attempts", max_attempts, "attempt budget")->check(CLI::PositiveNumber)->capture_default_str();

  // pool
  std::string priors_file, weights_text, method = "logp";
  std::size_t k_out = 0;
  auto* pool_cmd = app.add_subcommand("pool", "pool priors from a JSON file");
  pool_cmd->add_option("priors", priors_file, "JSON list of priors (or {\"priors\": [...]})")->required();
  pool_cmd->add_option("--method", method, "logp, linear, param-avg or product")
      ->check(CLI::IsMember({"logp", "linear", "param-avg", "product"}))
      ->capture_default_str();
  pool_cmd->add_option("--weights", weights_text, "comma-separated weights (default uniform)");
  pool_cmd->add_option("--k-out", k_out, "mixture components kept by the approximate pool (default: input K)");

  // update
  std::string prior_file;
  std::uint64_t heads = 0, tails = 0;
  auto* update_cmd = app.add_subcommand("update", "conjugate Beta-Binomial update");
  update_cmd->add_option("prior", prior_file, "prior JSON file")->required();
  update_cmd->add_option("--heads", heads, "observed successes")->required();
  update_cmd->add_option("--tails", tails, "observed failures")->required();

  // density
  double lo = 0.0, hi = 1.0;
  std::size_t n = 1001;
  std::string format = "csv";
  auto* density_cmd = app.add_subcommand("density", "tabulate a 1-D prior density");
  density_cmd->add_option("prior", prior_file, "prior JSON file")->required();
  density_cmd->add_option("--lo", lo, "lower end")->capture_default_str();
  density_cmd->add_option("--hi", hi, "upper end")->capture_default_str();
  density_cmd->add_option("--n", n, "grid points")->check(CLI::Range(std::size_t{2}, std::size_t{100000000}))->capture_default_str();
  density_cmd->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}))->capture_default_str();

  // sample
  std::size_t count = 1000;
  auto* sample_cmd = app.add_subcommand("sample", "draw samples from a mixture prior");
  sample_cmd->add_option("prior", prior_file, "prior JSON file")->required();
  sample_cmd->add_option("--count", count, "number of samples")->capture_default_str();

  // fed
  std::string server_url = "http://127.0.0.1:8470", host = "127.0.0.1", records_dir, task_id, agent_id, token, spec_file,
              contexts_file;
  int port = 8470;
  bool close_task = false;
  auto* fed_cmd = app.add_subcommand("fed", "federated prior aggregation");
  fed_cmd->require_subcommand(1);
  auto* serve_cmd = fed_cmd->add_subcommand("serve", "run the aggregation server");
  serve_cmd->add_option("--host", host)->capture_default_str();
  serve_cmd->add_option("--port", port, "0 picks a free port")->capture_default_str();
  serve_cmd->add_option("--records-dir", records_dir, "directory for aggregation records");
  auto* open_cmd = fed_cmd->add_subcommand("open", "open a task on a server");
  open_cmd->add_option("--server", server_url)->capture_default_str();
  open_cmd->add_option("--spec", spec_file, "TaskSpec JSON file (or a contexts file with a 'task' entry)")->required();
  open_cmd->add_option("--token", token, "shared task token");
  auto* submit_cmd = fed_cmd->add_subcommand("submit", "elicit locally and submit the parameters");
  submit_cmd->add_option("--server", server_url)->capture_default_str();
  submit_cmd->add_option("--task", task_id)->required();
  submit_cmd->add_option("--agent", agent_id)->required();
  submit_cmd->add_option("--context", context, "context text (stays local)");
  submit_cmd->add_option("--context-file", context_file, "file holding the context text (stays local)");
  submit_cmd->add_option("--token", token, "shared task token");
  auto* aggregate_cmd = fed_cmd->add_subcommand("aggregate", "pool every submission of a task");
  aggregate_cmd->add_option("--server", server_url)->capture_default_str();
  aggregate_cmd->add_option("--task", task_id)->required();
  aggregate_cmd->add_option("--token", token, "shared task token");
  aggregate_cmd->add_flag("--close", close_task, "stop accepting submissions");
  auto* run_cmd = fed_cmd->add_subcommand("run", "run the whole protocol in-process");
  run_cmd->add_option("--contexts", contexts_file, "contexts file")->required();
  run_cmd->add_option("--weights", weights_text, "comma-separated weights in ascending agent-id order");
  run_cmd->add_option("--records-dir", records_dir, "directory for aggregation records");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*elicit_cmd) {
      const std::string text = context_from(context, context_file);
      const Context c{text, family_from_string(family_name), k, d};
      const auto backend = backend_for(cfg);
      std::optional<PromptTemplate> tmpl;
      if (!template_id.empty()) tmpl = template_by_id(template_id, k, d);
      emit_json(cfg, "elicit.json", to_json(elicit(c, *backend, RetryPolicy{max_attempts}, tmpl)));
    } else if (*pool_cmd) {
      const auto priors = priors_from_any(read_json_file(priors_file));
      const WeightVector w = weights_text.empty() ? WeightVector::uniform(priors.size()) : WeightVector(parse_weights(weights_text));
      if (w.size() != priors.size()) throw UsageError("--weights has " + std::to_string(w.size()) + " entries for " +
                                                      std::to_string(priors.size()) + " priors");
      PoolReport r = [&] {
        if (method == "linear") return pool_linear(priors, w);
        if (method == "param-avg") return pool_parameter_average(priors, w);
        if (method == "product") return pool_product(priors);
        std::size_t kk = k_out;
        if (kk == 0) {
          kk = 1;
          for (const auto& p : priors)
            if (const auto* g = std::get_if<Gmm>(&p)) kk = std::max(kk, g->size());
        }
        return pool_logp(priors, w, kk);
      }();
      emit_json(cfg, "pool.json", to_json(r));
    } else if (*update_cmd) {
      const json j = read_json_file(prior_file);
      const Prior p = prior_from_any(j);
      const auto* beta = std::get_if<BetaParams>(&p);
      if (!beta) throw UnsupportedFamily("UnsupportedFamily: conjugate updating is only defined for Beta priors");
      const BetaParams post = update_beta_binomial(*beta, {heads, tails});
      emit_json(cfg, "update.json",
                {{"prior", to_json(*beta)},
                 {"data", {{"heads", heads}, {"tails", tails}}},
                 {"posterior", to_json(post)},
                 {"summary", {{"mean", post.mean()}, {"variance", post.variance()}, {"mode", mode_json(post)}}}});
    } else if (*density_cmd) {
      if (!(lo < hi)) throw UsageError("--lo must be below --hi");
      const Prior p = prior_from_any(read_json_file(prior_file));
      if (const auto* g = std::get_if<Gmm>(&p); g && g->dimension() != 1)
        throw UnsupportedFamily("density grids are 1-D; the prior has dimension " + std::to_string(g->dimension()));
      const DensityGrid grid = density_grid(p, lo, hi, n);
      if (format == "csv") {
        emit(cfg, "density.csv", grid_to_csv(grid));
      } else {
        emit_json(cfg, "density.json", to_json(grid));
      }
    } else if (*sample_cmd) {
      const Prior p = prior_from_any(read_json_file(prior_file));
      const auto* g = std::get_if<Gmm>(&p);
      if (!g) throw UnsupportedFamily("sampling is implemented for mixture priors");
      json rows = json::array();
      for (const auto& x : gmm_sample(*g, count, cfg.seed)) rows.push_back(std::vector<double>(x.data(), x.data() + x.size()));
      emit_json(cfg, "samples.json", {{"seed", cfg.seed}, {"samples", rows}});
    } else if (*fed_cmd) {
      if (*serve_cmd) {
        FedServer::Options opt;
        if (!records_dir.empty()) opt.records_dir = records_dir;
        FedServer server(opt);
        FedHttpServer http(server);
        const int bound = http.start(host, port);
        std::cout << "listening on http://" << host << ':' << bound << std::endl;
        sigset_t set;
        sigemptyset(&set);
        sigaddset(&set, SIGINT);
        sigaddset(&set, SIGTERM);
        pthread_sigmask(SIG_BLOCK, &set, nullptr);
        int sig = 0;
        sigwait(&set, &sig);
        http.stop();
      } else if (*open_cmd) {
        json j = read_json_file(spec_file);
        TaskSpec spec = task_spec_from_json(j.contains("task") ? j["task"] : j);
        if (!token.empty()) spec.token = token;
        const FedClient client(server_url, spec.token);
        emit_json(cfg, "task.json", {{"task_id", client.open_task(spec)}});
      } else if (*submit_cmd) {
        const std::string text = context_from(context, context_file);
        const FedClient client(server_url, token);
        const TaskSpec spec = client.get_task(task_id);
        const auto backend = backend_for(cfg);
        const AgentSubmission sub = agent_run(spec.context(text), spec, *backend, agent_id);
        const SubmitResult r = client.submit(sub);
        emit_json(cfg, "submission.json", {{"accepted", r.accepted}, {"replaced", r.replaced}, {"submission", to_json(sub)}});
      } else if (*aggregate_cmd) {
        const FedClient client(server_url, token);
        emit_json(cfg, "aggregation.json", client.aggregate_json(task_id, close_task));
      } else if (*run_cmd) {
        ContextsFile f = read_contexts(contexts_file);
        std::optional<std::vector<double>> w;
        if (!weights_text.empty()) w = parse_weights(weights_text);
        FedServer::Options opt;
        if (!records_dir.empty()) opt.records_dir = records_dir;
        const auto backend = backend_for(cfg);
        emit_json(cfg, "aggregation.json", to_json(run_pipeline(f.agents, f.spec, *backend, w, {}, opt)));
      }
    }
  } catch (...) {
    return exit_code_for(std::current_exception());
  }
  return kOk;
}
