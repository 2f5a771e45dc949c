#include "llmprior/backends.hpp"
#include "llmprior/fed.hpp"
#include "llmprior/fed_http.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <future>

using namespace llmprior;

namespace {

const char* kAgent1 = "I have a weak suspicion that the coin might be slightly biased towards heads, but I am not very certain.";
const char* kAgent2 =
    "From what I recall, the coin seems to have a small tendency to land on tails more often, though my confidence is low.";

MockBackend reported_mock() { return MockBackend::from_file(LLMPRIOR_FIXTURES "/reported.json"); }

TaskSpec beta_task(std::string id = "coin") {
  TaskSpec s;
  s.task_id = std::move(id);
  s.family = Family::beta;
  return s;
}

TaskSpec gmm_task(std::string id, std::size_t k) {
  TaskSpec s;
  s.task_id = std::move(id);
  s.family = Family::gmm;
  s.components = k;
  return s;
}

AgentSubmission submission(std::string agent, std::string task, Prior p) {
  return {std::move(agent), std::move(task), std::move(p), {"synthetic", "none", 1}};
}

FedServer::Options quiet() {
  FedServer::Options o;
  o.log = [](std::string_view) {};
  return o;
}

}  // namespace

TEST(TaskSpec, Validation) {
  EXPECT_NO_THROW(beta_task().validate());
  auto s = beta_task();
  s.dimension = 2;
  EXPECT_THROW(s.validate(), FedError);
  s = gmm_task("g", 0);
  EXPECT_THROW(s.validate(), FedError);
  s = beta_task();
  s.weights = std::vector<double>{0.5, 0.4};
  EXPECT_THROW(s.validate(), FedError);
  s = beta_task();
  s.prompt_template = "geyser-gmm";
  EXPECT_THROW(s.validate(), FedError);
  s.prompt_template = "unknown";
  EXPECT_THROW(s.validate(), FedError);
}

TEST(TaskSpec, JsonRoundTripOmitsTokenByDefault) {
  auto s = gmm_task("geyser", 2);
  s.weights = std::vector<double>{0.25, 0.75};
  s.token = "secret";
  const json j = to_json(s);
  EXPECT_FALSE(j.contains("token"));
  EXPECT_TRUE(to_json(s, true).contains("token"));
  const auto back = task_spec_from_json(to_json(s, true));
  EXPECT_EQ(back.family, Family::gmm);
  EXPECT_EQ(*back.weights, *s.weights);
  EXPECT_EQ(back.token, "secret");
  EXPECT_EQ(to_json(beta_task())["weights"], "uniform");
  EXPECT_THROW(task_spec_from_json(json{{"weights", "expertise"}}), FedError);
  EXPECT_THROW(task_spec_from_json(json{{"family", "normal"}}), FedError);
}

TEST(Server, OpenGetAndDuplicates) {
  FedServer srv(quiet());
  EXPECT_EQ(srv.open_task(beta_task("t1")), "t1");
  EXPECT_TRUE(srv.is_open("t1"));
  EXPECT_EQ(srv.get_task("t1").family, Family::beta);
  try {
    srv.open_task(beta_task("t1"));
    FAIL();
  } catch (const FedError& e) {
    EXPECT_EQ(e.kind(), FedErrorKind::duplicate_task);
  }
  const auto gen = srv.open_task(gmm_task("", 2));
  EXPECT_EQ(gen.rfind("task-", 0), 0u);
  EXPECT_THROW(srv.get_task("missing"), FedError);
}

TEST(Server, SubmissionShapeChecks) {
  FedServer srv(quiet());
  srv.open_task(gmm_task("g", 2));
  const auto good = Gmm::scalar({0.4, 0.6}, {55, 80}, {6, 6});
  EXPECT_TRUE(srv.submit(submission("a", "g", good)).accepted);
  auto expect_kind = [&](const AgentSubmission& s, FedErrorKind k) {
    try {
      srv.submit(s);
      FAIL() << "accepted an invalid submission";
    } catch (const FedError& e) {
      EXPECT_EQ(e.kind(), k) << e.what();
    }
  };
  expect_kind(submission("b", "g", BetaParams(1, 1)), FedErrorKind::invalid_submission);
  expect_kind(submission("b", "g", Gmm::scalar({1.0}, {55}, {6})), FedErrorKind::invalid_submission);
  expect_kind(submission("b", "g", Gmm({1.0, 0.0}, {GaussianComponent(Vector::Zero(2), Matrix::Identity(2, 2)),
                                                    GaussianComponent(Vector::Zero(2), Matrix::Identity(2, 2))})),
              FedErrorKind::invalid_submission);
  expect_kind(submission("", "g", good), FedErrorKind::invalid_submission);
  expect_kind(submission("b", "nope", good), FedErrorKind::unknown_task);
}

TEST(Server, LastWriteWinsAndIsLogged) {
  std::vector<std::string> log;
  FedServer::Options o;
  o.log = [&](std::string_view m) { log.emplace_back(m); };
  FedServer srv(o);
  srv.open_task(beta_task());
  EXPECT_FALSE(srv.submit(submission("a", "coin", BetaParams(1, 1))).replaced);
  EXPECT_TRUE(srv.submit(submission("a", "coin", BetaParams(3, 3))).replaced);
  EXPECT_EQ(srv.submission_count("coin"), 1u);
  ASSERT_EQ(log.size(), 1u);
  EXPECT_NE(log[0].find("replaced"), std::string::npos);
  EXPECT_EQ(std::get<BetaParams>(srv.aggregate("coin").final_prior).a(), 3.0);
}

TEST(Server, AggregateTaskTwo) {
  FedServer srv(quiet());
  srv.open_task(beta_task());
  srv.submit(submission("agent-2", "coin", BetaParams(1.5, 2.0)));
  srv.submit(submission("agent-1", "coin", BetaParams(1.6, 1.4)));
  const auto rec = srv.aggregate("coin", true);
  const auto& p = std::get<BetaParams>(rec.final_prior);
  EXPECT_NEAR(p.a(), 1.55, 1e-15);
  EXPECT_NEAR(p.b(), 1.70, 1e-15);
  ASSERT_EQ(rec.submissions.size(), 2u);
  EXPECT_EQ(rec.submissions[0].agent_id, "agent-1");
  EXPECT_EQ(rec.weights, (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(rec.report.method, PoolMethod::logp_exact);
  EXPECT_FALSE(rec.opened_at.empty());
  EXPECT_TRUE(rec.aggregated_at.ends_with("Z"));
  EXPECT_FALSE(srv.is_open("coin"));
  try {
    srv.submit(submission("agent-3", "coin", BetaParams(1, 1)));
    FAIL();
  } catch (const FedError& e) {
    EXPECT_EQ(e.kind(), FedErrorKind::task_closed);
  }
}

TEST(Server, SingleSubmissionIsIdentity) {
  FedServer srv(quiet());
  srv.open_task(gmm_task("g", 2));
  const auto g = Gmm::scalar({0.4, 0.6}, {55, 80}, {6, 6});
  srv.submit(submission("only", "g", g));
  const auto rec = srv.aggregate("g");
  const auto& out = std::get<Gmm>(rec.final_prior);
  EXPECT_NEAR(out.weights()[0], 0.4, 1e-12);
  EXPECT_NEAR(out.component(1).mean()[0], 80.0, 1e-12);
}

TEST(Server, EmptyAndWeightMismatch) {
  FedServer srv(quiet());
  srv.open_task(beta_task());
  try {
    srv.aggregate("coin");
    FAIL();
  } catch (const FedError& e) {
    EXPECT_EQ(e.kind(), FedErrorKind::no_submissions);
  }
  auto s = beta_task("weighted");
  s.weights = std::vector<double>{0.2, 0.3, 0.5};
  srv.open_task(s);
  srv.submit(submission("a", "weighted", BetaParams(1, 1)));
  try {
    srv.aggregate("weighted");
    FAIL();
  } catch (const FedError& e) {
    EXPECT_EQ(e.kind(), FedErrorKind::weight_mismatch);
  }
}

TEST(Server, ExplicitWeightsFollowAgentIdOrder) {
  FedServer srv(quiet());
  auto s = beta_task();
  s.weights = std::vector<double>{0.25, 0.75};
  srv.open_task(s);
  srv.submit(submission("zeta", "coin", BetaParams(4, 4)));
  srv.submit(submission("alpha", "coin", BetaParams(8, 2)));
  const auto p = std::get<BetaParams>(srv.aggregate("coin").final_prior);
  EXPECT_NEAR(p.a(), 0.25 * 8 + 0.75 * 4, 1e-14);
  EXPECT_NEAR(p.b(), 0.25 * 2 + 0.75 * 4, 1e-14);
}

TEST(Server, TokenIsEnforced) {
  FedServer srv(quiet());
  auto s = beta_task();
  s.token = "t0k";
  srv.open_task(s);
  EXPECT_TRUE(srv.get_task("coin").token.empty());
  EXPECT_THROW(srv.submit(submission("a", "coin", BetaParams(1, 1)), "wrong"), FedError);
  EXPECT_TRUE(srv.submit(submission("a", "coin", BetaParams(1, 1)), "t0k").accepted);
  EXPECT_THROW(srv.aggregate("coin", false, ""), FedError);
  EXPECT_NO_THROW(srv.aggregate("coin", false, "t0k"));
}

TEST(Server, GmmAgentsPopulateDiagnostic) {
  FedServer srv(quiet());
  srv.open_task(gmm_task("g3", 2));
  srv.submit(submission("a", "g3", Gmm::scalar({0.5, 0.5}, {50, 80}, {5, 7})));
  srv.submit(submission("b", "g3", Gmm::scalar({0.3, 0.7}, {56, 78}, {6, 5})));
  srv.submit(submission("c", "g3", Gmm::scalar({0.45, 0.55}, {54, 82}, {7, 6})));
  const auto rec = srv.aggregate("g3");
  EXPECT_EQ(rec.report.method, PoolMethod::logp_approx);
  EXPECT_EQ(std::get<Gmm>(rec.final_prior).size(), 2u);
  ASSERT_TRUE(rec.report.diagnostics.grid_l1_error);
  EXPECT_LT(*rec.report.diagnostics.grid_l1_error, 0.05);
}

TEST(Server, ConcurrentSubmittersAllAccepted) {
  FedServer srv(quiet());
  srv.open_task(beta_task());
  std::vector<std::future<SubmitResult>> fs;
  for (int i = 0; i < 32; ++i) {
    fs.push_back(std::async(std::launch::async, [&srv, i] {
      return srv.submit(submission("agent-" + std::to_string(i), "coin", BetaParams(1 + i, 2)));
    }));
  }
  for (auto& f : fs) EXPECT_TRUE(f.get().accepted);
  EXPECT_EQ(srv.submission_count("coin"), 32u);
  EXPECT_EQ(srv.aggregate("coin").submissions.size(), 32u);
}

TEST(Server, RecordsArePersistedAppendOnly) {
  const auto dir = std::filesystem::path(::testing::TempDir()) / "fed_records_test";
  std::filesystem::remove_all(dir);
  FedServer::Options o = quiet();
  o.records_dir = dir;
  FedServer srv(o);
  srv.open_task(beta_task());
  srv.submit(submission("a", "coin", BetaParams(2, 3)));
  const auto r1 = srv.aggregate("coin");
  srv.aggregate("coin");
  EXPECT_TRUE(std::filesystem::exists(dir / "coin-0000.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "coin-0001.json"));
  const json stored = json::parse(read_text_file((dir / "coin-0000.json").string()));
  EXPECT_EQ(stored, to_json(r1));
  EXPECT_EQ(to_json(aggregation_record_from_json(stored)), stored);
}

TEST(Agent, ElicitsAndPackagesParametersOnly) {
  const auto mock = reported_mock();
  const auto sub = agent_run(beta_task().context(kAgent1), beta_task(), mock, "agent-1");
  EXPECT_EQ(std::get<BetaParams>(sub.prior).a(), 1.6);
  EXPECT_EQ(std::get<BetaParams>(sub.prior).b(), 1.4);
  const std::string wire = to_json(sub).dump();
  EXPECT_EQ(wire.find("suspicion"), std::string::npos);
  EXPECT_EQ(wire.find(kAgent1), std::string::npos);
  const auto sub2 = agent_run(beta_task().context(kAgent2), beta_task(), mock, "agent-2");
  EXPECT_EQ(std::get<BetaParams>(sub2.prior).b(), 2.0);
}

TEST(Agent, WrongFamilyIsAPreconditionError) {
  const auto mock = reported_mock();
  EXPECT_THROW(agent_run({kAgent1, Family::gmm, 2, 1}, beta_task(), mock, "a"), std::invalid_argument);
  EXPECT_THROW(agent_run({kAgent1, Family::gmm, 3, 1}, gmm_task("g", 2), mock, "a"), std::invalid_argument);
}

TEST(Pipeline, TaskTwoEndToEnd) {
  const auto mock = reported_mock();
  const auto rec = run_pipeline({{"agent-1", kAgent1}, {"agent-2", kAgent2}}, beta_task(), mock, std::nullopt, {}, quiet());
  const auto& p = std::get<BetaParams>(rec.final_prior);
  EXPECT_NEAR(p.a(), 1.55, 1e-15);
  EXPECT_NEAR(p.b(), 1.70, 1e-15);
  EXPECT_NEAR(p.mean(), 0.477, 5e-4);
}

TEST(Pipeline, SingleAgentAndOrderInvariance) {
  const auto mock = reported_mock();
  const auto one = run_pipeline({{"agent-1", kAgent1}}, beta_task(), mock, std::nullopt, {}, quiet());
  EXPECT_EQ(std::get<BetaParams>(one.final_prior).a(), 1.6);
  const auto ab = run_pipeline({{"x", kAgent1}, {"y", kAgent2}}, beta_task(), mock, std::vector<double>{0.3, 0.7}, {}, quiet());
  const auto ba = run_pipeline({{"y", kAgent2}, {"x", kAgent1}}, beta_task(), mock, std::vector<double>{0.3, 0.7}, {}, quiet());
  EXPECT_EQ(to_json(ab.final_prior), to_json(ba.final_prior));
  EXPECT_NEAR(std::get<BetaParams>(ab.final_prior).a(), 0.3 * 1.6 + 0.7 * 1.5, 1e-15);
}

TEST(Pipeline, FailureIsAttributedToAgent) {
  const auto mock = reported_mock();
  try {
    run_pipeline({{"agent-1", kAgent1}, {"stranger", "an unknown context"}}, beta_task(), mock, std::nullopt, {}, quiet());
    FAIL();
  } catch (const AgentFailure& e) {
    EXPECT_EQ(e.agent_id(), "stranger");
    EXPECT_THROW(std::rethrow_exception(e.cause()), BackendError);
  }
  EXPECT_THROW(run_pipeline({}, beta_task(), mock), std::invalid_argument);
}

TEST(Http, TransportMatchesInProcessRun) {
  const auto mock = reported_mock();
  const auto local = run_pipeline({{"agent-1", kAgent1}, {"agent-2", kAgent2}}, beta_task("task2"), mock, std::nullopt, {}, quiet());

  FedServer srv(quiet());
  FedHttpServer http(srv);
  const int port = http.start();
  const FedClient client("http://127.0.0.1:" + std::to_string(port));
  EXPECT_EQ(client.open_task(beta_task("task2")), "task2");
  const TaskSpec spec = client.get_task("task2");
  for (const auto& [id, text] : {std::pair{"agent-2", kAgent2}, std::pair{"agent-1", kAgent1}})
    EXPECT_TRUE(client.submit(agent_run(spec.context(text), spec, mock, id)).accepted);
  const json remote = client.aggregate_json("task2", true);
  EXPECT_EQ(record_without_timestamps(remote).dump(), record_without_timestamps(to_json(local)).dump());
  http.stop();
}

TEST(Http, ErrorsMapToFedErrors) {
  FedServer srv(quiet());
  FedHttpServer http(srv);
  const int port = http.start();
  const std::string url = "http://127.0.0.1:" + std::to_string(port);
  auto spec = beta_task("secured");
  spec.token = "abc";
  FedClient(url, "abc").open_task(spec);
  auto kind_of = [](auto&& f) {
    try {
      f();
    } catch (const FedError& e) {
      return e.kind();
    }
    return FedErrorKind::transport;
  };
  EXPECT_EQ(kind_of([&] { FedClient(url).get_task("nope"); }), FedErrorKind::unknown_task);
  EXPECT_EQ(kind_of([&] { FedClient(url, "abc").open_task(spec); }), FedErrorKind::duplicate_task);
  EXPECT_EQ(kind_of([&] { FedClient(url, "bad").submit(submission("a", "secured", BetaParams(1, 1))); }), FedErrorKind::unauthorized);
  EXPECT_EQ(kind_of([&] { FedClient(url, "abc").aggregate("secured"); }), FedErrorKind::no_submissions);
  EXPECT_EQ(kind_of([&] { FedClient(url, "abc").submit(submission("a", "secured", Gmm::scalar({1.0}, {0}, {1}))); }),
            FedErrorKind::invalid_submission);
  EXPECT_FALSE(FedClient(url).get_task("secured").token.size());

  httplib::Client raw("127.0.0.1", port);
  auto res = raw.Post("/tasks", "{not json", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  http.stop();
  EXPECT_EQ(kind_of([&] { FedClient(url).get_task("secured"); }), FedErrorKind::transport);
}

TEST(Http, EightConcurrentAgentsAccepted) {
  FedServer srv(quiet());
  FedHttpServer http(srv);
  const int port = http.start();
  const std::string url = "http://127.0.0.1:" + std::to_string(port);
  FedClient(url).open_task(gmm_task("many", 2));
  std::vector<std::future<SubmitResult>> fs;
  for (int i = 0; i < 8; ++i) {
    fs.push_back(std::async(std::launch::async, [&url, i] {
      return FedClient(url).submit(submission("agent-" + std::to_string(i), "many",
                                              Gmm::scalar({0.4, 0.6}, {55.0 + i, 80.0 - i}, {6, 6})));
    }));
  }
  for (auto& f : fs) EXPECT_TRUE(f.get().accepted);
  const auto rec = FedClient(url).aggregate("many");
  EXPECT_EQ(rec.submissions.size(), 8u);
  http.stop();
}
