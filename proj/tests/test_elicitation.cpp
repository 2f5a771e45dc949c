#include "llmprior/backends.hpp"
#include "llmprior/elicitation.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <mutex>

using namespace llmprior;

namespace {

const char* kFair = "The coin is believed to be fair. I am quite confident in this belief.";

/// Scripted backend that records every prompt it receives.
class ScriptedBackend final : public LlmBackend {
 public:
  explicit ScriptedBackend(std::vector<std::string> replies) : replies_(std::move(replies)) {}
  LlmResponse complete(const LlmRequest& r) const override {
    std::lock_guard g(m_);
    prompts_.push_back(r.prompt);
    return {replies_.at(std::min(r.attempt, replies_.size() - 1)), "scripted"};
  }
  std::string id() const override { return "scripted"; }
  std::vector<std::string> prompts() const {
    std::lock_guard g(m_);
    return prompts_;
  }

 private:
  std::vector<std::string> replies_;
  mutable std::mutex m_;
  mutable std::vector<std::string> prompts_;
};

json corrupted_cases() { return json::parse(read_text_file(LLMPRIOR_TEST_DATA "/corrupted_outputs.json")); }

}  // namespace

TEST(Prompt, CoinTemplateRendersVerbatim) {
  const std::string expected =
      "\nYou are an expert statistician. Your task is to elicit a prior \n"
      "distribution for the bias of a coin, theta, which lies in the range \n"
      "[0, 1]. The appropriate prior is a Beta(a, b) distribution. Based on \n"
      "the following context, determine the most appropriate hyperparameters \n"
      "'a' and 'b'. Your response MUST be a valid JSON object with two keys: \n"
      "\"a\" and \"b\", with positive numerical values. Do not include any other \n"
      "text, explanations, or markdown formatting.\n\n"
      "CONTEXT: \"The coin is believed to be fair. I am quite confident in this belief.\"\n";
  EXPECT_EQ(render_prompt(coin_beta_template(), {kFair, Family::beta}), expected);
}

TEST(Prompt, GeyserTemplateKeepsLineBreaks) {
  const std::string p = render_prompt(geyser_gmm_template(), {"CTX", Family::gmm, 2, 1});
  EXPECT_TRUE(p.starts_with("\nYou are an expert statistician. Your task is to elicit a prior distribution \n"));
  EXPECT_NE(p.find("\"weights\", \"means\", \nand \"std_devs\"."), std::string::npos);
  EXPECT_TRUE(p.ends_with("CONTEXT: \"CTX\"\n"));
}

TEST(Prompt, GeneralTemplateMentionsShape) {
  const auto t = general_gmm_template(3, 2);
  EXPECT_EQ(t.family, Family::gmm);
  EXPECT_NE(t.text.find("3-component"), std::string::npos);
  EXPECT_NE(t.text.find("2x2"), std::string::npos);
  EXPECT_NE(t.text.find("chol_factors"), std::string::npos);
  EXPECT_EQ(default_template({"x", Family::gmm, 3, 2}).id, "gmm-general");
  EXPECT_EQ(default_template({"x", Family::gmm, 2, 1}).id, "geyser-gmm");
  EXPECT_EQ(default_template({"x", Family::beta}).id, "coin-beta");
}

TEST(Prompt, Errors) {
  EXPECT_THROW(render_prompt(coin_beta_template(), {"", Family::beta}), std::invalid_argument);
  EXPECT_THROW(render_prompt(coin_beta_template(), {"x", Family::gmm}), std::invalid_argument);
  EXPECT_THROW(render_prompt({"custom", Family::beta, "no placeholder"}, {"x", Family::beta}), std::invalid_argument);
  EXPECT_THROW(template_by_id("nope"), std::invalid_argument);
}

TEST(Extract, AcceptsPlainAndFencedJson) {
  for (const char* raw : {"{\"a\": 2, \"b\": 3}", "  {\"a\": 2, \"b\": 3}\n", "```json\n{\"a\": 2, \"b\": 3}\n```",
                          "```\n{\"a\": 2, \"b\": 3}\n```", "```JSON\n{\"a\": 2, \"b\": 3}```"}) {
    auto v = extract_and_validate(raw, Family::beta);
    ASSERT_TRUE(std::holds_alternative<Prior>(v)) << raw;
    EXPECT_EQ(std::get<BetaParams>(std::get<Prior>(v)).b(), 3.0);
  }
}

TEST(Validate, GeyserResponse) {
  auto v = extract_and_validate(R"({"weights": [0.4, 0.6], "means": [55.0, 80.0], "std_devs": [6.0, 6.0]})", Family::gmm, {2, 1});
  ASSERT_TRUE(std::holds_alternative<Prior>(v));
  const auto& g = std::get<Gmm>(std::get<Prior>(v));
  EXPECT_EQ(g.weights()[0], 0.4);
  EXPECT_EQ(g.component(1).mean()[0], 80.0);
  EXPECT_EQ(g.component(1).chol_factor()(0, 0), 6.0);
}

TEST(Validate, WeightLogitsAreSoftmaxed) {
  auto v = extract_and_validate(R"({"weight_logits": [0, 0, 1000], "means": [1, 2, 3], "std_devs": [1, 1, 1]})", Family::gmm, {3, 1});
  ASSERT_TRUE(std::holds_alternative<Prior>(v));
  const auto& g = std::get<Gmm>(std::get<Prior>(v));
  EXPECT_NEAR(g.weights()[2], 1.0, 1e-15);
  const auto sm = softmax_weights({std::log(1.0), std::log(3.0)});
  EXPECT_NEAR(sm[0], 0.25, 1e-15);
}

TEST(Validate, WeightsNearOneAreRescaled) {
  auto v = extract_and_validate(R"({"weights": [0.3333333, 0.6666667], "means": [0, 1], "std_devs": [1, 1]})", Family::gmm, {2, 1});
  ASSERT_TRUE(std::holds_alternative<Prior>(v));
}

TEST(Validate, BivariateCholeskySchema) {
  auto v = extract_and_validate(
      R"({"weights": [0.5, 0.5], "means": [[0, 0], [1, 1]], "chol_factors": [[[1, 0], [0.5, 1]], [[2, 0], [0, 1]]]})",
      Family::gmm, {2, 2});
  ASSERT_TRUE(std::holds_alternative<Prior>(v));
  EXPECT_EQ(std::get<Gmm>(std::get<Prior>(v)).component(0).chol_factor()(1, 0), 0.5);
  auto missing = extract_and_validate(R"({"weights": [1], "means": [[0, 0]], "std_devs": [1]})", Family::gmm, {1, 2});
  ASSERT_TRUE(std::holds_alternative<ValidationFailure>(missing));
  EXPECT_EQ(std::get<ValidationFailure>(missing).kind, FailureKind::missing_key);
  EXPECT_EQ(std::get<ValidationFailure>(missing).field, "chol_factors");
}

TEST(Validate, CorruptedFixturesProduceTypedFailures) {
  const json cases = corrupted_cases();
  ASSERT_EQ(cases.size(), 20u);
  for (const auto& c : cases) {
    const Family fam = family_from_string(c["family"].get<std::string>());
    const MixtureShape shape{c.value("components", std::size_t{0}), c.value("dimension", std::size_t{1})};
    auto v = extract_and_validate(c["text"].get<std::string>(), fam, shape);
    ASSERT_TRUE(std::holds_alternative<ValidationFailure>(v)) << c["name"];
    const auto& f = std::get<ValidationFailure>(v);
    EXPECT_EQ(std::string(to_string(f.kind)), c["kind"].get<std::string>()) << c["name"] << ": " << f.message();
    EXPECT_EQ(f.field, c["field"].get<std::string>()) << c["name"] << ": " << f.message();
  }
}

TEST(Validate, WeightSumMessageNamesTheSum) {
  auto v = extract_and_validate(R"({"weights": [0.3, 0.5], "means": [55, 80], "std_devs": [6, 6]})", Family::gmm, {2, 1});
  EXPECT_NE(std::get<ValidationFailure>(v).message().find("0.8"), std::string::npos);
}

TEST(Elicit, FirstValidResponse) {
  ScriptedBackend b({R"({"a": 5.00, "b": 5.00})"});
  const auto r = elicit({kFair, Family::beta}, b);
  EXPECT_EQ(std::get<BetaParams>(r.prior).a(), 5.0);
  EXPECT_EQ(r.provenance.attempts, 1u);
  EXPECT_EQ(r.provenance.model, "scripted");
  ASSERT_EQ(r.raw_outputs.size(), 1u);
  EXPECT_EQ(r.raw().text, R"({"a": 5.00, "b": 5.00})");
}

TEST(Elicit, RetryWithFeedbackRecovers) {
  ScriptedBackend b({"Sure, here it is: a=5, b=5", R"({"a": -5, "b": 5})", R"({"a": 5, "b": 5})"});
  const auto r = elicit({kFair, Family::beta}, b);
  EXPECT_EQ(r.provenance.attempts, 3u);
  ASSERT_EQ(r.raw_outputs.size(), 3u);
  EXPECT_EQ(r.raw_outputs[0].failure->kind, FailureKind::malformed_json);
  EXPECT_EQ(r.raw_outputs[1].failure->kind, FailureKind::constraint_violation);
  EXPECT_FALSE(r.raw_outputs[2].failure);
  const auto prompts = b.prompts();
  ASSERT_EQ(prompts.size(), 3u);
  const std::string base = render_prompt(coin_beta_template(), {kFair, Family::beta});
  EXPECT_EQ(prompts[0], base);
  EXPECT_TRUE(prompts[1].starts_with(base));
  EXPECT_NE(prompts[1].find("MalformedJson"), std::string::npos);
  EXPECT_NE(prompts[2].find("ConstraintViolation at 'a'"), std::string::npos);
}

TEST(Elicit, ExhaustedRetriesKeepsEveryOutput) {
  ScriptedBackend b({"nope"});
  try {
    elicit({kFair, Family::beta}, b, RetryPolicy{4});
    FAIL();
  } catch (const ExhaustedRetries& e) {
    EXPECT_EQ(e.outputs().size(), 4u);
    EXPECT_EQ(e.last_failure().kind, FailureKind::malformed_json);
  }
  EXPECT_THROW(elicit({kFair, Family::beta}, b, RetryPolicy{0}), std::invalid_argument);
}

TEST(Elicit, EveryCorruptedFixtureRecoversOnLaterAttempt) {
  for (const auto& c : corrupted_cases()) {
    const Family fam = family_from_string(c["family"].get<std::string>());
    const std::size_t k = c.value("components", std::size_t{2}), d = c.value("dimension", std::size_t{1});
    std::string good = fam == Family::beta ? R"({"a": 2, "b": 3})"
                       : d == 1           ? R"({"weights": [0.4, 0.6], "means": [55, 80], "std_devs": [6, 6]})"
                                          : R"({"weights": [0.5, 0.5], "means": [[0, 0], [1, 1]], "chol_factors": [[[1, 0], [0, 1]], [[1, 0], [0, 1]]]})";
    ScriptedBackend b({c["text"].get<std::string>(), good});
    const auto r = elicit({"ctx", fam, k, d}, b);
    EXPECT_EQ(r.provenance.attempts, 2u) << c["name"];
    EXPECT_EQ(std::string(to_string(r.raw_outputs[0].failure->kind)), c["kind"].get<std::string>());
  }
}

TEST(Elicit, BackendErrorsPropagate) {
  MockBackend empty(json{{"responses", json::object()}});
  EXPECT_THROW(elicit({kFair, Family::beta}, empty), BackendError);
}

TEST(Elicit, ResultJson) {
  ScriptedBackend b({"bad", R"({"a": 1, "b": 1})"});
  const json j = to_json(elicit({kFair, Family::beta}, b));
  EXPECT_EQ(j["prior"]["family"], "beta");
  EXPECT_EQ(j["provenance"]["attempts"], 2);
  EXPECT_EQ(j["raw_outputs"][0]["failure"]["kind"], "MalformedJson");
  EXPECT_EQ(provenance_from_json(j["provenance"]).backend, "scripted");
}
