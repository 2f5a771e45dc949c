#pragma once

#include "llmprior/distributions.hpp"
#include "llmprior/serialization.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace llmprior {

// ---------------------------------------------------------------------------
// Context and prompt templates
// ---------------------------------------------------------------------------

/// Free-form text to elicit a prior from, plus the family (and mixture shape) wanted.
struct Context {
  std::string text;
  Family family = Family::beta;
  std::size_t components = 2;  ///< K, gmm only
  std::size_t dimension = 1;   ///< d, gmm only
};

struct PromptTemplate {
  std::string id;
  Family family;
  std::string text;  ///< contains the placeholder {context_text}

  static constexpr std::string_view placeholder = "{context_text}";
};

/// Beta(a, b) prior for a coin's bias.
inline PromptTemplate coin_beta_template() {
  return {"coin-beta", Family::beta,
          "\n"
          "You are an expert statistician. Your task is to elicit a prior \n"
          "distribution for the bias of a coin, theta, which lies in the range \n"
          "[0, 1]. The appropriate prior is a Beta(a, b) distribution. Based on \n"
          "the following context, determine the most appropriate hyperparameters \n"
          "'a' and 'b'. Your response MUST be a valid JSON object with two keys: \n"
          "\"a\" and \"b\", with positive numerical values. Do not include any other \n"
          "text, explanations, or markdown formatting.\n"
          "\n"
          "CONTEXT: \"{context_text}\"\n"};
}

/// Two-component 1-D mixture for geyser waiting times.
inline PromptTemplate geyser_gmm_template() {
  return {"geyser-gmm", Family::gmm,
          "\n"
          "You are an expert statistician. Your task is to elicit a prior distribution \n"
          "for the waiting time of a geyser eruption. The appropriate prior is a 2-component \n"
          "Gaussian Mixture Model (GMM). Based on the following context, determine the most \n"
          "appropriate parameters for this GMM. The parameters are: the mixture weights (a list \n"
          "of 2 floats that sum to 1), the means (a list of 2 floats), and the standard \n"
          "deviations (a list of 2 positive floats).\n"
          "\n"
          "Your response MUST be a valid JSON object with three keys: \"weights\", \"means\", \n"
          "and \"std_devs\". Do not include any other text, explanations, or markdown formatting.\n"
          "\n"
          "CONTEXT: \"{context_text}\"\n"};
}

/// K-component mixture over R^d using the Cholesky schema.
inline PromptTemplate general_gmm_template(std::size_t k, std::size_t d, std::string_view variable = "the quantity of interest") {
  const std::string ks = std::to_string(k), ds = std::to_string(d);
  std::string t =
      "\nYou are an expert statistician. Your task is to elicit a prior distribution for " + std::string(variable) +
      ", a " + ds + "-dimensional real vector. The appropriate prior is a " + ks +
      "-component Gaussian Mixture Model (GMM). Based on the following context, determine the most appropriate "
      "parameters for this GMM: the mixture weights (a list of " + ks +
      " floats that sum to 1), the means (a list of " + ks + " lists of " + ds +
      " floats), and the Cholesky factors of the covariances (a list of " + ks + " lower-triangular " + ds + "x" + ds +
      " matrices, given as lists of rows, with positive diagonal entries and zeros above the diagonal).\n\n"
      "Your response MUST be a valid JSON object with three keys: \"weights\", \"means\", and \"chol_factors\". "
      "Do not include any other text, explanations, or markdown formatting.\n\n"
      "CONTEXT: \"{context_text}\"\n";
  return {"gmm-general", Family::gmm, std::move(t)};
}

/// Built-in templates by id: "coin-beta", "geyser-gmm", "gmm-general".
inline PromptTemplate template_by_id(std::string_view id, std::size_t k = 2, std::size_t d = 1) {
  if (id == "coin-beta") return coin_beta_template();
  if (id == "geyser-gmm") return geyser_gmm_template();
  if (id == "gmm-general") return general_gmm_template(k, d);
  throw std::invalid_argument("unknown prompt template '" + std::string(id) + "'");
}

inline PromptTemplate default_template(const Context& c) {
  if (c.family == Family::beta) return coin_beta_template();
  if (c.dimension == 1 && c.components == 2) return geyser_gmm_template();
  return general_gmm_template(c.components, c.dimension);
}

/// Substitutes the context text for the placeholder; nothing else changes.
inline std::string render_prompt(const PromptTemplate& t, const Context& c) {
  if (t.family != c.family) throw std::invalid_argument("prompt template family does not match the context family");
  if (c.text.empty()) throw std::invalid_argument("context text must be non-empty");
  const auto pos = t.text.find(PromptTemplate::placeholder);
  if (pos == std::string::npos) throw std::invalid_argument("prompt template has no {context_text} placeholder");
  std::string out = t.text;
  out.replace(pos, PromptTemplate::placeholder.size(), c.text);
  return out;
}

// ---------------------------------------------------------------------------
// Extraction and validation
// ---------------------------------------------------------------------------

enum class FailureKind { malformed_json, missing_key, unexpected_key, constraint_violation, length_mismatch };

inline std::string_view to_string(FailureKind k) {
  switch (k) {
    case FailureKind::malformed_json: return "MalformedJson";
    case FailureKind::missing_key: return "MissingKey";
    case FailureKind::unexpected_key: return "UnexpectedKey";
    case FailureKind::constraint_violation: return "ConstraintViolation";
    case FailureKind::length_mismatch: return "LengthMismatch";
  }
  return "?";
}

struct ValidationFailure {
  FailureKind kind;
  std::string field;  ///< offending key or element path, e.g. "weights" or "std_devs[1]"
  std::string detail;

  std::string message() const {
    std::string m(to_string(kind));
    if (!field.empty()) m += " at '" + field + "'";
    if (!detail.empty()) m += ": " + detail;
    return m;
  }
};

/// Expected mixture shape; a zero means "any".
struct MixtureShape {
  std::size_t components = 0;
  std::size_t dimension = 1;
};

using Validated = std::variant<Prior, ValidationFailure>;

/// Max-subtracted softmax.
inline std::vector<double> softmax_weights(const std::vector<double>& raw) {
  if (raw.empty()) throw std::invalid_argument("softmax of an empty vector");
  const double m = *std::max_element(raw.begin(), raw.end());
  std::vector<double> out(raw.size());
  double s = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) s += out[i] = std::exp(raw[i] - m);
  for (double& v : out) v /= s;
  return out;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  auto ws = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  while (!s.empty() && ws(s.front())) s.remove_prefix(1);
  while (!s.empty() && ws(s.back())) s.remove_suffix(1);
  return s;
}

inline ValidationFailure fail(FailureKind k, std::string field, std::string detail) {
  return {k, std::move(field), std::move(detail)};
}

}  // namespace detail

/// Strict JSON object extraction: surrounding whitespace and one markdown code fence
/// are tolerated, nothing else.
inline std::variant<json, ValidationFailure> extract_json_object(std::string_view raw) {
  using detail::fail;
  std::string_view s = detail::trim(raw);
  if (s.starts_with("```")) {
    const auto nl = s.find('\n');
    if (nl == std::string_view::npos) return fail(FailureKind::malformed_json, "", "unterminated code fence");
    std::string lang(detail::trim(s.substr(3, nl - 3)));
    std::transform(lang.begin(), lang.end(), lang.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (!lang.empty() && lang != "json") return fail(FailureKind::malformed_json, "", "code fence is not JSON");
    s.remove_prefix(nl + 1);
    s = detail::trim(s);
    if (!s.ends_with("```")) return fail(FailureKind::malformed_json, "", "unterminated code fence");
    s.remove_suffix(3);
    s = detail::trim(s);
  }
  json j = json::parse(s.begin(), s.end(), nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) return fail(FailureKind::malformed_json, "", "response is not valid JSON");
  if (!j.is_object()) return fail(FailureKind::malformed_json, "", "response is not a JSON object");
  return j;
}

namespace detail {

inline std::optional<ValidationFailure> check_keys(const json& j, std::initializer_list<std::string_view> required,
                                                   std::initializer_list<std::string_view> allowed_extra = {}) {
  for (auto k : required) {
    if (!j.contains(std::string(k))) return fail(FailureKind::missing_key, std::string(k), "required key is missing");
  }
  for (const auto& [k, v] : j.items()) {
    const bool known = std::find(required.begin(), required.end(), k) != required.end() ||
                       std::find(allowed_extra.begin(), allowed_extra.end(), k) != allowed_extra.end();
    if (!known) return fail(FailureKind::unexpected_key, k, "key is not part of the schema");
  }
  return std::nullopt;
}

inline std::variant<double, ValidationFailure> finite_number(const json& j, const std::string& field) {
  if (!j.is_number()) return fail(FailureKind::constraint_violation, field, "must be a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) return fail(FailureKind::constraint_violation, field, "must be finite");
  return v;
}

inline std::variant<std::vector<double>, ValidationFailure> number_list(const json& j, const std::string& field) {
  if (!j.is_array()) return fail(FailureKind::constraint_violation, field, "must be a list of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    auto v = finite_number(j[i], field + "[" + std::to_string(i) + "]");
    if (auto* f = std::get_if<ValidationFailure>(&v)) return *f;
    out.push_back(std::get<double>(v));
  }
  return out;
}

inline std::string fmt_num(double v) { return format_double(v); }

inline Validated validate_beta(const json& j) {
  if (auto f = check_keys(j, {"a", "b"})) return *f;
  double ab[2];
  const char* names[2] = {"a", "b"};
  for (int i = 0; i < 2; ++i) {
    auto v = finite_number(j[names[i]], names[i]);
    if (auto* f = std::get_if<ValidationFailure>(&v)) return *f;
    ab[i] = std::get<double>(v);
    if (!(ab[i] > 0.0))
      return fail(FailureKind::constraint_violation, names[i], "must be positive (got " + fmt_num(ab[i]) + ")");
  }
  return Prior{BetaParams(ab[0], ab[1])};
}

inline std::variant<std::vector<double>, ValidationFailure> validated_weights(const json& j, std::size_t k) {
  const bool logits = j.contains("weight_logits");
  const std::string field = logits ? "weight_logits" : "weights";
  auto raw = number_list(j[field], field);
  if (auto* f = std::get_if<ValidationFailure>(&raw)) return *f;
  auto w = std::get<std::vector<double>>(std::move(raw));
  if (w.empty()) return fail(FailureKind::length_mismatch, field, "at least one component is required");
  if (k != 0 && w.size() != k)
    return fail(FailureKind::length_mismatch, field, "expected " + std::to_string(k) + " components, got " + std::to_string(w.size()));
  if (logits) return softmax_weights(w);
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] < 0.0) return fail(FailureKind::constraint_violation, field + "[" + std::to_string(i) + "]", "must be nonnegative");
    s += w[i];
  }
  if (std::abs(s - 1.0) > 1e-6) return fail(FailureKind::constraint_violation, field, "must sum to 1 (sum is " + fmt_num(s) + ")");
  for (double& v : w) v /= s;
  return w;
}

inline Validated validate_gmm(const json& j, const MixtureShape& shape) {
  const bool logits = j.contains("weight_logits");
  if (logits && j.contains("weights")) return fail(FailureKind::unexpected_key, "weight_logits", "give either weights or weight_logits");
  const std::string_view wkey = logits ? "weight_logits" : "weights";
  const bool chol_schema = j.contains("chol_factors") || shape.dimension != 1;
  std::optional<ValidationFailure> kf;
  if (chol_schema) {
    kf = check_keys(j, {wkey, "means", "chol_factors"});
  } else {
    kf = check_keys(j, {wkey, "means", "std_devs"});
  }
  if (kf) return *kf;

  auto wv = validated_weights(j, shape.components);
  if (auto* f = std::get_if<ValidationFailure>(&wv)) return *f;
  const auto weights = std::get<std::vector<double>>(std::move(wv));
  const std::size_t k = weights.size();

  std::vector<GaussianComponent> comps;
  if (!chol_schema) {
    auto mv = number_list(j["means"], "means");
    if (auto* f = std::get_if<ValidationFailure>(&mv)) return *f;
    auto sv = number_list(j["std_devs"], "std_devs");
    if (auto* f = std::get_if<ValidationFailure>(&sv)) return *f;
    const auto& means = std::get<std::vector<double>>(mv);
    const auto& sds = std::get<std::vector<double>>(sv);
    if (means.size() != k) return fail(FailureKind::length_mismatch, "means", "expected " + std::to_string(k) + " entries, got " + std::to_string(means.size()));
    if (sds.size() != k) return fail(FailureKind::length_mismatch, "std_devs", "expected " + std::to_string(k) + " entries, got " + std::to_string(sds.size()));
    for (std::size_t i = 0; i < k; ++i) {
      if (!(sds[i] > 0.0))
        return fail(FailureKind::constraint_violation, "std_devs[" + std::to_string(i) + "]", "must be positive (got " + fmt_num(sds[i]) + ")");
      comps.push_back(GaussianComponent::scalar(means[i], sds[i]));
    }
  } else {
    const auto d = static_cast<Eigen::Index>(shape.dimension);
    const json& means = j["means"];
    const json& chols = j["chol_factors"];
    if (!means.is_array()) return fail(FailureKind::constraint_violation, "means", "must be a list of mean vectors");
    if (!chols.is_array()) return fail(FailureKind::constraint_violation, "chol_factors", "must be a list of matrices");
    if (means.size() != k) return fail(FailureKind::length_mismatch, "means", "expected " + std::to_string(k) + " entries, got " + std::to_string(means.size()));
    if (chols.size() != k) return fail(FailureKind::length_mismatch, "chol_factors", "expected " + std::to_string(k) + " entries, got " + std::to_string(chols.size()));
    for (std::size_t c = 0; c < k; ++c) {
      const std::string mf = "means[" + std::to_string(c) + "]";
      const std::string lf = "chol_factors[" + std::to_string(c) + "]";
      json mj = means[c].is_number() ? json::array({means[c]}) : means[c];
      auto mv = number_list(mj, mf);
      if (auto* f = std::get_if<ValidationFailure>(&mv)) return *f;
      const auto& m = std::get<std::vector<double>>(mv);
      if (static_cast<Eigen::Index>(m.size()) != d) return fail(FailureKind::length_mismatch, mf, "expected dimension " + std::to_string(d));
      json lj = chols[c].is_number() ? json::array({json::array({chols[c]})}) : chols[c];
      if (!lj.is_array() || static_cast<Eigen::Index>(lj.size()) != d)
        return fail(FailureKind::length_mismatch, lf, "expected a " + std::to_string(d) + "x" + std::to_string(d) + " matrix");
      Matrix l(d, d);
      for (Eigen::Index r = 0; r < d; ++r) {
        const std::string rf = lf + "[" + std::to_string(r) + "]";
        auto rv = number_list(lj[static_cast<std::size_t>(r)], rf);
        if (auto* f = std::get_if<ValidationFailure>(&rv)) return *f;
        const auto& row = std::get<std::vector<double>>(rv);
        if (static_cast<Eigen::Index>(row.size()) != d) return fail(FailureKind::length_mismatch, rf, "expected " + std::to_string(d) + " entries");
        for (Eigen::Index s = 0; s < d; ++s) {
          const double v = row[static_cast<std::size_t>(s)];
          const std::string ef = rf + "[" + std::to_string(s) + "]";
          if (s > r && v != 0.0) return fail(FailureKind::constraint_violation, ef, "entries above the diagonal must be zero");
          if (s == r && !(v > 0.0)) return fail(FailureKind::constraint_violation, ef, "diagonal entries must be positive");
          l(r, s) = v;
        }
      }
      Vector mean(d);
      for (Eigen::Index i = 0; i < d; ++i) mean[i] = m[static_cast<std::size_t>(i)];
      comps.emplace_back(std::move(mean), std::move(l));
    }
  }
  return Prior{Gmm(weights, std::move(comps))};
}

}  // namespace detail

/// Parses a raw model response and checks it against the family's schema. Every
/// failure is typed and names the offending field; nothing is silently coerced
/// except mixture weights within 1e-6 of summing to one, which are rescaled.
inline Validated extract_and_validate(std::string_view raw, Family family, const MixtureShape& shape = {}) {
  auto parsed = extract_json_object(raw);
  if (auto* f = std::get_if<ValidationFailure>(&parsed)) return *f;
  const json& j = std::get<json>(parsed);
  return family == Family::beta ? detail::validate_beta(j) : detail::validate_gmm(j, shape);
}

// ---------------------------------------------------------------------------
// Backends and the elicitation loop
// ---------------------------------------------------------------------------

struct LlmRequest {
  std::string prompt;
  std::string context_text;
  std::size_t attempt = 0;  ///< zero-based
};

struct LlmResponse {
  std::string text;
  std::string model;
};

/// Thrown when a backend cannot produce a response at all.
class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A chat-completion style text generator. Implementations must be safe to call
/// concurrently.
class LlmBackend {
 public:
  virtual ~LlmBackend() = default;
  virtual LlmResponse complete(const LlmRequest& request) const = 0;
  virtual std::string id() const = 0;
};

struct RetryPolicy {
  std::size_t max_attempts = 3;
};

/// One model response, stored verbatim.
struct RawLlmOutput {
  std::string text;
  std::optional<ValidationFailure> failure;  ///< empty when the response validated
};

struct Provenance {
  std::string backend;
  std::string model;
  std::size_t attempts = 0;
};

struct ElicitationResult {
  Prior prior;
  Provenance provenance;
  std::vector<RawLlmOutput> raw_outputs;  ///< every attempt, in order; the last one produced `prior`

  const RawLlmOutput& raw() const { return raw_outputs.back(); }
};

class ExhaustedRetries : public std::runtime_error {
 public:
  ExhaustedRetries(ValidationFailure last, std::vector<RawLlmOutput> outputs)
      : std::runtime_error("no valid response after " + std::to_string(outputs.size()) + " attempts; last failure: " +
                           last.message()),
        last_(std::move(last)),
        outputs_(std::move(outputs)) {}

  const ValidationFailure& last_failure() const noexcept { return last_; }
  const std::vector<RawLlmOutput>& outputs() const noexcept { return outputs_; }

 private:
  ValidationFailure last_;
  std::vector<RawLlmOutput> outputs_;
};

inline std::string retry_feedback(const ValidationFailure& f) {
  return "Your previous response was invalid because: " + f.message() + ". Respond with ONLY the JSON object.";
}

/// Renders the prompt, queries the backend and validates the answer, retrying with
/// the failure reason appended until the policy's attempt budget is spent.
inline ElicitationResult elicit(const Context& c, const LlmBackend& backend, const RetryPolicy& policy = {},
                                const std::optional<PromptTemplate>& tmpl = std::nullopt) {
  if (policy.max_attempts < 1) throw std::invalid_argument("retry policy needs at least one attempt");
  if (c.family == Family::gmm && (c.components < 1 || c.dimension < 1))
    throw std::invalid_argument("mixture contexts need K >= 1 and d >= 1");
  const std::string base = render_prompt(tmpl ? *tmpl : default_template(c), c);
  const MixtureShape shape{c.components, c.dimension};

  std::vector<RawLlmOutput> outputs;
  std::string prompt = base;
  std::string model;
  for (std::size_t attempt = 0; attempt < policy.max_attempts; ++attempt) {
    LlmResponse resp = backend.complete({prompt, c.text, attempt});
    model = resp.model;
    auto v = extract_and_validate(resp.text, c.family, shape);
    if (auto* p = std::get_if<Prior>(&v)) {
      outputs.push_back({std::move(resp.text), std::nullopt});
      return {std::move(*p), {backend.id(), model, attempt + 1}, std::move(outputs)};
    }
    const auto& f = std::get<ValidationFailure>(v);
    outputs.push_back({std::move(resp.text), f});
    prompt = base + "\n" + retry_feedback(f) + "\n";
  }
  ValidationFailure last = *outputs.back().failure;
  throw ExhaustedRetries(std::move(last), std::move(outputs));
}

inline json to_json(const ValidationFailure& f) {
  return {{"kind", std::string(to_string(f.kind))}, {"field", f.field}, {"detail", f.detail}};
}

inline json to_json(const Provenance& p) {
  return {{"backend", p.backend}, {"model", p.model}, {"attempts", p.attempts}};
}

inline Provenance provenance_from_json(const json& j) {
  Provenance p;
  p.backend = j.value("backend", "");
  p.model = j.value("model", "");
  p.attempts = j.value("attempts", std::size_t{0});
  return p;
}

inline json to_json(const ElicitationResult& r) {
  json raw = json::array();
  for (const auto& o : r.raw_outputs) {
    json e{{"text", o.text}};
    e["failure"] = o.failure ? to_json(*o.failure) : json(nullptr);
    raw.push_back(std::move(e));
  }
  return {{"prior", to_json(r.prior)}, {"provenance", to_json(r.provenance)}, {"raw_outputs", raw}};
}

}  // namespace llmprior
