#pragma once

#include "llmprior/elicitation.hpp"

#include <httplib.h>

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace llmprior {

/// 64-bit FNV-1a, rendered as "fnv1a64:<16 hex digits>".
inline std::string context_hash(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "fnv1a64:%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::ios_base::failure("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Replays canned responses. The fixture maps a key to an ordered list of responses;
/// a key is the exact prompt, the exact context text, or context_hash(context text).
/// Attempt i receives response i (the last one repeats). Pure in (prompt, attempt).
///
///   {"model": "reported", "responses": {"<key>": ["{\"a\": 1.0, \"b\": 1.0}"]}}
class MockBackend final : public LlmBackend {
 public:
  explicit MockBackend(const json& fixture, std::string source = "inline") : source_(std::move(source)) {
    model_ = fixture.value("model", "mock");
    const json& r = fixture.contains("responses") ? fixture.at("responses") : fixture;
    if (!r.is_object()) throw std::invalid_argument("mock fixture 'responses' must be an object");
    for (const auto& [key, list] : r.items()) {
      if (key == "model") continue;
      std::vector<std::string> texts;
      auto add = [&](const json& v) { texts.push_back(v.is_string() ? v.get<std::string>() : v.dump()); };
      if (list.is_array()) {
        for (const auto& v : list) add(v);
      } else {
        add(list);
      }
      if (texts.empty()) throw std::invalid_argument("mock fixture entry '" + key + "' has no responses");
      table_.emplace(key, std::move(texts));
    }
  }

  static MockBackend from_file(const std::string& path) {
    json j = json::parse(read_text_file(path), nullptr, false);
    if (j.is_discarded()) throw std::invalid_argument("mock fixture '" + path + "' is not valid JSON");
    return MockBackend(j, path);
  }

  LlmResponse complete(const LlmRequest& req) const override {
    const std::vector<std::string>* hit = nullptr;
    for (const std::string& key : {req.prompt, req.context_text, context_hash(req.context_text)}) {
      if (auto it = table_.find(key); it != table_.end()) {
        hit = &it->second;
        break;
      }
    }
    if (!hit) throw BackendError("mock backend has no response for this context (" + context_hash(req.context_text) + ")");
    const std::size_t i = std::min(req.attempt, hit->size() - 1);
    return {(*hit)[i], model_};
  }

  std::string id() const override { return "mock:" + source_; }

 private:
  std::string source_;
  std::string model_;
  std::map<std::string, std::vector<std::string>> table_;
};

/// Connection settings for a chat-completions endpoint.
struct HttpBackendConfig {
  std::string base_url;      ///< e.g. "https://api.openai.com/v1"
  std::string api_key;
  std::string model;
  double temperature = 0.0;
  double timeout_seconds = 30.0;
  json extra = json::object();  ///< passed through verbatim into the request body

  /// LLMPRIOR_BASE_URL, LLMPRIOR_API_KEY, LLMPRIOR_MODEL, LLMPRIOR_TEMPERATURE, LLMPRIOR_TIMEOUT.
  static HttpBackendConfig from_env() { return from_env(HttpBackendConfig{}); }
  static HttpBackendConfig from_env(HttpBackendConfig base) {
    auto env = [](const char* k) -> const char* { return std::getenv(k); };
    if (auto v = env("LLMPRIOR_BASE_URL")) base.base_url = v;
    if (auto v = env("LLMPRIOR_API_KEY")) base.api_key = v;
    if (auto v = env("LLMPRIOR_MODEL")) base.model = v;
    if (auto v = env("LLMPRIOR_TEMPERATURE")) base.temperature = std::stod(v);
    if (auto v = env("LLMPRIOR_TIMEOUT")) base.timeout_seconds = std::stod(v);
    return base;
  }

  /// JSON file with keys base_url, api_key, model, temperature, timeout, extra.
  static HttpBackendConfig from_file(const std::string& path) {
    json j = json::parse(read_text_file(path), nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw std::invalid_argument("LLM config '" + path + "' is not a JSON object");
    HttpBackendConfig c;
    c.base_url = j.value("base_url", "");
    c.api_key = j.value("api_key", "");
    c.model = j.value("model", "");
    c.temperature = j.value("temperature", 0.0);
    c.timeout_seconds = j.value("timeout", 30.0);
    if (j.contains("extra")) c.extra = j["extra"];
    return c;
  }
};

namespace detail {

/// Splits "scheme://host[:port][/prefix]" into ("scheme://host[:port]", "/prefix").
inline std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw std::invalid_argument("URL needs a scheme: '" + url + "'");
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, ""};
  std::string prefix = url.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, slash), prefix};
}

}  // namespace detail

/// OpenAI-compatible POST {base_url}/chat/completions client.
class HttpBackend final : public LlmBackend {
 public:
  explicit HttpBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.base_url.empty()) throw std::invalid_argument("HTTP backend needs a base URL (LLMPRIOR_BASE_URL)");
    std::tie(origin_, prefix_) = detail::split_url(cfg_.base_url);
  }

  LlmResponse complete(const LlmRequest& req) const override {
    httplib::Client cli(origin_);
    const auto secs = static_cast<time_t>(cfg_.timeout_seconds);
    const auto usecs = static_cast<time_t>((cfg_.timeout_seconds - static_cast<double>(secs)) * 1e6);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    httplib::Headers headers;
    if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);

    json body = cfg_.extra.is_object() ? cfg_.extra : json::object();
    body["model"] = cfg_.model;
    body["temperature"] = cfg_.temperature;
    body["messages"] = json::array({{{"role", "user"}, {"content", req.prompt}}});

    auto res = cli.Post(prefix_ + "/chat/completions", headers, body.dump(), "application/json");
    if (!res) throw BackendError("LLM endpoint unreachable: " + httplib::to_string(res.error()));
    if (res->status != 200)
      throw BackendError("LLM endpoint returned HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    json j = json::parse(res->body, nullptr, false);
    if (j.is_discarded()) throw BackendError("LLM endpoint returned a non-JSON body");
    try {
      LlmResponse out;
      out.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
      out.model = j.value("model", cfg_.model);
      return out;
    } catch (const json::exception& e) {
      throw BackendError(std::string("unexpected chat-completion response shape: ") + e.what());
    }
  }

  std::string id() const override { return "http:" + cfg_.base_url; }
  const HttpBackendConfig& config() const noexcept { return cfg_; }

 private:
  HttpBackendConfig cfg_;
  std::string origin_;
  std::string prefix_;
};

/// "mock:<fixture.json>" or "http" (configured from `config_file` when given, then the environment).
inline std::unique_ptr<LlmBackend> make_backend(std::string_view spec, const std::string& config_file = {}) {
  if (spec.starts_with("mock:")) return std::make_unique<MockBackend>(MockBackend::from_file(std::string(spec.substr(5))));
  if (spec == "http") {
    HttpBackendConfig cfg = config_file.empty() ? HttpBackendConfig{} : HttpBackendConfig::from_file(config_file);
    return std::make_unique<HttpBackend>(HttpBackendConfig::from_env(std::move(cfg)));
  }
  throw std::invalid_argument("backend must be 'mock:<file>' or 'http', got '" + std::string(spec) + "'");
}

}  // namespace llmprior
