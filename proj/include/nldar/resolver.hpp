#pragma once

// Step resolvers: the behavioral contract plus scripted, replay and HTTP
// chat implementations.

#include <cstdlib>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "nldar/document.hpp"
#include "nldar/error.hpp"
#include "nldar/prompt.hpp"

namespace nldar {

class ResolverError : public Error {
 public:
  using Error::Error;
};

struct ResolverCapabilities {
  bool supports_images = false;
  bool deterministic = true;
};

struct ResolveRequest {
  const Step* step = nullptr;
  PromptBundle prompt;
  StepInputs inputs;
  int attempt = 0;
};

// Returns raw output for one step, or throws ResolverError. Implementations
// must be safe for concurrent independent calls.
class Resolver {
 public:
  virtual ~Resolver() = default;
  virtual std::string name() const = 0;
  virtual ResolverCapabilities capabilities() const = 0;
  virtual std::string resolve(const ResolveRequest& request) = 0;

  // A stored answer to record verbatim instead of resolving the step. Only
  // replaying resolvers provide one.
  virtual std::optional<Answer> recorded_answer(const Step&) const { return std::nullopt; }
};

// Resolver backed by a function, for tests and offline runs.
class ScriptedResolver : public Resolver {
 public:
  using Script = std::function<std::string(const ResolveRequest&)>;

  explicit ScriptedResolver(Script script, ResolverCapabilities caps = {}, std::string name = "scripted")
      : script_(std::move(script)), caps_(caps), name_(std::move(name)) {}

  std::string name() const override { return name_; }
  ResolverCapabilities capabilities() const override { return caps_; }
  std::string resolve(const ResolveRequest& request) override { return script_(request); }

 private:
  Script script_;
  ResolverCapabilities caps_;
  std::string name_;
};

// Structured output for an answer, in the format parse_answer accepts.
inline std::string answer_payload(const Answer& a) {
  nlohmann::json j;
  if (a.boolean) {
    j["answer"] = *a.boolean;
    j["explanation"] = a.text;
  } else {
    j["answer"] = a.text;
  }
  if (!a.highlights.empty()) j["highlights"] = a.highlights;
  if (a.uncertain) j["uncertain"] = true;
  return j.dump();
}

// Replays a stored execution step by step.
class ReplayResolver : public Resolver {
 public:
  explicit ReplayResolver(ExecutionRecord source) : source_(std::move(source)) {}

  std::string name() const override { return "replay:" + source_.id; }
  ResolverCapabilities capabilities() const override { return {true, true}; }

  std::string resolve(const ResolveRequest& request) override {
    auto it = source_.answers.find(request.step->id);
    if (it == source_.answers.end()) throw ResolverError("replay source has no answer for " + request.step->id);
    return answer_payload(it->second);
  }

  std::optional<Answer> recorded_answer(const Step& step) const override {
    auto it = source_.answers.find(step.id);
    if (it == source_.answers.end()) return std::nullopt;
    return it->second;
  }

  const ExecutionRecord& source() const { return source_; }

 private:
  ExecutionRecord source_;
};

// ---------------------------------------------------------------------------
// HTTP chat transport

struct GenerationParams {
  int max_new_tokens = 2048;
  double temperature = 0.0001;
  double top_p = 0.95;
  double repetition_penalty = 1.15;
};

struct ResolverConfig {
  std::string endpoint;  // e.g. http://localhost:8000/v1/chat/completions
  std::string credential_env = "NLDAR_API_KEY";
  std::string model;
  GenerationParams generation;
  bool supports_images = false;
  int retries = 3;
  int timeout_seconds = 120;
  std::optional<std::uint64_t> seed;

  static ResolverConfig from_json(const nlohmann::json& j) {
    ResolverConfig c;
    c.endpoint = j.value("endpoint", "");
    c.credential_env = j.value("credential_env", c.credential_env);
    c.model = j.value("model", "");
    c.supports_images = j.value("supports_images", false);
    c.retries = j.value("retries", c.retries);
    c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("generation")) {
      const auto& g = j.at("generation");
      c.generation.max_new_tokens = g.value("max_new_tokens", c.generation.max_new_tokens);
      c.generation.temperature = g.value("temperature", c.generation.temperature);
      c.generation.top_p = g.value("top_p", c.generation.top_p);
      c.generation.repetition_penalty = g.value("repetition_penalty", c.generation.repetition_penalty);
    }
    return c;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"endpoint", endpoint},
                        {"credential_env", credential_env},
                        {"model", model},
                        {"supports_images", supports_images},
                        {"retries", retries},
                        {"timeout_seconds", timeout_seconds},
                        {"generation",
                         {{"max_new_tokens", generation.max_new_tokens},
                          {"temperature", generation.temperature},
                          {"top_p", generation.top_p},
                          {"repetition_penalty", generation.repetition_penalty}}}};
    if (seed) j["seed"] = *seed;
    return j;
  }

  // Stable hash of the configuration (never includes the credential value).
  std::string hash() const { return content_hash(to_json().dump()); }
};

struct Url {
  std::string scheme_host;  // "http://host:port"
  std::string path;
};

inline Url split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw Error("endpoint must include a scheme: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

// Role-tagged chat request. Images follow the user message as a caption
// message and an image message each.
inline nlohmann::json chat_request_body(const ResolverConfig& config, const PromptBundle& prompt) {
  nlohmann::json messages = nlohmann::json::array();
  messages.push_back({{"role", "system"}, {"content", prompt.system}});
  messages.push_back({{"role", "user"}, {"content", prompt.user}});
  for (const auto& img : prompt.attachments) {
    messages.push_back({{"role", "user"}, {"content", img.caption}});
    messages.push_back(
        {{"role", "user"},
         {"content",
          {{{"type", "image_url"},
            {"image_url", {{"url", "data:" + img.media_type + ";base64," + img.base64}}}}}}});
  }
  nlohmann::json body = {{"model", config.model},
                         {"messages", messages},
                         {"max_tokens", config.generation.max_new_tokens},
                         {"temperature", config.generation.temperature},
                         {"top_p", config.generation.top_p},
                         {"repetition_penalty", config.generation.repetition_penalty}};
  if (config.seed) body["seed"] = *config.seed;
  return body;
}

class HttpChatResolver : public Resolver {
 public:
  explicit HttpChatResolver(ResolverConfig config) : config_(std::move(config)) {
    if (config_.endpoint.empty()) throw Error("resolver endpoint is not configured");
  }

  std::string name() const override { return config_.model.empty() ? "http" : config_.model; }
  ResolverCapabilities capabilities() const override { return {config_.supports_images, false}; }

  std::string resolve(const ResolveRequest& request) override {
    const auto url = split_url(config_.endpoint);
    httplib::Client client(url.scheme_host);
    client.set_read_timeout(config_.timeout_seconds, 0);
    client.set_write_timeout(config_.timeout_seconds, 0);
    httplib::Headers headers;
    if (const char* key = std::getenv(config_.credential_env.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);
    const auto body = chat_request_body(config_, request.prompt).dump();
    auto res = client.Post(url.path, headers, body, "application/json");
    if (!res) throw ResolverError("resolver transport failure: " + httplib::to_string(res.error()));
    if (res->status != 200) throw ResolverError("resolver returned HTTP " + std::to_string(res->status));
    try {
      const auto j = nlohmann::json::parse(res->body);
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ResolverError(std::string("unexpected resolver response: ") + e.what());
    }
  }

  const ResolverConfig& config() const { return config_; }

 private:
  ResolverConfig config_;
};

}  // namespace nldar
