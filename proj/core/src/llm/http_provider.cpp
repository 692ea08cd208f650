#include "vicar/llm/http_provider.hpp"

#include <cstdlib>

#include "vicar/errors.hpp"
#include "vicar/http_client.hpp"

namespace vicar::llm {
namespace {

std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : std::move(fallback);
}

}  // namespace

std::optional<HttpProviderConfig> HttpProviderConfig::from_env() {
  HttpProviderConfig c;
  c.base_url = env_or("VICAR_LLM_URL", "");
  if (c.base_url.empty()) return std::nullopt;
  c.api_key = env_or("VICAR_LLM_KEY", "");
  c.model = env_or("VICAR_LLM_MODEL", "gpt-4o");
  return c;
}

HttpChatProvider::HttpChatProvider(HttpProviderConfig config) : config_(std::move(config)) {
  if (config_.base_url.empty()) throw Error(ErrorCode::ProviderUnavailable, "empty provider base URL");
}

nlohmann::json HttpChatProvider::build_body(const ChatRequest& request, const std::string& model) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
  nlohmann::json body{{"model", model}, {"messages", messages}, {"max_tokens", request.max_output_tokens}};
  if (auto t = request.temperature.value()) body["temperature"] = *t;
  return body;
}

ChatResponse HttpChatProvider::send(const ChatRequest& request) {
  http::Headers headers;
  if (!config_.api_key.empty()) headers.emplace_back("Authorization", "Bearer " + config_.api_key);
  auto reply = http::post_json(config_.base_url, "/chat/completions", build_body(request, config_.model).dump(),
                               headers, config_.timeout);

  ChatResponse response;
  response.status = reply.status;
  if (reply.status == 0) {
    response.error = reply.transport_error;
    return response;
  }
  if (reply.status != 200) {
    response.error = reply.body.substr(0, 512);
    if (auto ra = reply.header("Retry-After"); !ra.empty()) {
      try {
        response.retry_after_s = std::stod(ra);
      } catch (const std::exception&) {
      }
    }
    return response;
  }
  auto doc = nlohmann::json::parse(reply.body, nullptr, false);
  if (doc.is_discarded() || !doc.contains("choices") || doc["choices"].empty()) {
    response.status = 502;
    response.error = "malformed chat-completions reply";
    return response;
  }
  const auto& message = doc["choices"][0].value("message", nlohmann::json::object());
  response.text = message.value("content", "");
  response.meta = {{"provider", "http"}, {"model", doc.value("model", config_.model)}};
  if (doc.contains("usage")) response.meta["usage"] = doc["usage"];
  return response;
}

}  // namespace vicar::llm
