#pragma once

#include <chrono>
#include <optional>
#include <string>

#include "vicar/llm/provider.hpp"

namespace vicar::llm {

struct HttpProviderConfig {
  std::string base_url;  // e.g. https://api.openai.com/v1
  std::string api_key;
  std::string model;
  std::chrono::seconds timeout{180};

  // VICAR_LLM_URL, VICAR_LLM_KEY, VICAR_LLM_MODEL. Empty when no URL is set.
  static std::optional<HttpProviderConfig> from_env();
};

// Chat-completions over HTTP+JSON: POST <base_url>/chat/completions with
// {model, messages, max_tokens[, temperature]}.
class HttpChatProvider : public Provider {
 public:
  explicit HttpChatProvider(HttpProviderConfig config);

  ChatResponse send(const ChatRequest& request) override;
  std::string name() const override { return "http:" + config_.model; }

  static nlohmann::json build_body(const ChatRequest& request, const std::string& model);

 private:
  HttpProviderConfig config_;
};

}  // namespace vicar::llm
