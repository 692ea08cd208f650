#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace vicar::llm {

// Sampling temperature. An empty value is the provider-default sentinel:
// the request omits the field and the provider picks its own default.
class Temperature {
 public:
  static Temperature provider_default() { return Temperature{}; }
  static Temperature fixed(double value);

  bool is_provider_default() const { return !value_.has_value(); }
  std::optional<double> value() const { return value_; }

  nlohmann::json to_json() const;
  friend bool operator==(const Temperature&, const Temperature&) = default;

 private:
  std::optional<double> value_;
};

struct ChatMessage {
  std::string role;  // "system", "user" or "assistant"
  std::string content;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  Temperature temperature;
  int max_output_tokens = 2048;
  // Routing metadata. Real providers ignore it; mock providers key on it.
  std::string template_id;
  std::map<std::string, std::string> variables;
  // 0-based index of this provider call within one logical completion,
  // counting retries and repair rounds.
  int attempt = 0;
};

struct ChatResponse {
  // HTTP-style status; 0 means the transport failed before any status.
  int status = 200;
  std::string text;
  std::optional<double> retry_after_s;
  std::string error;
  nlohmann::json meta = nlohmann::json::object();
};

class Provider {
 public:
  virtual ~Provider() = default;
  virtual ChatResponse send(const ChatRequest& request) = 0;
  virtual std::string name() const = 0;
};

// Adapts a callable; handy for scripted tests.
class FunctionProvider : public Provider {
 public:
  using Fn = std::function<ChatResponse(const ChatRequest&)>;
  explicit FunctionProvider(Fn fn, std::string name = "function");

  ChatResponse send(const ChatRequest& request) override { return fn_(request); }
  std::string name() const override { return name_; }

 private:
  Fn fn_;
  std::string name_;
};

// Always reports the provider as unreachable.
class UnavailableProvider : public Provider {
 public:
  ChatResponse send(const ChatRequest&) override;
  std::string name() const override { return "unavailable"; }
};

}  // namespace vicar::llm
