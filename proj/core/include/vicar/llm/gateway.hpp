#pragma once

#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vicar/errors.hpp"
#include "vicar/llm/provider.hpp"

namespace vicar::llm {

// Text template with {{name}} placeholders. A line consisting of "---"
// separates the system prompt (above) from the user prompt (below).
struct PromptTemplate {
  std::string id;
  std::string system;
  std::string user;
  Temperature default_temperature;
  std::set<std::string> placeholders;

  static PromptTemplate parse(std::string id, const std::string& body, Temperature default_temperature);
};

struct PromptSpec {
  std::string template_id;
  std::map<std::string, std::string> variables;
  Temperature temperature;
  int max_output_tokens = 2048;
  std::optional<std::string> output_schema_id;
};

struct TraceEntry {
  std::string step;
  std::string template_id;
  nlohmann::json temperature;  // number, or "provider_default"
  int attempt = 0;
  int status = 0;
  std::string prompt;
  std::string response;
  nlohmann::json usage = nlohmann::json::object();
};

void to_json(nlohmann::json& j, const TraceEntry& e);
void from_json(const nlohmann::json& j, TraceEntry& e);

// Append-only, thread-safe log of provider exchanges.
class Trace {
 public:
  Trace() = default;
  Trace(const Trace& other);
  Trace& operator=(const Trace& other);

  void add(TraceEntry entry);
  void append(const Trace& other);
  std::vector<TraceEntry> entries() const;

 private:
  mutable std::mutex mutex_;
  std::vector<TraceEntry> entries_;
};

// A semantic problem found after schema validation passed.
struct Issue {
  ErrorCode code = ErrorCode::SchemaViolation;
  std::string message;
};

using SemanticCheck = std::function<std::vector<Issue>(const nlohmann::json&)>;

struct CallOptions {
  Trace* trace = nullptr;
  std::string step;
  SemanticCheck check;
  // Repair rounds allowed per issue code; codes not listed share the
  // gateway-wide repair budget. The total never exceeds that budget.
  std::map<ErrorCode, int> check_repair_limits;
};

struct CompletionResult {
  std::string raw_text;
  std::optional<nlohmann::json> parsed;
  int attempts = 0;
  nlohmann::json provider_meta = nlohmann::json::object();
};

struct GatewayConfig {
  int max_retries = 3;  // R: transient-failure retries per round
  int max_repairs = 2;  // K: structured-output repair rounds
  std::chrono::milliseconds base_backoff{500};
  std::chrono::milliseconds max_backoff{20000};
  int max_in_flight = 4;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

class Gateway {
 public:
  Gateway(std::shared_ptr<Provider> provider, GatewayConfig config = {}, Sleeper sleeper = {});

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  // Throws Error(DuplicateId) when the id is taken.
  void register_template(const std::string& id, const std::string& body, Temperature default_temperature);
  void register_schema(const std::string& id, nlohmann::json schema);

  bool has_template(const std::string& id) const;
  bool has_schema(const std::string& id) const;
  std::optional<PromptTemplate> find_template(const std::string& id) const;

  // Builds a spec with the template's default temperature. Throws
  // Error(TemplateMissing) or Error(InvalidPrompt) for unbound placeholders,
  // an out-of-range temperature or an unregistered schema.
  PromptSpec make_prompt(const std::string& template_id, std::map<std::string, std::string> variables,
                         std::optional<std::string> output_schema_id = std::nullopt,
                         std::optional<Temperature> temperature = std::nullopt) const;

  std::vector<ChatMessage> render(const PromptSpec& spec) const;

  // Plain completion with retry on transient failures (429, 5xx, transport).
  CompletionResult complete(const PromptSpec& spec, const CallOptions& options = {});

  // Completion whose output must parse as JSON, satisfy the registered
  // schema and pass options.check. Failed rounds are re-prompted with the
  // validation errors appended; attempts counts every provider call.
  CompletionResult complete_structured(const PromptSpec& spec, const CallOptions& options = {});

  const GatewayConfig& config() const { return config_; }
  std::string provider_name() const { return provider_->name(); }

 private:
  struct Round {
    ChatResponse response;
    int calls = 0;
  };

  void validate_spec(const PromptSpec& spec) const;
  Round call_with_retries(const PromptSpec& spec, const std::vector<ChatMessage>& messages,
                          int first_attempt, const CallOptions& options);
  ChatResponse send_limited(const ChatRequest& request);

  std::shared_ptr<Provider> provider_;
  GatewayConfig config_;
  Sleeper sleeper_;

  mutable std::shared_mutex registry_mutex_;
  std::map<std::string, PromptTemplate> templates_;
  std::map<std::string, nlohmann::json> schemas_;

  std::mutex flight_mutex_;
  std::condition_variable flight_cv_;
  int in_flight_ = 0;
};

// Substitutes {{name}} placeholders. Unknown placeholders are left intact.
std::string substitute(const std::string& text, const std::map<std::string, std::string>& variables);
std::set<std::string> find_placeholders(const std::string& text);

}  // namespace vicar::llm
