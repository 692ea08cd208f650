#include "vicar/llm/gateway.hpp"

#include <algorithm>
#include <thread>

#include "vicar/llm/schema.hpp"

namespace vicar::llm {
namespace {

using nlohmann::json;

bool is_name_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

bool is_transient(int status) { return status == 0 || status == 429 || status >= 500; }

std::string join_messages(const std::vector<ChatMessage>& messages) {
  std::string out;
  for (const auto& m : messages) {
    out += "[" + m.role + "]\n" + m.content;
    if (out.empty() || out.back() != '\n') out.push_back('\n');
  }
  return out;
}

std::string repair_prompt(const std::vector<std::string>& errors) {
  std::string out =
      "Your previous response could not be accepted. Problems found:\n";
  for (const auto& e : errors) out += "- " + e + "\n";
  out += "Reply again with only the corrected JSON document, fixing every problem listed above.";
  return out;
}

void add_usage(json& total, const json& meta) {
  if (!meta.is_object() || !meta.contains("usage")) return;
  for (const auto& [key, value] : meta["usage"].items()) {
    if (!value.is_number_integer()) continue;
    total[key] = total.value(key, 0) + value.get<long long>();
  }
}

}  // namespace

// ---------------------------------------------------------------------------

std::set<std::string> find_placeholders(const std::string& text) {
  std::set<std::string> out;
  std::size_t pos = text.find("{{");
  while (pos != std::string::npos) {
    const auto close = text.find("}}", pos + 2);
    if (close == std::string::npos) break;
    std::string name = text.substr(pos + 2, close - pos - 2);
    if (!name.empty() && std::all_of(name.begin(), name.end(), is_name_char)) out.insert(name);
    pos = text.find("{{", pos + 2);
  }
  return out;
}

std::string substitute(const std::string& text, const std::map<std::string, std::string>& variables) {
  std::string out;
  out.reserve(text.size());
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto open = text.find("{{", pos);
    if (open == std::string::npos) {
      out.append(text, pos, std::string::npos);
      break;
    }
    const auto close = text.find("}}", open + 2);
    if (close == std::string::npos) {
      out.append(text, pos, std::string::npos);
      break;
    }
    out.append(text, pos, open - pos);
    const std::string name = text.substr(open + 2, close - open - 2);
    auto it = variables.find(name);
    if (it != variables.end()) {
      out += it->second;
    } else {
      out.append(text, open, close + 2 - open);
    }
    pos = close + 2;
  }
  return out;
}

PromptTemplate PromptTemplate::parse(std::string id, const std::string& body, Temperature default_temperature) {
  PromptTemplate t;
  t.id = std::move(id);
  t.default_temperature = default_temperature;
  const std::string marker = "\n---\n";
  if (body.starts_with("---\n")) {
    t.user = body.substr(4);
  } else if (auto split = body.find(marker); split != std::string::npos) {
    t.system = body.substr(0, split);
    t.user = body.substr(split + marker.size());
  } else {
    t.user = body;
  }
  t.placeholders = find_placeholders(t.system);
  for (const auto& p : find_placeholders(t.user)) t.placeholders.insert(p);
  return t;
}

// ---------------------------------------------------------------------------

void to_json(json& j, const TraceEntry& e) {
  j = json{{"step", e.step},         {"template_id", e.template_id}, {"temperature", e.temperature},
           {"attempt", e.attempt},   {"status", e.status},           {"prompt", e.prompt},
           {"response", e.response}, {"usage", e.usage}};
}

void from_json(const json& j, TraceEntry& e) {
  j.at("step").get_to(e.step);
  j.at("template_id").get_to(e.template_id);
  e.temperature = j.at("temperature");
  j.at("attempt").get_to(e.attempt);
  j.at("status").get_to(e.status);
  j.at("prompt").get_to(e.prompt);
  j.at("response").get_to(e.response);
  e.usage = j.value("usage", json::object());
}

Trace::Trace(const Trace& other) : entries_(other.entries()) {}

Trace& Trace::operator=(const Trace& other) {
  if (this != &other) {
    auto copy = other.entries();
    std::lock_guard lock(mutex_);
    entries_ = std::move(copy);
  }
  return *this;
}

void Trace::add(TraceEntry entry) {
  std::lock_guard lock(mutex_);
  entries_.push_back(std::move(entry));
}

void Trace::append(const Trace& other) {
  auto copy = other.entries();
  std::lock_guard lock(mutex_);
  entries_.insert(entries_.end(), copy.begin(), copy.end());
}

std::vector<TraceEntry> Trace::entries() const {
  std::lock_guard lock(mutex_);
  return entries_;
}

// ---------------------------------------------------------------------------

Gateway::Gateway(std::shared_ptr<Provider> provider, GatewayConfig config, Sleeper sleeper)
    : provider_(std::move(provider)), config_(config), sleeper_(std::move(sleeper)) {
  if (!provider_) throw Error(ErrorCode::ProviderUnavailable, "no provider configured");
  if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  config_.max_in_flight = std::max(1, config_.max_in_flight);
}

void Gateway::register_template(const std::string& id, const std::string& body,
                                Temperature default_temperature) {
  std::unique_lock lock(registry_mutex_);
  if (templates_.count(id)) throw Error(ErrorCode::DuplicateId, "template already registered: " + id);
  templates_.emplace(id, PromptTemplate::parse(id, body, default_temperature));
}

void Gateway::register_schema(const std::string& id, json schema) {
  std::unique_lock lock(registry_mutex_);
  if (schemas_.count(id)) throw Error(ErrorCode::DuplicateId, "schema already registered: " + id);
  schemas_.emplace(id, std::move(schema));
}

bool Gateway::has_template(const std::string& id) const {
  std::shared_lock lock(registry_mutex_);
  return templates_.count(id) > 0;
}

bool Gateway::has_schema(const std::string& id) const {
  std::shared_lock lock(registry_mutex_);
  return schemas_.count(id) > 0;
}

std::optional<PromptTemplate> Gateway::find_template(const std::string& id) const {
  std::shared_lock lock(registry_mutex_);
  auto it = templates_.find(id);
  if (it == templates_.end()) return std::nullopt;
  return it->second;
}

void Gateway::validate_spec(const PromptSpec& spec) const {
  auto tmpl = find_template(spec.template_id);
  if (!tmpl) throw Error(ErrorCode::TemplateMissing, "unknown template: " + spec.template_id);
  std::vector<std::string> unbound;
  for (const auto& p : tmpl->placeholders) {
    if (!spec.variables.count(p)) unbound.push_back(p);
  }
  if (!unbound.empty()) {
    std::string names;
    for (const auto& n : unbound) names += (names.empty() ? "" : ", ") + n;
    throw Error(ErrorCode::InvalidPrompt,
                "unbound placeholder(s) in template " + spec.template_id + ": " + names);
  }
  if (spec.output_schema_id && !has_schema(*spec.output_schema_id)) {
    throw Error(ErrorCode::InvalidPrompt, "unregistered output schema: " + *spec.output_schema_id);
  }
  if (spec.max_output_tokens <= 0) throw Error(ErrorCode::InvalidPrompt, "max_output_tokens must be positive");
}

PromptSpec Gateway::make_prompt(const std::string& template_id, std::map<std::string, std::string> variables,
                                std::optional<std::string> output_schema_id,
                                std::optional<Temperature> temperature) const {
  auto tmpl = find_template(template_id);
  if (!tmpl) throw Error(ErrorCode::TemplateMissing, "unknown template: " + template_id);
  PromptSpec spec;
  spec.template_id = template_id;
  spec.variables = std::move(variables);
  spec.temperature = temperature.value_or(tmpl->default_temperature);
  spec.output_schema_id = std::move(output_schema_id);
  validate_spec(spec);
  return spec;
}

std::vector<ChatMessage> Gateway::render(const PromptSpec& spec) const {
  auto tmpl = find_template(spec.template_id);
  if (!tmpl) throw Error(ErrorCode::TemplateMissing, "unknown template: " + spec.template_id);
  std::vector<ChatMessage> messages;
  if (!tmpl->system.empty()) messages.push_back({"system", substitute(tmpl->system, spec.variables)});
  messages.push_back({"user", substitute(tmpl->user, spec.variables)});
  return messages;
}

ChatResponse Gateway::send_limited(const ChatRequest& request) {
  {
    std::unique_lock lock(flight_mutex_);
    flight_cv_.wait(lock, [&] { return in_flight_ < config_.max_in_flight; });
    ++in_flight_;
  }
  struct Release {
    Gateway* self;
    ~Release() {
      {
        std::lock_guard lock(self->flight_mutex_);
        --self->in_flight_;
      }
      self->flight_cv_.notify_one();
    }
  } release{this};

  try {
    return provider_->send(request);
  } catch (const std::exception& e) {
    ChatResponse failed;
    failed.status = 0;
    failed.error = e.what();
    return failed;
  }
}

Gateway::Round Gateway::call_with_retries(const PromptSpec& spec, const std::vector<ChatMessage>& messages,
                                          int first_attempt, const CallOptions& options) {
  ChatRequest request;
  request.messages = messages;
  request.temperature = spec.temperature;
  request.max_output_tokens = spec.max_output_tokens;
  request.template_id = spec.template_id;
  request.variables = spec.variables;

  Round round;
  for (int retry = 0; retry <= config_.max_retries; ++retry) {
    request.attempt = first_attempt + round.calls;
    ChatResponse response = send_limited(request);
    ++round.calls;

    if (options.trace) {
      TraceEntry entry;
      entry.step = options.step;
      entry.template_id = spec.template_id;
      entry.temperature = spec.temperature.to_json();
      entry.attempt = request.attempt;
      entry.status = response.status;
      entry.prompt = join_messages(messages);
      entry.response = response.status == 200 ? response.text : response.error;
      if (response.meta.contains("usage")) entry.usage = response.meta["usage"];
      options.trace->add(std::move(entry));
    }

    if (response.status == 200) {
      round.response = std::move(response);
      return round;
    }
    if (!is_transient(response.status)) {
      throw Error(ErrorCode::ProviderUnavailable,
                  "provider rejected request (HTTP " + std::to_string(response.status) + "): " + response.error);
    }
    if (retry == config_.max_retries) {
      if (response.status == 429) {
        throw RateLimitedError("rate limited after " + std::to_string(round.calls) + " attempt(s)",
                               response.retry_after_s);
      }
      throw Error(ErrorCode::ProviderUnavailable,
                  "provider unavailable after " + std::to_string(round.calls) + " attempt(s): " +
                      (response.error.empty() ? "HTTP " + std::to_string(response.status) : response.error));
    }
    auto delay = config_.base_backoff * (1LL << std::min(retry, 16));
    if (response.retry_after_s) {
      delay = std::chrono::milliseconds(static_cast<long long>(*response.retry_after_s * 1000.0));
    }
    sleeper_(std::min<std::chrono::milliseconds>(delay, config_.max_backoff));
  }
  throw Error(ErrorCode::ProviderUnavailable, "retry loop exhausted");
}

CompletionResult Gateway::complete(const PromptSpec& spec, const CallOptions& options) {
  validate_spec(spec);
  auto messages = render(spec);
  Round round = call_with_retries(spec, messages, 0, options);
  CompletionResult result;
  result.raw_text = std::move(round.response.text);
  result.attempts = round.calls;
  result.provider_meta = std::move(round.response.meta);
  return result;
}

CompletionResult Gateway::complete_structured(const PromptSpec& spec, const CallOptions& options) {
  if (!spec.output_schema_id) {
    throw Error(ErrorCode::InvalidPrompt, "structured completion needs an output_schema_id");
  }
  validate_spec(spec);
  json schema;
  {
    std::shared_lock lock(registry_mutex_);
    schema = schemas_.at(*spec.output_schema_id);
  }

  auto messages = render(spec);
  int attempts = 0;
  int repairs = 0;
  std::map<ErrorCode, int> repairs_by_code;
  json usage = json::object();

  while (true) {
    Round round = call_with_retries(spec, messages, attempts, options);
    attempts += round.calls;
    add_usage(usage, round.response.meta);
    const std::string& text = round.response.text;

    std::vector<std::string> errors;
    ErrorCode code = ErrorCode::SchemaViolation;
    std::string extract_error;
    std::optional<json> parsed = extract_json(text, &extract_error);
    if (!parsed) {
      errors.push_back(extract_error);
    } else {
      errors = validate_schema(schema, *parsed);
      if (errors.empty() && options.check) {
        auto issues = options.check(*parsed);
        if (!issues.empty()) {
          code = issues.front().code;
          for (const auto& issue : issues) errors.push_back(issue.message);
        }
      }
    }

    if (errors.empty()) {
      CompletionResult result;
      result.raw_text = text;
      result.parsed = std::move(parsed);
      result.attempts = attempts;
      result.provider_meta = round.response.meta;
      result.provider_meta["usage"] = usage;
      return result;
    }

    bool may_repair = repairs < config_.max_repairs;
    if (auto it = options.check_repair_limits.find(code); it != options.check_repair_limits.end()) {
      may_repair = may_repair && repairs_by_code[code] < it->second;
    }
    if (!may_repair) throw SchemaViolation(code, std::move(errors), attempts);

    ++repairs;
    ++repairs_by_code[code];
    messages.push_back({"assistant", text});
    messages.push_back({"user", repair_prompt(errors)});
  }
}

}  // namespace vicar::llm
