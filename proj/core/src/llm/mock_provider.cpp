#include "vicar/llm/mock_provider.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "vicar/errors.hpp"
#include "vicar/text.hpp"

namespace vicar::llm {
namespace {

using nlohmann::json;

bool case_matches(const json& c, const ChatRequest& request) {
  if (auto it = c.find("match"); it != c.end()) {
    for (const auto& [key, expected] : it->items()) {
      auto var = request.variables.find(key);
      if (var == request.variables.end()) return false;
      const std::string want = expected.is_string() ? expected.get<std::string>() : expected.dump();
      if (var->second != want) return false;
    }
  }
  if (auto it = c.find("match_contains"); it != c.end()) {
    for (const auto& [key, needle] : it->items()) {
      auto var = request.variables.find(key);
      if (var == request.variables.end()) return false;
      if (!text::contains_ci(var->second, needle.get<std::string>())) return false;
    }
  }
  return true;
}

long long estimate_tokens(std::size_t chars) { return static_cast<long long>((chars + 3) / 4); }

}  // namespace

MockProvider::MockProvider(std::map<std::string, json> fixtures) : fixtures_(std::move(fixtures)) {
  for (auto& [id, doc] : fixtures_) {
    if (doc.contains("responses") && !doc.contains("cases")) {
      doc = json{{"cases", json::array({json{{"responses", doc["responses"]}}})}};
    }
    if (!doc.contains("cases") || !doc["cases"].is_array()) {
      throw Error(ErrorCode::ParseError, "mock fixture for " + id + " has no \"cases\" array");
    }
    for (const auto& c : doc["cases"]) {
      if (!c.contains("responses") || !c["responses"].is_array() || c["responses"].empty()) {
        throw Error(ErrorCode::ParseError, "mock fixture for " + id + " has a case without responses");
      }
    }
  }
}

MockProvider MockProvider::from_directory(const std::filesystem::path& directory) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(directory)) {
    throw Error(ErrorCode::NotFound, "fixture directory not found: " + directory.string());
  }
  std::map<std::string, json> fixtures;
  for (const auto& entry : fs::directory_iterator(directory)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".json") continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::stringstream buffer;
    buffer << in.rdbuf();
    json doc = json::parse(buffer.str(), nullptr, false);
    if (doc.is_discarded()) {
      throw Error(ErrorCode::ParseError, "malformed fixture: " + entry.path().string());
    }
    fixtures.emplace(entry.path().stem().string(), std::move(doc));
  }
  return MockProvider(std::move(fixtures));
}

ChatResponse MockProvider::send(const ChatRequest& request) {
  ChatResponse response;
  auto fixture = fixtures_.find(request.template_id);
  if (fixture == fixtures_.end()) {
    response.status = 500;
    response.error = "mock has no fixture for template " + request.template_id;
    return response;
  }
  const json* chosen = nullptr;
  for (const auto& c : fixture->second["cases"]) {
    if (case_matches(c, request)) {
      chosen = &c;
      break;
    }
  }
  if (!chosen) {
    response.status = 500;
    response.error = "mock has no matching case for template " + request.template_id;
    return response;
  }
  const auto& responses = (*chosen)["responses"];
  const auto index = std::min<std::size_t>(static_cast<std::size_t>(std::max(0, request.attempt)),
                                           responses.size() - 1);
  const json& r = responses[index];

  response.status = r.value("status", 200);
  if (r.contains("retry_after")) response.retry_after_s = r["retry_after"].get<double>();
  if (r.contains("json")) {
    response.text = r["json"].dump();
  } else if (r.contains("text")) {
    response.text = r["text"].get<std::string>();
  }
  if (response.status != 200) response.error = r.value("error", "mock status " + std::to_string(response.status));

  std::size_t prompt_chars = 0;
  for (const auto& m : request.messages) prompt_chars += m.content.size();
  response.meta = json{{"provider", "mock"},
                       {"usage",
                        {{"prompt_tokens", estimate_tokens(prompt_chars)},
                         {"completion_tokens", estimate_tokens(response.text.size())}}}};
  return response;
}

}  // namespace vicar::llm
