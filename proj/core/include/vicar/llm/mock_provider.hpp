#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vicar/llm/provider.hpp"

namespace vicar::llm {

// Deterministic provider driven by fixtures. One document per template id:
//
//   { "cases": [ { "match":          { "variant_index": "2" },
//                  "match_contains": { "section_text": "wavelength" },
//                  "responses": [ {"status": 429, "retry_after": 0},
//                                 {"json": {...}},
//                                 {"text": "..."} ] } ] }
//
// A bare {"responses": [...]} is a single unconditional case. The first
// matching case answers; the response used is responses[min(attempt, n-1)],
// so the outcome depends only on the request, never on earlier calls.
class MockProvider : public Provider {
 public:
  explicit MockProvider(std::map<std::string, nlohmann::json> fixtures);

  // Loads every <template_id>.json in `directory`.
  static MockProvider from_directory(const std::filesystem::path& directory);

  ChatResponse send(const ChatRequest& request) override;
  std::string name() const override { return "mock"; }

 private:
  std::map<std::string, nlohmann::json> fixtures_;
};

}  // namespace vicar::llm
