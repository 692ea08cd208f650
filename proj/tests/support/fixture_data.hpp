#pragma once

// Loaders for the checked-in fixture corpus (transcripts, highlights, mock
// provider scripts).

#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "vicar/ingestion.hpp"
#include "vicar/llm/mock_provider.hpp"
#include "vicar/pipeline.hpp"

namespace vicar::testing {

inline std::string fixture_path(const std::string& relative) {
  return std::string(VICAR_FIXTURES_DIR) + "/" + relative;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline TranscriptSection fixture_section(const std::string& subject, const std::string& language) {
  auto source = read_transcript_file(fixture_path("transcripts/" + subject + "_" + language + ".srt"),
                                     subject + "_" + language, language);
  return trim_section(parse_transcript(source), Millis{0}, Millis{150000});
}

inline std::vector<Highlight> fixture_highlights(const std::string& subject, const std::string& language,
                                                 const std::string& set, const std::string& section_id) {
  auto doc = nlohmann::json::parse(read_file(fixture_path("highlights/" + subject + "_" + language + "_" + set +
                                                          ".json")));
  std::vector<Highlight> out;
  for (const auto& h : doc.at("highlights")) {
    Highlight x;
    x.section_id = section_id;
    x.range = {h.at("char_start").get<std::size_t>(), h.at("char_end").get<std::size_t>()};
    out.push_back(x);
  }
  return out;
}

inline GenerationRequest fixture_request(const std::string& subject, const std::string& language,
                                         const std::string& set = "a") {
  GenerationRequest request;
  request.section = fixture_section(subject, language);
  request.highlights = fixture_highlights(subject, language, set, request.section.id);
  request.scenario = "A learner reviews the lecture with a tutor.";
  request.language = language;
  return request;
}

inline std::shared_ptr<llm::MockProvider> fixture_mock() {
  return std::make_shared<llm::MockProvider>(llm::MockProvider::from_directory(fixture_path("mock")));
}

}  // namespace vicar::testing
