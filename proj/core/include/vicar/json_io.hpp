#pragma once

// Canonical JSON form for every domain type. Objects use sorted keys, so
// dump() of the same value is byte-identical across runs.

#include <nlohmann/json.hpp>

#include <string>

#include "vicar/errors.hpp"
#include "vicar/model.hpp"
#include "vicar/taxonomy.hpp"

namespace vicar {

inline constexpr int kSchemaVersion = 1;

template <typename BasicJsonType>
void to_json(BasicJsonType& j, const Speaker& v) { j = std::string(to_string(v)); }
template <typename BasicJsonType>
void to_json(BasicJsonType& j, const Category& v) { j = std::string(to_string(v)); }
template <typename BasicJsonType>
void to_json(BasicJsonType& j, const TeachingStrategy& v) { j = std::string(to_string(v)); }
template <typename BasicJsonType>
void to_json(BasicJsonType& j, const Provenance& v) { j = std::string(to_string(v)); }

template <typename BasicJsonType>
void from_json(const BasicJsonType& j, Speaker& v) {
  auto parsed = parse_speaker(j.template get<std::string>());
  if (!parsed) throw Error(ErrorCode::ParseError, "unknown speaker: " + j.dump());
  v = *parsed;
}
template <typename BasicJsonType>
void from_json(const BasicJsonType& j, Category& v) {
  auto parsed = parse_category(j.template get<std::string>());
  if (!parsed) throw Error(ErrorCode::TaxonomyError, "unknown category: " + j.dump());
  v = *parsed;
}
template <typename BasicJsonType>
void from_json(const BasicJsonType& j, TeachingStrategy& v) {
  auto parsed = parse_strategy(j.template get<std::string>());
  if (!parsed) throw Error(ErrorCode::TaxonomyError, "unknown teaching strategy: " + j.dump());
  v = *parsed;
}
template <typename BasicJsonType>
void from_json(const BasicJsonType& j, Provenance& v) {
  auto parsed = parse_provenance(j.template get<std::string>());
  if (!parsed) throw Error(ErrorCode::ParseError, "unknown provenance: " + j.dump());
  v = *parsed;
}

void to_json(nlohmann::json& j, const Millis& v);
void from_json(const nlohmann::json& j, Millis& v);
void to_json(nlohmann::json& j, const Level& v);
void from_json(const nlohmann::json& j, Level& v);
void to_json(nlohmann::json& j, const CharRange& v);
void from_json(const nlohmann::json& j, CharRange& v);
void to_json(nlohmann::json& j, const Segment& v);
void from_json(const nlohmann::json& j, Segment& v);
void to_json(nlohmann::json& j, const Transcript& v);
void from_json(const nlohmann::json& j, Transcript& v);
void to_json(nlohmann::json& j, const OffsetMapping& v);
void from_json(const nlohmann::json& j, OffsetMapping& v);
void to_json(nlohmann::json& j, const SectionRevision& v);
void from_json(const nlohmann::json& j, SectionRevision& v);
void to_json(nlohmann::json& j, const TranscriptSection& v);
void from_json(const nlohmann::json& j, TranscriptSection& v);
void to_json(nlohmann::json& j, const Highlight& v);
void from_json(const nlohmann::json& j, Highlight& v);
void to_json(nlohmann::json& j, const Concept& v);
void from_json(const nlohmann::json& j, Concept& v);
void to_json(nlohmann::json& j, const UnderstandingRubric& v);
void from_json(const nlohmann::json& j, UnderstandingRubric& v);
void to_json(nlohmann::json& j, const LearnerKnowledgeState& v);
void from_json(const nlohmann::json& j, LearnerKnowledgeState& v);
void to_json(nlohmann::json& j, const AnswerEntry& v);
void from_json(const nlohmann::json& j, AnswerEntry& v);
void to_json(nlohmann::json& j, const AnswerSheet& v);
void from_json(const nlohmann::json& j, AnswerSheet& v);
void to_json(nlohmann::json& j, const Utterance& v);
void from_json(const nlohmann::json& j, Utterance& v);
void to_json(nlohmann::json& j, const DialogueCandidate& v);
void from_json(const nlohmann::json& j, DialogueCandidate& v);
void to_json(nlohmann::json& j, const DialogueCard& v);
void from_json(const nlohmann::json& j, DialogueCard& v);
void to_json(nlohmann::json& j, const Violation& v);

// Wraps a value with the "schema" version field.
template <typename T>
nlohmann::json to_document(const T& value) {
  nlohmann::json j = value;
  j["schema"] = kSchemaVersion;
  return j;
}

void check_schema_version(const nlohmann::json& j);

// Parses a canonical document. Malformed input becomes Error(ParseError);
// taxonomy errors keep their own code.
template <typename T>
T from_document(const nlohmann::json& j) {
  check_schema_version(j);
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
}

nlohmann::json parse_json_text(const std::string& text);

// Canonical single-line serialization used for hashing and golden files.
std::string canonical_dump(const nlohmann::json& j);

// Stable content hash of a candidate's canonical form.
std::string content_hash(const DialogueCandidate& candidate);

}  // namespace vicar
