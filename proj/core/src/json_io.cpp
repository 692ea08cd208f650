#include "vicar/json_io.hpp"

#include "vicar/text.hpp"

namespace vicar {

using nlohmann::json;

void to_json(json& j, const Millis& v) { j = v.seconds(); }
void from_json(const json& j, Millis& v) {
  if (!j.is_number()) throw Error(ErrorCode::ParseError, "time must be a number of seconds");
  v = Millis::from_seconds(j.get<double>());
}

void to_json(json& j, const Level& v) { j = v.value(); }
void from_json(const json& j, Level& v) {
  if (!j.is_number_integer()) throw Error(ErrorCode::ParseError, "level must be an integer");
  v = Level(j.get<int>());
}

void to_json(json& j, const CharRange& v) { j = json{{"start", v.start}, {"end", v.end}}; }
void from_json(const json& j, CharRange& v) {
  j.at("start").get_to(v.start);
  j.at("end").get_to(v.end);
}

void to_json(json& j, const Segment& v) {
  j = json{{"start", v.start}, {"end", v.end}, {"text", v.text}};
}
void from_json(const json& j, Segment& v) {
  j.at("start").get_to(v.start);
  j.at("end").get_to(v.end);
  j.at("text").get_to(v.text);
}

void to_json(json& j, const Transcript& v) {
  j = json{{"id", v.id}, {"language", v.language}, {"segments", v.segments}};
}
void from_json(const json& j, Transcript& v) {
  v.id = j.value("id", std::string{});
  v.language = j.value("language", std::string{});
  j.at("segments").get_to(v.segments);
}

void to_json(json& j, const OffsetMapping& v) {
  j = json{{"start", v.text_range.start}, {"end", v.text_range.end}};
  j["segment"] = v.segment_index ? json(*v.segment_index) : json(nullptr);
}
void from_json(const json& j, OffsetMapping& v) {
  j.at("start").get_to(v.text_range.start);
  j.at("end").get_to(v.text_range.end);
  const auto& seg = j.at("segment");
  v.segment_index = seg.is_null() ? std::nullopt : std::optional<std::size_t>(seg.get<std::size_t>());
}

void to_json(json& j, const SectionRevision& v) {
  j = json{{"text", v.text}, {"char_offsets", v.char_offsets}};
}
void from_json(const json& j, SectionRevision& v) {
  j.at("text").get_to(v.text);
  j.at("char_offsets").get_to(v.char_offsets);
}

void to_json(json& j, const TranscriptSection& v) {
  j = json{{"id", v.id},
           {"transcript_id", v.transcript_id},
           {"language", v.language},
           {"start", v.start},
           {"end", v.end},
           {"text", v.text},
           {"char_offsets", v.char_offsets},
           {"history", v.history}};
}
void from_json(const json& j, TranscriptSection& v) {
  j.at("id").get_to(v.id);
  j.at("transcript_id").get_to(v.transcript_id);
  v.language = j.value("language", std::string{});
  j.at("start").get_to(v.start);
  j.at("end").get_to(v.end);
  j.at("text").get_to(v.text);
  j.at("char_offsets").get_to(v.char_offsets);
  v.history = j.value("history", std::vector<SectionRevision>{});
}

void to_json(json& j, const Highlight& v) {
  j = json{{"section_id", v.section_id},
           {"char_start", v.range.start},
           {"char_end", v.range.end}};
  j["note"] = v.note ? json(*v.note) : json(nullptr);
}
void from_json(const json& j, Highlight& v) {
  v.section_id = j.value("section_id", std::string{});
  j.at("char_start").get_to(v.range.start);
  j.at("char_end").get_to(v.range.end);
  if (j.contains("note") && !j.at("note").is_null()) {
    v.note = j.at("note").get<std::string>();
  } else {
    v.note.reset();
  }
}

void to_json(json& j, const Concept& v) {
  j = json{{"id", v.id}, {"name", v.name}, {"span_refs", v.span_refs}};
}
void from_json(const json& j, Concept& v) {
  j.at("id").get_to(v.id);
  j.at("name").get_to(v.name);
  j.at("span_refs").get_to(v.span_refs);
}

void to_json(json& j, const UnderstandingRubric& v) {
  j = json{{"id", v.id}, {"concepts", v.concepts}, {"level_descriptions", v.level_descriptions}};
}
void from_json(const json& j, UnderstandingRubric& v) {
  j.at("id").get_to(v.id);
  j.at("concepts").get_to(v.concepts);
  v.level_descriptions.clear();
  for (const auto& [id, levels] : j.at("level_descriptions").items()) {
    if (!levels.is_array() || levels.size() != 4) {
      throw Error(ErrorCode::ParseError, "concept '" + id + "' needs exactly 4 level descriptions");
    }
    LevelDescriptions d;
    for (std::size_t i = 0; i < 4; ++i) d[i] = levels[i].get<std::string>();
    v.level_descriptions.emplace(id, std::move(d));
  }
}

void to_json(json& j, const LearnerKnowledgeState& v) {
  j = json{{"rubric_id", v.rubric_id}, {"levels", v.levels}, {"variant_index", v.variant_index}};
}
void from_json(const json& j, LearnerKnowledgeState& v) {
  j.at("rubric_id").get_to(v.rubric_id);
  j.at("levels").get_to(v.levels);
  j.at("variant_index").get_to(v.variant_index);
  if (v.variant_index < 0 || v.variant_index > 3) {
    throw Error(ErrorCode::ParseError, "variant_index must be in 0..3");
  }
}

void to_json(json& j, const AnswerEntry& v) {
  j = json{{"expected_answer", v.expected_answer}, {"struggle_questions", v.struggle_questions}};
}
void from_json(const json& j, AnswerEntry& v) {
  j.at("expected_answer").get_to(v.expected_answer);
  j.at("struggle_questions").get_to(v.struggle_questions);
}

void to_json(json& j, const AnswerSheet& v) { j = json{{"entries", v.entries}}; }
void from_json(const json& j, AnswerSheet& v) { j.at("entries").get_to(v.entries); }

void to_json(json& j, const Utterance& v) {
  j = json{{"speaker", v.speaker},
           {"text", v.text},
           {"categories", v.categories},
           {"strategy_tags", v.strategy_tags},
           {"needs_retag", v.needs_retag}};
}
void from_json(const json& j, Utterance& v) {
  j.at("speaker").get_to(v.speaker);
  j.at("text").get_to(v.text);
  j.at("categories").get_to(v.categories);
  v.strategy_tags = j.value("strategy_tags", std::set<TeachingStrategy>{});
  v.needs_retag = j.value("needs_retag", false);
}

void to_json(json& j, const DialogueCandidate& v) {
  j = json{{"id", v.id},
           {"state", v.state},
           {"scenario", v.scenario},
           {"utterances", v.utterances},
           {"provenance", v.provenance},
           {"version", v.version}};
}
void from_json(const json& j, DialogueCandidate& v) {
  j.at("id").get_to(v.id);
  j.at("state").get_to(v.state);
  j.at("scenario").get_to(v.scenario);
  j.at("utterances").get_to(v.utterances);
  j.at("provenance").get_to(v.provenance);
  j.at("version").get_to(v.version);
}

void to_json(json& j, const DialogueCard& v) {
  json patterns = json::object();
  for (const auto& [speaker, counts] : v.key_patterns) {
    json& row = patterns[std::string(to_string(speaker))];
    for (const auto& [category, n] : counts) row[std::string(to_string(category))] = n;
  }
  j = json{{"candidate_id", v.candidate_id},
           {"levels_summary", v.levels_summary},
           {"key_strategies", v.key_strategies},
           {"key_patterns", patterns},
           {"turn_count", v.turn_count}};
}
void from_json(const json& j, DialogueCard& v) {
  j.at("candidate_id").get_to(v.candidate_id);
  j.at("levels_summary").get_to(v.levels_summary);
  j.at("key_strategies").get_to(v.key_strategies);
  j.at("turn_count").get_to(v.turn_count);
  v.key_patterns.clear();
  for (const auto& [speaker_name, counts] : j.at("key_patterns").items()) {
    Speaker speaker;
    from_json(json(speaker_name), speaker);
    for (const auto& [category_name, n] : counts.items()) {
      Category category;
      from_json(json(category_name), category);
      v.key_patterns[speaker][category] = n.get<int>();
    }
  }
}

void to_json(json& j, const Violation& v) {
  j = json{{"rule", v.rule}, {"message", v.message}};
  j["utterance_index"] = v.utterance_index ? json(*v.utterance_index) : json(nullptr);
}

void check_schema_version(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::ParseError, "document must be a JSON object");
  auto it = j.find("schema");
  if (it == j.end() || !it->is_number_integer() || it->get<int>() != kSchemaVersion) {
    throw Error(ErrorCode::ParseError, "unsupported or missing schema version (expected 1)");
  }
}

json parse_json_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
}

std::string canonical_dump(const json& j) { return j.dump(); }

std::string content_hash(const DialogueCandidate& candidate) {
  return text::hex64(text::fnv1a64(canonical_dump(json(candidate))));
}

}  // namespace vicar
