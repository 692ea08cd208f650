#pragma once

// Shared domain types for the authoring engine. Everything here is a plain
// value snapshot; mutation happens by producing new versions elsewhere.

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace vicar {

// Time position in whole milliseconds. Subtitle timings are exact at this
// granularity, so bounds checks never see float drift.
struct Millis {
  std::int64_t count = 0;

  constexpr Millis() = default;
  constexpr explicit Millis(std::int64_t ms) : count(ms) {}

  static Millis from_seconds(double seconds);
  double seconds() const { return static_cast<double>(count) / 1000.0; }

  friend constexpr auto operator<=>(Millis, Millis) = default;
  friend constexpr Millis operator-(Millis a, Millis b) { return Millis{a.count - b.count}; }
  friend constexpr Millis operator+(Millis a, Millis b) { return Millis{a.count + b.count}; }
};

// Half-open byte range [start, end) into a section's text.
struct CharRange {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const { return end > start ? end - start : 0; }
  bool overlaps(const CharRange& other) const {
    return start < other.end && other.start < end;
  }
  friend auto operator<=>(const CharRange&, const CharRange&) = default;
};

struct Segment {
  Millis start;
  Millis end;
  std::string text;

  friend bool operator==(const Segment&, const Segment&) = default;
};

struct Transcript {
  std::string id;
  std::string language;
  std::vector<Segment> segments;

  Millis end() const { return segments.empty() ? Millis{} : segments.back().end; }
  friend bool operator==(const Transcript&, const Transcript&) = default;
};

// Maps a run of section text back to the transcript segment it came from.
// A missing segment index marks a synthetic mapping produced by a text edit.
struct OffsetMapping {
  CharRange text_range;
  std::optional<std::size_t> segment_index;

  friend bool operator==(const OffsetMapping&, const OffsetMapping&) = default;
};

struct SectionRevision {
  std::string text;
  std::vector<OffsetMapping> char_offsets;

  friend bool operator==(const SectionRevision&, const SectionRevision&) = default;
};

struct TranscriptSection {
  std::string id;
  std::string transcript_id;
  std::string language;
  Millis start;
  Millis end;
  std::string text;
  std::vector<OffsetMapping> char_offsets;
  std::vector<SectionRevision> history;

  Millis duration() const { return end - start; }
  friend bool operator==(const TranscriptSection&, const TranscriptSection&) = default;
};

struct Highlight {
  std::string section_id;
  CharRange range;
  std::optional<std::string> note;

  friend bool operator==(const Highlight&, const Highlight&) = default;
};

struct Concept {
  // Case-folded, whitespace-collapsed name; doubles as the mention key.
  std::string id;
  std::string name;
  std::vector<CharRange> span_refs;

  friend bool operator==(const Concept&, const Concept&) = default;
};

// Comprehension level on the four-step rubric scale, 4 = full mastery.
class Level {
 public:
  static constexpr int kMin = 1;
  static constexpr int kMastery = 4;

  constexpr Level() = default;
  explicit Level(int value);

  static constexpr Level mastery() { return Level{Tag{}, kMastery}; }

  constexpr int value() const { return value_; }
  constexpr bool is_deficit() const { return value_ < kMastery; }
  friend constexpr auto operator<=>(Level, Level) = default;

 private:
  struct Tag {};
  constexpr Level(Tag, int v) : value_(v) {}
  int value_ = kMastery;
};

using LevelDescriptions = std::array<std::string, 4>;

struct UnderstandingRubric {
  std::string id;
  std::vector<Concept> concepts;
  // Keyed by concept id; index 0 holds level 1.
  std::map<std::string, LevelDescriptions> level_descriptions;

  const Concept* find(const std::string& concept_id) const;
  friend bool operator==(const UnderstandingRubric&, const UnderstandingRubric&) = default;
};

struct LearnerKnowledgeState {
  std::string rubric_id;
  std::map<std::string, Level> levels;
  int variant_index = 0;

  friend bool operator==(const LearnerKnowledgeState&, const LearnerKnowledgeState&) = default;
};

struct AnswerEntry {
  std::string expected_answer;
  std::vector<std::string> struggle_questions;

  friend bool operator==(const AnswerEntry&, const AnswerEntry&) = default;
};

struct AnswerSheet {
  std::map<std::string, AnswerEntry> entries;

  friend bool operator==(const AnswerSheet&, const AnswerSheet&) = default;
};

enum class Speaker { Tutor, Learner };

enum class Category {
  SelfMonitoring,
  Lecturing,
  Demonstrating,
  Questioning,
  OffTopic,
  Summarizing,
  Answering,
  Scaffolding,
  Diagnosing,
  Reflecting,
  Explanation,
};

enum class TeachingStrategy {
  CognitiveConflict,
  MetacognitivePrompting,
  CognitivePrompting,
  SpontaneousDeepQuestion,
};

struct Utterance {
  Speaker speaker = Speaker::Tutor;
  std::string text;
  std::set<Category> categories;
  std::set<TeachingStrategy> strategy_tags;
  // Set after an edit left the utterance without valid tags for its speaker.
  bool needs_retag = false;

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

enum class Provenance { Generated, Refined };

struct DialogueCandidate {
  std::string id;
  LearnerKnowledgeState state;
  std::string scenario;
  std::vector<Utterance> utterances;
  Provenance provenance = Provenance::Generated;
  std::int64_t version = 1;

  friend bool operator==(const DialogueCandidate&, const DialogueCandidate&) = default;
};

struct DialogueCard {
  std::string candidate_id;
  std::map<std::string, Level> levels_summary;
  std::set<TeachingStrategy> key_strategies;
  std::map<Speaker, std::map<Category, int>> key_patterns;
  std::size_t turn_count = 0;

  friend bool operator==(const DialogueCard&, const DialogueCard&) = default;
};

struct Violation {
  std::optional<std::size_t> utterance_index;
  std::string rule;
  std::string message;

  friend bool operator==(const Violation&, const Violation&) = default;
};

namespace rules {
inline constexpr const char* kEmptyText = "empty-text";
inline constexpr const char* kNoCategories = "no-categories";
inline constexpr const char* kCategoryInvalid = "category-invalid-for-speaker";
inline constexpr const char* kNeedsRetag = "needs-retag";
inline constexpr const char* kTooFewUtterances = "too-few-utterances";
inline constexpr const char* kMissingSpeaker = "missing-speaker";
}  // namespace rules

// Empty iff every utterance and candidate invariant holds. Candidate-level
// rules (two utterances, both speakers) apply only to generated candidates.
std::vector<Violation> validate_dialogue(const DialogueCandidate& dialogue);

// Pure summary of a valid candidate. Throws Error(InvalidDialogue) otherwise.
DialogueCard derive_card(const DialogueCandidate& dialogue);

// Case-folds ASCII and collapses whitespace runs; the concept id scheme.
std::string normalize_concept_id(const std::string& name);

// Sorted, merged, validated against the section text length.
// Throws Error(RangeError) for empty or out-of-bounds ranges.
std::vector<Highlight> normalize_highlights(std::vector<Highlight> highlights,
                                            std::size_t text_length);

bool concept_intersects(const Concept& item, const std::vector<Highlight>& highlights);

// Structural check of the level rule: highlighted concepts sit at 1..3,
// the rest at 4, and every rubric concept has exactly one level.
std::vector<std::string> check_level_assignment(const UnderstandingRubric& rubric,
                                                const std::vector<Highlight>& highlights,
                                                const LearnerKnowledgeState& state);

}  // namespace vicar
