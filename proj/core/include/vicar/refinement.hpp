#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "vicar/llm/gateway.hpp"
#include "vicar/model.hpp"

namespace vicar {

namespace edit {
struct AddUtterance {
  std::size_t index = 0;  // insert position, 0..turn count
  Speaker speaker = Speaker::Tutor;
  std::string text;
  std::set<Category> categories;  // empty leaves the new turn flagged for retagging
};
struct DuplicateUtterance {
  std::size_t index = 0;
};
struct DeleteUtterance {
  std::size_t index = 0;
};
struct ChangeSpeaker {
  std::size_t index = 0;
};
struct MoveUtterance {
  std::size_t from = 0;
  std::size_t to = 0;  // final position of the moved turn
};
struct UpdateText {
  std::size_t index = 0;
  std::string text;
};
// Sets the tags of one turn and clears its retag flag.
struct Retag {
  std::size_t index = 0;
  std::set<Category> categories;
  std::set<TeachingStrategy> strategies;
};
// Splices a laboratory variation over [start, end]; produced by apply_variation.
struct ReplaceSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  std::vector<Utterance> utterances;
  int variation_index = 0;
  std::vector<std::vector<Utterance>> unused_variations;
};
}  // namespace edit

using EditKind = std::variant<edit::AddUtterance, edit::DuplicateUtterance, edit::DeleteUtterance,
                              edit::ChangeSpeaker, edit::MoveUtterance, edit::UpdateText, edit::Retag,
                              edit::ReplaceSpan>;

struct EditOperation {
  EditKind kind;
  std::int64_t base_version = 0;
};

void to_json(nlohmann::json& j, const EditKind& v);
void from_json(const nlohmann::json& j, EditKind& v);
void to_json(nlohmann::json& j, const EditOperation& v);
void from_json(const nlohmann::json& j, EditOperation& v);

// Pure application of one operation: version + 1, provenance Refined.
// Throws Error(VersionConflict), Error(IndexOutOfBounds), Error(EmptyText),
// Error(TaxonomyError) for Retag with categories the speaker cannot use.
DialogueCandidate apply_edit(const DialogueCandidate& candidate, const EditOperation& op);

struct HistoryEntry {
  // The operation document, or {"kind": "Undo"}.
  nlohmann::json op;
  std::string before_hash;
  std::string after_hash;
  std::int64_t version = 0;  // candidate version after the entry

  friend bool operator==(const HistoryEntry&, const HistoryEntry&) = default;
};

void to_json(nlohmann::json& j, const HistoryEntry& v);
void from_json(const nlohmann::json& j, HistoryEntry& v);

struct SubDialogueSpan {
  std::size_t start_index = 0;
  std::size_t end_index = 0;  // inclusive

  std::size_t size() const { return end_index - start_index + 1; }
  friend bool operator==(const SubDialogueSpan&, const SubDialogueSpan&) = default;
};

void to_json(nlohmann::json& j, const SubDialogueSpan& v);
void from_json(const nlohmann::json& j, SubDialogueSpan& v);

// Throws Error(SpanInvalid) unless 0 <= start <= end < turn_count.
void check_span(const SubDialogueSpan& span, std::size_t turn_count);

struct PreservedElements {
  std::map<std::string, Level> learner_level;
  std::string context_summary;
  std::string content_summary;
  std::size_t turn_count = 0;

  friend bool operator==(const PreservedElements&, const PreservedElements&) = default;
};

struct Variation {
  std::vector<Utterance> utterances;
  // Concepts mentioned in the original span but not in this variation.
  std::vector<std::string> concept_drift;

  friend bool operator==(const Variation&, const Variation&) = default;
};

struct LaboratoryResult {
  std::string candidate_id;
  std::int64_t candidate_version = 0;
  SubDialogueSpan span;
  std::array<Variation, 4> variations;
  PreservedElements preserved;
  std::vector<llm::TraceEntry> trace;
};

void to_json(nlohmann::json& j, const LaboratoryResult& v);
void from_json(const nlohmann::json& j, LaboratoryResult& v);

// Concept ids of `state` mentioned (case-insensitively) in the utterances.
std::vector<std::string> mentioned_concepts(const std::vector<Utterance>& utterances,
                                            const LearnerKnowledgeState& state);
std::string summarize_content(const std::vector<Utterance>& span, const LearnerKnowledgeState& state);

// Builds the laboratory prompt spec without calling the provider.
llm::PromptSpec laboratory_prompt(const llm::Gateway& gateway, const DialogueCandidate& candidate,
                                  const SubDialogueSpan& span, const std::string& language);

// Four alternative versions of the span; never modifies the candidate.
// Throws Error(SpanInvalid), Error(InvalidDialogue) or SchemaViolation.
LaboratoryResult run_laboratory(llm::Gateway& gateway, const DialogueCandidate& candidate,
                                const SubDialogueSpan& span, const std::string& language);

// Full edit history of one candidate, starting at its generated snapshot.
class CandidateHistory {
 public:
  explicit CandidateHistory(DialogueCandidate generated);

  // Rebuilds the history by replaying the entries. Throws
  // Error(CorruptRecord) when a recorded hash does not match.
  static CandidateHistory replay(DialogueCandidate generated, const std::vector<HistoryEntry>& entries);

  const DialogueCandidate& generated() const { return generated_; }
  const DialogueCandidate& current() const { return current_; }
  const std::vector<HistoryEntry>& entries() const { return entries_; }
  bool can_undo() const { return !undo_stack_.empty(); }

  const DialogueCandidate& apply(const EditOperation& op);

  // Restores the snapshot before the last undoable operation; the version
  // still increases. Throws Error(NothingToUndo).
  const DialogueCandidate& undo(std::optional<std::int64_t> base_version = std::nullopt);

  // Throws Error(StaleVariation) when `lab` was produced for another
  // version or span, Error(IndexOutOfBounds) for a bad variation index.
  const DialogueCandidate& apply_variation(const LaboratoryResult& lab, const SubDialogueSpan& span,
                                           int variation_index);

 private:
  void record(nlohmann::json op, const DialogueCandidate& before);

  DialogueCandidate generated_;
  DialogueCandidate current_;
  std::vector<HistoryEntry> entries_;
  std::vector<DialogueCandidate> undo_stack_;
};

}  // namespace vicar
