#pragma once

// Machine-checkable quality reports for dialogue candidates. Every rule is
// deterministic unless a judge gateway is supplied.

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vicar/llm/gateway.hpp"
#include "vicar/model.hpp"

namespace vicar {

enum class Severity { Error, Warning, Info };
std::string_view to_string(Severity severity);

namespace lint_rules {
inline constexpr const char* kNumericFidelity = "INC-1";
inline constexpr const char* kQaConsistency = "INC-2";
inline constexpr const char* kReverseProgression = "INC-3";
inline constexpr const char* kWordCap = "DYN-1";
inline constexpr const char* kValidation = "VAL";
// Judge-only criteria.
inline constexpr const char* kDeepReasoning = "SAP1";
inline constexpr const char* kLearnerGrowth = "SAP2";
inline constexpr const char* kNaturalness = "SI1";
}  // namespace lint_rules

struct Finding {
  std::string rule_id;
  std::optional<std::size_t> turn_index;
  Severity severity = Severity::Warning;
  std::string message;

  friend bool operator==(const Finding&, const Finding&) = default;
};

struct DynamicMetrics {
  std::size_t turn_count = 0;
  double alternation_rate = 0.0;  // 0 for fewer than two turns
  double mean_words_per_turn = 0.0;
  std::size_t max_words_per_turn = 0;
  std::size_t distinct_tutor_categories = 0;
  std::size_t distinct_learner_categories = 0;
  std::set<TeachingStrategy> strategies_present;

  friend bool operator==(const DynamicMetrics&, const DynamicMetrics&) = default;
};

struct CategoryCoverage {
  std::map<Speaker, std::map<Category, int>> counts;
  std::vector<Category> unused_tutor;
  std::vector<Category> unused_learner;

  friend bool operator==(const CategoryCoverage&, const CategoryCoverage&) = default;
};

struct LintReport {
  std::vector<Finding> findings;  // sorted by (turn_index, rule_id), untargeted last
  DynamicMetrics metrics;
  CategoryCoverage coverage;
  // Share of turns carrying at least one Error finding, in percent.
  double error_turn_percentage = 0.0;
  bool judge_used = false;
  std::vector<std::string> notes;

  std::size_t count(Severity severity) const;
};

void to_json(nlohmann::json& j, const Finding& v);
void to_json(nlohmann::json& j, const DynamicMetrics& v);
void to_json(nlohmann::json& j, const CategoryCoverage& v);
void to_json(nlohmann::json& j, const LintReport& v);

struct NumericMention {
  double value = 0.0;
  std::string literal;
  std::string unit;                  // normalized, empty when none
  std::set<std::string> context;     // content words within three tokens
};

std::optional<double> parse_number(const std::string& literal);
std::string normalize_unit(const std::string& token);
std::vector<NumericMention> extract_numbers(const std::string& text);

std::vector<Finding> lint_numeric_fidelity(const DialogueCandidate& candidate, const std::string& section_text);

// Learner Questioning followed by tutor Answering with no topical overlap.
// With a judge, flagged pairs are escalated: confirmed mismatches become
// Errors; a failing judge leaves the heuristic Warning and adds a note.
std::vector<Finding> lint_qa_consistency(const DialogueCandidate& candidate, llm::Gateway* judge = nullptr,
                                         const std::string& language = "en",
                                         std::vector<std::string>* notes = nullptr);

enum class TrajectoryEvent { Wrong, Scaffold, Correct, Reflect, NewSubtopic };

struct ConceptEvent {
  std::size_t turn_index = 0;
  TrajectoryEvent event = TrajectoryEvent::Correct;
};

// Per-concept event sequences inferred from tags and concept mentions.
std::map<std::string, std::vector<ConceptEvent>> trajectory_events(const DialogueCandidate& candidate,
                                                                   const LearnerKnowledgeState& state);

std::vector<Finding> lint_knowledge_trajectory(const DialogueCandidate& candidate,
                                               const LearnerKnowledgeState& state);

std::vector<Finding> lint_word_cap(const DialogueCandidate& candidate, int word_cap);

DynamicMetrics compute_metrics(const DialogueCandidate& candidate);
CategoryCoverage compute_coverage(const DialogueCandidate& candidate);

// Judge-only criteria; throws what the gateway throws.
std::vector<Finding> judge_criteria(llm::Gateway& judge, const DialogueCandidate& candidate,
                                    const std::string& language);

struct LintOptions {
  std::optional<std::string> section_text;  // enables INC-1
  std::optional<LearnerKnowledgeState> state;  // defaults to the candidate's
  llm::Gateway* judge = nullptr;
  std::string language = "en";
  int word_cap = 60;
};

LintReport lint(const DialogueCandidate& candidate, const LintOptions& options = {});

void sort_findings(std::vector<Finding>& findings);

}  // namespace vicar
