#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <stop_token>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vicar/llm/gateway.hpp"
#include "vicar/model.hpp"

namespace vicar {

inline constexpr int kVariantCount = 4;
inline constexpr double kRubricTemperature = 0.65;

namespace templates {
inline constexpr const char* kRubric = "rubric_v1";
inline constexpr const char* kAnswerSheet = "answer_sheet_v1";
inline constexpr const char* kDialogue = "dialogue_v1";
inline constexpr const char* kLaboratory = "laboratory_v1";
inline constexpr const char* kQaJudge = "qa_judge_v1";
inline constexpr const char* kCriteriaJudge = "criteria_judge_v1";
}  // namespace templates

// Registers every embedded template and schema. The rubric template
// defaults to 0.65; the rest use the provider's own default.
void register_default_assets(llm::Gateway& gateway);

struct PipelineConfig {
  int min_concepts = 2;
  int max_concepts = 8;
  int min_turns = 6;
  int max_turns = 30;
  int soft_word_cap = 60;
  std::size_t max_section_chars = 12000;
  bool parallel_variants = true;
};

struct GenerationRequest {
  TranscriptSection section;
  std::vector<Highlight> highlights;
  std::string scenario;
  std::string language;
};

// Throws Error(InvalidArgument/RangeError) when the request is inconsistent.
void check_request(const GenerationRequest& request);

struct VariantSlot {
  int variant_index = 0;
  LearnerKnowledgeState state;
  std::optional<AnswerSheet> answer_sheet;
  std::optional<DialogueCandidate> candidate;
  std::optional<DialogueCard> card;
  // Set when the slot failed: pipeline step (3 or 4), cause and message.
  int failed_step = 0;
  std::optional<ErrorCode> failure_code;
  std::string failure;

  bool ok() const { return candidate.has_value(); }
  friend bool operator==(const VariantSlot&, const VariantSlot&) = default;
};

struct GenerationResult {
  std::string run_id;
  std::string section_id;
  std::string scenario;
  std::string language;
  std::vector<Highlight> highlights;
  UnderstandingRubric rubric;
  std::array<VariantSlot, kVariantCount> slots;
  std::vector<llm::TraceEntry> trace;
  nlohmann::json usage = nlohmann::json::object();

  std::size_t ok_count() const;
  const DialogueCandidate* find_candidate(const std::string& candidate_id) const;
};

void to_json(nlohmann::json& j, const VariantSlot& v);
void from_json(const nlohmann::json& j, VariantSlot& v);
void to_json(nlohmann::json& j, const GenerationResult& v);
void from_json(const nlohmann::json& j, GenerationResult& v);

// Deficit level for the k-th highlighted concept of variant v.
int deficit_level(int variant_index, int highlighted_ordinal);

// LLM-free: unhighlighted concepts get level 4, highlighted ones rotate
// through 1..3 by variant so the four candidates differ in deficit depth.
LearnerKnowledgeState assign_knowledge_state(const UnderstandingRubric& rubric,
                                             const std::vector<Highlight>& highlights,
                                             int variant_index);

// Prompt renderings of domain values shared by several templates.
std::string render_rubric(const UnderstandingRubric& rubric);
std::string render_knowledge_state(const UnderstandingRubric& rubric, const LearnerKnowledgeState& state);
std::string render_answer_sheet(const UnderstandingRubric& rubric, const AnswerSheet& sheet);
std::string render_categories(Speaker speaker);
std::string render_strategies();

// Decodes one generated utterance object; taxonomy names are parsed leniently.
Utterance utterance_from_output(const nlohmann::json& j);
// Semantic issues of a list of generated utterances against the taxonomy.
std::vector<llm::Issue> taxonomy_issues(const nlohmann::json& utterances);

class Pipeline {
 public:
  Pipeline(llm::Gateway& gateway, PipelineConfig config = {});

  const PipelineConfig& config() const { return config_; }

  // Spec builders, exposed so callers can inspect temperatures and variables.
  llm::PromptSpec rubric_prompt(const TranscriptSection& section, const std::string& language) const;
  llm::PromptSpec answer_sheet_prompt(const LearnerKnowledgeState& state, const UnderstandingRubric& rubric,
                                      const TranscriptSection& section, const std::string& language) const;
  llm::PromptSpec dialogue_prompt(const LearnerKnowledgeState& state, const UnderstandingRubric& rubric,
                                  const AnswerSheet& sheet, const std::string& scenario,
                                  const TranscriptSection& section, const std::string& language) const;

  // Step 1. Throws SchemaViolation (including GroundingError after one
  // repair) or Error(BudgetExceeded).
  UnderstandingRubric extract_concepts_and_rubric(const TranscriptSection& section, const std::string& language,
                                                  llm::Trace* trace = nullptr);

  // Step 3. Throws SchemaViolation (ConsistencyError after one repair).
  AnswerSheet generate_answer_sheet(const LearnerKnowledgeState& state, const UnderstandingRubric& rubric,
                                    const TranscriptSection& section, const std::string& language,
                                    llm::Trace* trace = nullptr);

  // Step 4. Throws SchemaViolation (TaxonomyError after one repair).
  DialogueCandidate generate_dialogue(const LearnerKnowledgeState& state, const UnderstandingRubric& rubric,
                                      const AnswerSheet& sheet, const std::string& scenario,
                                      const TranscriptSection& section, const std::string& language,
                                      const std::string& candidate_id, llm::Trace* trace = nullptr);

  // Steps 1 to 4. Throws PipelineFailed when Step 1 fails or fewer than two
  // variants succeed, Error(BudgetExceeded), or Error(Cancelled).
  GenerationResult run_initial_generation(const GenerationRequest& request, std::stop_token stop = {});

 private:
  void check_budget(const TranscriptSection& section) const;

  llm::Gateway& gateway_;
  PipelineConfig config_;
};

// Stable id derived from the request contents.
std::string run_id_for(const GenerationRequest& request);
// Gives the run a new id and renumbers its candidates and cards to match.
void rename_run(GenerationResult& result, const std::string& run_id);

}  // namespace vicar
