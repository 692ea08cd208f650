#include "vicar/pipeline.hpp"

#include <algorithm>
#include <future>
#include <set>

#include "vicar/assets.hpp"
#include "vicar/json_io.hpp"
#include "vicar/taxonomy.hpp"
#include "vicar/text.hpp"

namespace vicar {
namespace {

using nlohmann::json;
using llm::Issue;

const std::map<ErrorCode, int> kCheckRepairLimits{
    {ErrorCode::GroundingError, 1},
    {ErrorCode::ConsistencyError, 1},
    {ErrorCode::TaxonomyError, 1},
};

std::string level_word(int level) { return "level " + std::to_string(level); }

json optional_json(const auto& value) { return value ? json(*value) : json(nullptr); }

template <typename T>
std::optional<T> optional_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

}  // namespace

void register_default_assets(llm::Gateway& gateway) {
  for (const auto& asset : assets::prompts()) {
    const std::string id(asset.id);
    if (gateway.has_template(id)) continue;
    const auto temperature = id == templates::kRubric ? llm::Temperature::fixed(kRubricTemperature)
                                                      : llm::Temperature::provider_default();
    try {
      gateway.register_template(id, std::string(asset.body), temperature);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DuplicateId) throw;
    }
  }
  for (const auto& asset : assets::schemas()) {
    const std::string id(asset.id);
    if (gateway.has_schema(id)) continue;
    try {
      gateway.register_schema(id, json::parse(asset.body));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DuplicateId) throw;
    }
  }
}

void check_request(const GenerationRequest& request) {
  if (text::trim(request.section.text).empty()) throw Error(ErrorCode::EmptyText, "section text is empty");
  if (text::trim(request.scenario).empty()) throw Error(ErrorCode::InvalidArgument, "scenario must not be empty");
  if (request.language != request.section.language) {
    throw Error(ErrorCode::InvalidArgument, "request language '" + request.language +
                                                "' does not match section language '" +
                                                request.section.language + "'");
  }
  for (const auto& h : request.highlights) {
    if (!h.section_id.empty() && h.section_id != request.section.id) {
      throw Error(ErrorCode::InvalidArgument, "highlight refers to section '" + h.section_id + "'");
    }
  }
  normalize_highlights(request.highlights, request.section.text.size());
}

std::string run_id_for(const GenerationRequest& request) {
  json key{{"section", request.section},
           {"highlights", request.highlights},
           {"scenario", request.scenario},
           {"language", request.language}};
  return "run-" + text::hex64(text::fnv1a64(canonical_dump(key))).substr(0, 12);
}

void rename_run(GenerationResult& result, const std::string& run_id) {
  result.run_id = run_id;
  for (auto& slot : result.slots) {
    const std::string id = run_id + "-c" + std::to_string(slot.variant_index);
    if (slot.candidate) slot.candidate->id = id;
    if (slot.card) slot.card->candidate_id = id;
  }
}

// ---------------------------------------------------------------------------

std::size_t GenerationResult::ok_count() const {
  return static_cast<std::size_t>(std::count_if(slots.begin(), slots.end(), [](const auto& s) { return s.ok(); }));
}

const DialogueCandidate* GenerationResult::find_candidate(const std::string& candidate_id) const {
  for (const auto& slot : slots) {
    if (slot.candidate && slot.candidate->id == candidate_id) return &*slot.candidate;
  }
  return nullptr;
}

void to_json(json& j, const VariantSlot& v) {
  j = json{{"variant_index", v.variant_index},
           {"state", v.state},
           {"answer_sheet", optional_json(v.answer_sheet)},
           {"candidate", optional_json(v.candidate)},
           {"card", optional_json(v.card)},
           {"failed_step", v.failed_step},
           {"failure", v.failure}};
  j["failure_code"] = v.failure_code ? json(std::string(to_string(*v.failure_code))) : json(nullptr);
}

void from_json(const json& j, VariantSlot& v) {
  j.at("variant_index").get_to(v.variant_index);
  j.at("state").get_to(v.state);
  v.answer_sheet = optional_from<AnswerSheet>(j, "answer_sheet");
  v.candidate = optional_from<DialogueCandidate>(j, "candidate");
  v.card = optional_from<DialogueCard>(j, "card");
  v.failed_step = j.value("failed_step", 0);
  v.failure = j.value("failure", std::string{});
  v.failure_code.reset();
  if (auto name = optional_from<std::string>(j, "failure_code")) {
    v.failure_code = parse_error_code(*name);
    if (!v.failure_code) throw Error(ErrorCode::ParseError, "unknown failure code: " + *name);
  }
}

void to_json(json& j, const GenerationResult& v) {
  j = json{{"run_id", v.run_id},     {"section_id", v.section_id}, {"scenario", v.scenario},
           {"language", v.language}, {"highlights", v.highlights}, {"rubric", v.rubric},
           {"slots", v.slots},       {"trace", v.trace},           {"usage", v.usage}};
}

void from_json(const json& j, GenerationResult& v) {
  j.at("run_id").get_to(v.run_id);
  j.at("section_id").get_to(v.section_id);
  j.at("scenario").get_to(v.scenario);
  j.at("language").get_to(v.language);
  j.at("highlights").get_to(v.highlights);
  j.at("rubric").get_to(v.rubric);
  const auto& slots = j.at("slots");
  if (!slots.is_array() || slots.size() != kVariantCount) {
    throw Error(ErrorCode::ParseError, "a generation result has exactly 4 slots");
  }
  for (std::size_t i = 0; i < kVariantCount; ++i) slots[i].get_to(v.slots[i]);
  j.at("trace").get_to(v.trace);
  v.usage = j.value("usage", json::object());
}

// ---------------------------------------------------------------------------

int deficit_level(int variant_index, int highlighted_ordinal) {
  return ((variant_index + highlighted_ordinal) % 3) + 1;
}

LearnerKnowledgeState assign_knowledge_state(const UnderstandingRubric& rubric,
                                             const std::vector<Highlight>& highlights, int variant_index) {
  if (variant_index < 0 || variant_index >= kVariantCount) {
    throw Error(ErrorCode::InvalidArgument, "variant_index must be in 0..3");
  }
  LearnerKnowledgeState state;
  state.rubric_id = rubric.id;
  state.variant_index = variant_index;
  int ordinal = 0;
  for (const auto& c : rubric.concepts) {
    if (concept_intersects(c, highlights)) {
      state.levels[c.id] = Level(deficit_level(variant_index, ordinal++));
    } else {
      state.levels[c.id] = Level::mastery();
    }
  }
  return state;
}

std::string render_rubric(const UnderstandingRubric& rubric) {
  std::string out;
  for (const auto& c : rubric.concepts) {
    out += "* " + c.name + "\n";
    auto it = rubric.level_descriptions.find(c.id);
    if (it == rubric.level_descriptions.end()) continue;
    for (int level = 1; level <= 4; ++level) {
      out += "  - " + level_word(level) + ": " + it->second[level - 1] + "\n";
    }
  }
  return out;
}

std::string render_knowledge_state(const UnderstandingRubric& rubric, const LearnerKnowledgeState& state) {
  std::string out;
  for (const auto& c : rubric.concepts) {
    auto level = state.levels.find(c.id);
    if (level == state.levels.end()) continue;
    const int value = level->second.value();
    out += "- " + c.name + ": " + level_word(value);
    if (auto d = rubric.level_descriptions.find(c.id); d != rubric.level_descriptions.end()) {
      out += " (" + d->second[value - 1] + ")";
    }
    out += "\n";
  }
  return out;
}

std::string render_answer_sheet(const UnderstandingRubric& rubric, const AnswerSheet& sheet) {
  std::string out;
  for (const auto& c : rubric.concepts) {
    auto it = sheet.entries.find(c.id);
    if (it == sheet.entries.end()) continue;
    out += "- " + c.name + "\n  expected answer: " + it->second.expected_answer + "\n";
    for (const auto& q : it->second.struggle_questions) out += "  struggles with: " + q + "\n";
  }
  return out;
}

std::string render_categories(Speaker speaker) {
  std::string out;
  for (auto c : categories_for(speaker)) {
    out += "- " + std::string(to_string(c)) + ": " + std::string(describe(c, speaker)) + "\n";
  }
  return out;
}

std::string render_strategies() {
  std::string out;
  for (auto s : all_strategies()) {
    out += "- " + std::string(to_string(s)) + ": " + std::string(describe(s)) + "\n";
  }
  return out;
}

Utterance utterance_from_output(const json& j) {
  Utterance u;
  const auto speaker = parse_speaker(j.at("speaker").get<std::string>());
  if (!speaker) throw Error(ErrorCode::TaxonomyError, "unknown speaker " + j.at("speaker").dump());
  u.speaker = *speaker;
  u.text = std::string(text::trim(j.at("text").get<std::string>()));
  for (const auto& name : j.at("categories")) {
    auto c = parse_category(name.get<std::string>());
    if (!c) throw Error(ErrorCode::TaxonomyError, "unknown category " + name.dump());
    u.categories.insert(*c);
  }
  if (j.contains("strategies")) {
    for (const auto& name : j.at("strategies")) {
      auto s = parse_strategy(name.get<std::string>());
      if (!s) throw Error(ErrorCode::TaxonomyError, "unknown teaching strategy " + name.dump());
      u.strategy_tags.insert(*s);
    }
  }
  return u;
}

std::vector<Issue> taxonomy_issues(const json& utterances) {
  std::vector<Issue> issues;
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    const auto& u = utterances[i];
    const std::string where = "utterance " + std::to_string(i);
    auto speaker = parse_speaker(u.at("speaker").get<std::string>());
    if (!speaker) {
      issues.push_back({ErrorCode::TaxonomyError, where + ": unknown speaker " + u.at("speaker").dump()});
      continue;
    }
    for (const auto& name : u.at("categories")) {
      auto c = parse_category(name.get<std::string>());
      if (!c) {
        issues.push_back({ErrorCode::TaxonomyError,
                          where + ": unknown category " + name.dump() + "; use only the listed " +
                              std::string(to_string(*speaker)) + " categories"});
      } else if (!category_allowed(*speaker, *c)) {
        issues.push_back({ErrorCode::TaxonomyError, where + ": category " + name.dump() + " is not a " +
                                                        std::string(to_string(*speaker)) + " category"});
      }
    }
    if (u.contains("strategies")) {
      for (const auto& name : u.at("strategies")) {
        if (!parse_strategy(name.get<std::string>())) {
          issues.push_back({ErrorCode::TaxonomyError, where + ": unknown teaching strategy " + name.dump()});
        }
      }
    }
  }
  return issues;
}

// ---------------------------------------------------------------------------

Pipeline::Pipeline(llm::Gateway& gateway, PipelineConfig config) : gateway_(gateway), config_(config) {
  if (config_.min_concepts < 1 || config_.min_concepts > config_.max_concepts) {
    throw Error(ErrorCode::InvalidArgument, "invalid concept bounds");
  }
  if (config_.min_turns < 2 || config_.min_turns > config_.max_turns) {
    throw Error(ErrorCode::InvalidArgument, "invalid turn bounds");
  }
  register_default_assets(gateway_);
}

void Pipeline::check_budget(const TranscriptSection& section) const {
  if (section.text.size() > config_.max_section_chars) {
    throw Error(ErrorCode::BudgetExceeded, "section has " + std::to_string(section.text.size()) +
                                               " characters; the budget is " +
                                               std::to_string(config_.max_section_chars));
  }
}

llm::PromptSpec Pipeline::rubric_prompt(const TranscriptSection& section, const std::string& language) const {
  return gateway_.make_prompt(templates::kRubric,
                              {{"section_text", section.text},
                               {"language", language},
                               {"min_concepts", std::to_string(config_.min_concepts)},
                               {"max_concepts", std::to_string(config_.max_concepts)}},
                              templates::kRubric);
}

llm::PromptSpec Pipeline::answer_sheet_prompt(const LearnerKnowledgeState& state, const UnderstandingRubric& rubric,
                                              const TranscriptSection& section,
                                              const std::string& language) const {
  return gateway_.make_prompt(templates::kAnswerSheet,
                              {{"section_text", section.text},
                               {"language", language},
                               {"rubric", render_rubric(rubric)},
                               {"knowledge_state", render_knowledge_state(rubric, state)}},
                              templates::kAnswerSheet);
}

llm::PromptSpec Pipeline::dialogue_prompt(const LearnerKnowledgeState& state, const UnderstandingRubric& rubric,
                                          const AnswerSheet& sheet, const std::string& scenario,
                                          const TranscriptSection& section, const std::string& language) const {
  const auto featured = all_strategies()[static_cast<std::size_t>(state.variant_index) % all_strategies().size()];
  return gateway_.make_prompt(templates::kDialogue,
                              {{"section_text", section.text},
                               {"language", language},
                               {"scenario", scenario},
                               {"knowledge_state", render_knowledge_state(rubric, state)},
                               {"answer_sheet", render_answer_sheet(rubric, sheet)},
                               {"tutor_categories", render_categories(Speaker::Tutor)},
                               {"learner_categories", render_categories(Speaker::Learner)},
                               {"strategies", render_strategies()},
                               {"featured_strategy", std::string(to_string(featured))},
                               {"variant_index", std::to_string(state.variant_index)},
                               {"min_turns", std::to_string(config_.min_turns)},
                               {"max_turns", std::to_string(config_.max_turns)},
                               {"max_words", std::to_string(config_.soft_word_cap)}},
                              templates::kDialogue);
}

UnderstandingRubric Pipeline::extract_concepts_and_rubric(const TranscriptSection& section,
                                                          const std::string& language, llm::Trace* trace) {
  check_budget(section);
  const std::string& source = section.text;
  const int lo = config_.min_concepts;
  const int hi = config_.max_concepts;

  llm::CallOptions options;
  options.trace = trace;
  options.step = "rubric";
  options.check_repair_limits = kCheckRepairLimits;
  options.check = [&source, lo, hi](const json& out) {
    std::vector<Issue> issues;
    const auto& concepts = out.at("concepts");
    const int n = static_cast<int>(concepts.size());
    if (n < lo || n > hi) {
      issues.push_back({ErrorCode::SchemaViolation, "expected between " + std::to_string(lo) + " and " +
                                                        std::to_string(hi) + " concepts, got " +
                                                        std::to_string(n)});
    }
    std::set<std::string> seen;
    for (const auto& c : concepts) {
      const std::string name(text::trim(c.at("name").get<std::string>()));
      if (!seen.insert(normalize_concept_id(name)).second) {
        issues.push_back({ErrorCode::SchemaViolation, "concept \"" + name + "\" is listed twice"});
      }
    }
    for (const auto& c : concepts) {
      const std::string name(text::trim(c.at("name").get<std::string>()));
      if (name.empty() || !text::contains_ci(source, name)) {
        issues.push_back({ErrorCode::GroundingError,
                          "concept \"" + name + "\" does not appear verbatim in the excerpt"});
      }
    }
    return issues;
  };

  auto result = gateway_.complete_structured(rubric_prompt(section, language), options);

  UnderstandingRubric rubric;
  rubric.id = "rubric-" + text::hex64(text::fnv1a64(section.id + "\n" + language + "\n" + source)).substr(0, 12);
  for (const auto& c : result.parsed->at("concepts")) {
    Concept item;
    item.name = std::string(text::trim(c.at("name").get<std::string>()));
    item.id = normalize_concept_id(item.name);
    item.span_refs = text::find_all_ci(source, item.name);
    LevelDescriptions levels;
    for (std::size_t i = 0; i < 4; ++i) levels[i] = c.at("levels")[i].get<std::string>();
    rubric.level_descriptions[item.id] = levels;
    rubric.concepts.push_back(std::move(item));
  }
  return rubric;
}

AnswerSheet Pipeline::generate_answer_sheet(const LearnerKnowledgeState& state, const UnderstandingRubric& rubric,
                                            const TranscriptSection& section, const std::string& language,
                                            llm::Trace* trace) {
  for (const auto& c : rubric.concepts) {
    if (!state.levels.count(c.id)) {
      throw Error(ErrorCode::InvalidArgument, "knowledge state has no level for '" + c.id + "'");
    }
  }

  llm::CallOptions options;
  options.trace = trace;
  options.step = "answer_sheet[" + std::to_string(state.variant_index) + "]";
  options.check_repair_limits = kCheckRepairLimits;
  options.check = [&state](const json& out) {
    std::vector<Issue> issues;
    std::set<std::string> seen;
    for (const auto& a : out.at("answers")) {
      const std::string id = normalize_concept_id(a.at("concept").get<std::string>());
      auto level = state.levels.find(id);
      if (level == state.levels.end()) {
        issues.push_back({ErrorCode::SchemaViolation, "unknown concept " + a.at("concept").dump()});
        continue;
      }
      if (!seen.insert(id).second) {
        issues.push_back({ErrorCode::SchemaViolation, "concept " + a.at("concept").dump() + " answered twice"});
      }
    }
    for (const auto& [id, level] : state.levels) {
      if (!seen.count(id)) issues.push_back({ErrorCode::SchemaViolation, "no answer for concept \"" + id + "\""});
    }
    for (const auto& a : out.at("answers")) {
      const std::string id = normalize_concept_id(a.at("concept").get<std::string>());
      auto level = state.levels.find(id);
      if (level == state.levels.end()) continue;
      const bool has_questions = !a.at("struggle_questions").empty();
      if (!level->second.is_deficit() && has_questions) {
        issues.push_back({ErrorCode::ConsistencyError,
                          "concept \"" + id + "\" is at level 4 and must have no struggle questions"});
      } else if (level->second.is_deficit() && !has_questions) {
        issues.push_back({ErrorCode::ConsistencyError, "concept \"" + id + "\" is at " +
                                                           level_word(level->second.value()) +
                                                           " and needs at least one struggle question"});
      }
    }
    return issues;
  };

  auto result = gateway_.complete_structured(answer_sheet_prompt(state, rubric, section, language), options);
  AnswerSheet sheet;
  for (const auto& a : result.parsed->at("answers")) {
    AnswerEntry entry;
    entry.expected_answer = a.at("expected_answer").get<std::string>();
    a.at("struggle_questions").get_to(entry.struggle_questions);
    sheet.entries[normalize_concept_id(a.at("concept").get<std::string>())] = std::move(entry);
  }
  return sheet;
}

DialogueCandidate Pipeline::generate_dialogue(const LearnerKnowledgeState& state, const UnderstandingRubric& rubric,
                                              const AnswerSheet& sheet, const std::string& scenario,
                                              const TranscriptSection& section, const std::string& language,
                                              const std::string& candidate_id, llm::Trace* trace) {
  const int lo = config_.min_turns;
  const int hi = config_.max_turns;

  llm::CallOptions options;
  options.trace = trace;
  options.step = "dialogue[" + std::to_string(state.variant_index) + "]";
  options.check_repair_limits = kCheckRepairLimits;
  options.check = [lo, hi](const json& out) {
    const auto& utterances = out.at("utterances");
    std::vector<Issue> issues = taxonomy_issues(utterances);
    if (!issues.empty()) return issues;

    const int n = static_cast<int>(utterances.size());
    if (n < lo || n > hi) {
      issues.push_back({ErrorCode::SchemaViolation, "expected between " + std::to_string(lo) + " and " +
                                                        std::to_string(hi) + " utterances, got " +
                                                        std::to_string(n)});
    }
    std::set<Category> tutor;
    std::set<Category> learner;
    bool any_strategy = false;
    for (std::size_t i = 0; i < utterances.size(); ++i) {
      const Utterance u = utterance_from_output(utterances[i]);
      if (u.text.empty()) {
        issues.push_back({ErrorCode::SchemaViolation, "utterance " + std::to_string(i) + " has empty text"});
      }
      (u.speaker == Speaker::Tutor ? tutor : learner).insert(u.categories.begin(), u.categories.end());
      any_strategy = any_strategy || !u.strategy_tags.empty();
    }
    if (tutor.empty() || learner.empty()) {
      issues.push_back({ErrorCode::SchemaViolation, "both the tutor and the learner must speak"});
    }
    if (tutor.size() < 2) {
      issues.push_back({ErrorCode::SchemaViolation, "use at least two different tutor categories"});
    }
    if (learner.size() < 2) {
      issues.push_back({ErrorCode::SchemaViolation, "use at least two different learner categories"});
    }
    if (!any_strategy) {
      issues.push_back({ErrorCode::SchemaViolation, "tag at least one utterance with a teaching strategy"});
    }
    return issues;
  };

  auto result =
      gateway_.complete_structured(dialogue_prompt(state, rubric, sheet, scenario, section, language), options);

  DialogueCandidate candidate;
  candidate.id = candidate_id;
  candidate.state = state;
  candidate.scenario = scenario;
  candidate.provenance = Provenance::Generated;
  candidate.version = 1;
  for (const auto& u : result.parsed->at("utterances")) candidate.utterances.push_back(utterance_from_output(u));
  if (auto violations = validate_dialogue(candidate); !violations.empty()) {
    throw Error(ErrorCode::InvalidDialogue, violations.front().message);
  }
  return candidate;
}

GenerationResult Pipeline::run_initial_generation(const GenerationRequest& request, std::stop_token stop) {
  check_request(request);
  check_budget(request.section);

  GenerationResult result;
  result.run_id = run_id_for(request);
  result.section_id = request.section.id;
  result.scenario = request.scenario;
  result.language = request.language;
  result.highlights = normalize_highlights(request.highlights, request.section.text.size());
  for (auto& h : result.highlights) h.section_id = request.section.id;

  auto cancelled = [&stop] { return stop.stop_requested(); };
  if (cancelled()) throw Error(ErrorCode::Cancelled, "generation cancelled");

  llm::Trace trace;
  try {
    result.rubric = extract_concepts_and_rubric(request.section, request.language, &trace);
  } catch (const PipelineFailed&) {
    throw;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::BudgetExceeded) throw;
    throw PipelineFailed(1, e.code(), e.detail());
  }

  auto run_variant = [&](int index, llm::Trace& variant_trace) {
    VariantSlot slot;
    slot.variant_index = index;
    slot.state = assign_knowledge_state(result.rubric, result.highlights, index);
    int step = 3;
    try {
      if (cancelled()) throw Error(ErrorCode::Cancelled, "generation cancelled");
      slot.answer_sheet =
          generate_answer_sheet(slot.state, result.rubric, request.section, request.language, &variant_trace);
      step = 4;
      if (cancelled()) throw Error(ErrorCode::Cancelled, "generation cancelled");
      auto candidate = generate_dialogue(slot.state, result.rubric, *slot.answer_sheet, request.scenario,
                                         request.section, request.language,
                                         result.run_id + "-c" + std::to_string(index), &variant_trace);
      slot.card = derive_card(candidate);
      slot.candidate = std::move(candidate);
    } catch (const Error& e) {
      slot.failed_step = step;
      slot.failure_code = e.code();
      slot.failure = e.detail();
    } catch (const std::exception& e) {
      slot.failed_step = step;
      slot.failure_code = ErrorCode::PipelineFailed;
      slot.failure = e.what();
    }
    return slot;
  };

  std::array<llm::Trace, kVariantCount> traces;
  if (config_.parallel_variants) {
    std::array<std::future<VariantSlot>, kVariantCount> futures;
    for (int i = 0; i < kVariantCount; ++i) {
      futures[i] = std::async(std::launch::async, run_variant, i, std::ref(traces[i]));
    }
    for (int i = 0; i < kVariantCount; ++i) result.slots[i] = futures[i].get();
  } else {
    for (int i = 0; i < kVariantCount; ++i) result.slots[i] = run_variant(i, traces[i]);
  }
  for (const auto& t : traces) trace.append(t);
  result.trace = trace.entries();

  if (cancelled()) throw Error(ErrorCode::Cancelled, "generation cancelled");

  for (const auto& entry : result.trace) {
    for (const auto& [key, value] : entry.usage.items()) {
      if (value.is_number_integer()) result.usage[key] = result.usage.value(key, 0LL) + value.get<long long>();
    }
  }
  result.usage["provider_calls"] = result.trace.size();

  if (result.ok_count() < 2) {
    const auto& failed = *std::find_if(result.slots.begin(), result.slots.end(),
                                       [](const VariantSlot& s) { return !s.ok(); });
    throw PipelineFailed(failed.failed_step, failed.failure_code.value_or(ErrorCode::PipelineFailed),
                         "only " + std::to_string(result.ok_count()) +
                             " of 4 variants succeeded; variant " + std::to_string(failed.variant_index) +
                             ": " + failed.failure);
  }
  return result;
}

}  // namespace vicar
