#include "vicar/refinement.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "vicar/json_io.hpp"
#include "vicar/pipeline.hpp"
#include "vicar/taxonomy.hpp"
#include "vicar/text.hpp"

namespace vicar {
namespace {

using nlohmann::json;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void check_index(std::size_t index, std::size_t size, const char* what) {
  if (index >= size) {
    throw Error(ErrorCode::IndexOutOfBounds, std::string(what) + " " + std::to_string(index) +
                                                 " is outside a dialogue of " + std::to_string(size) +
                                                 " turns");
  }
}

std::string checked_text(const std::string& raw) {
  std::string t(text::trim(raw));
  if (t.empty()) throw Error(ErrorCode::EmptyText, "utterance text must not be empty");
  return t;
}

void check_tags(Speaker speaker, const std::set<Category>& categories) {
  for (Category c : categories) {
    if (!category_allowed(speaker, c)) {
      throw Error(ErrorCode::TaxonomyError, std::string(to_string(c)) + " is not a " +
                                                std::string(to_string(speaker)) + " category");
    }
  }
}

Speaker other(Speaker s) { return s == Speaker::Tutor ? Speaker::Learner : Speaker::Tutor; }

std::string speaker_line(const Utterance& u) { return std::string(to_string(u.speaker)) + ": " + u.text; }

std::vector<std::vector<Utterance>> utterance_lists(const json& j) {
  std::vector<std::vector<Utterance>> out;
  for (const auto& list : j) out.push_back(list.get<std::vector<Utterance>>());
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Serialization

void to_json(json& j, const EditKind& v) {
  std::visit(Overloaded{
                 [&](const edit::AddUtterance& e) {
                   j = json{{"kind", "AddUtterance"}, {"index", e.index}, {"speaker", e.speaker},
                            {"text", e.text},         {"categories", e.categories}};
                 },
                 [&](const edit::DuplicateUtterance& e) { j = json{{"kind", "DuplicateUtterance"}, {"index", e.index}}; },
                 [&](const edit::DeleteUtterance& e) { j = json{{"kind", "DeleteUtterance"}, {"index", e.index}}; },
                 [&](const edit::ChangeSpeaker& e) { j = json{{"kind", "ChangeSpeaker"}, {"index", e.index}}; },
                 [&](const edit::MoveUtterance& e) {
                   j = json{{"kind", "MoveUtterance"}, {"from", e.from}, {"to", e.to}};
                 },
                 [&](const edit::UpdateText& e) {
                   j = json{{"kind", "UpdateText"}, {"index", e.index}, {"text", e.text}};
                 },
                 [&](const edit::Retag& e) {
                   j = json{{"kind", "Retag"},
                            {"index", e.index},
                            {"categories", e.categories},
                            {"strategies", e.strategies}};
                 },
                 [&](const edit::ReplaceSpan& e) {
                   j = json{{"kind", "ReplaceSpan"},
                            {"start", e.start},
                            {"end", e.end},
                            {"utterances", e.utterances},
                            {"variation_index", e.variation_index},
                            {"unused_variations", e.unused_variations}};
                 },
             },
             v);
}

void from_json(const json& j, EditKind& v) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "AddUtterance") {
    edit::AddUtterance e;
    j.at("index").get_to(e.index);
    j.at("speaker").get_to(e.speaker);
    e.text = j.value("text", std::string{});
    e.categories = j.value("categories", std::set<Category>{});
    v = e;
  } else if (kind == "DuplicateUtterance") {
    v = edit::DuplicateUtterance{j.at("index").get<std::size_t>()};
  } else if (kind == "DeleteUtterance") {
    v = edit::DeleteUtterance{j.at("index").get<std::size_t>()};
  } else if (kind == "ChangeSpeaker") {
    v = edit::ChangeSpeaker{j.at("index").get<std::size_t>()};
  } else if (kind == "MoveUtterance") {
    v = edit::MoveUtterance{j.at("from").get<std::size_t>(), j.at("to").get<std::size_t>()};
  } else if (kind == "UpdateText") {
    v = edit::UpdateText{j.at("index").get<std::size_t>(), j.at("text").get<std::string>()};
  } else if (kind == "Retag") {
    edit::Retag e;
    j.at("index").get_to(e.index);
    j.at("categories").get_to(e.categories);
    e.strategies = j.value("strategies", std::set<TeachingStrategy>{});
    v = e;
  } else if (kind == "ReplaceSpan") {
    edit::ReplaceSpan e;
    j.at("start").get_to(e.start);
    j.at("end").get_to(e.end);
    j.at("utterances").get_to(e.utterances);
    e.variation_index = j.value("variation_index", 0);
    if (j.contains("unused_variations")) e.unused_variations = utterance_lists(j.at("unused_variations"));
    v = e;
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown edit kind: " + kind);
  }
}

void to_json(json& j, const EditOperation& v) {
  to_json(j, v.kind);
  j["base_version"] = v.base_version;
}

void from_json(const json& j, EditOperation& v) {
  from_json(j, v.kind);
  j.at("base_version").get_to(v.base_version);
}

void to_json(json& j, const HistoryEntry& v) {
  j = json{{"op", v.op}, {"before_hash", v.before_hash}, {"after_hash", v.after_hash}, {"version", v.version}};
}

void from_json(const json& j, HistoryEntry& v) {
  v.op = j.at("op");
  j.at("before_hash").get_to(v.before_hash);
  j.at("after_hash").get_to(v.after_hash);
  j.at("version").get_to(v.version);
}

void to_json(json& j, const SubDialogueSpan& v) {
  j = json{{"start_index", v.start_index}, {"end_index", v.end_index}};
}

void from_json(const json& j, SubDialogueSpan& v) {
  j.at("start_index").get_to(v.start_index);
  j.at("end_index").get_to(v.end_index);
}

void to_json(json& j, const LaboratoryResult& v) {
  json variations = json::array();
  for (const auto& var : v.variations) {
    variations.push_back({{"utterances", var.utterances}, {"concept_drift", var.concept_drift}});
  }
  j = json{{"candidate_id", v.candidate_id},
           {"candidate_version", v.candidate_version},
           {"span", v.span},
           {"variations", variations},
           {"preserved",
            {{"learner_level", v.preserved.learner_level},
             {"context_summary", v.preserved.context_summary},
             {"content_summary", v.preserved.content_summary},
             {"turn_count", v.preserved.turn_count}}},
           {"trace", v.trace}};
}

void from_json(const json& j, LaboratoryResult& v) {
  j.at("candidate_id").get_to(v.candidate_id);
  j.at("candidate_version").get_to(v.candidate_version);
  j.at("span").get_to(v.span);
  const auto& variations = j.at("variations");
  if (!variations.is_array() || variations.size() != 4) {
    throw Error(ErrorCode::ParseError, "a laboratory result has exactly 4 variations");
  }
  for (std::size_t i = 0; i < 4; ++i) {
    variations[i].at("utterances").get_to(v.variations[i].utterances);
    v.variations[i].concept_drift = variations[i].value("concept_drift", std::vector<std::string>{});
  }
  const auto& p = j.at("preserved");
  p.at("learner_level").get_to(v.preserved.learner_level);
  p.at("context_summary").get_to(v.preserved.context_summary);
  p.at("content_summary").get_to(v.preserved.content_summary);
  p.at("turn_count").get_to(v.preserved.turn_count);
  v.trace = j.value("trace", std::vector<llm::TraceEntry>{});
}

// ---------------------------------------------------------------------------
// Edits

DialogueCandidate apply_edit(const DialogueCandidate& candidate, const EditOperation& op) {
  if (op.base_version != candidate.version) {
    throw Error(ErrorCode::VersionConflict, "edit based on version " + std::to_string(op.base_version) +
                                                " but the candidate is at version " +
                                                std::to_string(candidate.version));
  }
  DialogueCandidate next = candidate;
  auto& turns = next.utterances;
  const std::size_t n = turns.size();

  std::visit(Overloaded{
                 [&](const edit::AddUtterance& e) {
                   if (e.index > n) check_index(e.index, n + 1, "insert position");
                   check_tags(e.speaker, e.categories);
                   Utterance u;
                   u.speaker = e.speaker;
                   u.text = checked_text(e.text);
                   u.categories = e.categories;
                   u.needs_retag = e.categories.empty();
                   turns.insert(turns.begin() + static_cast<std::ptrdiff_t>(e.index), std::move(u));
                 },
                 [&](const edit::DuplicateUtterance& e) {
                   check_index(e.index, n, "utterance");
                   Utterance copy = turns[e.index];
                   turns.insert(turns.begin() + static_cast<std::ptrdiff_t>(e.index + 1), std::move(copy));
                 },
                 [&](const edit::DeleteUtterance& e) {
                   check_index(e.index, n, "utterance");
                   turns.erase(turns.begin() + static_cast<std::ptrdiff_t>(e.index));
                 },
                 [&](const edit::ChangeSpeaker& e) {
                   check_index(e.index, n, "utterance");
                   Utterance& u = turns[e.index];
                   u.speaker = other(u.speaker);
                   std::erase_if(u.categories, [&](Category c) { return !category_allowed(u.speaker, c); });
                   u.needs_retag = true;
                 },
                 [&](const edit::MoveUtterance& e) {
                   check_index(e.from, n, "utterance");
                   check_index(e.to, n, "target position");
                   Utterance moved = std::move(turns[e.from]);
                   turns.erase(turns.begin() + static_cast<std::ptrdiff_t>(e.from));
                   turns.insert(turns.begin() + static_cast<std::ptrdiff_t>(e.to), std::move(moved));
                 },
                 [&](const edit::UpdateText& e) {
                   check_index(e.index, n, "utterance");
                   turns[e.index].text = checked_text(e.text);
                 },
                 [&](const edit::Retag& e) {
                   check_index(e.index, n, "utterance");
                   Utterance& u = turns[e.index];
                   if (e.categories.empty()) {
                     throw Error(ErrorCode::InvalidArgument, "retag needs at least one category");
                   }
                   check_tags(u.speaker, e.categories);
                   u.categories = e.categories;
                   u.strategy_tags = e.strategies;
                   u.needs_retag = false;
                 },
                 [&](const edit::ReplaceSpan& e) {
                   check_index(e.end, n, "span end");
                   if (e.start > e.end) throw Error(ErrorCode::SpanInvalid, "span start after span end");
                   if (e.utterances.empty()) throw Error(ErrorCode::SpanInvalid, "replacement is empty");
                   for (const auto& u : e.utterances) {
                     checked_text(u.text);
                     check_tags(u.speaker, u.categories);
                   }
                   turns.erase(turns.begin() + static_cast<std::ptrdiff_t>(e.start),
                               turns.begin() + static_cast<std::ptrdiff_t>(e.end + 1));
                   turns.insert(turns.begin() + static_cast<std::ptrdiff_t>(e.start), e.utterances.begin(),
                                e.utterances.end());
                 },
             },
             op.kind);

  next.version = candidate.version + 1;
  next.provenance = Provenance::Refined;
  return next;
}

// ---------------------------------------------------------------------------
// History

CandidateHistory::CandidateHistory(DialogueCandidate generated)
    : generated_(std::move(generated)), current_(generated_) {}

void CandidateHistory::record(json op, const DialogueCandidate& before) {
  HistoryEntry entry;
  entry.op = std::move(op);
  entry.before_hash = content_hash(before);
  entry.after_hash = content_hash(current_);
  entry.version = current_.version;
  entries_.push_back(std::move(entry));
}

const DialogueCandidate& CandidateHistory::apply(const EditOperation& op) {
  DialogueCandidate next = apply_edit(current_, op);
  undo_stack_.push_back(current_);
  DialogueCandidate before = std::exchange(current_, std::move(next));
  record(json(op), before);
  return current_;
}

const DialogueCandidate& CandidateHistory::undo(std::optional<std::int64_t> base_version) {
  if (base_version && *base_version != current_.version) {
    throw Error(ErrorCode::VersionConflict, "undo based on version " + std::to_string(*base_version) +
                                                " but the candidate is at version " +
                                                std::to_string(current_.version));
  }
  if (undo_stack_.empty()) throw Error(ErrorCode::NothingToUndo, "no edit to undo for " + current_.id);
  DialogueCandidate restored = std::move(undo_stack_.back());
  undo_stack_.pop_back();
  restored.version = current_.version + 1;
  const std::int64_t from_version = current_.version;
  DialogueCandidate before = std::exchange(current_, std::move(restored));
  record(json{{"kind", "Undo"}, {"base_version", from_version}}, before);
  return current_;
}

const DialogueCandidate& CandidateHistory::apply_variation(const LaboratoryResult& lab, const SubDialogueSpan& span,
                                                           int variation_index) {
  if (lab.candidate_id != current_.id || lab.candidate_version != current_.version) {
    throw Error(ErrorCode::StaleVariation, "variations were generated for version " +
                                               std::to_string(lab.candidate_version) +
                                               " but the candidate is at version " +
                                               std::to_string(current_.version));
  }
  if (!(lab.span == span)) throw Error(ErrorCode::StaleVariation, "span differs from the laboratory request");
  if (variation_index < 0 || variation_index >= static_cast<int>(lab.variations.size())) {
    throw Error(ErrorCode::IndexOutOfBounds, "variation index " + std::to_string(variation_index) +
                                                 " outside 0..3");
  }
  edit::ReplaceSpan replace;
  replace.start = span.start_index;
  replace.end = span.end_index;
  replace.variation_index = variation_index;
  replace.utterances = lab.variations[static_cast<std::size_t>(variation_index)].utterances;
  for (int i = 0; i < static_cast<int>(lab.variations.size()); ++i) {
    if (i != variation_index) replace.unused_variations.push_back(lab.variations[static_cast<std::size_t>(i)].utterances);
  }
  return apply(EditOperation{std::move(replace), current_.version});
}

CandidateHistory CandidateHistory::replay(DialogueCandidate generated, const std::vector<HistoryEntry>& entries) {
  CandidateHistory history(std::move(generated));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& entry = entries[i];
    const std::string where = "history entry " + std::to_string(i);
    if (content_hash(history.current_) != entry.before_hash) {
      throw Error(ErrorCode::CorruptRecord, where + ": state before the entry does not match its hash");
    }
    try {
      if (entry.op.at("kind") == "Undo") {
        history.undo(entry.op.at("base_version").get<std::int64_t>());
      } else {
        history.apply(entry.op.get<EditOperation>());
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::CorruptRecord, where + ": " + e.what());
    }
    if (history.entries_.back().after_hash != entry.after_hash) {
      throw Error(ErrorCode::CorruptRecord, where + ": replay does not reproduce the recorded hash");
    }
    history.entries_.back() = entry;
  }
  return history;
}

// ---------------------------------------------------------------------------
// Laboratory

void check_span(const SubDialogueSpan& span, std::size_t turn_count) {
  if (span.start_index > span.end_index || span.end_index >= turn_count) {
    throw Error(ErrorCode::SpanInvalid, "span [" + std::to_string(span.start_index) + ", " +
                                            std::to_string(span.end_index) + "] invalid for " +
                                            std::to_string(turn_count) + " turns");
  }
}

std::vector<std::string> mentioned_concepts(const std::vector<Utterance>& utterances,
                                            const LearnerKnowledgeState& state) {
  std::vector<std::string> out;
  for (const auto& [id, level] : state.levels) {
    const bool mentioned = std::any_of(utterances.begin(), utterances.end(),
                                       [&](const Utterance& u) { return text::contains_ci(u.text, id); });
    if (mentioned) out.push_back(id);
  }
  return out;
}

std::string summarize_content(const std::vector<Utterance>& span, const LearnerKnowledgeState& state) {
  const auto concepts = mentioned_concepts(span, state);
  std::map<std::string, int> freq;
  for (const auto& u : span) {
    for (auto& w : text::content_words(u.text)) ++freq[w];
  }
  std::vector<std::pair<std::string, int>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });

  std::string out = "concepts: ";
  for (std::size_t i = 0; i < concepts.size(); ++i) out += (i ? ", " : "") + concepts[i];
  if (concepts.empty()) out += "(none)";
  out += "; key terms: ";
  const std::size_t terms = std::min<std::size_t>(ranked.size(), 6);
  for (std::size_t i = 0; i < terms; ++i) out += (i ? ", " : "") + ranked[i].first;
  if (terms == 0) out += "(none)";
  return out;
}

namespace {

struct LabContext {
  std::vector<Utterance> span;
  std::string before;
  std::string after;
  std::string context_summary;
};

LabContext lab_context(const DialogueCandidate& candidate, const SubDialogueSpan& span) {
  LabContext ctx;
  ctx.span.assign(candidate.utterances.begin() + static_cast<std::ptrdiff_t>(span.start_index),
                  candidate.utterances.begin() + static_cast<std::ptrdiff_t>(span.end_index + 1));
  ctx.before = span.start_index > 0 ? speaker_line(candidate.utterances[span.start_index - 1]) : "(start of dialogue)";
  ctx.after = span.end_index + 1 < candidate.utterances.size() ? speaker_line(candidate.utterances[span.end_index + 1])
                                                               : "(end of dialogue)";
  const bool flanked = span.start_index > 0 || span.end_index + 1 < candidate.utterances.size();
  ctx.context_summary = flanked ? "before: " + ctx.before + " | after: " + ctx.after : candidate.scenario;
  return ctx;
}

std::string render_levels(const LearnerKnowledgeState& state) {
  std::string out;
  for (const auto& [id, level] : state.levels) out += "- " + id + ": level " + std::to_string(level.value()) + "\n";
  return out;
}

}  // namespace

llm::PromptSpec laboratory_prompt(const llm::Gateway& gateway, const DialogueCandidate& candidate,
                                  const SubDialogueSpan& span, const std::string& language) {
  check_span(span, candidate.utterances.size());
  const LabContext ctx = lab_context(candidate, span);
  std::string span_text;
  for (const auto& u : ctx.span) span_text += speaker_line(u) + "\n";
  return gateway.make_prompt(templates::kLaboratory,
                             {{"language", language},
                              {"knowledge_state", render_levels(candidate.state)},
                              {"scenario", candidate.scenario},
                              {"context_before", ctx.before},
                              {"context_after", ctx.after},
                              {"span_dialogue", span_text},
                              {"content_summary", summarize_content(ctx.span, candidate.state)},
                              {"turn_count", std::to_string(ctx.span.size())},
                              {"first_speaker", std::string(to_string(ctx.span.front().speaker))},
                              {"last_speaker", std::string(to_string(ctx.span.back().speaker))},
                              {"tutor_categories", render_categories(Speaker::Tutor)},
                              {"learner_categories", render_categories(Speaker::Learner)}},
                             templates::kLaboratory);
}

LaboratoryResult run_laboratory(llm::Gateway& gateway, const DialogueCandidate& candidate,
                                const SubDialogueSpan& span, const std::string& language) {
  check_span(span, candidate.utterances.size());
  if (auto violations = validate_dialogue(candidate); !violations.empty()) {
    throw Error(ErrorCode::InvalidDialogue, "laboratory needs a valid dialogue: " + violations.front().message);
  }
  register_default_assets(gateway);
  const LabContext ctx = lab_context(candidate, span);
  const std::size_t turns = ctx.span.size();
  const Speaker first = ctx.span.front().speaker;
  const Speaker last = ctx.span.back().speaker;

  llm::Trace trace;
  llm::CallOptions options;
  options.trace = &trace;
  options.step = "laboratory";
  options.check_repair_limits = {{ErrorCode::TaxonomyError, 1}};
  options.check = [turns, first, last](const json& out) {
    std::vector<llm::Issue> issues;
    const auto& variations = out.at("variations");
    for (std::size_t v = 0; v < variations.size(); ++v) {
      const auto& utterances = variations[v].at("utterances");
      for (auto& issue : taxonomy_issues(utterances)) {
        issue.message = "variation " + std::to_string(v) + ", " + issue.message;
        issues.push_back(std::move(issue));
      }
    }
    if (!issues.empty()) return issues;
    for (std::size_t v = 0; v < variations.size(); ++v) {
      const auto& utterances = variations[v].at("utterances");
      const std::string where = "variation " + std::to_string(v);
      if (utterances.size() != turns) {
        issues.push_back({ErrorCode::SchemaViolation, where + " has " + std::to_string(utterances.size()) +
                                                          " utterances; exactly " + std::to_string(turns) +
                                                          " are required"});
        continue;
      }
      const Utterance head = utterance_from_output(utterances.front());
      const Utterance tail = utterance_from_output(utterances.back());
      if (head.speaker != first) {
        issues.push_back({ErrorCode::SchemaViolation,
                          where + " must start with the " + std::string(to_string(first))});
      }
      if (tail.speaker != last) {
        issues.push_back({ErrorCode::SchemaViolation, where + " must end with the " + std::string(to_string(last))});
      }
      for (std::size_t i = 0; i < utterances.size(); ++i) {
        if (text::trim(utterances[i].at("text").get<std::string>()).empty()) {
          issues.push_back({ErrorCode::SchemaViolation, where + ", utterance " + std::to_string(i) + " is empty"});
        }
      }
    }
    return issues;
  };

  auto completion = gateway.complete_structured(laboratory_prompt(gateway, candidate, span, language), options);

  LaboratoryResult result;
  result.candidate_id = candidate.id;
  result.candidate_version = candidate.version;
  result.span = span;
  result.preserved.learner_level = candidate.state.levels;
  result.preserved.context_summary = ctx.context_summary;
  result.preserved.content_summary = summarize_content(ctx.span, candidate.state);
  result.preserved.turn_count = turns;

  const auto original_concepts = mentioned_concepts(ctx.span, candidate.state);
  const auto& variations = completion.parsed->at("variations");
  for (std::size_t v = 0; v < 4; ++v) {
    Variation& out = result.variations[v];
    for (const auto& u : variations[v].at("utterances")) out.utterances.push_back(utterance_from_output(u));
    const auto kept = mentioned_concepts(out.utterances, candidate.state);
    for (const auto& id : original_concepts) {
      if (std::find(kept.begin(), kept.end(), id) == kept.end()) out.concept_drift.push_back(id);
    }
  }
  result.trace = trace.entries();
  return result;
}

}  // namespace vicar
