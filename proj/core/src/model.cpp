#include "vicar/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "vicar/errors.hpp"
#include "vicar/taxonomy.hpp"
#include "vicar/text.hpp"

namespace vicar {

Millis Millis::from_seconds(double seconds) {
  if (!std::isfinite(seconds)) {
    throw Error(ErrorCode::InvalidArgument, "non-finite time value");
  }
  return Millis{static_cast<std::int64_t>(std::llround(seconds * 1000.0))};
}

Level::Level(int value) : value_(value) {
  if (value < kMin || value > kMastery) {
    throw Error(ErrorCode::InvalidArgument,
                "level must be in 1..4, got " + std::to_string(value));
  }
}

const Concept* UnderstandingRubric::find(const std::string& concept_id) const {
  for (const auto& c : concepts) {
    if (c.id == concept_id) return &c;
  }
  return nullptr;
}

std::vector<Violation> validate_dialogue(const DialogueCandidate& dialogue) {
  std::vector<Violation> out;
  bool has_tutor = false;
  bool has_learner = false;

  for (std::size_t i = 0; i < dialogue.utterances.size(); ++i) {
    const Utterance& u = dialogue.utterances[i];
    (u.speaker == Speaker::Tutor ? has_tutor : has_learner) = true;

    if (text::trim(u.text).empty()) {
      out.push_back({i, rules::kEmptyText, "utterance text is empty"});
    }
    if (u.needs_retag) {
      out.push_back({i, rules::kNeedsRetag, "utterance must be re-tagged after an edit"});
    } else if (u.categories.empty()) {
      out.push_back({i, rules::kNoCategories, "utterance carries no category tag"});
    }
    for (Category c : u.categories) {
      if (!category_allowed(u.speaker, c)) {
        out.push_back({i, rules::kCategoryInvalid,
                       "category invalid for speaker: " + std::string(to_string(c)) +
                           " on " + std::string(to_string(u.speaker))});
      }
    }
  }

  if (dialogue.provenance == Provenance::Generated) {
    if (dialogue.utterances.size() < 2) {
      out.push_back({std::nullopt, rules::kTooFewUtterances,
                     "a generated dialogue needs at least 2 utterances"});
    }
    if (!dialogue.utterances.empty() && !(has_tutor && has_learner)) {
      out.push_back({std::nullopt, rules::kMissingSpeaker,
                     "a generated dialogue needs both speakers"});
    }
  }
  return out;
}

DialogueCard derive_card(const DialogueCandidate& dialogue) {
  auto violations = validate_dialogue(dialogue);
  if (!violations.empty()) {
    throw Error(ErrorCode::InvalidDialogue,
                "cannot derive card: " + violations.front().message);
  }
  DialogueCard card;
  card.candidate_id = dialogue.id;
  card.levels_summary = dialogue.state.levels;
  card.turn_count = dialogue.utterances.size();
  for (const Utterance& u : dialogue.utterances) {
    card.key_strategies.insert(u.strategy_tags.begin(), u.strategy_tags.end());
    for (Category c : u.categories) ++card.key_patterns[u.speaker][c];
  }
  return card;
}

std::string normalize_concept_id(const std::string& name) {
  std::string out;
  bool pending_space = false;
  for (char ch : name) {
    auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

std::vector<Highlight> normalize_highlights(std::vector<Highlight> highlights,
                                            std::size_t text_length) {
  for (const auto& h : highlights) {
    if (h.range.start >= h.range.end || h.range.end > text_length) {
      throw Error(ErrorCode::RangeError,
                  "highlight [" + std::to_string(h.range.start) + ", " +
                      std::to_string(h.range.end) + ") outside section text of length " +
                      std::to_string(text_length));
    }
  }
  std::sort(highlights.begin(), highlights.end(),
            [](const Highlight& a, const Highlight& b) { return a.range < b.range; });

  std::vector<Highlight> merged;
  for (auto& h : highlights) {
    if (!merged.empty() && h.range.start < merged.back().range.end) {
      Highlight& last = merged.back();
      last.range.end = std::max(last.range.end, h.range.end);
      if (h.note) {
        last.note = last.note ? *last.note + "; " + *h.note : *h.note;
      }
      continue;
    }
    merged.push_back(std::move(h));
  }
  return merged;
}

bool concept_intersects(const Concept& item, const std::vector<Highlight>& highlights) {
  for (const auto& span : item.span_refs) {
    for (const auto& h : highlights) {
      if (span.overlaps(h.range)) return true;
    }
  }
  return false;
}

std::vector<std::string> check_level_assignment(const UnderstandingRubric& rubric,
                                                const std::vector<Highlight>& highlights,
                                                const LearnerKnowledgeState& state) {
  std::vector<std::string> problems;
  for (const auto& c : rubric.concepts) {
    auto it = state.levels.find(c.id);
    if (it == state.levels.end()) {
      problems.push_back("concept '" + c.id + "' has no level");
      continue;
    }
    const bool highlighted = concept_intersects(c, highlights);
    if (highlighted && !it->second.is_deficit()) {
      problems.push_back("highlighted concept '" + c.id + "' is at level 4");
    }
    if (!highlighted && it->second.is_deficit()) {
      problems.push_back("unhighlighted concept '" + c.id + "' is below level 4");
    }
  }
  for (const auto& [id, level] : state.levels) {
    if (!rubric.find(id)) problems.push_back("level for unknown concept '" + id + "'");
  }
  return problems;
}

}  // namespace vicar
