#include <gtest/gtest.h>

#include "builders.hpp"
#include "generators.hpp"
#include "synthetic_provider.hpp"
#include "vicar/json_io.hpp"
#include "vicar/refinement.hpp"
#include "vicar/taxonomy.hpp"

using namespace vicar;
using namespace vicar::testing;
using nlohmann::json;

namespace {

DialogueCandidate five_turns() {
  auto c = dialogue({tutor("t0"), learner("l1"), tutor("t2", {Category::Scaffolding}), learner("l3"),
                     tutor("t4", {Category::Summarizing})});
  c.state.levels.emplace("frequency", Level(2));
  return c;
}

std::vector<std::string> texts(const DialogueCandidate& c) {
  std::vector<std::string> out;
  for (const auto& u : c.utterances) out.push_back(u.text);
  return out;
}

template <typename Kind>
EditOperation op(Kind kind, std::int64_t base = 1) {
  return EditOperation{std::move(kind), base};
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::InvalidArgument;
}

struct Lab {
  std::shared_ptr<SyntheticProvider> provider = std::make_shared<SyntheticProvider>();
  llm::Gateway gateway{provider, {}, [](std::chrono::milliseconds) {}};
};

DialogueCandidate lab_candidate() {
  auto c = dialogue({tutor("What sets the wavelength of a wave?", {Category::Questioning}, {TeachingStrategy::CognitivePrompting}),
                     learner("The amplitude, I think.", {Category::Answering}),
                     tutor("Look at the distance between two crests.", {Category::Scaffolding}),
                     learner("So the wavelength is that distance.", {Category::Answering}),
                     tutor("Right. How does frequency relate to it?", {Category::Questioning}),
                     learner("Higher frequency, shorter wavelength.", {Category::Explanation}),
                     tutor("Good summary of the idea.", {Category::Summarizing})});
  c.state.levels.emplace("wavelength", Level(2));
  c.state.levels.emplace("frequency", Level(4));
  return c;
}

}  // namespace

TEST(ApplyEdit, DeleteRemovesOneTurnAndBumpsVersion) {
  auto c = five_turns();
  auto next = apply_edit(c, op(edit::DeleteUtterance{2}));
  EXPECT_EQ(texts(next), (std::vector<std::string>{"t0", "l1", "l3", "t4"}));
  EXPECT_EQ(next.version, 2);
  EXPECT_EQ(next.provenance, Provenance::Refined);
  EXPECT_EQ(c.utterances.size(), 5u);
}

TEST(ApplyEdit, AddInsertsAtPositionAndFlagsUntaggedTurns) {
  auto next = apply_edit(five_turns(), op(edit::AddUtterance{5, Speaker::Learner, "  thanks  ", {}}));
  ASSERT_EQ(next.utterances.size(), 6u);
  EXPECT_EQ(next.utterances[5].text, "thanks");
  EXPECT_TRUE(next.utterances[5].needs_retag);
  auto tagged = apply_edit(five_turns(), op(edit::AddUtterance{0, Speaker::Tutor, "hi", {Category::Lecturing}}));
  EXPECT_EQ(tagged.utterances[0].text, "hi");
  EXPECT_FALSE(tagged.utterances[0].needs_retag);
}

TEST(ApplyEdit, DuplicateCopiesAfterOriginal) {
  auto next = apply_edit(five_turns(), op(edit::DuplicateUtterance{1}));
  EXPECT_EQ(texts(next), (std::vector<std::string>{"t0", "l1", "l1", "t2", "l3", "t4"}));
}

TEST(ApplyEdit, MoveLandsAtTargetPosition) {
  auto forward = apply_edit(five_turns(), op(edit::MoveUtterance{0, 3}));
  EXPECT_EQ(texts(forward), (std::vector<std::string>{"l1", "t2", "l3", "t0", "t4"}));
  auto backward = apply_edit(five_turns(), op(edit::MoveUtterance{4, 1}));
  EXPECT_EQ(texts(backward), (std::vector<std::string>{"t0", "t4", "l1", "t2", "l3"}));
}

TEST(ApplyEdit, ChangeSpeakerDropsForeignCategoriesAndFlagsRetag) {
  auto next = apply_edit(five_turns(), op(edit::ChangeSpeaker{2}));
  const auto& u = next.utterances[2];
  EXPECT_EQ(u.speaker, Speaker::Learner);
  EXPECT_TRUE(u.categories.empty());
  EXPECT_TRUE(u.needs_retag);
  auto violations = validate_dialogue(next);
  ASSERT_FALSE(violations.empty());
  EXPECT_EQ(violations.front().rule, rules::kNeedsRetag);
}

TEST(ApplyEdit, ChangeSpeakerKeepsSharedCategories) {
  auto next = apply_edit(five_turns(), op(edit::ChangeSpeaker{0}));
  EXPECT_EQ(next.utterances[0].categories, (std::set<Category>{Category::Questioning}));
  EXPECT_TRUE(next.utterances[0].needs_retag);
}

TEST(ApplyEdit, RetagClearsFlagAndChecksTaxonomy) {
  auto changed = apply_edit(five_turns(), op(edit::ChangeSpeaker{2}));
  auto fixed = apply_edit(changed, op(edit::Retag{2, {Category::Reflecting}, {}}, 2));
  EXPECT_FALSE(fixed.utterances[2].needs_retag);
  EXPECT_TRUE(validate_dialogue(fixed).empty());
  EXPECT_EQ(code_of([&] { apply_edit(changed, op(edit::Retag{2, {Category::Scaffolding}, {}}, 2)); }),
            ErrorCode::TaxonomyError);
  EXPECT_EQ(code_of([&] { apply_edit(changed, op(edit::Retag{2, {}, {}}, 2)); }), ErrorCode::InvalidArgument);
}

TEST(ApplyEdit, UpdateTextTrimsAndRejectsEmpty) {
  auto next = apply_edit(five_turns(), op(edit::UpdateText{3, " new text\n"}));
  EXPECT_EQ(next.utterances[3].text, "new text");
  EXPECT_EQ(code_of([] { apply_edit(five_turns(), op(edit::UpdateText{3, " \t "})); }), ErrorCode::EmptyText);
  EXPECT_EQ(code_of([] { apply_edit(five_turns(), op(edit::AddUtterance{0, Speaker::Tutor, "", {}})); }),
            ErrorCode::EmptyText);
}

TEST(ApplyEdit, StaleBaseVersionIsAConflict) {
  EXPECT_EQ(code_of([] { apply_edit(five_turns(), op(edit::DeleteUtterance{0}, 0)); }), ErrorCode::VersionConflict);
  EXPECT_EQ(code_of([] { apply_edit(five_turns(), op(edit::DeleteUtterance{0}, 2)); }), ErrorCode::VersionConflict);
}

TEST(ApplyEdit, IndicesAreBoundsChecked) {
  const auto c = five_turns();
  EXPECT_EQ(code_of([&] { apply_edit(c, op(edit::DeleteUtterance{5})); }), ErrorCode::IndexOutOfBounds);
  EXPECT_EQ(code_of([&] { apply_edit(c, op(edit::DuplicateUtterance{9})); }), ErrorCode::IndexOutOfBounds);
  EXPECT_EQ(code_of([&] { apply_edit(c, op(edit::ChangeSpeaker{5})); }), ErrorCode::IndexOutOfBounds);
  EXPECT_EQ(code_of([&] { apply_edit(c, op(edit::MoveUtterance{0, 5})); }), ErrorCode::IndexOutOfBounds);
  EXPECT_EQ(code_of([&] { apply_edit(c, op(edit::AddUtterance{6, Speaker::Tutor, "x", {}})); }),
            ErrorCode::IndexOutOfBounds);
  EXPECT_EQ(code_of([&] { apply_edit(c, op(edit::UpdateText{7, "x"})); }), ErrorCode::IndexOutOfBounds);
}

TEST(ApplyEdit, SameInputSameOutput) {
  const auto c = five_turns();
  const auto o = op(edit::MoveUtterance{1, 4});
  EXPECT_EQ(apply_edit(c, o), apply_edit(c, o));
}

TEST(History, UndoRestoresContentWithHigherVersion) {
  CandidateHistory h(five_turns());
  h.apply(op(edit::DeleteUtterance{2}));
  h.apply(op(edit::UpdateText{0, "changed"}, 2));
  EXPECT_EQ(h.current().version, 3);
  h.undo();
  EXPECT_EQ(texts(h.current()), (std::vector<std::string>{"t0", "l1", "l3", "t4"}));
  EXPECT_EQ(h.current().version, 4);
  h.undo();
  EXPECT_EQ(h.current().utterances, h.generated().utterances);
  EXPECT_EQ(h.current().version, 5);
  EXPECT_EQ(h.entries().size(), 4u);
  EXPECT_EQ(h.entries().back().op.at("kind"), "Undo");
}

TEST(History, NothingToUndoOnFreshOrExhaustedHistory) {
  CandidateHistory h(five_turns());
  EXPECT_FALSE(h.can_undo());
  EXPECT_EQ(code_of([&] { h.undo(); }), ErrorCode::NothingToUndo);
  h.apply(op(edit::DeleteUtterance{0}));
  h.undo();
  EXPECT_EQ(code_of([&] { h.undo(); }), ErrorCode::NothingToUndo);
}

TEST(History, UndoChecksBaseVersion) {
  CandidateHistory h(five_turns());
  h.apply(op(edit::DeleteUtterance{0}));
  EXPECT_EQ(code_of([&] { h.undo(1); }), ErrorCode::VersionConflict);
  EXPECT_NO_THROW(h.undo(2));
}

TEST(History, FailedEditLeavesHistoryUntouched) {
  CandidateHistory h(five_turns());
  EXPECT_THROW(h.apply(op(edit::DeleteUtterance{10})), Error);
  EXPECT_TRUE(h.entries().empty());
  EXPECT_EQ(h.current(), h.generated());
}

TEST(History, ReplayReproducesTheFinalState) {
  Rng rng(42);
  auto generated = random_candidate(rng, 10);
  CandidateHistory h(generated);
  for (int i = 0; i < 20; ++i) {
    try {
      h.apply(random_edit(rng, h.current()));
    } catch (const Error&) {
    }
    if (rng.chance(0.2) && h.can_undo()) h.undo();
  }
  auto replayed = CandidateHistory::replay(generated, h.entries());
  EXPECT_EQ(replayed.current(), h.current());
  EXPECT_EQ(replayed.entries(), h.entries());
}

TEST(History, TamperedHashIsCorrupt) {
  CandidateHistory h(five_turns());
  h.apply(op(edit::DeleteUtterance{0}));
  h.apply(op(edit::DeleteUtterance{0}, 2));
  auto entries = h.entries();
  entries[1].after_hash = "0000";
  EXPECT_EQ(code_of([&] { CandidateHistory::replay(h.generated(), entries); }), ErrorCode::CorruptRecord);
  entries = h.entries();
  entries[0].op["index"] = 3;
  EXPECT_EQ(code_of([&] { CandidateHistory::replay(h.generated(), entries); }), ErrorCode::CorruptRecord);
  entries = h.entries();
  entries[0].op.erase("index");
  EXPECT_EQ(code_of([&] { CandidateHistory::replay(h.generated(), entries); }), ErrorCode::CorruptRecord);
}

TEST(EditJson, EveryKindRoundTrips) {
  Utterance u = tutor("x", {Category::Lecturing}, {TeachingStrategy::CognitiveConflict});
  std::vector<EditOperation> ops{
      op(edit::AddUtterance{1, Speaker::Learner, "hi", {Category::Reflecting}}, 3),
      op(edit::DuplicateUtterance{2}),
      op(edit::DeleteUtterance{0}),
      op(edit::ChangeSpeaker{4}),
      op(edit::MoveUtterance{1, 3}),
      op(edit::UpdateText{2, "text"}),
      op(edit::Retag{1, {Category::Answering}, {TeachingStrategy::MetacognitivePrompting}}),
      op(edit::ReplaceSpan{0, 1, {u, u}, 2, {{u}, {u, u}, {u}}}, 7),
  };
  for (const auto& o : ops) {
    json j = o;
    auto back = j.get<EditOperation>();
    EXPECT_EQ(json(back), j);
    EXPECT_EQ(back.base_version, o.base_version);
    EXPECT_EQ(back.kind.index(), o.kind.index());
  }
  EXPECT_THROW(json({{"kind", "Teleport"}, {"base_version", 1}}).get<EditOperation>(), Error);
}

TEST(CheckSpan, AcceptsOnlyOrderedInRangeSpans) {
  EXPECT_NO_THROW(check_span({0, 0}, 1));
  EXPECT_NO_THROW(check_span({2, 4}, 5));
  EXPECT_EQ(code_of([] { check_span({3, 2}, 5); }), ErrorCode::SpanInvalid);
  EXPECT_EQ(code_of([] { check_span({0, 5}, 5); }), ErrorCode::SpanInvalid);
  EXPECT_EQ(code_of([] { check_span({0, 0}, 0); }), ErrorCode::SpanInvalid);
}

TEST(Laboratory, FourVariationsPreserveCountAndBoundarySpeakers) {
  Lab lab;
  const auto c = lab_candidate();
  const SubDialogueSpan span{1, 3};
  auto result = run_laboratory(lab.gateway, c, span, "en");
  EXPECT_EQ(result.candidate_id, c.id);
  EXPECT_EQ(result.candidate_version, c.version);
  EXPECT_EQ(result.preserved.turn_count, 3u);
  EXPECT_EQ(result.preserved.learner_level, c.state.levels);
  EXPECT_NE(result.preserved.context_summary.find("before: Tutor: What sets"), std::string::npos);
  EXPECT_NE(result.preserved.content_summary.find("wavelength"), std::string::npos);
  for (const auto& v : result.variations) {
    ASSERT_EQ(v.utterances.size(), 3u);
    EXPECT_EQ(v.utterances.front().speaker, Speaker::Learner);
    EXPECT_EQ(v.utterances.back().speaker, Speaker::Learner);
    for (const auto& u : v.utterances) {
      for (Category cat : u.categories) EXPECT_TRUE(category_allowed(u.speaker, cat));
    }
  }
  ASSERT_EQ(result.trace.size(), 1u);
  EXPECT_EQ(result.trace[0].step, "laboratory");
}

TEST(Laboratory, WholeDialogueSpanUsesScenarioAsContext) {
  Lab lab;
  const auto c = lab_candidate();
  auto result = run_laboratory(lab.gateway, c, {0, 6}, "en");
  EXPECT_EQ(result.preserved.context_summary, c.scenario);
  EXPECT_EQ(result.variations[0].utterances.size(), 7u);
}

TEST(Laboratory, InvalidSpanIsRejectedBeforeAnyCall) {
  Lab lab;
  EXPECT_EQ(code_of([&] { run_laboratory(lab.gateway, lab_candidate(), {4, 2}, "en"); }), ErrorCode::SpanInvalid);
  EXPECT_EQ(code_of([&] { run_laboratory(lab.gateway, lab_candidate(), {0, 7}, "en"); }), ErrorCode::SpanInvalid);
  EXPECT_EQ(lab.provider->calls(), 0);
}

TEST(Laboratory, DialogueNeedingRetagIsRejected) {
  Lab lab;
  auto c = apply_edit(lab_candidate(), op(edit::ChangeSpeaker{2}));
  EXPECT_EQ(code_of([&] { run_laboratory(lab.gateway, c, {0, 1}, "en"); }), ErrorCode::InvalidDialogue);
}

TEST(Laboratory, DoesNotModifyTheCandidate) {
  Lab lab;
  const auto c = lab_candidate();
  const auto before = content_hash(c);
  run_laboratory(lab.gateway, c, {2, 5}, "en");
  EXPECT_EQ(content_hash(c), before);
}

TEST(Laboratory, DriftListsConceptsTheVariationDropped) {
  const auto c = lab_candidate();
  LearnerKnowledgeState s = c.state;
  EXPECT_EQ(mentioned_concepts({c.utterances[0]}, s), (std::vector<std::string>{"wavelength"}));
  EXPECT_EQ(mentioned_concepts({c.utterances[4], c.utterances[5]}, s),
            (std::vector<std::string>{"frequency", "wavelength"}));
  EXPECT_TRUE(mentioned_concepts({c.utterances[1]}, s).empty());
}

TEST(ApplyVariation, SplicesChosenVariationAndKeepsTurnCount) {
  Lab lab;
  CandidateHistory h(lab_candidate());
  const SubDialogueSpan span{1, 3};
  auto result = run_laboratory(lab.gateway, h.current(), span, "en");
  const auto& applied = h.apply_variation(result, span, 2);
  EXPECT_EQ(applied.utterances.size(), 7u);
  EXPECT_EQ(applied.version, 2);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(applied.utterances[1 + i], result.variations[2].utterances[i]);
  EXPECT_EQ(applied.utterances[0], h.generated().utterances[0]);
  EXPECT_EQ(applied.utterances[4], h.generated().utterances[4]);
  const auto& logged = h.entries().back().op;
  EXPECT_EQ(logged.at("kind"), "ReplaceSpan");
  EXPECT_EQ(logged.at("variation_index"), 2);
  EXPECT_EQ(logged.at("unused_variations").size(), 3u);
}

TEST(ApplyVariation, UndoRestoresTheOriginalSpan) {
  Lab lab;
  CandidateHistory h(lab_candidate());
  auto result = run_laboratory(lab.gateway, h.current(), {2, 4}, "en");
  h.apply_variation(result, {2, 4}, 0);
  h.undo();
  EXPECT_EQ(h.current().utterances, h.generated().utterances);
}

TEST(ApplyVariation, StaleOrMismatchedResultsAreRejected) {
  Lab lab;
  CandidateHistory h(lab_candidate());
  auto result = run_laboratory(lab.gateway, h.current(), {1, 3}, "en");
  EXPECT_EQ(code_of([&] { h.apply_variation(result, {1, 2}, 0); }), ErrorCode::StaleVariation);
  EXPECT_EQ(code_of([&] { h.apply_variation(result, {1, 3}, 4); }), ErrorCode::IndexOutOfBounds);
  EXPECT_EQ(code_of([&] { h.apply_variation(result, {1, 3}, -1); }), ErrorCode::IndexOutOfBounds);
  h.apply(op(edit::UpdateText{0, "What sets the wavelength?"}));
  EXPECT_EQ(code_of([&] { h.apply_variation(result, {1, 3}, 0); }), ErrorCode::StaleVariation);
  EXPECT_EQ(h.current().version, 2);
}

TEST(LaboratoryJson, RoundTrips) {
  Lab lab;
  auto result = run_laboratory(lab.gateway, lab_candidate(), {1, 3}, "en");
  json j = result;
  auto back = j.get<LaboratoryResult>();
  EXPECT_EQ(json(back), j);
  j["variations"].erase(0);
  EXPECT_THROW(j.get<LaboratoryResult>(), Error);
}
