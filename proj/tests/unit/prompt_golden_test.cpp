#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "builders.hpp"
#include "vicar/lint.hpp"
#include "vicar/pipeline.hpp"
#include "vicar/refinement.hpp"

using namespace vicar;
using namespace vicar::testing;

// Rendered prompts are pinned byte for byte. Set VICAR_UPDATE_GOLDEN=1 to
// rewrite the files after an intentional template change.

namespace {

std::string join(const std::vector<llm::ChatMessage>& messages) {
  std::string out;
  for (const auto& m : messages) out += "[" + m.role + "]\n" + m.content + "\n";
  return out;
}

void expect_golden(const std::string& name, const std::string& actual) {
  const std::string path = std::string(VICAR_GOLDEN_DIR) + "/" + name;
  if (const char* update = std::getenv("VICAR_UPDATE_GOLDEN"); update && std::string(update) == "1") {
    std::ofstream(path, std::ios::binary) << actual;
    return;
  }
  std::ifstream in(path, std::ios::binary);
  ASSERT_TRUE(in) << "missing golden file " << path;
  std::stringstream expected;
  expected << in.rdbuf();
  EXPECT_EQ(actual, expected.str()) << "golden mismatch: " << name;
}

struct Scene {
  llm::Gateway gateway{std::make_shared<llm::UnavailableProvider>()};
  Pipeline pipeline{gateway};
  TranscriptSection section;
  UnderstandingRubric rubric;
  LearnerKnowledgeState state;
  AnswerSheet sheet;
  DialogueCandidate candidate;

  Scene() {
    section.id = "waves@0-30000";
    section.transcript_id = "waves";
    section.language = "en";
    section.start = Millis{0};
    section.end = Millis{30000};
    section.text = "A wave repeats. The period is 0.5 seconds, so the frequency is 2 hertz.";

    rubric.id = "rubric-golden";
    const std::size_t p = section.text.find("period");
    const std::size_t f = section.text.find("frequency");
    rubric.concepts = {concept_at("period", {{p, p + 6}}), concept_at("frequency", {{f, f + 9}})};
    rubric.level_descriptions["period"] = {"cannot define period", "confuses period with frequency",
                                           "defines period", "uses period in calculations"};
    rubric.level_descriptions["frequency"] = {"cannot define frequency", "recalls the unit only",
                                              "relates frequency to period", "solves frequency problems"};

    state = assign_knowledge_state(rubric, {highlight(f, f + 9, section.id)}, 1);
    sheet.entries["period"] = {"The time for one full cycle.", {}};
    sheet.entries["frequency"] = {"How fast it goes.", {"Is frequency the same as speed?"}};

    candidate = dialogue({tutor("What is the period of this wave?", {Category::Questioning},
                                {TeachingStrategy::CognitivePrompting}),
                          learner("It is 0.5 seconds.", {Category::Answering}),
                          tutor("And the frequency?", {Category::Questioning}),
                          learner("Maybe 0.5 hertz too?", {Category::Answering}),
                          tutor("Compare one cycle with one second.", {Category::Scaffolding})});
    candidate.state = state;
  }
};

}  // namespace

TEST(PromptGolden, Rubric) {
  Scene s;
  auto spec = s.pipeline.rubric_prompt(s.section, "en");
  expect_golden("rubric_v1.txt", join(s.gateway.render(spec)));
}

TEST(PromptGolden, AnswerSheet) {
  Scene s;
  auto spec = s.pipeline.answer_sheet_prompt(s.state, s.rubric, s.section, "en");
  expect_golden("answer_sheet_v1.txt", join(s.gateway.render(spec)));
}

TEST(PromptGolden, Dialogue) {
  Scene s;
  auto spec = s.pipeline.dialogue_prompt(s.state, s.rubric, s.sheet, "Review before the quiz.", s.section, "en");
  expect_golden("dialogue_v1.txt", join(s.gateway.render(spec)));
}

TEST(PromptGolden, Laboratory) {
  Scene s;
  auto spec = laboratory_prompt(s.gateway, s.candidate, {2, 3}, "en");
  expect_golden("laboratory_v1.txt", join(s.gateway.render(spec)));
}

TEST(PromptGolden, RenderedPromptsHaveNoOpenPlaceholders) {
  Scene s;
  for (const auto& spec : {s.pipeline.rubric_prompt(s.section, "ko"),
                           s.pipeline.answer_sheet_prompt(s.state, s.rubric, s.section, "ko"),
                           s.pipeline.dialogue_prompt(s.state, s.rubric, s.sheet, "x", s.section, "ko"),
                           laboratory_prompt(s.gateway, s.candidate, {0, 4}, "ko")}) {
    for (const auto& m : s.gateway.render(spec)) {
      EXPECT_TRUE(llm::find_placeholders(m.content).empty()) << spec.template_id;
    }
  }
}
