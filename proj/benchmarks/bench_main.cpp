#include <benchmark/benchmark.h>

#include "generators.hpp"
#include "synthetic_provider.hpp"
#include "vicar/lint.hpp"
#include "vicar/pipeline.hpp"
#include "vicar/refinement.hpp"
#include "vicar/store.hpp"

using namespace vicar;
using namespace vicar::testing;

namespace {

UnderstandingRubric wide_rubric(int concepts) {
  UnderstandingRubric r;
  r.id = "bench";
  for (int k = 0; k < concepts; ++k) {
    Concept c;
    c.name = "Concept " + std::to_string(k);
    c.id = normalize_concept_id(c.name);
    c.span_refs = {{static_cast<std::size_t>(k) * 40, static_cast<std::size_t>(k) * 40 + 25}};
    r.concepts.push_back(c);
  }
  return r;
}

void BM_AssignKnowledgeState(benchmark::State& state) {
  const auto rubric = wide_rubric(static_cast<int>(state.range(0)));
  std::vector<Highlight> highlights;
  for (std::size_t k = 0; k < rubric.concepts.size(); k += 2) {
    Highlight h;
    h.section_id = "s";
    h.range = {k * 40 + 5, k * 40 + 10};
    highlights.push_back(h);
  }
  int v = 0;
  for (auto _ : state) benchmark::DoNotOptimize(assign_knowledge_state(rubric, highlights, v++ % 4));
}
BENCHMARK(BM_AssignKnowledgeState)->Arg(4)->Arg(8)->Arg(64);

void BM_Lint(benchmark::State& state) {
  Rng rng(5);
  const auto candidate = random_candidate(rng, static_cast<int>(state.range(0)));
  LintOptions options;
  options.section_text = random_lecture(rng, 40);
  for (auto _ : state) benchmark::DoNotOptimize(lint(candidate, options));
}
BENCHMARK(BM_Lint)->Arg(8)->Arg(30);

void BM_ApplyEdit(benchmark::State& state) {
  Rng rng(9);
  const auto candidate = random_candidate(rng, 30);
  std::vector<EditOperation> edits;
  for (int i = 0; i < 64; ++i) edits.push_back(random_edit(rng, candidate));
  std::size_t i = 0;
  for (auto _ : state) {
    try {
      benchmark::DoNotOptimize(apply_edit(candidate, edits[i++ % edits.size()]));
    } catch (const Error&) {
    }
  }
}
BENCHMARK(BM_ApplyEdit);

void BM_Replay(benchmark::State& state) {
  Rng rng(11);
  const auto generated = random_candidate(rng, 20);
  CandidateHistory history(generated);
  while (history.entries().size() < static_cast<std::size_t>(state.range(0))) {
    try {
      history.apply(random_edit(rng, history.current()));
    } catch (const Error&) {
    }
  }
  for (auto _ : state) benchmark::DoNotOptimize(CandidateHistory::replay(generated, history.entries()));
}
BENCHMARK(BM_Replay)->Arg(10)->Arg(30);

void BM_SubtitleCues(benchmark::State& state) {
  Rng rng(13);
  const auto candidate = random_candidate(rng, 30);
  for (auto _ : state) benchmark::DoNotOptimize(subtitle_cues(candidate, Millis{0}, Millis{180000}));
}
BENCHMARK(BM_SubtitleCues);

// Steps 1 to 4 with a provider that answers instantly, so this measures the
// orchestration, validation and repair bookkeeping.
void BM_SyntheticGeneration(benchmark::State& state) {
  Rng rng(17);
  GenerationRequest request;
  request.section = make_section(random_lecture(rng, 10));
  request.scenario = "A learner reviews the lecture with a tutor.";
  request.language = "en";
  request.highlights = random_highlights(rng, request.section.text, request.section.id, 3);
  PipelineConfig config;
  config.parallel_variants = state.range(0) != 0;
  for (auto _ : state) {
    llm::Gateway gateway(std::make_shared<SyntheticProvider>(), {}, [](std::chrono::milliseconds) {});
    Pipeline pipeline(gateway, config);
    benchmark::DoNotOptimize(pipeline.run_initial_generation(request));
  }
}
BENCHMARK(BM_SyntheticGeneration)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
