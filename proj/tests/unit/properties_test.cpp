#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "builders.hpp"
#include "generators.hpp"
#include "synthetic_provider.hpp"
#include "vicar/ingestion.hpp"
#include "vicar/json_io.hpp"
#include "vicar/lint.hpp"
#include "vicar/pipeline.hpp"
#include "vicar/service.hpp"
#include "vicar/store.hpp"
#include "vicar/taxonomy.hpp"

using namespace vicar;
using namespace vicar::testing;
using nlohmann::json;

// Each property runs a fixed number of generated cases. The seed is in the
// failure message so a case can be replayed alone.

namespace {

constexpr int kCases = 150;

std::string srt_time(long long ms) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%02lld:%02lld:%02lld,%03lld", ms / 3600000, (ms / 60000) % 60, (ms / 1000) % 60,
                ms % 1000);
  return buf;
}

// SRT document with `cues` non-overlapping cues, plus the cue times.
std::string random_srt(Rng& rng, int cues, std::vector<std::pair<long long, long long>>* times = nullptr) {
  std::string out;
  long long t = rng.uniform(0, 2000);
  for (int i = 0; i < cues; ++i) {
    const long long start = t + rng.uniform(0, 800);
    const long long end = start + rng.uniform(300, 5000);
    out += std::to_string(i + 1) + "\n" + srt_time(start) + " --> " + srt_time(end) + "\n" +
           random_lecture(rng, 1) + "\n\n";
    if (times) times->emplace_back(start, end);
    t = end;
  }
  return out;
}

Transcript random_transcript(Rng& rng, int cues) {
  TranscriptSource s;
  s.kind = SourceKind::SubtitleSRT;
  s.id = "lecture";
  s.payload = random_srt(rng, cues);
  return parse_transcript(s);
}

// Rubric over the topic words that occur in `text`, spans found by search.
UnderstandingRubric rubric_over(const std::string& text) {
  UnderstandingRubric r;
  r.id = "rubric-prop";
  for (const auto& w : topic_words()) {
    std::vector<CharRange> spans;
    for (std::size_t at = text.find(w); at != std::string::npos; at = text.find(w, at + 1)) {
      spans.push_back({at, at + w.size()});
    }
    if (spans.empty()) continue;
    Concept c;
    c.id = w;
    c.name = w;
    c.span_refs = spans;
    r.concepts.push_back(c);
  }
  return r;
}

bool overlaps_any(const Concept& c, const std::vector<Highlight>& highlights) {
  for (const auto& s : c.span_refs) {
    for (const auto& h : highlights) {
      if (s.start < h.range.end && h.range.start < s.end) return true;
    }
  }
  return false;
}

std::string seed_note(std::uint64_t seed) { return "seed " + std::to_string(seed); }

}  // namespace

TEST(Property, CardIsAPureFunctionOfTheCandidate) {
  for (std::uint64_t seed = 1; seed <= kCases; ++seed) {
    Rng rng(seed);
    const auto c = random_candidate(rng, rng.uniform(2, 30));
    const auto card = derive_card(c);
    EXPECT_EQ(card, derive_card(c)) << seed_note(seed);
    EXPECT_EQ(card.turn_count, c.utterances.size()) << seed_note(seed);
    EXPECT_EQ(card.levels_summary, c.state.levels);
    std::size_t tags = 0, counted = 0;
    std::set<TeachingStrategy> strategies;
    for (const auto& u : c.utterances) {
      tags += u.categories.size();
      strategies.insert(u.strategy_tags.begin(), u.strategy_tags.end());
    }
    for (const auto& [speaker, counts] : card.key_patterns) {
      for (const auto& [category, n] : counts) {
        counted += static_cast<std::size_t>(n);
        EXPECT_TRUE(category_allowed(speaker, category));
      }
    }
    EXPECT_EQ(counted, tags) << seed_note(seed);
    EXPECT_EQ(card.key_strategies, strategies) << seed_note(seed);
  }
}

TEST(Property, LevelRuleAndDeficitCoverage) {
  for (std::uint64_t seed = 1; seed <= kCases; ++seed) {
    Rng rng(seed);
    const std::string text = random_lecture(rng, rng.uniform(3, 10));
    const auto rubric = rubric_over(text);
    auto highlights = normalize_highlights(random_highlights(rng, text, "s", rng.uniform(0, 4)), text.size());
    std::map<std::string, std::set<int>> seen;
    for (int v = 0; v < 4; ++v) {
      const auto state = assign_knowledge_state(rubric, highlights, v);
      EXPECT_TRUE(check_level_assignment(rubric, highlights, state).empty()) << seed_note(seed);
      ASSERT_EQ(state.levels.size(), rubric.concepts.size());
      for (const auto& c : rubric.concepts) {
        const int level = state.levels.at(c.id).value();
        if (overlaps_any(c, highlights)) {
          EXPECT_GE(level, 1);
          EXPECT_LE(level, 3) << seed_note(seed) << " " << c.id;
        } else {
          EXPECT_EQ(level, 4) << seed_note(seed) << " " << c.id;
        }
        seen[c.id].insert(level);
      }
    }
    for (const auto& c : rubric.concepts) {
      if (overlaps_any(c, highlights)) EXPECT_EQ(seen[c.id], (std::set<int>{1, 2, 3})) << seed_note(seed);
    }
  }
}

TEST(Property, TrimIsMonotoneInTheWindow) {
  for (std::uint64_t seed = 1; seed <= kCases; ++seed) {
    Rng rng(seed);
    const auto t = random_transcript(rng, rng.uniform(2, 12));
    const long long end = t.end().count;
    const long long a = rng.uniform(0, static_cast<int>(end / 2));
    const long long b = rng.uniform(static_cast<int>(end / 2) + 1, static_cast<int>(end));
    const long long a2 = a + rng.uniform(0, static_cast<int>((b - a) / 2));
    const long long b2 = b - rng.uniform(0, static_cast<int>((b - a2) / 2 - 1));
    const auto wide = trim_section(t, Millis{a}, Millis{b});
    TranscriptSection narrow;
    try {
      narrow = trim_section(t, Millis{a2}, Millis{b2});
    } catch (const Error& e) {
      // A window falling in a gap between cues has no text.
      EXPECT_EQ(e.code(), ErrorCode::RangeError);
      continue;
    }
    EXPECT_NE(wide.text.find(narrow.text), std::string::npos) << seed_note(seed);
    EXPECT_LE(narrow.char_offsets.size(), wide.char_offsets.size());
    for (const auto& m : wide.char_offsets) {
      ASSERT_TRUE(m.segment_index);
      EXPECT_EQ(wide.text.substr(m.text_range.start, m.text_range.end - m.text_range.start),
                t.segments[*m.segment_index].text);
      EXPECT_EQ(segment_at(wide, m.text_range.start), m.segment_index);
    }
  }
}

TEST(Property, ParsingIsDeterministicAndRoundTrips) {
  for (std::uint64_t seed = 1; seed <= kCases; ++seed) {
    Rng rng(seed);
    std::vector<std::pair<long long, long long>> times;
    TranscriptSource s;
    s.kind = SourceKind::SubtitleSRT;
    s.payload = random_srt(rng, rng.uniform(1, 10), &times);
    const auto t = parse_transcript(s);
    EXPECT_EQ(t, parse_transcript(s)) << seed_note(seed);
    ASSERT_EQ(t.segments.size(), times.size());
    for (std::size_t i = 0; i < times.size(); ++i) {
      EXPECT_EQ(t.segments[i].start.count, times[i].first);
      EXPECT_EQ(t.segments[i].end.count, times[i].second);
    }
    TranscriptSource structured;
    structured.kind = SourceKind::StructuredJSON;
    structured.payload = to_document(t).dump();
    structured.id = t.id;
    EXPECT_EQ(parse_transcript(structured).segments, t.segments) << seed_note(seed);
  }
}

TEST(Property, ReplayReproducesEveryEditSequence) {
  for (std::uint64_t seed = 1; seed <= kCases; ++seed) {
    Rng rng(seed);
    const auto generated = random_candidate(rng, rng.uniform(2, 12));
    CandidateHistory h(generated);
    const int steps = rng.uniform(1, 30);
    for (int i = 0; i < steps; ++i) {
      if (h.can_undo() && rng.chance(0.15)) {
        h.undo();
        continue;
      }
      try {
        h.apply(random_edit(rng, h.current()));
      } catch (const Error& e) {
        EXPECT_TRUE(e.code() == ErrorCode::IndexOutOfBounds || e.code() == ErrorCode::TaxonomyError)
            << seed_note(seed) << " " << e.what();
      }
    }
    const auto& entries = h.entries();
    for (std::size_t i = 1; i < entries.size(); ++i) {
      EXPECT_EQ(entries[i - 1].after_hash, entries[i].before_hash) << seed_note(seed);
      EXPECT_EQ(entries[i].version, entries[i - 1].version + 1);
    }
    const auto replayed = CandidateHistory::replay(generated, entries);
    EXPECT_EQ(replayed.current(), h.current()) << seed_note(seed);
    EXPECT_EQ(content_hash(replayed.current()), content_hash(h.current()));
    EXPECT_EQ(h.current().version, 1 + static_cast<std::int64_t>(entries.size()));
  }
}

TEST(Property, UndoInvertsTheLastEdit) {
  for (std::uint64_t seed = 1; seed <= kCases; ++seed) {
    Rng rng(seed);
    CandidateHistory h(random_candidate(rng, rng.uniform(2, 12)));
    for (int i = 0; i < rng.uniform(0, 5); ++i) {
      try {
        h.apply(random_edit(rng, h.current()));
      } catch (const Error&) {
      }
    }
    const auto before = h.current();
    try {
      h.apply(random_edit(rng, h.current()));
    } catch (const Error&) {
      continue;
    }
    h.undo();
    EXPECT_EQ(h.current().utterances, before.utterances) << seed_note(seed);
    EXPECT_EQ(h.current().state, before.state);
    EXPECT_GT(h.current().version, before.version);
  }
}

TEST(Property, EditsOnlyEverLeaveRetagViolations) {
  for (std::uint64_t seed = 1; seed <= kCases; ++seed) {
    Rng rng(seed);
    auto c = random_candidate(rng, rng.uniform(2, 10));
    for (int i = 0; i < 15; ++i) {
      try {
        c = apply_edit(c, random_edit(rng, c));
      } catch (const Error&) {
        continue;
      }
      for (const auto& v : validate_dialogue(c)) {
        EXPECT_EQ(v.rule, rules::kNeedsRetag) << seed_note(seed) << " " << v.message;
      }
    }
  }
}

TEST(Property, ApplyingAVariationKeepsTheTurnCount) {
  auto provider = std::make_shared<SyntheticProvider>();
  llm::Gateway gateway(provider, {}, [](std::chrono::milliseconds) {});
  for (std::uint64_t seed = 1; seed <= 60; ++seed) {
    Rng rng(seed);
    CandidateHistory h(random_candidate(rng, rng.uniform(2, 14)));
    const std::size_t n = h.current().utterances.size();
    const std::size_t start = rng.index(n);
    const SubDialogueSpan span{start, start + rng.index(n - start)};
    const auto lab = run_laboratory(gateway, h.current(), span, "en");
    for (const auto& v : lab.variations) {
      ASSERT_EQ(v.utterances.size(), span.size()) << seed_note(seed);
      EXPECT_EQ(v.utterances.front().speaker, h.current().utterances[span.start_index].speaker);
      EXPECT_EQ(v.utterances.back().speaker, h.current().utterances[span.end_index].speaker);
    }
    h.apply_variation(lab, span, rng.uniform(0, 3));
    EXPECT_EQ(h.current().utterances.size(), n) << seed_note(seed);
    EXPECT_TRUE(validate_dialogue(h.current()).empty()) << seed_note(seed);
  }
}

TEST(Property, LintIsDeterministicAndAgreesWithTheCard) {
  for (std::uint64_t seed = 1; seed <= kCases; ++seed) {
    Rng rng(seed);
    const auto c = random_candidate(rng, rng.uniform(2, 30));
    LintOptions options;
    options.section_text = random_lecture(rng, 6);
    const auto a = lint(c, options);
    const auto b = lint(c, options);
    EXPECT_EQ(json(a).dump(), json(b).dump()) << seed_note(seed);
    EXPECT_EQ(a.metrics.turn_count, derive_card(c).turn_count);
    EXPECT_GE(a.metrics.alternation_rate, 0.0);
    EXPECT_LE(a.metrics.alternation_rate, 1.0);
    EXPECT_GE(a.error_turn_percentage, 0.0);
    EXPECT_LE(a.error_turn_percentage, 100.0);
    auto sorted = a.findings;
    sort_findings(sorted);
    EXPECT_EQ(sorted, a.findings);
  }
}

TEST(Property, StoredHistoriesReloadUnchanged) {
  TempDir dir;
  ProjectStore store(dir.path());
  const auto project = store.create_project("props");
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    Rng rng(seed);
    const auto generated = random_candidate(rng, rng.uniform(2, 10), "cand-" + std::to_string(seed));
    GenerationResult run;
    run.run_id = "run-" + std::to_string(seed);
    run.section_id = "lecture@0-1000";
    for (int v = 0; v < 4; ++v) run.slots[static_cast<std::size_t>(v)].variant_index = v;
    run.slots[0].candidate = generated;
    run.slots[0].card = derive_card(generated);
    store.save_run(project.id, run);
    CandidateHistory h(generated);
    for (int i = 0; i < rng.uniform(0, 12); ++i) {
      try {
        h.apply(random_edit(rng, h.current()));
      } catch (const Error&) {
      }
      if (rng.chance(0.3)) store.save_history(project.id, h);
    }
    store.save_history(project.id, h);
    const auto loaded = store.load_history(project.id, generated.id);
    EXPECT_EQ(loaded.current(), h.current()) << seed_note(seed);
    EXPECT_EQ(loaded.entries(), h.entries());
    EXPECT_EQ(json(store.load_run(project.id, run.run_id)), json(run));
    EXPECT_EQ(store.list_versions(project.id, generated.id).size(), h.entries().size() + 1);
  }
}

TEST(Property, ExportIsDeterministicAndCuesPartitionTheSection) {
  for (std::uint64_t seed = 1; seed <= kCases; ++seed) {
    Rng rng(seed);
    const auto c = random_candidate(rng, rng.uniform(2, 30));
    const long long start = rng.uniform(0, 100000);
    const long long duration = rng.uniform(1, 600000);
    const auto cues = subtitle_cues(c, Millis{start}, Millis{duration});
    ASSERT_EQ(cues.size(), c.utterances.size());
    long long sum = 0;
    for (std::size_t i = 0; i < cues.size(); ++i) {
      EXPECT_LE(cues[i].start.count, cues[i].end.count);
      if (i) EXPECT_EQ(cues[i].start, cues[i - 1].end);
      sum += cues[i].end.count - cues[i].start.count;
    }
    EXPECT_EQ(sum, duration) << seed_note(seed);
    EXPECT_EQ(cues.front().start.count, start);
    const auto section = make_section("x", "s@0-1", Millis{start}, Millis{start + duration});
    for (auto f : {ExportFormat::ScriptText, ExportFormat::StructuredDoc, ExportFormat::SubtitleLike}) {
      EXPECT_EQ(export_candidate(c, f, &section), export_candidate(c, f, &section));
    }
  }
}

TEST(Property, JobsEndInExactlyOneTerminalState) {
  JobQueue q(64, 2);
  Rng rng(7);
  std::vector<std::string> ids;
  for (int i = 0; i < 40; ++i) {
    const int outcome = rng.uniform(0, 2);
    auto job = q.submit(JobKind::Generation, [outcome](std::stop_token) -> std::string {
      if (outcome == 1) throw Error(ErrorCode::SchemaViolation, "bad");
      if (outcome == 2) throw Error(ErrorCode::Cancelled, "stop");
      return "/ok";
    });
    ASSERT_TRUE(job);
    EXPECT_EQ(job->status, JobStatus::Queued);
    ids.push_back(job->id);
    if (rng.chance(0.2)) q.cancel(job->id);
  }
  for (const auto& id : ids) {
    const auto job = q.wait(id, std::chrono::seconds(5));
    ASSERT_TRUE(job);
    EXPECT_TRUE(job->status == JobStatus::Done || job->status == JobStatus::Failed ||
                job->status == JobStatus::Cancelled);
    EXPECT_EQ(job->result_ref.has_value(), job->status == JobStatus::Done);
    EXPECT_EQ(job->failure_code.has_value(), job->status == JobStatus::Failed);
  }
  EXPECT_EQ(q.active(), 0u);
}

TEST(Property, ProviderCallsStayWithinTheRetryRepairBound) {
  for (std::uint64_t seed = 1; seed <= kCases; ++seed) {
    Rng rng(seed);
    llm::GatewayConfig config;
    config.max_retries = rng.uniform(0, 3);
    config.max_repairs = rng.uniform(0, 3);
    auto calls = std::make_shared<int>(0);
    auto script = std::make_shared<Rng>(seed * 31);
    auto provider = std::make_shared<llm::FunctionProvider>([calls, script](const llm::ChatRequest&) {
      ++*calls;
      llm::ChatResponse r;
      switch (script->uniform(0, 3)) {
        case 0: r.status = 503; break;
        case 1: r.status = 429; r.retry_after_s = 0.0; break;
        case 2: r.text = "{\"a\": \"not an int\"}"; break;
        default: r.text = "{\"a\": 1, \"b\": \"x\"}"; break;
      }
      return r;
    });
    llm::Gateway gateway(provider, config, [](std::chrono::milliseconds) {});
    gateway.register_template("t", "{{x}}", llm::Temperature::provider_default());
    gateway.register_schema("pair", json{{"type", "object"},
                                         {"required", {"a", "b"}},
                                         {"properties", {{"a", {{"type", "integer"}}}, {"b", {{"type", "string"}}}}}});
    const int bound = (config.max_retries + 1) * (config.max_repairs + 1);
    try {
      auto r = gateway.complete_structured(gateway.make_prompt("t", {{"x", "go"}}, "pair"));
      EXPECT_EQ(r.attempts, *calls) << seed_note(seed);
    } catch (const SchemaViolation& e) {
      EXPECT_EQ(e.attempts(), *calls) << seed_note(seed);
    } catch (const Error& e) {
      EXPECT_TRUE(e.code() == ErrorCode::RateLimited || e.code() == ErrorCode::ProviderUnavailable);
    }
    EXPECT_LE(*calls, bound) << seed_note(seed);
  }
}
