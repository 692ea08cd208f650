#include "vicar/lint.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "vicar/json_io.hpp"
#include "vicar/pipeline.hpp"
#include "vicar/refinement.hpp"
#include "vicar/taxonomy.hpp"
#include "vicar/text.hpp"

namespace vicar {
namespace {

using nlohmann::json;

constexpr std::size_t kContextWindow = 3;

bool has(const Utterance& u, Category c) { return u.categories.count(c) > 0; }

bool is_digit(char c) { return c >= '0' && c <= '9'; }

bool is_number_token(const std::string& t) { return !t.empty() && (is_digit(t.front()) || t.front() == '.'); }

bool same_value(double a, double b) { return std::fabs(a - b) <= 1e-9 * std::max({1.0, std::fabs(a), std::fabs(b)}); }

std::string context_key(const std::string& token) {
  std::string w = token;
  if (w.size() > 3 && w.back() == 's' && w[w.size() - 2] != 's') w.pop_back();
  return w;
}

bool shares(const std::set<std::string>& a, const std::set<std::string>& b) {
  return std::any_of(a.begin(), a.end(), [&](const std::string& w) { return b.count(w) > 0; });
}

}  // namespace

std::string_view to_string(Severity severity) {
  switch (severity) {
    case Severity::Error: return "Error";
    case Severity::Warning: return "Warning";
    case Severity::Info: return "Info";
  }
  return "Info";
}

std::size_t LintReport::count(Severity severity) const {
  return static_cast<std::size_t>(
      std::count_if(findings.begin(), findings.end(), [&](const Finding& f) { return f.severity == severity; }));
}

void to_json(json& j, const Finding& v) {
  j = json{{"rule_id", v.rule_id}, {"severity", std::string(to_string(v.severity))}, {"message", v.message}};
  j["turn_index"] = v.turn_index ? json(*v.turn_index) : json(nullptr);
}

void to_json(json& j, const DynamicMetrics& v) {
  j = json{{"turn_count", v.turn_count},
           {"alternation_rate", v.alternation_rate},
           {"mean_words_per_turn", v.mean_words_per_turn},
           {"max_words_per_turn", v.max_words_per_turn},
           {"distinct_tutor_categories", v.distinct_tutor_categories},
           {"distinct_learner_categories", v.distinct_learner_categories},
           {"strategies_present", v.strategies_present}};
}

void to_json(json& j, const CategoryCoverage& v) {
  json counts = json::object();
  for (const auto& [speaker, by_category] : v.counts) {
    json inner = json::object();
    for (const auto& [category, n] : by_category) inner[std::string(to_string(category))] = n;
    counts[std::string(to_string(speaker))] = inner;
  }
  j = json{{"counts", counts}, {"unused_tutor", v.unused_tutor}, {"unused_learner", v.unused_learner}};
}

void to_json(json& j, const LintReport& v) {
  j = json{{"findings", v.findings},
           {"metrics", v.metrics},
           {"coverage", v.coverage},
           {"error_turn_percentage", v.error_turn_percentage},
           {"judge_used", v.judge_used},
           {"notes", v.notes}};
}

void sort_findings(std::vector<Finding>& findings) {
  std::stable_sort(findings.begin(), findings.end(), [](const Finding& a, const Finding& b) {
    if (a.turn_index.has_value() != b.turn_index.has_value()) return a.turn_index.has_value();
    if (a.turn_index != b.turn_index) return *a.turn_index < *b.turn_index;
    return a.rule_id < b.rule_id;
  });
}

// ---------------------------------------------------------------------------
// INC-1

std::optional<double> parse_number(const std::string& literal) {
  if (literal.empty()) return std::nullopt;
  if (auto slash = literal.find('/'); slash != std::string::npos) {
    auto num = parse_number(literal.substr(0, slash));
    auto den = parse_number(literal.substr(slash + 1));
    if (!num || !den || *den == 0.0) return std::nullopt;
    return *num / *den;
  }
  std::string digits;
  for (char c : literal) {
    if (c != ',') digits.push_back(c);
  }
  try {
    std::size_t used = 0;
    double value = std::stod(digits, &used);
    if (used != digits.size()) return std::nullopt;
    return value;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::string normalize_unit(const std::string& token) {
  static const std::map<std::string, std::string> kUnits{
      {"s", "s"},       {"sec", "s"},     {"secs", "s"},     {"second", "s"},   {"seconds", "s"},
      {"ms", "ms"},     {"millisecond", "ms"}, {"milliseconds", "ms"},
      {"min", "min"},   {"minute", "min"}, {"minutes", "min"},
      {"h", "h"},       {"hour", "h"},    {"hours", "h"},
      {"m", "m"},       {"meter", "m"},   {"meters", "m"},   {"metre", "m"},    {"metres", "m"},
      {"cm", "cm"},     {"centimeter", "cm"}, {"centimeters", "cm"},
      {"mm", "mm"},     {"km", "km"},     {"kilometer", "km"}, {"kilometers", "km"},
      {"kg", "kg"},     {"kilogram", "kg"}, {"kilograms", "kg"}, {"g", "g"}, {"gram", "g"}, {"grams", "g"},
      {"hz", "hz"},     {"hertz", "hz"},  {"khz", "khz"},
      {"m/s", "m/s"},   {"km/h", "km/h"}, {"m/s2", "m/s2"},
      {"n", "n"},       {"newton", "n"},  {"newtons", "n"},
      {"j", "j"},       {"joule", "j"},   {"joules", "j"},
      {"w", "w"},       {"watt", "w"},    {"watts", "w"},
      {"v", "v"},       {"volt", "v"},    {"volts", "v"},
      {"%", "%"},       {"percent", "%"},
      {"deg", "deg"},   {"degree", "deg"}, {"degrees", "deg"},
      {"rad", "rad"},   {"radian", "rad"}, {"radians", "rad"},
      {"초", "s"},      {"미터", "m"},    {"헤르츠", "hz"},  {"센티미터", "cm"},
  };
  auto it = kUnits.find(token);
  return it == kUnits.end() ? std::string{} : it->second;
}

std::vector<NumericMention> extract_numbers(const std::string& source) {
  const auto tokens = text::tokenize(source);
  std::vector<NumericMention> out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!is_number_token(tokens[i].text)) continue;
    auto value = parse_number(tokens[i].text);
    if (!value) continue;
    NumericMention m;
    m.value = *value;
    m.literal = tokens[i].text;
    std::size_t unit_index = tokens.size();
    if (i + 1 < tokens.size()) {
      m.unit = normalize_unit(tokens[i + 1].text);
      if (!m.unit.empty()) unit_index = i + 1;
    }
    const std::size_t lo = i >= kContextWindow ? i - kContextWindow : 0;
    const std::size_t hi = std::min(tokens.size(), (unit_index < tokens.size() ? unit_index : i) + kContextWindow + 1);
    for (std::size_t k = lo; k < hi; ++k) {
      if (k == i || k == unit_index) continue;
      const std::string& w = tokens[k].text;
      if (w.size() < 2 || is_number_token(w) || text::is_stop_word(w) || !normalize_unit(w).empty()) continue;
      m.context.insert(context_key(w));
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<Finding> lint_numeric_fidelity(const DialogueCandidate& candidate, const std::string& section_text) {
  const auto reference = extract_numbers(section_text);
  std::vector<Finding> findings;
  for (std::size_t t = 0; t < candidate.utterances.size(); ++t) {
    for (const auto& m : extract_numbers(candidate.utterances[t].text)) {
      std::vector<const NumericMention*> related;
      bool matches = false;
      for (const auto& r : reference) {
        if (r.unit != m.unit) continue;
        if (same_value(r.value, m.value)) matches = true;
        if (shares(r.context, m.context)) related.push_back(&r);
      }
      if (matches || related.empty()) continue;
      const NumericMention& source = *related.front();
      findings.push_back({lint_rules::kNumericFidelity, t, Severity::Error,
                          "number " + m.literal + (m.unit.empty() ? "" : " " + m.unit) +
                              " contradicts the transcript value " + source.literal +
                              (source.unit.empty() ? "" : " " + source.unit)});
    }
  }
  return findings;
}

// ---------------------------------------------------------------------------
// INC-2

std::vector<Finding> lint_qa_consistency(const DialogueCandidate& candidate, llm::Gateway* judge,
                                         const std::string& language, std::vector<std::string>* notes) {
  std::vector<Finding> findings;
  const auto& turns = candidate.utterances;
  bool judge_failed = false;
  for (std::size_t i = 0; i + 1 < turns.size(); ++i) {
    const Utterance& q = turns[i];
    const Utterance& a = turns[i + 1];
    if (q.speaker != Speaker::Learner || !has(q, Category::Questioning)) continue;
    if (a.speaker != Speaker::Tutor || !has(a, Category::Answering)) continue;

    const auto q_concepts = mentioned_concepts({q}, candidate.state);
    const auto a_concepts = mentioned_concepts({a}, candidate.state);
    bool overlap = std::any_of(q_concepts.begin(), q_concepts.end(), [&](const std::string& c) {
      return std::find(a_concepts.begin(), a_concepts.end(), c) != a_concepts.end();
    });
    if (!overlap) {
      const auto qw = text::content_words(q.text);
      const auto aw = text::content_words(a.text);
      overlap = shares(std::set<std::string>(qw.begin(), qw.end()), std::set<std::string>(aw.begin(), aw.end()));
    }
    if (overlap) continue;

    Finding f{lint_rules::kQaConsistency, i + 1, Severity::Warning,
              "the tutor's answer shares no topic with the learner's question at turn " + std::to_string(i)};
    if (judge && !judge_failed) {
      try {
        register_default_assets(*judge);
        auto spec = judge->make_prompt(templates::kQaJudge,
                                       {{"language", language}, {"question", q.text}, {"answer", a.text}},
                                       templates::kQaJudge);
        llm::CallOptions options;
        options.step = "qa_judge";
        auto verdict = judge->complete_structured(spec, options);
        if (verdict.parsed->at("consistent").get<bool>()) continue;
        f.severity = Severity::Error;
        f.message = "judge confirmed: " + verdict.parsed->value("reason", f.message);
      } catch (const Error& e) {
        judge_failed = true;
        if (notes) notes->push_back("judge unavailable, INC-2 kept heuristic severity: " + e.detail());
      }
    }
    findings.push_back(std::move(f));
  }
  return findings;
}

// ---------------------------------------------------------------------------
// INC-3

std::map<std::string, std::vector<ConceptEvent>> trajectory_events(const DialogueCandidate& candidate,
                                                                   const LearnerKnowledgeState& state) {
  std::map<std::string, std::vector<ConceptEvent>> events;
  const auto& turns = candidate.utterances;
  for (std::size_t i = 0; i < turns.size(); ++i) {
    const Utterance& u = turns[i];
    for (const auto& id : mentioned_concepts({u}, state)) {
      auto& seq = events[id];
      if (u.speaker == Speaker::Learner) {
        if (has(u, Category::Answering) || has(u, Category::Explanation)) {
          const bool corrected = i + 1 < turns.size() && turns[i + 1].speaker == Speaker::Tutor &&
                                 (has(turns[i + 1], Category::Scaffolding) || has(turns[i + 1], Category::Diagnosing));
          seq.push_back({i, corrected ? TrajectoryEvent::Wrong : TrajectoryEvent::Correct});
        } else if (has(u, Category::Reflecting)) {
          seq.push_back({i, TrajectoryEvent::Reflect});
        }
      } else {
        if (has(u, Category::Lecturing) || has(u, Category::Demonstrating)) {
          seq.push_back({i, TrajectoryEvent::NewSubtopic});
        } else if (has(u, Category::Scaffolding)) {
          seq.push_back({i, TrajectoryEvent::Scaffold});
        }
      }
    }
  }
  return events;
}

std::vector<Finding> lint_knowledge_trajectory(const DialogueCandidate& candidate,
                                               const LearnerKnowledgeState& state) {
  std::vector<Finding> findings;
  for (const auto& [id, seq] : trajectory_events(candidate, state)) {
    std::optional<std::size_t> last_correct;
    for (const auto& e : seq) {
      switch (e.event) {
        case TrajectoryEvent::Correct:
          last_correct = e.turn_index;
          break;
        case TrajectoryEvent::NewSubtopic:
          last_correct.reset();
          break;
        case TrajectoryEvent::Wrong:
          if (last_correct) {
            findings.push_back({lint_rules::kReverseProgression, e.turn_index, Severity::Warning,
                                "reverse progression: " + id + " was answered correctly at turn " +
                                    std::to_string(*last_correct) + " but wrongly here"});
          }
          break;
        default:
          break;
      }
    }
  }
  return findings;
}

// ---------------------------------------------------------------------------
// Dynamics

std::vector<Finding> lint_word_cap(const DialogueCandidate& candidate, int word_cap) {
  std::vector<Finding> findings;
  for (std::size_t i = 0; i < candidate.utterances.size(); ++i) {
    const auto words = text::word_count(candidate.utterances[i].text);
    if (static_cast<int>(words) > word_cap) {
      findings.push_back({lint_rules::kWordCap, i, Severity::Info,
                          std::to_string(words) + " words exceeds the soft cap of " + std::to_string(word_cap)});
    }
  }
  return findings;
}

DynamicMetrics compute_metrics(const DialogueCandidate& candidate) {
  DynamicMetrics m;
  const auto& turns = candidate.utterances;
  m.turn_count = turns.size();
  if (turns.size() >= 2) {
    std::size_t alternating = 0;
    for (std::size_t i = 1; i < turns.size(); ++i) alternating += turns[i].speaker != turns[i - 1].speaker;
    m.alternation_rate = static_cast<double>(alternating) / static_cast<double>(turns.size() - 1);
  }
  std::size_t total_words = 0;
  std::set<Category> tutor;
  std::set<Category> learner;
  for (const auto& u : turns) {
    const auto words = text::word_count(u.text);
    total_words += words;
    m.max_words_per_turn = std::max(m.max_words_per_turn, words);
    (u.speaker == Speaker::Tutor ? tutor : learner).insert(u.categories.begin(), u.categories.end());
    m.strategies_present.insert(u.strategy_tags.begin(), u.strategy_tags.end());
  }
  if (!turns.empty()) m.mean_words_per_turn = static_cast<double>(total_words) / static_cast<double>(turns.size());
  m.distinct_tutor_categories = tutor.size();
  m.distinct_learner_categories = learner.size();
  return m;
}

CategoryCoverage compute_coverage(const DialogueCandidate& candidate) {
  CategoryCoverage c;
  for (const auto& u : candidate.utterances) {
    for (Category cat : u.categories) ++c.counts[u.speaker][cat];
  }
  for (Category cat : categories_for(Speaker::Tutor)) {
    if (!c.counts[Speaker::Tutor].count(cat)) c.unused_tutor.push_back(cat);
  }
  for (Category cat : categories_for(Speaker::Learner)) {
    if (!c.counts[Speaker::Learner].count(cat)) c.unused_learner.push_back(cat);
  }
  std::erase_if(c.counts, [](const auto& kv) { return kv.second.empty(); });
  return c;
}

// ---------------------------------------------------------------------------
// Judge-only criteria

std::vector<Finding> judge_criteria(llm::Gateway& judge, const DialogueCandidate& candidate,
                                    const std::string& language) {
  register_default_assets(judge);
  std::string dialogue;
  for (std::size_t i = 0; i < candidate.utterances.size(); ++i) {
    const auto& u = candidate.utterances[i];
    dialogue += std::to_string(i) + ". " + std::string(to_string(u.speaker)) + ": " + u.text + "\n";
  }
  auto spec = judge.make_prompt(templates::kCriteriaJudge,
                                {{"language", language}, {"scenario", candidate.scenario}, {"dialogue", dialogue}},
                                templates::kCriteriaJudge);
  const std::size_t n = candidate.utterances.size();
  llm::CallOptions options;
  options.step = "criteria_judge";
  options.check = [n](const json& out) {
    std::vector<llm::Issue> issues;
    for (const auto& f : out.at("findings")) {
      if (f.contains("turn_index") && f.at("turn_index").is_number_integer() &&
          f.at("turn_index").get<long long>() >= static_cast<long long>(n)) {
        issues.push_back({ErrorCode::SchemaViolation, "turn_index " + f.at("turn_index").dump() + " out of range"});
      }
    }
    return issues;
  };
  auto result = judge.complete_structured(spec, options);
  std::vector<Finding> findings;
  for (const auto& f : result.parsed->at("findings")) {
    Finding finding;
    finding.rule_id = f.at("rule_id").get<std::string>();
    finding.severity = Severity::Warning;
    finding.message = "judge: " + f.at("message").get<std::string>();
    if (f.contains("turn_index") && f.at("turn_index").is_number_integer()) {
      finding.turn_index = f.at("turn_index").get<std::size_t>();
    }
    findings.push_back(std::move(finding));
  }
  return findings;
}

// ---------------------------------------------------------------------------

LintReport lint(const DialogueCandidate& candidate, const LintOptions& options) {
  LintReport report;
  const LearnerKnowledgeState& state = options.state ? *options.state : candidate.state;

  for (const auto& v : validate_dialogue(candidate)) {
    const bool transitional = v.rule == rules::kNeedsRetag;
    report.findings.push_back({lint_rules::kValidation, v.utterance_index,
                               transitional ? Severity::Warning : Severity::Error, v.rule + ": " + v.message});
  }
  if (options.section_text) {
    auto f = lint_numeric_fidelity(candidate, *options.section_text);
    report.findings.insert(report.findings.end(), f.begin(), f.end());
  } else {
    report.notes.push_back("INC-1 skipped: no section text supplied");
  }
  {
    auto f = lint_qa_consistency(candidate, options.judge, options.language, &report.notes);
    report.findings.insert(report.findings.end(), f.begin(), f.end());
  }
  {
    auto f = lint_knowledge_trajectory(candidate, state);
    report.findings.insert(report.findings.end(), f.begin(), f.end());
  }
  {
    auto f = lint_word_cap(candidate, options.word_cap);
    report.findings.insert(report.findings.end(), f.begin(), f.end());
  }
  if (options.judge) {
    report.judge_used = true;
    try {
      auto f = judge_criteria(*options.judge, candidate, options.language);
      report.findings.insert(report.findings.end(), f.begin(), f.end());
    } catch (const Error& e) {
      report.notes.push_back("SAP1, SAP2, SI1 not evaluated: judge failed: " + e.detail());
    }
  } else {
    report.notes.push_back("SAP1, SAP2, SI1 not evaluated: judge mode only");
  }

  sort_findings(report.findings);
  report.metrics = compute_metrics(candidate);
  report.coverage = compute_coverage(candidate);

  std::set<std::size_t> error_turns;
  for (const auto& f : report.findings) {
    if (f.severity == Severity::Error && f.turn_index) error_turns.insert(*f.turn_index);
  }
  if (!candidate.utterances.empty()) {
    report.error_turn_percentage =
        100.0 * static_cast<double>(error_turns.size()) / static_cast<double>(candidate.utterances.size());
  }
  return report;
}

}  // namespace vicar
