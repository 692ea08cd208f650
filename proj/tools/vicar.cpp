// vicar: headless front end for generation, linting and export.
//
// Exit codes: 0 success, 1 findings under --strict, 2 invalid input,
// 3 generation or provider failure.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vicar/errors.hpp"
#include "vicar/ingestion.hpp"
#include "vicar/json_io.hpp"
#include "vicar/lint.hpp"
#include "vicar/llm/gateway.hpp"
#include "vicar/llm/http_provider.hpp"
#include "vicar/llm/mock_provider.hpp"
#include "vicar/pipeline.hpp"
#include "vicar/service.hpp"
#include "vicar/store.hpp"
#include "vicar/taxonomy.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kFindings = 1, kInvalid = 2, kFailed = 3 };

int exit_code_for(vicar::ErrorCode code) {
  using vicar::ErrorCode;
  switch (code) {
    case ErrorCode::PipelineFailed:
    case ErrorCode::ProviderUnavailable:
    case ErrorCode::RateLimited:
    case ErrorCode::SchemaViolation:
    case ErrorCode::GroundingError:
    case ErrorCode::ConsistencyError:
    case ErrorCode::TaxonomyError:
    case ErrorCode::BudgetExceeded:
    case ErrorCode::Cancelled:
    case ErrorCode::ASRFailed:
    case ErrorCode::ASRUnavailable:
      return kFailed;
    default:
      return kInvalid;
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw vicar::Error(vicar::ErrorCode::NotFound, "cannot read " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

json read_json_file(const fs::path& path) {
  json doc = json::parse(read_file(path), nullptr, false);
  if (doc.is_discarded()) throw vicar::Error(vicar::ErrorCode::ParseError, path.string() + " is not valid JSON");
  return doc;
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw vicar::Error(vicar::ErrorCode::StorageFull, "cannot write " + path.string());
  out << bytes;
}

void write_json(const fs::path& path, const json& doc) { write_file(path, doc.dump(2) + "\n"); }

std::shared_ptr<vicar::llm::Provider> provider_for(const std::string& mock_dir) {
  if (!mock_dir.empty()) {
    return std::make_shared<vicar::llm::MockProvider>(vicar::llm::MockProvider::from_directory(mock_dir));
  }
  if (auto config = vicar::llm::HttpProviderConfig::from_env()) {
    return std::make_shared<vicar::llm::HttpChatProvider>(*config);
  }
  throw vicar::Error(vicar::ErrorCode::InvalidArgument,
                     "no provider configured: pass --mock FIXTURES_DIR or set VICAR_LLM_URL");
}

std::unique_ptr<vicar::llm::Gateway> gateway_for(const std::string& mock_dir) {
  vicar::llm::Sleeper sleeper;
  if (!mock_dir.empty()) sleeper = [](std::chrono::milliseconds) {};
  return std::make_unique<vicar::llm::Gateway>(provider_for(mock_dir), vicar::llm::GatewayConfig{}, sleeper);
}

vicar::TranscriptSection load_section(const fs::path& transcript, const std::string& id, const std::string& language,
                                      double start, double end) {
  auto source = vicar::read_transcript_file(transcript, id.empty() ? transcript.stem().string() : id, language);
  const auto parsed = vicar::parse_transcript(source);
  return vicar::trim_section(parsed, vicar::Millis::from_seconds(start), vicar::Millis::from_seconds(end));
}

std::vector<vicar::Highlight> load_highlights(const fs::path& path, const std::string& section_id) {
  const json doc = read_json_file(path);
  const json* list = &doc;
  if (doc.is_object()) {
    if (!doc.contains("highlights")) {
      throw vicar::Error(vicar::ErrorCode::ParseError, path.string() + ": expected a \"highlights\" array");
    }
    list = &doc.at("highlights");
  }
  if (!list->is_array()) throw vicar::Error(vicar::ErrorCode::ParseError, path.string() + ": highlights must be an array");
  std::vector<vicar::Highlight> out;
  for (const auto& item : *list) {
    try {
      auto h = item.get<vicar::Highlight>();
      if (h.section_id.empty()) h.section_id = section_id;
      out.push_back(std::move(h));
    } catch (const json::exception& e) {
      throw vicar::Error(vicar::ErrorCode::ParseError, path.string() + ": bad highlight " + item.dump() + " (" +
                                                           e.what() + ")");
    }
  }
  return out;
}

// Writes every document of a run to `dir` and returns the summary lines.
std::string write_run(const fs::path& dir, const vicar::GenerationResult& result,
                      const vicar::TranscriptSection& section) {
  fs::create_directories(dir);
  write_json(dir / "section.json", vicar::to_document(section));
  write_json(dir / "rubric.json", vicar::to_document(result.rubric));
  write_json(dir / "result.json", vicar::to_document(result));
  write_json(dir / "trace.json", json{{"schema", vicar::kSchemaVersion}, {"run_id", result.run_id}, {"entries", result.trace}});

  std::ostringstream out;
  out << "run " << result.run_id << "  section " << result.section_id << "  language " << result.language << "\n";
  out << "rubric " << result.rubric.id << ": " << result.rubric.concepts.size() << " concepts\n";
  for (const auto& slot : result.slots) {
    const std::string i = std::to_string(slot.variant_index);
    if (slot.ok()) {
      write_json(dir / ("candidate_" + i + ".json"), vicar::to_document(*slot.candidate));
      write_json(dir / ("card_" + i + ".json"), vicar::to_document(*slot.card));
      write_json(dir / ("answer_sheet_" + i + ".json"), vicar::to_document(*slot.answer_sheet));
      out << "  variant " << i << "  ok      " << slot.candidate->id << "  turns " << slot.card->turn_count
          << "  levels";
      for (const auto& [concept_id, level] : slot.state.levels) out << " " << concept_id << "=" << level.value();
      out << "\n";
    } else {
      out << "  variant " << i << "  failed  step " << slot.failed_step << "  "
          << (slot.failure_code ? std::string(vicar::to_string(*slot.failure_code)) : std::string("error")) << ": "
          << slot.failure << "\n";
    }
  }
  return out.str();
}

void print_error(const vicar::Error& e) {
  std::cerr << "error: " << e.what() << "\n";
  if (const auto* sv = dynamic_cast<const vicar::SchemaViolation*>(&e)) {
    for (const auto& issue : sv->errors()) std::cerr << "  - " << issue << "\n";
  }
  if (const auto* pf = dynamic_cast<const vicar::PipelineFailed*>(&e)) {
    std::cerr << "  step " << pf->step() << ", cause " << vicar::to_string(pf->cause()) << "\n";
  }
}

// ---------------------------------------------------------------------------

struct SectionArgs {
  std::string transcript;
  std::string transcript_id;
  std::string language = "en";
  double start = 0.0;
  double end = 0.0;
};

void add_section_args(CLI::App* cmd, SectionArgs& a) {
  cmd->add_option("--transcript", a.transcript, "Transcript file (.srt, .vtt, .txt, .json)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--transcript-id", a.transcript_id, "Transcript id (default: file stem)");
  cmd->add_option("--language", a.language, "Language code")->capture_default_str();
  cmd->add_option("--start", a.start, "Section start, seconds")->required();
  cmd->add_option("--end", a.end, "Section end, seconds")->required();
}

int cmd_section(const SectionArgs& a, bool as_json) {
  const auto section = load_section(a.transcript, a.transcript_id, a.language, a.start, a.end);
  if (as_json) {
    std::cout << vicar::to_document(section).dump(2) << "\n";
    return kOk;
  }
  std::cout << "section " << section.id << "  [" << section.start.seconds() << " s, " << section.end.seconds()
            << " s)  " << section.text.size() << " bytes\n";
  std::cout << "highlight offsets are byte offsets into the text below\n\n";
  constexpr std::size_t kWidth = 60;
  std::string ruler(kWidth, '.');
  for (std::size_t c = 0; c < kWidth; c += 5) ruler[c] = (c % 10 == 0) ? '|' : ':';
  std::cout << "        " << ruler << "\n";
  const std::string& t = section.text;
  std::size_t pos = 0;
  while (pos < t.size()) {
    std::size_t end = std::min(t.size(), pos + kWidth);
    // Never split a UTF-8 sequence.
    while (end < t.size() && end > pos && (static_cast<unsigned char>(t[end]) & 0xC0) == 0x80) --end;
    char label[16];
    std::snprintf(label, sizeof label, "%6zu  ", pos);
    std::cout << label << t.substr(pos, end - pos) << "\n";
    pos = end;
  }
  return kOk;
}

struct GenerateArgs {
  SectionArgs section;
  std::string highlights;
  std::string scenario;
  std::string out;
  std::string mock;
  bool sequential = false;
};

int cmd_generate(const GenerateArgs& a) {
  const auto section = load_section(a.section.transcript, a.section.transcript_id, a.section.language,
                                    a.section.start, a.section.end);
  vicar::GenerationRequest request;
  request.section = section;
  request.scenario = a.scenario;
  request.language = a.section.language;
  if (!a.highlights.empty()) request.highlights = load_highlights(a.highlights, section.id);
  vicar::check_request(request);

  auto gateway = gateway_for(a.mock);
  vicar::PipelineConfig config;
  config.parallel_variants = !a.sequential;
  vicar::Pipeline pipeline(*gateway, config);
  const auto result = pipeline.run_initial_generation(request);
  std::cout << write_run(a.out, result, section);
  return kOk;
}

struct BatchArgs {
  std::string manifest;
  std::string out;
  std::string mock;
};

// Manifest: {"cells": [{"name", "transcript", "language", "start", "end",
// "runs", "variants": [{"highlights", "scenario"}]}]}. Paths are relative to
// the manifest. Run r of a cell uses variants[r % n] and contributes the
// candidate of slot r % 4 (or the first successful one) to DIR/dataset.
int cmd_batch(const BatchArgs& a) {
  const fs::path manifest_path = fs::absolute(a.manifest);
  const fs::path base = manifest_path.parent_path();
  const json manifest = read_json_file(manifest_path);
  if (!manifest.contains("cells") || !manifest.at("cells").is_array()) {
    throw vicar::Error(vicar::ErrorCode::ParseError, "manifest needs a \"cells\" array");
  }
  auto gateway = gateway_for(a.mock);
  vicar::Pipeline pipeline(*gateway);
  const fs::path out = a.out;
  const fs::path dataset = out / "dataset";
  fs::create_directories(dataset);

  json index = json::array();
  int failures = 0;
  for (const auto& cell : manifest.at("cells")) {
    const std::string name = cell.at("name").get<std::string>();
    vicar::check_record_id(name);
    const std::string language = cell.value("language", std::string("en"));
    const auto section = load_section(base / cell.at("transcript").get<std::string>(),
                                      cell.value("transcript_id", std::string{}), language,
                                      cell.at("start").get<double>(), cell.at("end").get<double>());
    const auto& variants = cell.at("variants");
    if (!variants.is_array() || variants.empty()) {
      throw vicar::Error(vicar::ErrorCode::ParseError, "cell " + name + " needs a non-empty \"variants\" array");
    }
    const int runs = cell.value("runs", 1);
    for (int r = 0; r < runs; ++r) {
      const auto& variant = variants.at(static_cast<std::size_t>(r) % variants.size());
      char run_name[64];
      std::snprintf(run_name, sizeof run_name, "%s-r%02d", name.c_str(), r + 1);
      vicar::GenerationRequest request;
      request.section = section;
      request.language = language;
      request.scenario = variant.at("scenario").get<std::string>();
      if (variant.contains("highlights")) {
        request.highlights = load_highlights(base / variant.at("highlights").get<std::string>(), section.id);
      }
      try {
        vicar::check_request(request);
        const auto result = pipeline.run_initial_generation(request);
        std::cout << run_name << ": " << result.ok_count() << "/4 variants\n";
        write_run(out / name / run_name, result, section);

        const auto preferred = static_cast<std::size_t>(r) % result.slots.size();
        const vicar::VariantSlot* pick = result.slots[preferred].ok() ? &result.slots[preferred] : nullptr;
        for (const auto& slot : result.slots) {
          if (!pick && slot.ok()) pick = &slot;
        }
        const std::string file = std::string(run_name) + ".json";
        write_json(dataset / file, vicar::to_document(*pick->candidate));
        index.push_back({{"file", file},
                         {"cell", name},
                         {"run", r + 1},
                         {"language", language},
                         {"run_id", result.run_id},
                         {"candidate_id", pick->candidate->id},
                         {"variant_index", pick->variant_index}});
      } catch (const vicar::Error& e) {
        ++failures;
        std::cout << run_name << ": failed\n";
        print_error(e);
      }
    }
  }
  write_json(dataset / "index.json", json{{"schema", vicar::kSchemaVersion}, {"dialogues", index}});
  std::cout << "dialogues: " << index.size() << "\n";
  return failures == 0 ? kOk : kFailed;
}

vicar::DialogueCandidate load_candidate(const fs::path& path) {
  return vicar::from_document<vicar::DialogueCandidate>(read_json_file(path));
}

struct LintArgs {
  std::string candidate;
  std::string section;
  std::string mock;
  std::string format = "table";
  std::string language = "en";
  int word_cap = 60;
  bool judge = false;
  bool strict = false;
};

void print_table(const vicar::LintReport& report) {
  const auto& m = report.metrics;
  std::cout << "turns " << m.turn_count << "  alternation " << m.alternation_rate << "  mean words "
            << m.mean_words_per_turn << "  max words " << m.max_words_per_turn << "\n";
  std::cout << "categories: tutor " << m.distinct_tutor_categories << ", learner " << m.distinct_learner_categories
            << "  strategies:";
  for (auto s : m.strategies_present) std::cout << " " << vicar::to_string(s);
  std::cout << "\n";
  std::cout << "errors " << report.count(vicar::Severity::Error) << "  warnings "
            << report.count(vicar::Severity::Warning) << "  info " << report.count(vicar::Severity::Info)
            << "  error turns " << report.error_turn_percentage << "%\n";
  if (!report.findings.empty()) {
    std::cout << "\nturn  rule   severity  message\n";
    for (const auto& f : report.findings) {
      char head[40];
      std::snprintf(head, sizeof head, "%-5s %-6s %-9s ",
                    f.turn_index ? std::to_string(*f.turn_index).c_str() : "-", f.rule_id.c_str(),
                    std::string(vicar::to_string(f.severity)).c_str());
      std::cout << head << f.message << "\n";
    }
  }
  for (const auto& note : report.notes) std::cout << "note: " << note << "\n";
}

int cmd_lint(const LintArgs& a) {
  const auto candidate = load_candidate(a.candidate);
  vicar::LintOptions options;
  options.language = a.language;
  options.word_cap = a.word_cap;
  if (!a.section.empty()) {
    options.section_text = vicar::from_document<vicar::TranscriptSection>(read_json_file(a.section)).text;
  }
  std::unique_ptr<vicar::llm::Gateway> gateway;
  if (a.judge) {
    gateway = gateway_for(a.mock);
    vicar::register_default_assets(*gateway);
    options.judge = gateway.get();
  }
  const auto report = vicar::lint(candidate, options);
  if (a.format == "json") {
    std::cout << json(report).dump(2) << "\n";
  } else {
    print_table(report);
  }
  return a.strict && !report.findings.empty() ? kFindings : kOk;
}

struct ExportArgs {
  std::string candidate;
  std::string format;
  std::string section;
  std::string out;
};

int cmd_export(const ExportArgs& a) {
  const auto candidate = load_candidate(a.candidate);
  const auto format = vicar::parse_export_format(a.format);
  if (!format) throw vicar::Error(vicar::ErrorCode::InvalidArgument, "unknown export format \"" + a.format + "\"");
  std::optional<vicar::TranscriptSection> section;
  if (!a.section.empty()) section = vicar::from_document<vicar::TranscriptSection>(read_json_file(a.section));
  const std::string bytes = vicar::export_candidate(candidate, *format, section ? &*section : nullptr);
  if (a.out.empty() || a.out == "-") {
    std::cout << bytes;
  } else {
    write_file(a.out, bytes);
  }
  return kOk;
}

vicar::Service* g_service = nullptr;

int cmd_serve(vicar::ServiceConfig config) {
  auto provider = vicar::make_provider(config);
  std::shared_ptr<vicar::AsrClient> asr;
  if (auto asr_config = vicar::AsrConfig::from_env()) asr = std::make_shared<vicar::HttpAsrClient>(*asr_config);
  vicar::Service service(config, provider, asr, &std::cout);
  g_service = &service;
  std::signal(SIGINT, [](int) {
    if (g_service) g_service->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_service) g_service->stop();
  });
  service.run();
  g_service = nullptr;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vicar: turn lecture transcript sections into tutoring dialogues"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "vicar 0.1.0");

  SectionArgs section_args;
  bool section_json = false;
  auto* section = app.add_subcommand("section", "Print a transcript section with a byte-offset ruler");
  add_section_args(section, section_args);
  section->add_flag("--json", section_json, "Print the section document instead");

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Run initial generation for one section");
  add_section_args(generate, gen.section);
  generate->add_option("--highlights", gen.highlights, "Highlights file")->check(CLI::ExistingFile);
  generate->add_option("--scenario", gen.scenario, "Dialogue scenario")->required();
  generate->add_option("--out", gen.out, "Output directory")->required();
  generate->add_option("--mock", gen.mock, "Mock fixture directory")->check(CLI::ExistingDirectory);
  generate->add_flag("--sequential", gen.sequential, "Generate variants one after another");

  BatchArgs batch_args;
  auto* batch = app.add_subcommand("batch", "Run a manifest of generations and collect a dataset");
  batch->add_option("--manifest", batch_args.manifest, "Batch manifest")->required()->check(CLI::ExistingFile);
  batch->add_option("--out", batch_args.out, "Output directory")->required();
  batch->add_option("--mock", batch_args.mock, "Mock fixture directory")->check(CLI::ExistingDirectory);

  LintArgs lint_args;
  auto* lint = app.add_subcommand("lint", "Quality report for a candidate");
  lint->add_option("--candidate", lint_args.candidate, "Candidate document")->required()->check(CLI::ExistingFile);
  lint->add_option("--section", lint_args.section, "Section document (enables numeric checks)")
      ->check(CLI::ExistingFile);
  lint->add_flag("--judge", lint_args.judge, "Escalate to the LLM judge");
  lint->add_flag("--strict", lint_args.strict, "Exit 1 when there are findings");
  lint->add_option("--format", lint_args.format, "table or json")
      ->check(CLI::IsMember({"table", "json"}))
      ->capture_default_str();
  lint->add_option("--language", lint_args.language, "Language for judge prompts")->capture_default_str();
  lint->add_option("--word-cap", lint_args.word_cap, "Soft words-per-turn cap")->capture_default_str();
  lint->add_option("--mock", lint_args.mock, "Mock fixture directory for the judge")
      ->check(CLI::ExistingDirectory);

  ExportArgs export_args;
  auto* exp = app.add_subcommand("export", "Export a candidate");
  exp->add_option("--candidate", export_args.candidate, "Candidate document")->required()->check(CLI::ExistingFile);
  exp->add_option("--format", export_args.format, "ScriptText, StructuredDoc or SubtitleLike")->required();
  exp->add_option("--section", export_args.section, "Section document (needed for SubtitleLike)")
      ->check(CLI::ExistingFile);
  exp->add_option("--out", export_args.out, "Output file (default: stdout)");

  vicar::ServiceConfig serve_config;
  std::string serve_mock;
  std::string serve_store;
  auto* serve = app.add_subcommand("serve", "Run the HTTP API");
  serve->add_option("--bind", serve_config.bind, "Bind address");
  serve->add_option("--port", serve_config.port, "Port (0 picks a free one)");
  serve->add_option("--store", serve_store, "Store directory");
  serve->add_option("--token", serve_config.token, "Bearer token");
  serve->add_option("--mock", serve_mock, "Mock fixture directory")->check(CLI::ExistingDirectory);

  try {
    serve_config = vicar::ServiceConfig::from_env();
  } catch (const vicar::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    if (*section) return cmd_section(section_args, section_json);
    if (*generate) return cmd_generate(gen);
    if (*batch) return cmd_batch(batch_args);
    if (*lint) return cmd_lint(lint_args);
    if (*exp) return cmd_export(export_args);
    if (*serve) {
      if (!serve_mock.empty()) serve_config.mock_fixtures = serve_mock;
      if (!serve_store.empty()) serve_config.store = serve_store;
      return cmd_serve(serve_config);
    }
  } catch (const vicar::Error& e) {
    print_error(e);
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  }
  return kInvalid;
}
