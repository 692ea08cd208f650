#pragma once

// File-backed project store. One directory per project holds canonical JSON
// documents; every write goes to a temporary file that is then renamed over
// the target, so readers never observe a partial record.
//
//   <root>/<project>/project.json
//   <root>/<project>/transcripts/<transcript>.json
//   <root>/<project>/sections/<section>.json
//   <root>/<project>/runs/<run>.json
//   <root>/<project>/candidates/<candidate>/v000001.json   (immutable)
//   <root>/<project>/candidates/<candidate>/history.json
//   <root>/<project>/candidates/<candidate>/laboratory.json

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vicar/model.hpp"
#include "vicar/pipeline.hpp"
#include "vicar/refinement.hpp"

namespace vicar {

struct Project {
  std::string id;
  std::string title;
  std::string created_at;  // ISO 8601, UTC
  std::vector<std::string> transcript_ids;
  std::vector<std::string> generation_run_ids;
  std::optional<std::string> selected_candidate_id;

  friend bool operator==(const Project&, const Project&) = default;
};

void to_json(nlohmann::json& j, const Project& v);
void from_json(const nlohmann::json& j, Project& v);

struct ProjectSummary {
  std::string id;
  std::string title;
  std::string created_at;
};

// Throws Error(InvalidArgument) for ids that are not safe file names.
void check_record_id(const std::string& id);

// Atomic document I/O. Reads throw Error(NotFound) or Error(CorruptRecord);
// writes throw Error(StorageFull) when the file system refuses the data.
void write_document_atomic(const std::filesystem::path& path, const nlohmann::json& doc);
nlohmann::json read_document(const std::filesystem::path& path);

class ProjectStore {
 public:
  explicit ProjectStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }

  Project create_project(const std::string& title);
  void save_project(const Project& project);
  Project load_project(const std::string& project_id) const;
  std::vector<ProjectSummary> list_projects() const;

  void save_transcript(const std::string& project_id, const Transcript& transcript);
  Transcript load_transcript(const std::string& project_id, const std::string& transcript_id) const;

  void save_section(const std::string& project_id, const TranscriptSection& section);
  TranscriptSection load_section(const std::string& project_id, const std::string& section_id) const;

  // Stores the run and the generated snapshot (version 1) of every candidate.
  void save_run(const std::string& project_id, const GenerationResult& result);
  GenerationResult load_run(const std::string& project_id, const std::string& run_id) const;
  bool has_run(const std::string& project_id, const std::string& run_id) const;

  // Persists every version of `history` not yet on disk plus the entry log.
  // Existing version files are never rewritten; a history that does not
  // extend the stored one is rejected with Error(VersionConflict).
  void save_history(const std::string& project_id, const CandidateHistory& history);
  CandidateHistory load_history(const std::string& project_id, const std::string& candidate_id) const;
  DialogueCandidate load_candidate(const std::string& project_id, const std::string& candidate_id,
                                   std::optional<std::int64_t> version = std::nullopt) const;
  std::vector<std::int64_t> list_versions(const std::string& project_id, const std::string& candidate_id) const;

  void save_laboratory(const std::string& project_id, const LaboratoryResult& lab);
  std::optional<LaboratoryResult> load_laboratory(const std::string& project_id,
                                                  const std::string& candidate_id) const;

  // The run that produced `candidate_id`, searched among the project's runs.
  std::optional<std::string> run_for_candidate(const std::string& project_id,
                                               const std::string& candidate_id) const;
  // Throws Error(NotFound) unless the candidate belongs to one of the runs.
  Project select_candidate(const std::string& project_id, const std::string& candidate_id);

  // Serializes writes to one project.
  std::unique_lock<std::mutex> lock_project(const std::string& project_id);

 private:
  std::filesystem::path project_dir(const std::string& project_id) const;
  std::filesystem::path candidate_dir(const std::string& project_id, const std::string& candidate_id) const;

  std::filesystem::path root_;
  std::mutex locks_mutex_;
  std::map<std::string, std::unique_ptr<std::mutex>> locks_;
};

// ---------------------------------------------------------------------------
// Export

enum class ExportFormat { ScriptText, StructuredDoc, SubtitleLike };

std::optional<ExportFormat> parse_export_format(std::string_view name);
std::string_view to_string(ExportFormat format);

struct Cue {
  Millis start;
  Millis end;
  std::string text;
};

// Splits `duration` across the turns in proportion to their word counts
// (at least one word each). Largest remainders keep the sum exact.
std::vector<Cue> subtitle_cues(const DialogueCandidate& candidate, Millis start, Millis duration);
std::string format_srt_time(Millis t);

// Throws Error(ExportRejected) for fewer than two turns or a single speaker.
// SubtitleLike needs the source section for its time range.
std::string export_candidate(const DialogueCandidate& candidate, ExportFormat format,
                             const TranscriptSection* section = nullptr);

}  // namespace vicar
