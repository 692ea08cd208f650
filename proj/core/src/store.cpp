#include "vicar/store.hpp"

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <fstream>
#include <random>
#include <sstream>

#include "vicar/json_io.hpp"
#include "vicar/taxonomy.hpp"
#include "vicar/text.hpp"

namespace vicar {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string version_file(std::int64_t version) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "v%06lld.json", static_cast<long long>(version));
  return buf;
}

std::string now_iso8601() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string random_suffix() {
  static std::mutex mutex;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(mutex);
  return text::hex64(rng()).substr(0, 10);
}

std::string corrupt_hint(const fs::path& path) {
  return "recovery: restore " + path.filename().string() +
         " from a backup, or delete it to drop this record; sibling records are unaffected";
}

template <typename T>
T decode(const json& doc, const fs::path& path) {
  try {
    return from_document<T>(doc);
  } catch (const Error& e) {
    throw Error(ErrorCode::CorruptRecord, path.string() + ": " + e.detail() + "; " + corrupt_hint(path));
  } catch (const std::exception& e) {
    throw Error(ErrorCode::CorruptRecord, path.string() + ": " + e.what() + "; " + corrupt_hint(path));
  }
}

template <typename T>
void push_unique(std::vector<T>& items, const T& value) {
  if (std::find(items.begin(), items.end(), value) == items.end()) items.push_back(value);
}

}  // namespace

void to_json(json& j, const Project& v) {
  j = json{{"id", v.id},
           {"title", v.title},
           {"created_at", v.created_at},
           {"transcript_ids", v.transcript_ids},
           {"generation_run_ids", v.generation_run_ids}};
  j["selected_candidate_id"] = v.selected_candidate_id ? json(*v.selected_candidate_id) : json(nullptr);
}

void from_json(const json& j, Project& v) {
  j.at("id").get_to(v.id);
  j.at("title").get_to(v.title);
  j.at("created_at").get_to(v.created_at);
  j.at("transcript_ids").get_to(v.transcript_ids);
  j.at("generation_run_ids").get_to(v.generation_run_ids);
  const auto& sel = j.at("selected_candidate_id");
  v.selected_candidate_id = sel.is_null() ? std::nullopt : std::optional<std::string>(sel.get<std::string>());
}

void check_record_id(const std::string& id) {
  const bool ok = !id.empty() && id.size() <= 128 && id != "." && id != ".." &&
                  std::all_of(id.begin(), id.end(), [](char c) {
                    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.' ||
                           c == '@';
                  });
  if (!ok) throw Error(ErrorCode::InvalidArgument, "invalid record id: \"" + id + "\"");
}

void write_document_atomic(const fs::path& path, const json& doc) {
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  if (ec) throw Error(ErrorCode::StorageFull, "cannot create " + path.parent_path().string() + ": " + ec.message());

  const fs::path tmp = path.string() + ".tmp-" + random_suffix();
  const std::string bytes = doc.dump(2) + "\n";
  std::FILE* f = std::fopen(tmp.c_str(), "wb");
  if (!f) throw Error(ErrorCode::StorageFull, "cannot write " + tmp.string() + ": " + std::strerror(errno));
  const bool written = std::fwrite(bytes.data(), 1, bytes.size(), f) == bytes.size();
  const int write_errno = errno;
  const bool flushed = std::fflush(f) == 0;
  std::fclose(f);
  if (!written || !flushed) {
    fs::remove(tmp, ec);
    throw Error(ErrorCode::StorageFull, "short write to " + path.string() + ": " + std::strerror(write_errno));
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorCode::StorageFull, "cannot rename into " + path.string() + ": " + ec.message());
  }
}

json read_document(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::NotFound, "no record at " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  json doc = json::parse(buffer.str(), nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw Error(ErrorCode::CorruptRecord, path.string() + " is not a valid document; " + corrupt_hint(path));
  }
  return doc;
}

// ---------------------------------------------------------------------------

ProjectStore::ProjectStore(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_, ec);
  if (ec) throw Error(ErrorCode::StorageFull, "cannot create store at " + root_.string() + ": " + ec.message());
}

fs::path ProjectStore::project_dir(const std::string& project_id) const {
  check_record_id(project_id);
  return root_ / project_id;
}

fs::path ProjectStore::candidate_dir(const std::string& project_id, const std::string& candidate_id) const {
  check_record_id(candidate_id);
  return project_dir(project_id) / "candidates" / candidate_id;
}

std::unique_lock<std::mutex> ProjectStore::lock_project(const std::string& project_id) {
  std::mutex* m = nullptr;
  {
    std::lock_guard guard(locks_mutex_);
    auto& slot = locks_[project_id];
    if (!slot) slot = std::make_unique<std::mutex>();
    m = slot.get();
  }
  return std::unique_lock<std::mutex>(*m);
}

Project ProjectStore::create_project(const std::string& title) {
  Project p;
  p.title = title;
  p.created_at = now_iso8601();
  do {
    p.id = "p-" + random_suffix();
  } while (fs::exists(root_ / p.id));
  save_project(p);
  return p;
}

void ProjectStore::save_project(const Project& project) {
  write_document_atomic(project_dir(project.id) / "project.json", to_document(project));
}

Project ProjectStore::load_project(const std::string& project_id) const {
  const auto path = project_dir(project_id) / "project.json";
  if (!fs::exists(path)) throw Error(ErrorCode::NotFound, "project " + project_id);
  return decode<Project>(read_document(path), path);
}

std::vector<ProjectSummary> ProjectStore::list_projects() const {
  std::vector<ProjectSummary> out;
  for (const auto& entry : fs::directory_iterator(root_)) {
    if (!entry.is_directory() || !fs::exists(entry.path() / "project.json")) continue;
    try {
      Project p = load_project(entry.path().filename().string());
      out.push_back({p.id, p.title, p.created_at});
    } catch (const Error&) {
      // Unreadable projects are skipped; load_project reports them individually.
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

void ProjectStore::save_transcript(const std::string& project_id, const Transcript& transcript) {
  check_record_id(transcript.id);
  Project p = load_project(project_id);
  write_document_atomic(project_dir(project_id) / "transcripts" / (transcript.id + ".json"), to_document(transcript));
  push_unique(p.transcript_ids, transcript.id);
  save_project(p);
}

Transcript ProjectStore::load_transcript(const std::string& project_id, const std::string& transcript_id) const {
  check_record_id(transcript_id);
  const auto path = project_dir(project_id) / "transcripts" / (transcript_id + ".json");
  if (!fs::exists(path)) throw Error(ErrorCode::NotFound, "transcript " + transcript_id);
  return decode<Transcript>(read_document(path), path);
}

void ProjectStore::save_section(const std::string& project_id, const TranscriptSection& section) {
  check_record_id(section.id);
  load_project(project_id);
  write_document_atomic(project_dir(project_id) / "sections" / (section.id + ".json"), to_document(section));
}

TranscriptSection ProjectStore::load_section(const std::string& project_id, const std::string& section_id) const {
  check_record_id(section_id);
  const auto path = project_dir(project_id) / "sections" / (section_id + ".json");
  if (!fs::exists(path)) throw Error(ErrorCode::NotFound, "section " + section_id);
  return decode<TranscriptSection>(read_document(path), path);
}

void ProjectStore::save_run(const std::string& project_id, const GenerationResult& result) {
  check_record_id(result.run_id);
  Project p = load_project(project_id);
  for (const auto& slot : result.slots) {
    if (!slot.candidate) continue;
    const auto dir = candidate_dir(project_id, slot.candidate->id);
    const auto path = dir / version_file(slot.candidate->version);
    if (!fs::exists(path)) write_document_atomic(path, to_document(*slot.candidate));
    if (!fs::exists(dir / "history.json")) {
      write_document_atomic(dir / "history.json", json{{"schema", kSchemaVersion},
                                                       {"candidate_id", slot.candidate->id},
                                                       {"entries", json::array()}});
    }
  }
  write_document_atomic(project_dir(project_id) / "runs" / (result.run_id + ".json"), to_document(result));
  push_unique(p.generation_run_ids, result.run_id);
  save_project(p);
}

GenerationResult ProjectStore::load_run(const std::string& project_id, const std::string& run_id) const {
  check_record_id(run_id);
  const auto path = project_dir(project_id) / "runs" / (run_id + ".json");
  if (!fs::exists(path)) throw Error(ErrorCode::NotFound, "run " + run_id);
  return decode<GenerationResult>(read_document(path), path);
}

bool ProjectStore::has_run(const std::string& project_id, const std::string& run_id) const {
  check_record_id(run_id);
  return fs::exists(project_dir(project_id) / "runs" / (run_id + ".json"));
}

std::vector<std::int64_t> ProjectStore::list_versions(const std::string& project_id,
                                                      const std::string& candidate_id) const {
  const auto dir = candidate_dir(project_id, candidate_id);
  if (!fs::is_directory(dir)) throw Error(ErrorCode::NotFound, "candidate " + candidate_id);
  std::vector<std::int64_t> versions;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() == 12 && name[0] == 'v' && name.ends_with(".json")) {
      versions.push_back(std::stoll(name.substr(1, 6)));
    }
  }
  std::sort(versions.begin(), versions.end());
  return versions;
}

DialogueCandidate ProjectStore::load_candidate(const std::string& project_id, const std::string& candidate_id,
                                               std::optional<std::int64_t> version) const {
  const auto versions = list_versions(project_id, candidate_id);
  if (versions.empty()) throw Error(ErrorCode::NotFound, "candidate " + candidate_id + " has no versions");
  const std::int64_t v = version.value_or(versions.back());
  const auto path = candidate_dir(project_id, candidate_id) / version_file(v);
  if (!fs::exists(path)) {
    throw Error(ErrorCode::NotFound, "candidate " + candidate_id + " version " + std::to_string(v));
  }
  return decode<DialogueCandidate>(read_document(path), path);
}

void ProjectStore::save_history(const std::string& project_id, const CandidateHistory& history) {
  const auto& current = history.current();
  const auto dir = candidate_dir(project_id, current.id);
  const auto history_path = dir / "history.json";

  std::vector<HistoryEntry> stored;
  if (fs::exists(history_path)) {
    const json doc = read_document(history_path);
    try {
      doc.at("entries").get_to(stored);
    } catch (const std::exception& e) {
      throw Error(ErrorCode::CorruptRecord, history_path.string() + ": " + e.what() + "; " + corrupt_hint(history_path));
    }
  }
  const auto& entries = history.entries();
  if (stored.size() > entries.size() || !std::equal(stored.begin(), stored.end(), entries.begin())) {
    throw Error(ErrorCode::VersionConflict, "history of " + current.id + " diverged from the stored history");
  }

  // Materialize each new version by replaying from the generated snapshot.
  const auto gen_path = dir / version_file(history.generated().version);
  if (!fs::exists(gen_path)) write_document_atomic(gen_path, to_document(history.generated()));
  CandidateHistory replayed(history.generated());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& op = entries[i].op;
    if (op.at("kind") == "Undo") {
      replayed.undo();
    } else {
      replayed.apply(op.get<EditOperation>());
    }
    if (i < stored.size()) continue;
    const auto path = dir / version_file(replayed.current().version);
    if (fs::exists(path)) {
      throw Error(ErrorCode::VersionConflict, "version " + std::to_string(replayed.current().version) + " of " +
                                                  current.id + " already exists");
    }
    write_document_atomic(path, to_document(replayed.current()));
  }
  write_document_atomic(history_path,
                        json{{"schema", kSchemaVersion}, {"candidate_id", current.id}, {"entries", entries}});
}

CandidateHistory ProjectStore::load_history(const std::string& project_id, const std::string& candidate_id) const {
  const auto versions = list_versions(project_id, candidate_id);
  if (versions.empty()) throw Error(ErrorCode::NotFound, "candidate " + candidate_id + " has no versions");
  DialogueCandidate generated = load_candidate(project_id, candidate_id, versions.front());
  const auto history_path = candidate_dir(project_id, candidate_id) / "history.json";
  std::vector<HistoryEntry> entries;
  if (fs::exists(history_path)) {
    const json doc = read_document(history_path);
    try {
      doc.at("entries").get_to(entries);
    } catch (const std::exception& e) {
      throw Error(ErrorCode::CorruptRecord, history_path.string() + ": " + e.what() + "; " + corrupt_hint(history_path));
    }
  }
  CandidateHistory history = CandidateHistory::replay(std::move(generated), entries);
  const auto latest = load_candidate(project_id, candidate_id, versions.back());
  if (content_hash(latest) != content_hash(history.current())) {
    throw Error(ErrorCode::CorruptRecord, "latest version of " + candidate_id +
                                              " does not match its replayed history; " +
                                              corrupt_hint(history_path));
  }
  return history;
}

void ProjectStore::save_laboratory(const std::string& project_id, const LaboratoryResult& lab) {
  write_document_atomic(candidate_dir(project_id, lab.candidate_id) / "laboratory.json", to_document(lab));
}

std::optional<LaboratoryResult> ProjectStore::load_laboratory(const std::string& project_id,
                                                              const std::string& candidate_id) const {
  const auto path = candidate_dir(project_id, candidate_id) / "laboratory.json";
  if (!fs::exists(path)) return std::nullopt;
  return decode<LaboratoryResult>(read_document(path), path);
}

std::optional<std::string> ProjectStore::run_for_candidate(const std::string& project_id,
                                                           const std::string& candidate_id) const {
  const Project p = load_project(project_id);
  for (const auto& run_id : p.generation_run_ids) {
    const auto run = load_run(project_id, run_id);
    if (run.find_candidate(candidate_id)) return run_id;
  }
  return std::nullopt;
}

Project ProjectStore::select_candidate(const std::string& project_id, const std::string& candidate_id) {
  check_record_id(candidate_id);
  if (!run_for_candidate(project_id, candidate_id)) {
    throw Error(ErrorCode::NotFound, "candidate " + candidate_id + " is not part of project " + project_id);
  }
  Project p = load_project(project_id);
  p.selected_candidate_id = candidate_id;
  save_project(p);
  return p;
}

// ---------------------------------------------------------------------------
// Export

std::optional<ExportFormat> parse_export_format(std::string_view name) {
  const std::string key = text::to_lower_ascii(name);
  if (key == "scripttext" || key == "script" || key == "txt") return ExportFormat::ScriptText;
  if (key == "structureddoc" || key == "structured" || key == "json") return ExportFormat::StructuredDoc;
  if (key == "subtitlelike" || key == "subtitle" || key == "srt") return ExportFormat::SubtitleLike;
  return std::nullopt;
}

std::string_view to_string(ExportFormat format) {
  switch (format) {
    case ExportFormat::ScriptText: return "ScriptText";
    case ExportFormat::StructuredDoc: return "StructuredDoc";
    case ExportFormat::SubtitleLike: return "SubtitleLike";
  }
  return "ScriptText";
}

std::vector<Cue> subtitle_cues(const DialogueCandidate& candidate, Millis start, Millis duration) {
  const auto& turns = candidate.utterances;
  std::vector<std::int64_t> weights;
  std::int64_t total = 0;
  for (const auto& u : turns) {
    weights.push_back(std::max<std::int64_t>(1, static_cast<std::int64_t>(text::word_count(u.text))));
    total += weights.back();
  }
  std::vector<Cue> cues;
  if (turns.empty()) return cues;

  const std::int64_t span = std::max<std::int64_t>(0, duration.count);
  std::vector<std::int64_t> share(turns.size());
  std::vector<std::pair<std::int64_t, std::size_t>> remainders;
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < turns.size(); ++i) {
    const std::int64_t exact = span * weights[i];
    share[i] = static_cast<std::int64_t>(exact / total);
    remainders.emplace_back(static_cast<std::int64_t>(exact % total), i);
    assigned += share[i];
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::int64_t k = 0; k < span - assigned; ++k) ++share[remainders[static_cast<std::size_t>(k)].second];

  Millis cursor = start;
  for (std::size_t i = 0; i < turns.size(); ++i) {
    Cue cue;
    cue.start = cursor;
    cue.end = cursor + Millis{share[i]};
    cue.text = std::string(to_string(turns[i].speaker)) + ": " + turns[i].text;
    cursor = cue.end;
    cues.push_back(std::move(cue));
  }
  return cues;
}

std::string format_srt_time(Millis t) {
  const std::int64_t ms = std::max<std::int64_t>(0, t.count);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%02lld:%02lld:%02lld,%03lld", static_cast<long long>(ms / 3600000),
                static_cast<long long>((ms / 60000) % 60), static_cast<long long>((ms / 1000) % 60),
                static_cast<long long>(ms % 1000));
  return buf;
}

std::string export_candidate(const DialogueCandidate& candidate, ExportFormat format,
                             const TranscriptSection* section) {
  const auto& turns = candidate.utterances;
  if (turns.size() < 2) {
    throw Error(ErrorCode::ExportRejected, "export needs at least 2 turns, the dialogue has " +
                                               std::to_string(turns.size()));
  }
  const bool alternates = std::adjacent_find(turns.begin(), turns.end(), [](const Utterance& a, const Utterance& b) {
                            return a.speaker != b.speaker;
                          }) != turns.end();
  if (!alternates) throw Error(ErrorCode::ExportRejected, "export needs at least one change of speaker");

  switch (format) {
    case ExportFormat::ScriptText: {
      std::string out;
      for (const auto& u : turns) out += std::string(to_string(u.speaker)) + ": " + u.text + "\n";
      return out;
    }
    case ExportFormat::StructuredDoc:
      return canonical_dump(to_document(candidate)) + "\n";
    case ExportFormat::SubtitleLike: {
      if (!section) throw Error(ErrorCode::InvalidArgument, "subtitle export needs the source section");
      std::string out;
      const auto cues = subtitle_cues(candidate, section->start, section->duration());
      for (std::size_t i = 0; i < cues.size(); ++i) {
        out += std::to_string(i + 1) + "\n" + format_srt_time(cues[i].start) + " --> " +
               format_srt_time(cues[i].end) + "\n" + cues[i].text + "\n\n";
      }
      return out;
    }
  }
  throw Error(ErrorCode::InvalidArgument, "unknown export format");
}

}  // namespace vicar
