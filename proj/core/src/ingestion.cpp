#include "vicar/ingestion.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "vicar/http_client.hpp"
#include "vicar/json_io.hpp"
#include "vicar/text.hpp"

namespace vicar {
namespace {

using nlohmann::json;

constexpr Millis kPlainTextSpan{1};

struct Line {
  std::string_view text;
  std::size_t number = 0;  // 1-based
  std::size_t offset = 0;  // byte offset of the line start
};

std::vector<Line> split_lines(std::string_view payload) {
  std::vector<Line> lines;
  std::size_t start = 0;
  std::size_t number = 1;
  while (start <= payload.size()) {
    std::size_t end = payload.find('\n', start);
    if (end == std::string_view::npos) end = payload.size();
    std::string_view line = payload.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back({line, number++, start});
    if (end == payload.size()) break;
    start = end + 1;
  }
  return lines;
}

std::string_view strip_bom(std::string_view payload) {
  if (payload.size() >= 3 && static_cast<unsigned char>(payload[0]) == 0xEF &&
      static_cast<unsigned char>(payload[1]) == 0xBB &&
      static_cast<unsigned char>(payload[2]) == 0xBF) {
    payload.remove_prefix(3);
  }
  return payload;
}

// Drops inline markup such as <i>, </b> or <v Speaker>.
std::string strip_tags(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool in_tag = false;
  for (char ch : s) {
    if (ch == '<') {
      in_tag = true;
    } else if (ch == '>' && in_tag) {
      in_tag = false;
    } else if (!in_tag) {
      out.push_back(ch);
    }
  }
  return out;
}

bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return std::isdigit(static_cast<unsigned char>(c)) != 0;
  });
}

// [HH:]MM:SS(,|.)mmm
std::optional<Millis> parse_timestamp(std::string_view s, bool hours_required) {
  s = text::trim(s);
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == ':') {
      parts.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  if (parts.size() != 3 && parts.size() != 2) return std::nullopt;
  if (hours_required && parts.size() != 3) return std::nullopt;

  std::string_view sec_part = parts.back();
  const auto sep = sec_part.find_first_of(",.");
  if (sep == std::string_view::npos) return std::nullopt;
  std::string_view secs = sec_part.substr(0, sep);
  std::string_view frac = sec_part.substr(sep + 1);
  if (!all_digits(secs) || !all_digits(frac) || frac.size() != 3) return std::nullopt;

  std::int64_t hours = 0;
  std::string_view minutes_part = parts[parts.size() - 2];
  if (parts.size() == 3) {
    if (!all_digits(parts[0]) || parts[0].size() > 6) return std::nullopt;
    hours = std::stoll(std::string(parts[0]));
  }
  if (!all_digits(minutes_part) || minutes_part.size() > 2 || secs.size() > 2) return std::nullopt;
  const std::int64_t minutes = std::stoll(std::string(minutes_part));
  const std::int64_t seconds = std::stoll(std::string(secs));
  const std::int64_t millis = std::stoll(std::string(frac));
  if (minutes > 59 || seconds > 59) return std::nullopt;
  return Millis{((hours * 60 + minutes) * 60 + seconds) * 1000 + millis};
}

struct Cue {
  Segment segment;
  Line timing_line;
};

std::pair<Millis, Millis> parse_timing_line(const Line& line, bool srt) {
  const auto arrow = line.text.find("-->");
  if (arrow == std::string_view::npos) {
    throw ParseError("expected cue timing 'start --> end'", line.number, line.offset);
  }
  std::string_view lhs = line.text.substr(0, arrow);
  std::string_view rhs = text::trim(line.text.substr(arrow + 3));
  // VTT cue settings follow the end timestamp.
  if (auto space = rhs.find_first_of(" \t"); space != std::string_view::npos) {
    rhs = rhs.substr(0, space);
  }
  auto start = parse_timestamp(lhs, srt);
  auto end = parse_timestamp(rhs, srt);
  if (!start || !end) {
    throw ParseError("malformed timestamp", line.number, line.offset);
  }
  return {*start, *end};
}

void check_cues(const std::vector<Cue>& cues) {
  for (std::size_t i = 0; i < cues.size(); ++i) {
    const auto& seg = cues[i].segment;
    const auto& line = cues[i].timing_line;
    if (seg.end <= seg.start) {
      throw ParseError("cue end must be after its start", line.number, line.offset);
    }
    if (i > 0) {
      const auto& prev = cues[i - 1].segment;
      if (seg.start < prev.end) {
        throw ParseError(seg.start < prev.start ? "segments out of order" : "overlapping segments",
                         line.number, line.offset);
      }
    }
  }
}

Transcript finish(std::vector<Cue> cues, const TranscriptSource& source) {
  check_cues(cues);
  Transcript t;
  t.id = source.id;
  t.language = source.language;
  for (auto& c : cues) t.segments.push_back(std::move(c.segment));
  if (t.segments.empty()) throw ParseError("transcript contains no cues", 1, 0);
  return t;
}

// Shared cue-block reader for SRT and VTT once the header has been consumed.
Transcript parse_cues(const std::vector<Line>& lines, std::size_t first, bool srt,
                      const TranscriptSource& source) {
  std::vector<Cue> cues;
  std::size_t i = first;
  while (i < lines.size()) {
    if (text::trim(lines[i].text).empty()) {
      ++i;
      continue;
    }
    // Block boundaries: [identifier] timing text...
    std::size_t block_end = i;
    while (block_end < lines.size() && !text::trim(lines[block_end].text).empty()) ++block_end;

    std::string_view head = text::trim(lines[i].text);
    if (!srt && (head.starts_with("NOTE") || head.starts_with("STYLE") ||
                 head.starts_with("REGION"))) {
      i = block_end;
      continue;
    }
    std::size_t timing = i;
    if (lines[i].text.find("-->") == std::string_view::npos) {
      if (srt && !all_digits(head)) {
        throw ParseError("expected cue number or timing", lines[i].number, lines[i].offset);
      }
      timing = i + 1;
    }
    if (timing >= block_end) {
      throw ParseError("cue has no timing line", lines[i].number, lines[i].offset);
    }
    auto [start, end] = parse_timing_line(lines[timing], srt);

    std::string body;
    for (std::size_t k = timing + 1; k < block_end; ++k) {
      std::string piece = strip_tags(text::trim(lines[k].text));
      std::string_view trimmed = text::trim(piece);
      if (trimmed.empty()) continue;
      if (!body.empty()) body.push_back(' ');
      body.append(trimmed);
    }
    // Cues without text carry no content; subtitle tools emit them for gaps.
    if (!body.empty()) cues.push_back({Segment{start, end, std::move(body)}, lines[timing]});
    i = block_end;
  }
  return finish(std::move(cues), source);
}

Transcript parse_srt(std::string_view payload, const TranscriptSource& source) {
  return parse_cues(split_lines(payload), 0, true, source);
}

Transcript parse_vtt(std::string_view payload, const TranscriptSource& source) {
  auto lines = split_lines(payload);
  std::size_t i = 0;
  while (i < lines.size() && text::trim(lines[i].text).empty()) ++i;
  if (i == lines.size() || !text::trim(lines[i].text).starts_with("WEBVTT")) {
    throw ParseError("missing WEBVTT header", i < lines.size() ? lines[i].number : 1,
                     i < lines.size() ? lines[i].offset : 0);
  }
  // Skip the header block.
  while (i < lines.size() && !text::trim(lines[i].text).empty()) ++i;
  return parse_cues(lines, i, false, source);
}

Transcript parse_plain(std::string_view payload, const TranscriptSource& source) {
  std::string_view body = text::trim(payload);
  if (body.empty()) throw ParseError("transcript text is empty", 1, 0);
  Transcript t;
  t.id = source.id;
  t.language = source.language;
  t.segments.push_back({Millis{0}, kPlainTextSpan, std::string(body)});
  return t;
}

std::size_t line_of(std::string_view payload, std::size_t byte) {
  byte = std::min(byte, payload.size());
  return 1 + static_cast<std::size_t>(std::count(payload.begin(), payload.begin() + byte, '\n'));
}

Transcript parse_structured(std::string_view payload, const TranscriptSource& source) {
  json doc;
  try {
    doc = json::parse(payload);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what(), line_of(payload, e.byte), e.byte);
  }
  if (!doc.is_object()) throw ParseError("transcript document must be an object", 1, 0);
  if (doc.contains("schema")) check_schema_version(doc);
  if (!doc.contains("segments") || !doc["segments"].is_array()) {
    throw ParseError("transcript document needs a segments array", 1, 0);
  }
  Transcript t;
  try {
    t = doc.get<Transcript>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed transcript document: ") + e.what(), 1, 0);
  } catch (const Error& e) {
    throw ParseError("malformed transcript document: " + e.detail(), 1, 0);
  }
  if (t.id.empty()) t.id = source.id;
  if (t.language.empty()) t.language = source.language;
  for (auto& s : t.segments) s.text = std::string(text::trim(s.text));
  if (auto problems = check_transcript(t); !problems.empty()) {
    throw ParseError(problems.front(), 1, 0);
  }
  return t;
}

}  // namespace

SourceKind source_kind_for(const std::filesystem::path& path) {
  std::string ext = text::to_lower_ascii(path.extension().string());
  if (ext == ".srt") return SourceKind::SubtitleSRT;
  if (ext == ".vtt") return SourceKind::SubtitleVTT;
  if (ext == ".json") return SourceKind::StructuredJSON;
  if (ext == ".txt") return SourceKind::PlainText;
  throw Error(ErrorCode::InvalidArgument, "unsupported transcript extension: " + ext);
}

TranscriptSource read_transcript_file(const std::filesystem::path& path, std::string id,
                                      std::string language) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::NotFound, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return TranscriptSource{source_kind_for(path), buf.str(), std::move(id), std::move(language)};
}

std::vector<std::string> check_transcript(const Transcript& transcript) {
  std::vector<std::string> out;
  if (transcript.segments.empty()) out.push_back("transcript has no segments");
  for (std::size_t i = 0; i < transcript.segments.size(); ++i) {
    const auto& s = transcript.segments[i];
    const std::string at = "segment " + std::to_string(i);
    if (s.start < Millis{0}) out.push_back(at + " starts before 0");
    if (s.end <= s.start) out.push_back(at + " must end after it starts");
    if (text::trim(s.text).empty()) out.push_back(at + " has empty text");
    if (i > 0 && s.start < transcript.segments[i - 1].end) {
      out.push_back(at + ": overlapping segments");
    }
  }
  return out;
}

Transcript parse_transcript(const TranscriptSource& source) {
  std::string_view payload = source.payload;
  if (source.kind == SourceKind::ExternalASRJob) {
    throw Error(ErrorCode::InvalidArgument,
                "ASR job references are resolved through TranscriptionService, not parsed");
  }
  if (!text::is_valid_utf8(payload)) {
    throw Error(ErrorCode::EncodingError, "transcript payload is not valid UTF-8");
  }
  payload = strip_bom(payload);
  switch (source.kind) {
    case SourceKind::PlainText: return parse_plain(payload, source);
    case SourceKind::SubtitleSRT: return parse_srt(payload, source);
    case SourceKind::SubtitleVTT: return parse_vtt(payload, source);
    case SourceKind::StructuredJSON: return parse_structured(payload, source);
    case SourceKind::ExternalASRJob: break;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown transcript source kind");
}

TranscriptSection trim_section(const Transcript& transcript, Millis start, Millis end) {
  if (start < Millis{0} || start >= end) {
    throw Error(ErrorCode::RangeError, "section start must be >= 0 and before its end");
  }
  if (transcript.segments.empty() || end > transcript.end()) {
    throw Error(ErrorCode::RangeError, "section end lies past the transcript end");
  }
  TranscriptSection section;
  section.transcript_id = transcript.id;
  section.language = transcript.language;
  section.start = start;
  section.end = end;
  section.id = transcript.id + "@" + std::to_string(start.count) + "-" + std::to_string(end.count);

  for (std::size_t i = 0; i < transcript.segments.size(); ++i) {
    const Segment& seg = transcript.segments[i];
    if (!(seg.start < end && start < seg.end)) continue;
    if (!section.text.empty()) section.text.push_back(' ');
    const std::size_t from = section.text.size();
    section.text += seg.text;
    section.char_offsets.push_back({{from, section.text.size()}, i});
  }
  if (section.text.empty()) {
    throw Error(ErrorCode::RangeError, "no transcript segment overlaps the section window");
  }
  return section;
}

TranscriptSection edit_section_text(const TranscriptSection& section, const std::string& replacement) {
  if (text::trim(replacement).empty()) {
    throw Error(ErrorCode::EmptyText, "replacement section text is empty");
  }
  if (!text::is_valid_utf8(replacement)) {
    throw Error(ErrorCode::EncodingError, "replacement text is not valid UTF-8");
  }
  TranscriptSection edited = section;
  edited.history.push_back({section.text, section.char_offsets});
  edited.text = replacement;
  edited.char_offsets = {{{0, replacement.size()}, std::nullopt}};
  return edited;
}

std::optional<std::size_t> segment_at(const TranscriptSection& section, std::size_t offset) {
  for (const auto& m : section.char_offsets) {
    if (offset >= m.text_range.start && offset < m.text_range.end) return m.segment_index;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

std::optional<AsrConfig> AsrConfig::from_env() {
  const char* url = std::getenv("VICAR_ASR_URL");
  if (!url || !*url) return std::nullopt;
  AsrConfig cfg;
  cfg.base_url = url;
  if (const char* key = std::getenv("VICAR_ASR_KEY")) cfg.api_key = key;
  if (const char* model = std::getenv("VICAR_ASR_MODEL"); model && *model) cfg.model = model;
  return cfg;
}

HttpAsrClient::HttpAsrClient(AsrConfig config) : config_(std::move(config)) {}

std::string HttpAsrClient::transcribe(const std::string& media_ref) {
  const json request = {{"model", config_.model},
                        {"media_url", media_ref},
                        {"response_format", "verbose_json"}};
  http::Headers headers;
  if (!config_.api_key.empty()) headers.emplace_back("Authorization", "Bearer " + config_.api_key);

  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(config_.backoff * (1 << (attempt - 1)));
    auto response = http::post_json(config_.base_url, "/audio/transcriptions", request.dump(), headers);
    if (response.status == 200) {
      json body;
      try {
        body = json::parse(response.body);
      } catch (const json::parse_error& e) {
        throw Error(ErrorCode::ASRFailed, std::string("unparseable ASR response: ") + e.what());
      }
      if (!body.contains("segments")) throw Error(ErrorCode::ASRFailed, "ASR response has no segments");
      json doc = {{"schema", kSchemaVersion},
                  {"id", "asr-" + text::hex64(text::fnv1a64(media_ref)).substr(0, 12)},
                  {"language", body.value("language", std::string{})},
                  {"segments", json::array()}};
      for (const auto& s : body["segments"]) {
        doc["segments"].push_back({{"start", s.at("start")}, {"end", s.at("end")}, {"text", s.at("text")}});
      }
      return doc.dump();
    }
    last_error = response.status == 0 ? response.transport_error
                                       : "HTTP " + std::to_string(response.status);
    const bool transient = response.status == 0 || response.status == 429 || response.status >= 500;
    if (!transient) break;
  }
  throw Error(ErrorCode::ASRFailed, last_error);
}

std::string_view to_string(JobStatus status) {
  switch (status) {
    case JobStatus::Queued: return "Queued";
    case JobStatus::Running: return "Running";
    case JobStatus::Done: return "Done";
    case JobStatus::Failed: return "Failed";
    case JobStatus::Cancelled: return "Cancelled";
  }
  return "?";
}

struct TranscriptionJob::State {
  mutable std::mutex mutex;
  mutable std::condition_variable cv;
  TranscriptionPoll poll;
};

TranscriptionJob::TranscriptionJob(std::string id, std::shared_ptr<State> state)
    : id_(std::move(id)), state_(std::move(state)) {}

TranscriptionPoll TranscriptionJob::poll() const {
  std::lock_guard lock(state_->mutex);
  return state_->poll;
}

TranscriptionPoll TranscriptionJob::wait() const {
  std::unique_lock lock(state_->mutex);
  state_->cv.wait(lock, [&] {
    auto s = state_->poll.status;
    return s != JobStatus::Queued && s != JobStatus::Running;
  });
  return state_->poll;
}

TranscriptionService::TranscriptionService(std::shared_ptr<AsrClient> client, int max_in_flight)
    : client_(std::move(client)), max_in_flight_(std::max(1, max_in_flight)) {}

TranscriptionService::~TranscriptionService() {
  for (auto& w : workers_) {
    if (w.valid()) w.wait();
  }
}

void TranscriptionService::acquire() {
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [&] { return in_flight_ < max_in_flight_; });
  ++in_flight_;
}

void TranscriptionService::release() {
  {
    std::lock_guard lock(mutex_);
    --in_flight_;
  }
  cv_.notify_one();
}

TranscriptionJob TranscriptionService::request_transcription(const std::string& media_ref) {
  if (!client_) throw Error(ErrorCode::ASRUnavailable, "no ASR endpoint configured");
  auto state = std::make_shared<TranscriptionJob::State>();
  std::string id;
  {
    std::lock_guard lock(mutex_);
    id = "asr-job-" + std::to_string(next_id_++);
  }
  auto client = client_;
  auto task = [this, state, client, media_ref] {
    acquire();
    {
      std::lock_guard lock(state->mutex);
      state->poll.status = JobStatus::Running;
    }
    TranscriptionPoll outcome;
    try {
      std::string payload = client->transcribe(media_ref);
      TranscriptSource source{SourceKind::StructuredJSON, std::move(payload), "", ""};
      Transcript parsed = parse_transcript(source);  // reject malformed ASR output early
      source.id = parsed.id;
      source.language = parsed.language;
      outcome.status = JobStatus::Done;
      outcome.source = std::move(source);
    } catch (const std::exception& e) {
      outcome.status = JobStatus::Failed;
      outcome.error = e.what();
    }
    release();
    {
      std::lock_guard lock(state->mutex);
      state->poll = std::move(outcome);
    }
    state->cv.notify_all();
  };
  std::lock_guard lock(mutex_);
  workers_.push_back(std::async(std::launch::async, std::move(task)));
  return TranscriptionJob(id, state);
}

}  // namespace vicar
