#pragma once

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "vicar/errors.hpp"
#include "vicar/model.hpp"

namespace vicar {

enum class SourceKind { PlainText, SubtitleSRT, SubtitleVTT, StructuredJSON, ExternalASRJob };

struct TranscriptSource {
  SourceKind kind = SourceKind::PlainText;
  // File bytes, or a job reference for ExternalASRJob.
  std::string payload;
  std::string id = "transcript";
  std::string language = "en";
};

// Guesses the kind from a file extension (.srt, .vtt, .txt, .json).
SourceKind source_kind_for(const std::filesystem::path& path);
TranscriptSource read_transcript_file(const std::filesystem::path& path,
                                      std::string id, std::string language);

// Throws ParseError (with line and byte position) or Error(EncodingError).
Transcript parse_transcript(const TranscriptSource& source);

// Checks every Transcript invariant; empty when valid.
std::vector<std::string> check_transcript(const Transcript& transcript);

// Joins, with single spaces, every segment overlapping [start, end).
// Throws Error(RangeError) when the window is empty, inverted, or past the
// transcript end.
TranscriptSection trim_section(const Transcript& transcript, Millis start, Millis end);

// Replaces the section text; the previous revision moves into history.
TranscriptSection edit_section_text(const TranscriptSection& section, const std::string& replacement);

// Segment that produced the byte at `offset`, if the mapping is not synthetic.
std::optional<std::size_t> segment_at(const TranscriptSection& section, std::size_t offset);

// ---------------------------------------------------------------------------
// External speech recognition
// ---------------------------------------------------------------------------

struct AsrConfig {
  std::string base_url;
  std::string api_key;
  std::string model = "whisper-1";
  int max_retries = 2;
  int max_in_flight = 2;
  std::chrono::milliseconds backoff{250};

  // VICAR_ASR_URL, VICAR_ASR_KEY, VICAR_ASR_MODEL. Empty when no URL is set.
  static std::optional<AsrConfig> from_env();
};

// Turns a media reference into the canonical structured transcript JSON.
class AsrClient {
 public:
  virtual ~AsrClient() = default;
  virtual std::string transcribe(const std::string& media_ref) = 0;
};

// POSTs {"model", "media_url", "response_format"} to
// <base_url>/audio/transcriptions and expects a "segments" array back.
// Retries 5xx and transport failures with exponential backoff, then throws
// Error(ASRFailed).
class HttpAsrClient : public AsrClient {
 public:
  explicit HttpAsrClient(AsrConfig config);
  std::string transcribe(const std::string& media_ref) override;

 private:
  AsrConfig config_;
};

enum class JobStatus { Queued, Running, Done, Failed, Cancelled };
std::string_view to_string(JobStatus status);

struct TranscriptionPoll {
  JobStatus status = JobStatus::Queued;
  std::optional<TranscriptSource> source;  // StructuredJSON, once Done
  std::string error;
};

class TranscriptionJob {
 public:
  struct State;
  explicit TranscriptionJob(std::string id, std::shared_ptr<State> state);

  const std::string& id() const { return id_; }
  TranscriptionPoll poll() const;
  TranscriptionPoll wait() const;

 private:
  std::string id_;
  std::shared_ptr<State> state_;
};

// Runs transcriptions asynchronously with at most `max_in_flight` jobs
// talking to the ASR endpoint at once.
class TranscriptionService {
 public:
  // A null client means no endpoint is configured.
  TranscriptionService(std::shared_ptr<AsrClient> client, int max_in_flight = 2);
  ~TranscriptionService();

  TranscriptionService(const TranscriptionService&) = delete;
  TranscriptionService& operator=(const TranscriptionService&) = delete;

  // Throws Error(ASRUnavailable) when no client is configured.
  TranscriptionJob request_transcription(const std::string& media_ref);

 private:
  void acquire();
  void release();

  std::shared_ptr<AsrClient> client_;
  int max_in_flight_;
  int in_flight_ = 0;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::vector<std::future<void>> workers_;
  std::size_t next_id_ = 1;
};

}  // namespace vicar
