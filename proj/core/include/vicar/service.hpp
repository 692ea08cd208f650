#pragma once

// HTTP+JSON surface over the authoring workflow. Generation, laboratory and
// transcription run as background jobs; edits are synchronous.

#include <condition_variable>
#include <cstddef>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <stop_token>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "vicar/errors.hpp"
#include "vicar/ingestion.hpp"
#include "vicar/llm/gateway.hpp"
#include "vicar/pipeline.hpp"
#include "vicar/store.hpp"

namespace vicar {

enum class JobKind { Generation, Laboratory, Transcription };
std::string_view to_string(JobKind kind);

struct Job {
  std::string id;
  JobKind kind = JobKind::Generation;
  JobStatus status = JobStatus::Queued;
  std::optional<std::string> failure;       // reason, when Failed
  std::optional<ErrorCode> failure_code;
  std::optional<std::string> result_ref;    // present iff Done
  nlohmann::json detail = nlohmann::json::object();
};

void to_json(nlohmann::json& j, const Job& v);

// Legal moves: Queued -> Running | Cancelled, Running -> Done | Failed | Cancelled.
bool is_valid_transition(JobStatus from, JobStatus to);

// Bounded job queue served by a fixed pool of worker threads. A job's work
// returns its result reference; throwing marks the job Failed, or Cancelled
// when the stop token was triggered.
class JobQueue {
 public:
  using Work = std::function<std::string(std::stop_token)>;

  explicit JobQueue(std::size_t capacity = 8, int workers = 2);
  ~JobQueue();

  JobQueue(const JobQueue&) = delete;
  JobQueue& operator=(const JobQueue&) = delete;

  // nullopt when `capacity` jobs are already queued or running.
  std::optional<Job> submit(JobKind kind, Work work, nlohmann::json detail = nlohmann::json::object());
  std::optional<Job> get(const std::string& id) const;
  // Queued jobs are cancelled at once, running jobs are asked to stop,
  // finished jobs are left as they are. Throws Error(NotFound).
  Job cancel(const std::string& id);
  // Blocks until the job leaves Queued/Running or the timeout passes.
  std::optional<Job> wait(const std::string& id, std::chrono::milliseconds timeout) const;

  std::size_t active() const;
  std::size_t capacity() const { return capacity_; }

 private:
  struct Entry {
    Job job;
    Work work;
    std::stop_source stop;
  };

  void worker_loop(std::stop_token stop);
  void transition(Entry& entry, JobStatus to);

  std::size_t capacity_;
  mutable std::mutex mutex_;
  mutable std::condition_variable changed_;
  std::condition_variable_any ready_;
  std::map<std::string, std::shared_ptr<Entry>> jobs_;
  std::deque<std::shared_ptr<Entry>> pending_;
  std::size_t active_ = 0;
  std::size_t next_id_ = 1;
  std::vector<std::jthread> workers_;
};

// HTTP status for an error code.
int http_status_for(ErrorCode code);
// {"error": {"code", "message", ...}} with step/cause for PipelineFailed and
// the issue list for SchemaViolation.
nlohmann::json error_body(const Error& error);

// Machine-readable contract served at GET /openapi.
const nlohmann::json& openapi_document();

struct ServiceConfig {
  std::string bind = "127.0.0.1";
  int port = 8080;
  std::filesystem::path store = "vicar-store";
  std::string token;  // empty disables authentication
  std::optional<std::filesystem::path> mock_fixtures;
  std::size_t queue_capacity = 8;
  int workers = 2;
  PipelineConfig pipeline;
  llm::GatewayConfig gateway;

  // VICAR_BIND, VICAR_PORT, VICAR_STORE, VICAR_TOKEN, VICAR_MOCK_FIXTURES,
  // VICAR_QUEUE, VICAR_WORKERS.
  static ServiceConfig from_env();
};

// Mock fixtures when configured, else the HTTP provider from the
// environment, else a provider that always reports unavailability.
std::shared_ptr<llm::Provider> make_provider(const ServiceConfig& config);

class Service {
 public:
  Service(ServiceConfig config, std::shared_ptr<llm::Provider> provider,
          std::shared_ptr<AsrClient> asr = nullptr, std::ostream* log = nullptr);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds the listening socket; port 0 picks a free one. Returns the port.
  int bind();
  // Serves until stop(). Binds first if needed.
  void run();
  // run() on a background thread.
  void start();
  void stop();

  int port() const { return port_; }
  ProjectStore& store() { return store_; }
  JobQueue& jobs() { return jobs_; }

 private:
  friend const nlohmann::json& openapi_document();
  struct Impl;

  ServiceConfig config_;
  ProjectStore store_;
  llm::Gateway gateway_;
  Pipeline pipeline_;
  std::shared_ptr<AsrClient> asr_;
  std::ostream* log_;
  std::mutex log_mutex_;
  JobQueue jobs_;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace vicar
