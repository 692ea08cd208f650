#include "vicar/service.hpp"

#include <chrono>
#include <cstdlib>
#include <regex>

#include <httplib.h>

#include "vicar/json_io.hpp"
#include "vicar/lint.hpp"
#include "vicar/llm/http_provider.hpp"
#include "vicar/llm/mock_provider.hpp"
#include "vicar/refinement.hpp"
#include "vicar/text.hpp"

namespace vicar {
namespace {

using nlohmann::json;

std::string iso_now() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Jobs

std::string_view to_string(JobKind kind) {
  switch (kind) {
    case JobKind::Generation: return "Generation";
    case JobKind::Laboratory: return "Laboratory";
    case JobKind::Transcription: return "Transcription";
  }
  return "?";
}

void to_json(json& j, const Job& v) {
  j = json{{"id", v.id},
           {"kind", std::string(to_string(v.kind))},
           {"status", std::string(to_string(v.status))},
           {"detail", v.detail}};
  j["result_ref"] = v.result_ref ? json(*v.result_ref) : json(nullptr);
  if (v.status == JobStatus::Failed) {
    j["failure"] = {{"code", v.failure_code ? std::string(to_string(*v.failure_code)) : std::string("Internal")},
                    {"reason", v.failure.value_or("")}};
  } else {
    j["failure"] = nullptr;
  }
}

bool is_valid_transition(JobStatus from, JobStatus to) {
  switch (from) {
    case JobStatus::Queued: return to == JobStatus::Running || to == JobStatus::Cancelled;
    case JobStatus::Running:
      return to == JobStatus::Done || to == JobStatus::Failed || to == JobStatus::Cancelled;
    default: return false;
  }
}

JobQueue::JobQueue(std::size_t capacity, int workers) : capacity_(capacity) {
  if (capacity_ == 0) throw Error(ErrorCode::InvalidArgument, "job queue capacity must be positive");
  for (int i = 0; i < std::max(1, workers); ++i) {
    workers_.emplace_back([this](std::stop_token stop) { worker_loop(stop); });
  }
}

JobQueue::~JobQueue() {
  {
    std::lock_guard lock(mutex_);
    for (auto& [id, entry] : jobs_) entry->stop.request_stop();
  }
  for (auto& w : workers_) w.request_stop();
  ready_.notify_all();
  workers_.clear();
}

void JobQueue::transition(Entry& entry, JobStatus to) {
  if (!is_valid_transition(entry.job.status, to)) {
    throw Error(ErrorCode::InvalidArgument, std::string("illegal job transition ") +
                                                std::string(to_string(entry.job.status)) + " -> " +
                                                std::string(to_string(to)));
  }
  entry.job.status = to;
  changed_.notify_all();
}

std::optional<Job> JobQueue::submit(JobKind kind, Work work, json detail) {
  std::lock_guard lock(mutex_);
  if (active_ >= capacity_) return std::nullopt;
  auto entry = std::make_shared<Entry>();
  entry->job.id = "job-" + std::to_string(next_id_++);
  entry->job.kind = kind;
  entry->job.detail = std::move(detail);
  entry->work = std::move(work);
  jobs_[entry->job.id] = entry;
  pending_.push_back(entry);
  ++active_;
  ready_.notify_one();
  return entry->job;
}

std::optional<Job> JobQueue::get(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second->job;
}

Job JobQueue::cancel(const std::string& id) {
  std::lock_guard lock(mutex_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) throw Error(ErrorCode::NotFound, "job " + id);
  Entry& entry = *it->second;
  if (entry.job.status == JobStatus::Queued) {
    transition(entry, JobStatus::Cancelled);
    --active_;
    std::erase(pending_, it->second);
  } else if (entry.job.status == JobStatus::Running) {
    entry.stop.request_stop();
  }
  return entry.job;
}

std::optional<Job> JobQueue::wait(const std::string& id, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mutex_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  const auto entry = it->second;
  changed_.wait_for(lock, timeout, [&] {
    return entry->job.status != JobStatus::Queued && entry->job.status != JobStatus::Running;
  });
  return entry->job;
}

std::size_t JobQueue::active() const {
  std::lock_guard lock(mutex_);
  return active_;
}

void JobQueue::worker_loop(std::stop_token stop) {
  while (true) {
    std::shared_ptr<Entry> entry;
    {
      std::unique_lock lock(mutex_);
      if (!ready_.wait(lock, stop, [&] { return !pending_.empty(); })) return;
      entry = pending_.front();
      pending_.pop_front();
      transition(*entry, JobStatus::Running);
    }

    JobStatus outcome = JobStatus::Done;
    std::optional<std::string> ref, failure;
    std::optional<ErrorCode> code;
    json error_detail;
    try {
      ref = entry->work(entry->stop.get_token());
    } catch (const Error& e) {
      outcome = e.code() == ErrorCode::Cancelled ? JobStatus::Cancelled : JobStatus::Failed;
      failure = e.detail();
      code = e.code();
      if (const auto* pf = dynamic_cast<const PipelineFailed*>(&e)) code = pf->cause();
      error_detail = error_body(e)["error"];
    } catch (const std::exception& e) {
      outcome = JobStatus::Failed;
      failure = e.what();
    }
    if (outcome == JobStatus::Failed && entry->stop.stop_requested()) outcome = JobStatus::Cancelled;

    std::lock_guard lock(mutex_);
    if (outcome == JobStatus::Done) {
      entry->job.result_ref = ref;
    } else if (outcome == JobStatus::Failed) {
      entry->job.failure = failure;
      entry->job.failure_code = code;
      if (!error_detail.is_null()) entry->job.detail["error"] = error_detail;
    }
    transition(*entry, outcome);
    entry->work = nullptr;
    --active_;
  }
}

// ---------------------------------------------------------------------------
// Errors

int http_status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotFound: return 404;
    case ErrorCode::VersionConflict:
    case ErrorCode::StaleVariation:
    case ErrorCode::NothingToUndo:
    case ErrorCode::DuplicateId: return 409;
    case ErrorCode::PipelineFailed:
    case ErrorCode::SchemaViolation:
    case ErrorCode::GroundingError:
    case ErrorCode::ConsistencyError:
    case ErrorCode::TaxonomyError: return 422;
    case ErrorCode::RateLimited: return 429;
    case ErrorCode::ProviderUnavailable:
    case ErrorCode::ASRUnavailable:
    case ErrorCode::ASRFailed: return 503;
    case ErrorCode::StorageFull: return 507;
    case ErrorCode::CorruptRecord: return 500;
    default: return 400;
  }
}

json error_body(const Error& error) {
  json e = {{"code", std::string(to_string(error.code()))}, {"message", error.detail()}};
  if (const auto* pf = dynamic_cast<const PipelineFailed*>(&error)) {
    e["step"] = pf->step();
    e["cause"] = std::string(to_string(pf->cause()));
  }
  if (const auto* sv = dynamic_cast<const SchemaViolation*>(&error)) {
    e["issues"] = sv->errors();
    e["attempts"] = sv->attempts();
  }
  return json{{"error", e}};
}

// ---------------------------------------------------------------------------
// Configuration

ServiceConfig ServiceConfig::from_env() {
  ServiceConfig c;
  auto env = [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    if (!v || !*v) return std::nullopt;
    return std::string(v);
  };
  auto as_int = [](const std::string& name, const std::string& value) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(value, &used);
      if (used == value.size() && v >= 0) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::InvalidArgument, name + " must be a non-negative integer, got \"" + value + "\"");
  };
  if (auto v = env("VICAR_BIND")) c.bind = *v;
  if (auto v = env("VICAR_PORT")) c.port = as_int("VICAR_PORT", *v);
  if (auto v = env("VICAR_STORE")) c.store = *v;
  if (auto v = env("VICAR_TOKEN")) c.token = *v;
  if (auto v = env("VICAR_MOCK_FIXTURES")) c.mock_fixtures = std::filesystem::path(*v);
  if (auto v = env("VICAR_QUEUE")) c.queue_capacity = static_cast<std::size_t>(as_int("VICAR_QUEUE", *v));
  if (auto v = env("VICAR_WORKERS")) c.workers = as_int("VICAR_WORKERS", *v);
  return c;
}

std::shared_ptr<llm::Provider> make_provider(const ServiceConfig& config) {
  if (config.mock_fixtures) {
    return std::make_shared<llm::MockProvider>(llm::MockProvider::from_directory(*config.mock_fixtures));
  }
  if (auto http = llm::HttpProviderConfig::from_env()) return std::make_shared<llm::HttpChatProvider>(*http);
  return std::make_shared<llm::UnavailableProvider>();
}

// ---------------------------------------------------------------------------
// Routes

namespace {

struct Route {
  const char* method;
  std::string path;  // OpenAPI template, e.g. /projects/{project_id}
  const char* summary;
  int success;
  const char* request;   // component name, or nullptr
  const char* response;  // component name, or nullptr for raw bytes
  std::function<void(const httplib::Request&, httplib::Response&)> handler;
};

std::string route_regex(const std::string& path) {
  static const std::regex param(R"(\{[a-z_]+\})");
  return std::regex_replace(path, param, "([^/]+)");
}

std::vector<std::string> path_params(const std::string& path) {
  std::vector<std::string> names;
  static const std::regex param(R"(\{([a-z_]+)\})");
  for (std::sregex_iterator it(path.begin(), path.end(), param), end; it != end; ++it) names.push_back((*it)[1]);
  return names;
}

json body_json(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json j = json::parse(req.body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::ParseError, "request body is not a JSON object");
  return j;
}

void send(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

std::optional<std::int64_t> optional_version(const json& body) {
  if (!body.contains("base_version") || body.at("base_version").is_null()) return std::nullopt;
  return body.at("base_version").get<std::int64_t>();
}

json component(const char* name) { return json{{"$ref", std::string("#/components/schemas/") + name}}; }

json openapi_components() {
  const json str = {{"type", "string"}};
  const json integer = {{"type", "integer"}};
  const json obj = {{"type", "object"}};
  const json span = {{"type", "object"},
                     {"required", {"start_index", "end_index"}},
                     {"properties", {{"start_index", integer}, {"end_index", integer}}}};
  json s;
  s["Error"] = {{"type", "object"},
                {"properties",
                 {{"error",
                   {{"type", "object"},
                    {"required", {"code", "message"}},
                    {"properties", {{"code", str}, {"message", str}, {"step", integer}, {"cause", str}}}}}}}};
  s["NewProject"] = {{"type", "object"}, {"required", {"title"}}, {"properties", {{"title", str}}}};
  s["Project"] = {{"type", "object"},
                  {"properties",
                   {{"id", str},
                    {"title", str},
                    {"created_at", str},
                    {"transcript_ids", {{"type", "array"}, {"items", str}}},
                    {"generation_run_ids", {{"type", "array"}, {"items", str}}},
                    {"selected_candidate_id", {{"type", {"string", "null"}}}}}}};
  s["ProjectList"] = {{"type", "array"}, {"items", component("Project")}};
  s["TranscriptUpload"] = {
      {"type", "object"},
      {"description", "JSON body, or multipart/form-data with a 'file' part plus 'id' and 'language' fields"},
      {"required", {"content"}},
      {"properties",
       {{"id", str},
        {"language", str},
        {"format", {{"type", "string"}, {"enum", {"srt", "vtt", "txt", "json"}}}},
        {"content", str}}}};
  s["Transcript"] = {{"type", "object"},
                     {"properties", {{"id", str}, {"language", str}, {"segments", {{"type", "array"}}}}}};
  s["NewSection"] = {{"type", "object"},
                     {"required", {"transcript_id", "start", "end"}},
                     {"properties",
                      {{"transcript_id", str},
                       {"start", {{"type", "number"}, {"description", "seconds"}}},
                       {"end", {{"type", "number"}, {"description", "seconds"}}}}}};
  s["SectionText"] = {{"type", "object"}, {"required", {"text"}}, {"properties", {{"text", str}}}};
  s["TranscriptSection"] = {{"type", "object"},
                            {"properties",
                             {{"id", str},
                              {"transcript_id", str},
                              {"language", str},
                              {"start", {{"type", "number"}}},
                              {"end", {{"type", "number"}}},
                              {"text", str}}}};
  s["GenerateRequest"] = {
      {"type", "object"},
      {"required", {"scenario"}},
      {"properties",
       {{"scenario", str},
        {"language", str},
        {"highlights",
         {{"type", "array"},
          {"items",
           {{"type", "object"},
            {"required", {"char_start", "char_end"}},
            {"properties", {{"char_start", integer}, {"char_end", integer}, {"note", str}}}}}}}}}};
  s["Job"] = {{"type", "object"},
              {"properties",
               {{"id", str},
                {"kind", {{"type", "string"}, {"enum", {"Generation", "Laboratory", "Transcription"}}}},
                {"status", {{"type", "string"}, {"enum", {"Queued", "Running", "Done", "Failed", "Cancelled"}}}},
                {"result_ref", {{"type", {"string", "null"}}}},
                {"failure", {{"type", {"object", "null"}}}},
                {"detail", obj}}}};
  s["GenerationResult"] = {{"type", "object"},
                           {"properties",
                            {{"run_id", str},
                             {"rubric", obj},
                             {"slots", {{"type", "array"}, {"minItems", 4}, {"maxItems", 4}}},
                             {"trace", {{"type", "array"}}}}}};
  s["CandidateView"] = {{"type", "object"},
                        {"properties",
                         {{"candidate", obj},
                          {"card", obj},
                          {"versions", {{"type", "array"}, {"items", integer}}},
                          {"can_undo", {{"type", "boolean"}}},
                          {"run_id", str}}}};
  s["EditOperation"] = {
      {"type", "object"},
      {"required", {"kind", "base_version"}},
      {"properties",
       {{"kind",
         {{"type", "string"},
          {"enum",
           {"AddUtterance", "DuplicateUtterance", "DeleteUtterance", "ChangeSpeaker", "MoveUtterance",
            "UpdateText", "Retag"}}}},
        {"base_version", integer}}}};
  s["BaseVersion"] = {{"type", "object"}, {"properties", {{"base_version", integer}}}};
  s["LaboratoryRequest"] = {{"type", "object"}, {"required", {"span"}}, {"properties", {{"span", span}}}};
  s["ApplyVariation"] = {{"type", "object"},
                         {"required", {"span", "index"}},
                         {"properties", {{"span", span}, {"index", integer}, {"base_version", integer}}}};
  s["LaboratoryResult"] = {{"type", "object"},
                           {"properties",
                            {{"candidate_id", str},
                             {"candidate_version", integer},
                             {"span", span},
                             {"variations", {{"type", "array"}, {"minItems", 4}, {"maxItems", 4}}}}}};
  s["LintReport"] = {{"type", "object"},
                     {"properties",
                      {{"findings", {{"type", "array"}}},
                       {"metrics", obj},
                       {"coverage", obj},
                       {"error_turn_percentage", {{"type", "number"}}},
                       {"judge_used", {{"type", "boolean"}}},
                       {"notes", {{"type", "array"}, {"items", str}}}}}};
  s["TranscriptionRequest"] = {{"type", "object"},
                               {"required", {"project_id", "media_ref"}},
                               {"properties",
                                {{"project_id", str}, {"media_ref", str}, {"transcript_id", str}, {"language", str}}}};
  s["Health"] = {{"type", "object"}, {"properties", {{"status", str}, {"provider", str}}}};
  s["OpenApi"] = obj;
  return s;
}

json build_openapi(const std::vector<Route>& routes) {
  json doc = {{"openapi", "3.0.3"},
              {"info", {{"title", "vicar authoring API"}, {"version", "1.0.0"}}},
              {"components",
               {{"schemas", openapi_components()},
                {"securitySchemes", {{"bearer", {{"type", "http"}, {"scheme", "bearer"}}}}}}},
              {"security", json::array({{{"bearer", json::array()}}})},
              {"paths", json::object()}};
  for (const auto& r : routes) {
    std::string method = text::to_lower_ascii(r.method);
    json op = {{"summary", r.summary}, {"responses", json::object()}};
    json params = json::array();
    for (const auto& name : path_params(r.path)) {
      params.push_back({{"name", name}, {"in", "path"}, {"required", true}, {"schema", {{"type", "string"}}}});
    }
    const std::string& path = r.path;
    if (path.ends_with("/lint")) {
      params.push_back({{"name", "judge"}, {"in", "query"}, {"schema", {{"type", "boolean"}}}});
    } else if (path.ends_with("/export")) {
      params.push_back({{"name", "format"},
                        {"in", "query"},
                        {"required", true},
                        {"schema", {{"type", "string"}, {"enum", {"ScriptText", "StructuredDoc", "SubtitleLike"}}}}});
    } else if (path.ends_with("/candidates/{candidate_id}")) {
      params.push_back({{"name", "version"}, {"in", "query"}, {"schema", {{"type", "integer"}}}});
    }
    if (!params.empty()) op["parameters"] = params;
    if (r.request) {
      op["requestBody"] = {{"required", true},
                           {"content", {{"application/json", {{"schema", component(r.request)}}}}}};
    }
    json ok = {{"description", "success"}};
    if (r.response) {
      ok["content"] = {{"application/json", {{"schema", component(r.response)}}}};
    } else {
      ok["content"] = {{"application/octet-stream", {{"schema", {{"type", "string"}, {"format", "binary"}}}}}};
    }
    op["responses"][std::to_string(r.success)] = ok;
    const json err = {{"content", {{"application/json", {{"schema", component("Error")}}}}}};
    auto add = [&](int status, const char* what) {
      json e = err;
      e["description"] = what;
      op["responses"][std::to_string(status)] = e;
    };
    if (path != "/healthz" && path != "/openapi") add(401, "missing or wrong bearer token");
    if (r.request) add(400, "validation error");
    if (!params.empty()) add(404, "not found");
    if (path.find("/candidates/") != std::string::npos && std::string(r.method) == "POST") {
      add(409, "version conflict or stale variation");
    }
    if (r.success == 202) add(429, "job queue full");
    if (path.ends_with("/lint")) add(503, "judge provider unavailable");
    doc["paths"][path][method] = op;
  }
  return doc;
}

}  // namespace

struct Service::Impl {
  httplib::Server server;
  std::vector<Route> routes;
  json openapi;
};

const json& openapi_document() {
  // Built from a throwaway route table so the document exists without a
  // running server; handlers are never invoked.
  static const json doc = [] {
    ServiceConfig config;
    config.store = std::filesystem::temp_directory_path() / "vicar-openapi-probe";
    Service probe(config, std::make_shared<llm::UnavailableProvider>());
    return probe.impl_->openapi;
  }();
  return doc;
}

Service::Service(ServiceConfig config, std::shared_ptr<llm::Provider> provider, std::shared_ptr<AsrClient> asr,
                 std::ostream* log)
    : config_(std::move(config)),
      store_(config_.store),
      gateway_(std::move(provider), config_.gateway),
      pipeline_(gateway_, config_.pipeline),
      asr_(std::move(asr)),
      log_(log),
      jobs_(config_.queue_capacity, config_.workers),
      impl_(std::make_unique<Impl>()) {
  auto log_line = [this](json entry) {
    if (!log_) return;
    entry["ts"] = iso_now();
    std::lock_guard lock(log_mutex_);
    *log_ << entry.dump() << '\n' << std::flush;
  };

  auto submit = [this, log_line](httplib::Response& res, JobKind kind, JobQueue::Work work, json detail) {
    auto job = jobs_.submit(kind, std::move(work), std::move(detail));
    if (!job) {
      send(res, 429,
           json{{"error",
                 {{"code", "QueueFull"},
                  {"message", "job queue is full (" + std::to_string(jobs_.capacity()) + " jobs); retry later"}}}});
      res.set_header("Retry-After", "1");
      return;
    }
    log_line({{"level", "info"}, {"event", "job_queued"}, {"job", job->id}, {"kind", to_string(kind)}});
    send(res, 202, *job);
  };

  auto candidate_view = [this](const std::string& pid, const std::string& cid,
                               std::optional<std::int64_t> version) {
    json view;
    const auto history = store_.load_history(pid, cid);
    const auto candidate = version ? store_.load_candidate(pid, cid, version) : history.current();
    view["candidate"] = to_document(candidate);
    view["versions"] = store_.list_versions(pid, cid);
    view["can_undo"] = history.can_undo();
    if (validate_dialogue(candidate).empty()) {
      view["card"] = derive_card(candidate);
    } else {
      view["card"] = nullptr;
    }
    view["run_id"] = store_.run_for_candidate(pid, cid).value_or("");
    return view;
  };

  auto run_of = [this](const std::string& pid, const std::string& cid) {
    auto run_id = store_.run_for_candidate(pid, cid);
    if (!run_id) throw Error(ErrorCode::NotFound, "candidate " + cid + " is not part of project " + pid);
    return store_.load_run(pid, *run_id);
  };

  auto& R = impl_->routes;

  R.push_back({"GET", "/healthz", "Liveness probe", 200, nullptr, "Health",
               [this](const httplib::Request&, httplib::Response& res) {
                 send(res, 200, {{"status", "ok"}, {"provider", gateway_.provider_name()}});
               }});
  R.push_back({"GET", "/openapi", "This API contract", 200, nullptr, "OpenApi",
               [this](const httplib::Request&, httplib::Response& res) { send(res, 200, impl_->openapi); }});

  R.push_back({"GET", "/projects", "List projects", 200, nullptr, "ProjectList",
               [this](const httplib::Request&, httplib::Response& res) {
                 json out = json::array();
                 for (const auto& p : store_.list_projects()) {
                   out.push_back({{"id", p.id}, {"title", p.title}, {"created_at", p.created_at}});
                 }
                 send(res, 200, out);
               }});
  R.push_back({"POST", "/projects", "Create a project", 201, "NewProject", "Project",
               [this](const httplib::Request& req, httplib::Response& res) {
                 const json body = body_json(req);
                 const std::string title = body.value("title", std::string{});
                 if (text::trim(title).empty()) throw Error(ErrorCode::InvalidArgument, "title must not be empty");
                 send(res, 201, store_.create_project(title));
               }});
  R.push_back({"GET", "/projects/{project_id}", "Fetch a project", 200, nullptr, "Project",
               [this](const httplib::Request& req, httplib::Response& res) {
                 send(res, 200, store_.load_project(req.matches[1]));
               }});

  R.push_back({"POST", "/projects/{project_id}/transcripts", "Upload and parse a transcript", 201,
               "TranscriptUpload", "Transcript", [this](const httplib::Request& req, httplib::Response& res) {
                 const std::string pid = req.matches[1];
                 TranscriptSource source;
                 std::string format;
                 if (req.is_multipart_form_data()) {
                   if (!req.has_file("file")) throw Error(ErrorCode::InvalidArgument, "multipart upload needs a 'file' part");
                   const auto file = req.get_file_value("file");
                   source.payload = file.content;
                   source.kind = source_kind_for(file.filename);
                   if (req.has_file("id")) source.id = req.get_file_value("id").content;
                   if (req.has_file("language")) source.language = req.get_file_value("language").content;
                   if (req.has_file("format")) format = req.get_file_value("format").content;
                 } else {
                   const json body = body_json(req);
                   source.payload = body.at("content").get<std::string>();
                   source.id = body.value("id", source.id);
                   source.language = body.value("language", source.language);
                   format = body.value("format", std::string("txt"));
                 }
                 if (!format.empty()) source.kind = source_kind_for("upload." + text::to_lower_ascii(format));
                 check_record_id(source.id);
                 auto lock = store_.lock_project(pid);
                 store_.load_project(pid);
                 const Transcript t = parse_transcript(source);
                 store_.save_transcript(pid, t);
                 send(res, 201, to_document(t));
               }});
  R.push_back({"GET", "/projects/{project_id}/transcripts/{transcript_id}", "Fetch a transcript", 200, nullptr,
               "Transcript", [this](const httplib::Request& req, httplib::Response& res) {
                 send(res, 200, to_document(store_.load_transcript(req.matches[1], req.matches[2])));
               }});

  R.push_back({"POST", "/projects/{project_id}/sections", "Trim a section out of a transcript", 201, "NewSection",
               "TranscriptSection", [this](const httplib::Request& req, httplib::Response& res) {
                 const std::string pid = req.matches[1];
                 const json body = body_json(req);
                 const auto t = store_.load_transcript(pid, body.at("transcript_id").get<std::string>());
                 const auto section = trim_section(t, Millis::from_seconds(body.at("start").get<double>()),
                                                   Millis::from_seconds(body.at("end").get<double>()));
                 auto lock = store_.lock_project(pid);
                 store_.save_section(pid, section);
                 send(res, 201, to_document(section));
               }});
  R.push_back({"GET", "/projects/{project_id}/sections/{section_id}", "Fetch a section", 200, nullptr,
               "TranscriptSection", [this](const httplib::Request& req, httplib::Response& res) {
                 send(res, 200, to_document(store_.load_section(req.matches[1], req.matches[2])));
               }});
  R.push_back({"PATCH", "/projects/{project_id}/sections/{section_id}/text", "Replace the section text", 200,
               "SectionText", "TranscriptSection", [this](const httplib::Request& req, httplib::Response& res) {
                 const std::string pid = req.matches[1];
                 const json body = body_json(req);
                 auto lock = store_.lock_project(pid);
                 const auto section = edit_section_text(store_.load_section(pid, req.matches[2]),
                                                        body.at("text").get<std::string>());
                 store_.save_section(pid, section);
                 send(res, 200, to_document(section));
               }});

  R.push_back({"POST", "/projects/{project_id}/sections/{section_id}/generate",
               "Start initial generation (rubric, four candidates)", 202, "GenerateRequest", "Job",
               [this, submit](const httplib::Request& req, httplib::Response& res) {
                 const std::string pid = req.matches[1];
                 const json body = body_json(req);
                 GenerationRequest request;
                 request.section = store_.load_section(pid, req.matches[2]);
                 request.scenario = body.value("scenario", std::string{});
                 request.language = body.value("language", request.section.language);
                 for (const auto& h : body.value("highlights", json::array())) {
                   auto highlight = h.get<Highlight>();
                   if (highlight.section_id.empty()) highlight.section_id = request.section.id;
                   request.highlights.push_back(highlight);
                 }
                 check_request(request);
                 submit(res, JobKind::Generation,
                        [this, pid, request](std::stop_token stop) {
                          auto result = pipeline_.run_initial_generation(request, stop);
                          auto lock = store_.lock_project(pid);
                          const std::string base = result.run_id;
                          std::string id = base;
                          for (int n = 2; store_.has_run(pid, id); ++n) id = base + "-" + std::to_string(n);
                          if (id != base) rename_run(result, id);
                          store_.save_run(pid, result);
                          return "/projects/" + pid + "/runs/" + id;
                        },
                        {{"project_id", pid}, {"section_id", request.section.id}});
               }});
  R.push_back({"GET", "/projects/{project_id}/runs/{run_id}", "Fetch a generation run", 200, nullptr,
               "GenerationResult", [this](const httplib::Request& req, httplib::Response& res) {
                 send(res, 200, to_document(store_.load_run(req.matches[1], req.matches[2])));
               }});

  const std::string cand = "/projects/{project_id}/candidates/{candidate_id}";
  auto P = [&](const std::string& suffix) { return cand + suffix; };

  R.push_back({"GET", P(""), "Fetch a candidate (latest or ?version=N)", 200, nullptr, "CandidateView",
               [candidate_view](const httplib::Request& req, httplib::Response& res) {
                 std::optional<std::int64_t> version;
                 if (req.has_param("version")) version = std::stoll(req.get_param_value("version"));
                 send(res, 200, candidate_view(req.matches[1], req.matches[2], version));
               }});
  R.push_back({"POST", P("/select"), "Select the candidate for the project", 200, nullptr, "Project",
               [this](const httplib::Request& req, httplib::Response& res) {
                 const std::string pid = req.matches[1];
                 auto lock = store_.lock_project(pid);
                 send(res, 200, store_.select_candidate(pid, req.matches[2]));
               }});
  R.push_back({"POST", P("/edits"), "Apply one edit; returns the new version", 200, "EditOperation",
               "CandidateView", [this, candidate_view](const httplib::Request& req, httplib::Response& res) {
                 const std::string pid = req.matches[1], cid = req.matches[2];
                 const auto op = body_json(req).get<EditOperation>();
                 auto lock = store_.lock_project(pid);
                 auto history = store_.load_history(pid, cid);
                 history.apply(op);
                 store_.save_history(pid, history);
                 send(res, 200, candidate_view(pid, cid, std::nullopt));
               }});
  R.push_back({"POST", P("/undo"), "Undo the last edit; returns the new version", 200, "BaseVersion",
               "CandidateView", [this, candidate_view](const httplib::Request& req, httplib::Response& res) {
                 const std::string pid = req.matches[1], cid = req.matches[2];
                 const auto version = optional_version(body_json(req));
                 auto lock = store_.lock_project(pid);
                 auto history = store_.load_history(pid, cid);
                 history.undo(version);
                 store_.save_history(pid, history);
                 send(res, 200, candidate_view(pid, cid, std::nullopt));
               }});
  R.push_back({"POST", P("/laboratory"), "Start a laboratory run over a span", 202, "LaboratoryRequest", "Job",
               [this, submit, run_of](const httplib::Request& req, httplib::Response& res) {
                 const std::string pid = req.matches[1], cid = req.matches[2];
                 const auto span = body_json(req).at("span").get<SubDialogueSpan>();
                 const auto candidate = store_.load_candidate(pid, cid);
                 check_span(span, candidate.utterances.size());
                 const std::string language = run_of(pid, cid).language;
                 submit(res, JobKind::Laboratory,
                        [this, pid, cid, span, candidate, language](std::stop_token stop) {
                          auto lab = run_laboratory(gateway_, candidate, span, language);
                          if (stop.stop_requested()) throw Error(ErrorCode::Cancelled, "laboratory cancelled");
                          auto lock = store_.lock_project(pid);
                          store_.save_laboratory(pid, lab);
                          return "/projects/" + pid + "/candidates/" + cid + "/laboratory";
                        },
                        {{"project_id", pid}, {"candidate_id", cid}, {"span", span}});
               }});
  R.push_back({"GET", P("/laboratory"), "Fetch the latest laboratory result", 200, nullptr, "LaboratoryResult",
               [this](const httplib::Request& req, httplib::Response& res) {
                 const std::string cid = req.matches[2];
                 auto lab = store_.load_laboratory(req.matches[1], cid);
                 if (!lab) throw Error(ErrorCode::NotFound, "no laboratory result for " + cid);
                 send(res, 200, to_document(*lab));
               }});
  R.push_back({"POST", P("/apply-variation"), "Replace the span with a variation; returns the new version", 200,
               "ApplyVariation", "CandidateView",
               [this, candidate_view](const httplib::Request& req, httplib::Response& res) {
                 const std::string pid = req.matches[1], cid = req.matches[2];
                 const json body = body_json(req);
                 const auto span = body.at("span").get<SubDialogueSpan>();
                 const int index = body.at("index").get<int>();
                 const auto version = optional_version(body);
                 auto lock = store_.lock_project(pid);
                 auto history = store_.load_history(pid, cid);
                 if (version && *version != history.current().version) {
                   throw Error(ErrorCode::VersionConflict,
                               "base_version " + std::to_string(*version) + " but the candidate is at version " +
                                   std::to_string(history.current().version));
                 }
                 auto lab = store_.load_laboratory(pid, cid);
                 if (!lab) throw Error(ErrorCode::StaleVariation, "no laboratory result to apply for " + cid);
                 history.apply_variation(*lab, span, index);
                 store_.save_history(pid, history);
                 send(res, 200, candidate_view(pid, cid, std::nullopt));
               }});
  R.push_back({"GET", P("/lint"), "Quality report (?judge=true escalates to the judge)", 200, nullptr,
               "LintReport", [this, run_of](const httplib::Request& req, httplib::Response& res) {
                 const std::string pid = req.matches[1], cid = req.matches[2];
                 const auto candidate = store_.load_candidate(pid, cid);
                 const auto run = run_of(pid, cid);
                 LintOptions options;
                 options.language = run.language;
                 options.word_cap = config_.pipeline.soft_word_cap;
                 try {
                   options.section_text = store_.load_section(pid, run.section_id).text;
                 } catch (const Error& e) {
                   if (e.code() != ErrorCode::NotFound) throw;
                 }
                 const std::string judge = req.has_param("judge") ? req.get_param_value("judge") : "false";
                 if (judge == "true" || judge == "1") options.judge = &gateway_;
                 send(res, 200, lint(candidate, options));
               }});
  R.push_back({"GET", P("/export"), "Export the candidate (?format=ScriptText|StructuredDoc|SubtitleLike)", 200,
               nullptr, nullptr, [this, run_of](const httplib::Request& req, httplib::Response& res) {
                 const std::string pid = req.matches[1], cid = req.matches[2];
                 const std::string name = req.has_param("format") ? req.get_param_value("format") : "";
                 const auto format = parse_export_format(name);
                 if (!format) throw Error(ErrorCode::InvalidArgument, "unknown export format \"" + name + "\"");
                 const auto candidate = store_.load_candidate(pid, cid);
                 std::optional<TranscriptSection> section;
                 if (*format == ExportFormat::SubtitleLike) section = store_.load_section(pid, run_of(pid, cid).section_id);
                 const std::string bytes = export_candidate(candidate, *format, section ? &*section : nullptr);
                 const char* type = *format == ExportFormat::StructuredDoc ? "application/json"
                                    : *format == ExportFormat::SubtitleLike ? "application/x-subrip"
                                                                            : "text/plain; charset=utf-8";
                 res.status = 200;
                 res.set_content(bytes, type);
               }});

  R.push_back({"POST", "/transcriptions", "Transcribe media through the speech-recognition backend", 202,
               "TranscriptionRequest", "Job", [this, submit](const httplib::Request& req, httplib::Response& res) {
                 const json body = body_json(req);
                 const std::string pid = body.at("project_id").get<std::string>();
                 const std::string media = body.at("media_ref").get<std::string>();
                 const std::string tid = body.value("transcript_id", std::string("transcript"));
                 const std::string language = body.value("language", std::string("en"));
                 check_record_id(tid);
                 store_.load_project(pid);
                 if (!asr_) throw Error(ErrorCode::ASRUnavailable, "no speech-recognition endpoint is configured");
                 submit(res, JobKind::Transcription,
                        [this, pid, media, tid, language](std::stop_token) {
                          TranscriptSource source;
                          source.kind = SourceKind::StructuredJSON;
                          source.payload = asr_->transcribe(media);
                          source.id = tid;
                          source.language = language;
                          Transcript t = parse_transcript(source);
                          t.id = tid;
                          auto lock = store_.lock_project(pid);
                          store_.save_transcript(pid, t);
                          return "/projects/" + pid + "/transcripts/" + tid;
                        },
                        {{"project_id", pid}, {"media_ref", media}});
               }});

  R.push_back({"GET", "/jobs/{job_id}", "Poll a job", 200, nullptr, "Job",
               [this](const httplib::Request& req, httplib::Response& res) {
                 const auto job = jobs_.get(req.matches[1]);
                 if (!job) throw Error(ErrorCode::NotFound, "job " + std::string(req.matches[1]));
                 send(res, 200, *job);
               }});
  R.push_back({"POST", "/jobs/{job_id}/cancel", "Cancel a job (no-op once finished)", 200, nullptr, "Job",
               [this](const httplib::Request& req, httplib::Response& res) {
                 send(res, 200, jobs_.cancel(req.matches[1]));
               }});

  impl_->openapi = build_openapi(R);

  auto& server = impl_->server;
  server.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
    if (config_.token.empty() || req.path == "/healthz" || req.path == "/openapi") {
      return httplib::Server::HandlerResponse::Unhandled;
    }
    if (req.get_header_value("Authorization") != "Bearer " + config_.token) {
      send(res, 401, json{{"error", {{"code", "Unauthorized"}, {"message", "missing or wrong bearer token"}}}});
      return httplib::Server::HandlerResponse::Handled;
    }
    return httplib::Server::HandlerResponse::Unhandled;
  });
  server.set_logger([log_line](const httplib::Request& req, const httplib::Response& res) {
    log_line({{"level", res.status >= 500 ? "error" : "info"},
              {"event", "request"},
              {"method", req.method},
              {"path", req.path},
              {"status", res.status}});
  });

  for (auto& route : R) {
    auto guarded = [handler = route.handler, log_line](const httplib::Request& req, httplib::Response& res) {
      try {
        handler(req, res);
      } catch (const Error& e) {
        send(res, http_status_for(e.code()), error_body(e));
      } catch (const json::exception& e) {
        send(res, 400, json{{"error", {{"code", "ParseError"}, {"message", e.what()}}}});
      } catch (const std::exception& e) {
        log_line({{"level", "error"}, {"event", "unhandled"}, {"path", req.path}, {"message", e.what()}});
        send(res, 500, json{{"error", {{"code", "Internal"}, {"message", e.what()}}}});
      }
    };
    const std::string pattern = route_regex(route.path);
    const std::string method = route.method;
    if (method == "GET") server.Get(pattern, guarded);
    else if (method == "POST") server.Post(pattern, guarded);
    else if (method == "PATCH") server.Patch(pattern, guarded);
  }
}

Service::~Service() { stop(); }

int Service::bind() {
  auto& server = impl_->server;
  if (config_.port == 0) {
    port_ = server.bind_to_any_port(config_.bind);
    if (port_ <= 0) throw Error(ErrorCode::InvalidArgument, "cannot bind " + config_.bind);
  } else {
    if (!server.bind_to_port(config_.bind, config_.port)) {
      throw Error(ErrorCode::InvalidArgument,
                  "cannot bind " + config_.bind + ":" + std::to_string(config_.port));
    }
    port_ = config_.port;
  }
  return port_;
}

void Service::run() {
  if (port_ == 0) bind();
  if (log_) {
    std::lock_guard lock(log_mutex_);
    *log_ << json{{"ts", iso_now()},
                  {"level", "info"},
                  {"event", "listening"},
                  {"bind", config_.bind},
                  {"port", port_},
                  {"provider", gateway_.provider_name()}}
                 .dump()
          << '\n'
          << std::flush;
  }
  impl_->server.listen_after_bind();
}

void Service::start() {
  if (port_ == 0) bind();
  thread_ = std::thread([this] { run(); });
  impl_->server.wait_until_ready();
}

void Service::stop() {
  if (impl_) impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace vicar
