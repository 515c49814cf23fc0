#pragma once

#include "layoutgen/engine.hpp"
#include "json.hpp"

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace httplib {
class Server;
}

namespace layoutgen {

enum class JobState { Queued, RunningSog, RunningCc, Done, Failed };

[[nodiscard]] std::string_view job_state_name(JobState s) noexcept;

struct ObjectProgress {
    std::string id;
    int step = 0;
    int total_steps = 0;
    bool done = false;
};

struct JobError {
    std::string code;
    std::string stage;
    std::string message;
};

struct JobRecord {
    std::string id;
    JobState state = JobState::Queued;
    std::vector<ObjectProgress> objects;
    int cc_step = 0;
    int cc_total_steps = 0;
    std::optional<JobError> error;
    std::string parent;
    std::filesystem::path dir;
};

[[nodiscard]] nlohmann::json to_json(const JobRecord& job);

/// Queue of generation jobs served by a fixed pool of worker threads. The
/// pool has one worker unless every backend tolerates concurrent use.
class JobManager {
  public:
    JobManager(EngineConfig base, std::filesystem::path root);
    ~JobManager();
    JobManager(const JobManager&) = delete;
    JobManager& operator=(const JobManager&) = delete;

    /// Throws ValidationError for an invalid layout or config.
    std::string submit(Layout layout, const nlohmann::json& overrides = nlohmann::json::object());
    /// New job regenerating one object of a finished job. Throws NotFound,
    /// InvalidState (source not done).
    std::string regenerate(const std::string& job_id, const std::string& object_id,
                           std::optional<std::uint64_t> seed);

    [[nodiscard]] std::optional<JobRecord> get(const std::string& job_id) const;
    /// Blocks until the job is done or failed.
    JobRecord wait(const std::string& job_id) const;
    [[nodiscard]] std::size_t workers() const noexcept { return threads_.size(); }
    [[nodiscard]] const EngineConfig& base_config() const noexcept { return base_; }

  private:
    struct Task {
        std::string job_id;
        Layout layout;
        EngineConfig cfg;
        std::optional<std::string> source_job;
        std::string object_id;
        std::optional<std::uint64_t> seed;
    };

    std::string enqueue(Task task, JobRecord record);
    void worker();
    void execute(const Task& task);
    void update(const std::string& id, const std::function<void(JobRecord&)>& f);
    std::string next_id();

    EngineConfig base_;
    std::filesystem::path root_;
    mutable std::mutex mutex_;
    mutable std::condition_variable changed_;
    std::condition_variable work_ready_;
    std::deque<Task> queue_;
    std::map<std::string, JobRecord> jobs_;
    std::uint64_t counter_ = 0;
    bool stopping_ = false;
    std::vector<std::thread> threads_;
};

/// Registers the HTTP API on `server`:
///   POST /api/jobs, GET /api/jobs/{id}, GET /api/jobs/{id}/image,
///   GET /api/jobs/{id}/objects/{oid}/image,
///   POST /api/jobs/{id}/objects/{oid}/regenerate, GET /api/health.
void register_routes(httplib::Server& server, JobManager& jobs);

} // namespace layoutgen
