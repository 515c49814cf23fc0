#include "layoutgen/service.hpp"

#include "layoutgen/error.hpp"
#include "layoutgen/log.hpp"

#include "httplib.h"

#include <fstream>
#include <sstream>

namespace layoutgen {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string_view job_state_name(JobState s) noexcept {
    switch (s) {
    case JobState::Queued: return "queued";
    case JobState::RunningSog: return "running:sog";
    case JobState::RunningCc: return "running:cc";
    case JobState::Done: return "done";
    case JobState::Failed: return "failed";
    }
    return "unknown";
}

json to_json(const JobRecord& job) {
    json objects = json::array();
    for (const auto& o : job.objects) {
        objects.push_back({{"id", o.id}, {"step", o.step}, {"total_steps", o.total_steps}, {"done", o.done}});
    }
    json j = {{"id", job.id},
              {"state", job_state_name(job.state)},
              {"objects", objects},
              {"cc", {{"step", job.cc_step}, {"total_steps", job.cc_total_steps}}},
              {"parent", job.parent.empty() ? json(nullptr) : json(job.parent)}};
    if (job.state == JobState::Done) {
        json artifacts = {{"scene", "/api/jobs/" + job.id + "/image"}, {"objects", json::object()}};
        for (const auto& o : job.objects) {
            artifacts["objects"][o.id] = "/api/jobs/" + job.id + "/objects/" + o.id + "/image";
        }
        j["artifacts"] = artifacts;
        j["dir"] = job.dir.string();
    }
    if (job.error) j["error"] = {{"code", job.error->code}, {"stage", job.error->stage}, {"message", job.error->message}};
    return j;
}

namespace {

Layout probe_layout(const EngineConfig& cfg) {
    Layout l;
    l.canvas_height = l.canvas_width = cfg.backends.codec_factor;
    l.global_prompt = "probe";
    l.objects.push_back({"probe", "probe", 0, BinaryMask(l.canvas_height, l.canvas_width, 1)});
    return l;
}

int rank(JobState s) { return static_cast<int>(s); }

} // namespace

JobManager::JobManager(EngineConfig base, fs::path root) : base_(std::move(base)), root_(std::move(root)) {
    fs::create_directories(root_);
    const bool parallel = make_backends(base_, probe_layout(base_)).concurrent_safe();
    const int n = parallel ? base_.workers : 1;
    for (int i = 0; i < n; ++i) threads_.emplace_back([this] { worker(); });
    logger()->info("job manager: {} worker(s), output under {}", n, root_.string());
}

JobManager::~JobManager() {
    {
        std::lock_guard lock(mutex_);
        stopping_ = true;
    }
    work_ready_.notify_all();
    for (auto& t : threads_) t.join();
}

std::string JobManager::next_id() {
    char buf[32];
    std::snprintf(buf, sizeof buf, "job-%06llu", static_cast<unsigned long long>(++counter_));
    return buf;
}

std::string JobManager::submit(Layout layout, const json& overrides) {
    if (auto issues = validate(layout); !issues.empty()) {
        std::string msg = "invalid layout:";
        for (const auto& i : issues) msg += "\n  - " + i;
        throw Error(Errc::ValidationError, msg, "layout");
    }
    EngineConfig cfg = apply_config(overrides, base_);
    (void)make_backends(cfg, layout);
    JobRecord record;
    for (const auto& o : layout.objects) record.objects.push_back({o.id, 0, 0, false});
    return enqueue(Task{{}, std::move(layout), std::move(cfg), std::nullopt, {}, std::nullopt}, std::move(record));
}

std::string JobManager::regenerate(const std::string& job_id, const std::string& object_id,
                                   std::optional<std::uint64_t> seed) {
    fs::path dir;
    {
        std::lock_guard lock(mutex_);
        auto it = jobs_.find(job_id);
        if (it == jobs_.end()) throw Error(Errc::NotFound, "no job '" + job_id + "'");
        if (it->second.state != JobState::Done) {
            throw Error(Errc::InvalidState, "job '" + job_id + "' is not done");
        }
        dir = it->second.dir;
    }
    const JobDir source{dir};
    Layout layout = load_layout_file(source.layout());
    if (!layout.find(object_id)) throw Error(Errc::NotFound, "job '" + job_id + "' has no object '" + object_id + "'");
    EngineConfig cfg = load_config_file(source.config(), base_);

    JobRecord record;
    record.parent = job_id;
    for (const auto& o : layout.objects) record.objects.push_back({o.id, 0, 0, false});
    return enqueue(Task{{}, std::move(layout), std::move(cfg), job_id, object_id, seed}, std::move(record));
}

std::string JobManager::enqueue(Task task, JobRecord record) {
    std::string id;
    {
        std::lock_guard lock(mutex_);
        id = next_id();
        record.id = id;
        record.dir = root_ / id;
        task.job_id = id;
        jobs_.emplace(id, std::move(record));
        queue_.push_back(std::move(task));
    }
    work_ready_.notify_one();
    changed_.notify_all();
    return id;
}

std::optional<JobRecord> JobManager::get(const std::string& job_id) const {
    std::lock_guard lock(mutex_);
    auto it = jobs_.find(job_id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
}

JobRecord JobManager::wait(const std::string& job_id) const {
    std::unique_lock lock(mutex_);
    auto it = jobs_.find(job_id);
    if (it == jobs_.end()) throw Error(Errc::NotFound, "no job '" + job_id + "'");
    changed_.wait(lock, [&] { return it->second.state == JobState::Done || it->second.state == JobState::Failed; });
    return it->second;
}

void JobManager::update(const std::string& id, const std::function<void(JobRecord&)>& f) {
    {
        std::lock_guard lock(mutex_);
        f(jobs_.at(id));
    }
    changed_.notify_all();
}

void JobManager::worker() {
    while (true) {
        Task task;
        {
            std::unique_lock lock(mutex_);
            work_ready_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
            if (stopping_ && queue_.empty()) return;
            task = std::move(queue_.front());
            queue_.pop_front();
        }
        execute(task);
    }
}

void JobManager::execute(const Task& task) {
    const std::string& id = task.job_id;
    auto advance = [](JobRecord& r, JobState s) {
        if (rank(s) > rank(r.state)) r.state = s;
    };
    RunOptions options;
    options.progress = [&](const ProgressEvent& e) {
        update(id, [&](JobRecord& r) {
            if (e.stage == JobStage::Cc) {
                advance(r, JobState::RunningCc);
                r.cc_step = e.step;
                r.cc_total_steps = e.total_steps;
                return;
            }
            advance(r, JobState::RunningSog);
            for (auto& o : r.objects) {
                if (o.id != e.object_id) continue;
                if (e.stage == JobStage::Sog) {
                    o.step = e.step;
                    o.total_steps = e.total_steps;
                }
                if (e.stage == JobStage::Segmentation) o.done = true;
            }
        });
    };
    try {
        update(id, [&](JobRecord& r) { advance(r, JobState::RunningSog); });
        const fs::path dir = root_ / id;
        if (task.source_job) {
            options.parent_job = *task.source_job;
            fs::path source;
            {
                std::lock_guard lock(mutex_);
                source = jobs_.at(*task.source_job).dir;
            }
            (void)regenerate_object(source, task.object_id, task.seed, task.cfg, dir, options);
        } else {
            (void)run_job(task.layout, task.cfg, dir, options);
        }
        update(id, [&](JobRecord& r) {
            for (auto& o : r.objects) o.done = true;
            r.state = JobState::Done;
        });
    } catch (const Error& e) {
        logger()->error("{} failed in {}: {}", id, e.stage(), e.what());
        update(id, [&](JobRecord& r) {
            r.state = JobState::Failed;
            r.error = JobError{std::string(errc_name(e.code())), e.stage(), e.what()};
        });
    } catch (const std::exception& e) {
        logger()->error("{} failed: {}", id, e.what());
        update(id, [&](JobRecord& r) {
            r.state = JobState::Failed;
            r.error = JobError{"InternalError", "", e.what()};
        });
    }
}

namespace {

int http_status(Errc code) {
    switch (code) {
    case Errc::ParseError:
    case Errc::ValidationError:
    case Errc::EmptyMask:
    case Errc::ShapeMismatch:
    case Errc::InvalidRange: return 400;
    case Errc::NotFound: return 404;
    case Errc::InvalidState: return 409;
    default: return 500;
    }
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& stage,
                const std::string& message) {
    res.status = status;
    res.set_content(json{{"code", code}, {"stage", stage}, {"message", message}}.dump(), "application/json");
}

void send_error(httplib::Response& res, const Error& e) {
    send_error(res, http_status(e.code()), errc_name(e.code()), e.stage(), e.what());
}

json parse_body(const httplib::Request& req) {
    try {
        return json::parse(req.body);
    } catch (const json::parse_error& e) {
        throw Error(Errc::ParseError, std::string("request body: ") + e.what(), "request");
    }
}

// Masks sent over HTTP must be inline; file references are refused.
void require_inline_masks(const json& doc) {
    auto objects = doc.find("objects");
    if (objects == doc.end() || !objects->is_array()) return;
    for (std::size_t i = 0; i < objects->size(); ++i) {
        const auto& o = (*objects)[i];
        if (!o.is_object()) continue;
        auto m = o.find("mask");
        if (m != o.end() && m->is_string() && m->get<std::string>().rfind("data:", 0) != 0) {
            throw Error(Errc::ValidationError,
                        "objects[" + std::to_string(i) + "].mask: file paths are not accepted over HTTP; "
                        "send {\"rle\": [...]} or a PNG data URL",
                        "layout");
        }
    }
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

template <typename F>
void guarded(httplib::Response& res, F&& f) {
    try {
        f();
    } catch (const Error& e) {
        send_error(res, e);
    } catch (const std::exception& e) {
        send_error(res, 500, "InternalError", "", e.what());
    }
}

void send_png(httplib::Response& res, const fs::path& path) {
    if (!fs::exists(path)) throw Error(Errc::NotFound, "image not available");
    res.set_content(slurp(path), "image/png");
}

JobRecord done_job(JobManager& jobs, const std::string& id) {
    auto job = jobs.get(id);
    if (!job) throw Error(Errc::NotFound, "no job '" + id + "'");
    if (job->state != JobState::Done) throw Error(Errc::InvalidState, "job '" + id + "' is not done");
    return *job;
}

} // namespace

void register_routes(httplib::Server& server, JobManager& jobs) {
    server.Get("/api/health", [&jobs](const httplib::Request&, httplib::Response& res) {
        res.set_content(json{{"status", "ok"}, {"workers", jobs.workers()}}.dump(), "application/json");
    });

    server.Post("/api/jobs", [&jobs](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const json body = parse_body(req);
            const bool wrapped = body.is_object() && body.contains("layout");
            const json& doc = wrapped ? body.at("layout") : body;
            json overrides = wrapped ? body.value("config", json::object()) : json::object();
            for (const auto& [key, value] : body.items()) {
                if (wrapped && key != "layout" && key != "config") {
                    throw Error(Errc::ValidationError, "unknown request key '" + key + "'", "request");
                }
            }
            require_inline_masks(doc);
            Layout layout = load_layout(doc.dump(2), fs::path{});
            const std::string id = jobs.submit(std::move(layout), overrides);
            res.status = 201;
            res.set_content(json{{"id", id}}.dump(), "application/json");
        });
    });

    server.Get(R"(/api/jobs/([^/]+))", [&jobs](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            auto job = jobs.get(req.matches[1]);
            if (!job) throw Error(Errc::NotFound, "no job '" + std::string(req.matches[1]) + "'");
            res.set_content(to_json(*job).dump(), "application/json");
        });
    });

    server.Get(R"(/api/jobs/([^/]+)/image)", [&jobs](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_png(res, JobDir{done_job(jobs, req.matches[1]).dir}.scene_image()); });
    });

    server.Get(R"(/api/jobs/([^/]+)/objects/([^/]+)/image)",
               [&jobs](const httplib::Request& req, httplib::Response& res) {
                   guarded(res, [&] {
                       const JobRecord job = done_job(jobs, req.matches[1]);
                       const std::string oid = req.matches[2];
                       bool known = false;
                       for (const auto& o : job.objects) known = known || o.id == oid;
                       if (!known) throw Error(Errc::NotFound, "job has no object '" + oid + "'");
                       send_png(res, JobDir{job.dir}.object_dir(oid) / "image.png");
                   });
               });

    server.Post(R"(/api/jobs/([^/]+)/objects/([^/]+)/regenerate)",
                [&jobs](const httplib::Request& req, httplib::Response& res) {
                    guarded(res, [&] {
                        std::optional<std::uint64_t> seed;
                        if (!req.body.empty()) {
                            const json body = parse_body(req);
                            if (!body.is_object()) throw Error(Errc::ValidationError, "body must be an object", "request");
                            for (const auto& [key, value] : body.items()) {
                                if (key != "seed") throw Error(Errc::ValidationError, "unknown request key '" + key + "'", "request");
                                if (!value.is_null()) {
                                    if (!value.is_number_unsigned()) {
                                        throw Error(Errc::ValidationError, "seed must be a non-negative integer", "request");
                                    }
                                    seed = value.get<std::uint64_t>();
                                }
                            }
                        }
                        const std::string id = jobs.regenerate(req.matches[1], req.matches[2], seed);
                        res.status = 201;
                        res.set_content(json{{"id", id}}.dump(), "application/json");
                    });
                });
}

} // namespace layoutgen
