#include "doctest.h"
#include "support.hpp"

#include "layoutgen/error.hpp"
#include "layoutgen/service.hpp"

#include "httplib.h"

#include <chrono>
#include <set>
#include <thread>

using namespace layoutgen;
using namespace testing;
using nlohmann::json;

namespace {

int rank(const std::string& state) {
    if (state == "queued") return 0;
    if (state == "running:sog") return 1;
    if (state == "running:cc") return 2;
    return 3;
}

/// A prompt the toy world paints bright; negative guidance then turns it
/// dark enough for the mock segmenter to find nothing.
std::string bright_prompt() {
    for (int i = 0; i < 10000; ++i) {
        const std::string p = "lantern " + std::to_string(i);
        const auto c = toy_prompt_color(p);
        if ((c[0] + c[1] + c[2]) / 3.0f > 0.4f) return p;
    }
    FAIL("no bright prompt");
    return {};
}

struct Server {
    TempDir tmp{"lg-http"};
    JobManager jobs;
    httplib::Server http;
    std::thread thread;
    int port = 0;
    std::unique_ptr<httplib::Client> client;

    explicit Server(EngineConfig base = fast()) : jobs(std::move(base), tmp.path()) {
        register_routes(http, jobs);
        port = http.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { http.listen_after_bind(); });
        http.wait_until_ready();
        client = std::make_unique<httplib::Client>("127.0.0.1", port);
        client->set_read_timeout(30, 0);
    }
    ~Server() {
        http.stop();
        thread.join();
    }

    static EngineConfig fast() {
        EngineConfig cfg;
        cfg.sog.guidance_scale = 1.0;
        cfg.cc.guidance_scale = 1.0;
        return cfg;
    }

    json get_json(const std::string& path, int expect = 200) {
        auto res = client->Get(path);
        REQUIRE(res);
        CHECK(res->status == expect);
        return json::parse(res->body);
    }

    std::string post(const std::string& path, const std::string& body, int expect) {
        auto res = client->Post(path, body, "application/json");
        REQUIRE(res);
        CHECK_MESSAGE(res->status == expect, res->body);
        return res->body;
    }

    json poll(const std::string& id) {
        std::vector<int> seen;
        for (int i = 0; i < 3000; ++i) {
            json j = get_json("/api/jobs/" + id);
            seen.push_back(rank(j["state"]));
            CHECK(seen.back() >= seen.front());
            if (j["state"] == "done" || j["state"] == "failed") {
                CHECK(std::is_sorted(seen.begin(), seen.end()));
                return j;
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
        }
        FAIL("job did not finish");
        return {};
    }
};

void check_error_body(const std::string& body, const std::string& code) {
    const json j = json::parse(body);
    CHECK(j["code"] == code);
    CHECK(j.contains("stage"));
    CHECK(!j["message"].get<std::string>().empty());
}

} // namespace

TEST_CASE("health reports the worker pool") {
    Server s;
    const json h = s.get_json("/api/health");
    CHECK(h["status"] == "ok");
    CHECK(h["workers"] == 2);
}

TEST_CASE("a job submitted over HTTP runs to completion and serves its images") {
    Server s;
    const Layout layout = two_object_layout();
    const std::string id = json::parse(s.post("/api/jobs", save_layout(layout), 201))["id"];
    const json done = s.poll(id);
    REQUIRE(done["state"] == "done");
    CHECK(done["objects"].size() == 2);
    CHECK(done["objects"][0]["done"] == true);
    CHECK(done["cc"]["step"] == done["cc"]["total_steps"]);
    CHECK(done["parent"].is_null());

    auto scene = s.client->Get(done["artifacts"]["scene"].get<std::string>());
    REQUIRE(scene);
    CHECK(scene->status == 200);
    CHECK(scene->get_header_value("Content-Type") == "image/png");
    CHECK(scene->body.substr(1, 3) == "PNG");
    auto cat = s.client->Get(done["artifacts"]["objects"]["cat"].get<std::string>());
    REQUIRE(cat);
    CHECK(cat->status == 200);

    // Regenerate one object with a new seed: a new job whose parent is the first.
    const std::string regen = json::parse(s.post("/api/jobs/" + id + "/objects/lamp/regenerate", R"({"seed": 77})", 201))["id"];
    CHECK(regen != id);
    const json second = s.poll(regen);
    REQUIRE(second["state"] == "done");
    CHECK(second["parent"] == id);
    auto cat2 = s.client->Get("/api/jobs/" + regen + "/objects/cat/image");
    REQUIRE(cat2);
    CHECK(cat2->body == cat->body);

    // A wrapped request with config overrides.
    const json wrapped = {{"layout", json::parse(save_layout(layout))}, {"config", {{"cc", {{"num_steps", 5}}}}}};
    const std::string third = json::parse(s.post("/api/jobs", wrapped.dump(), 201))["id"];
    const json t = s.poll(third);
    CHECK(t["state"] == "done");
    CHECK(t["cc"]["total_steps"] == plan_timesteps(5, 1000, 800).steps.size());
}

TEST_CASE("request errors carry a code, a stage and a message") {
    Server s;
    check_error_body(s.post("/api/jobs", "{not json", 400), "ParseError");
    Layout bad = two_object_layout();
    bad.objects[1].id = "cat";
    check_error_body(s.post("/api/jobs", save_layout(bad), 400), "ValidationError");
    json doc = json::parse(save_layout(two_object_layout()));
    doc["objects"][0]["mask"] = "/etc/passwd";
    check_error_body(s.post("/api/jobs", doc.dump(), 400), "ValidationError");
    const json wrapped = {{"layout", json::parse(save_layout(two_object_layout()))}, {"config", {{"sog", {{"nope", 1}}}}}};
    check_error_body(s.post("/api/jobs", wrapped.dump(), 400), "ValidationError");

    auto missing = s.client->Get("/api/jobs/job-999999");
    REQUIRE(missing);
    CHECK(missing->status == 404);
    check_error_body(missing->body, "NotFound");
    check_error_body(s.post("/api/jobs/job-999999/objects/cat/regenerate", "", 404), "NotFound");

    const std::string id = json::parse(s.post("/api/jobs", save_layout(two_object_layout()), 201))["id"];
    REQUIRE(s.poll(id)["state"] == "done");
    auto ghost = s.client->Get("/api/jobs/" + id + "/objects/ghost/image");
    REQUIRE(ghost);
    CHECK(ghost->status == 404);
    check_error_body(s.post("/api/jobs/" + id + "/objects/ghost/regenerate", "", 404), "NotFound");
    check_error_body(s.post("/api/jobs/" + id + "/objects/cat/regenerate", R"({"seed": -3})", 400), "ValidationError");
}

TEST_CASE("a failed job reports its error and refuses follow-up requests") {
    Server s;
    Layout layout = two_object_layout();
    layout.objects[0].prompt = bright_prompt();
    const json wrapped = {{"layout", json::parse(save_layout(layout))},
                          {"config", {{"segmentation", {{"allow_fallback", false}}}, {"sog", {{"guidance_scale", -2.0}}}}}};
    const std::string id = json::parse(s.post("/api/jobs", wrapped.dump(), 201))["id"];
    const json j = s.poll(id);
    REQUIRE(j["state"] == "failed");
    CHECK(j["error"]["code"] == "SegmenterFailure");
    CHECK(j["error"]["stage"] == "segmentation:cat");

    auto image = s.client->Get("/api/jobs/" + id + "/image");
    REQUIRE(image);
    CHECK(image->status == 409);
    check_error_body(image->body, "InvalidState");
    check_error_body(s.post("/api/jobs/" + id + "/objects/lamp/regenerate", "", 409), "InvalidState");
}

TEST_CASE("the manager runs queued jobs concurrently and waits on them") {
    TempDir tmp("lg-manager");
    EngineConfig cfg = Server::fast();
    cfg.workers = 3;
    JobManager jobs(cfg, tmp.path());
    CHECK(jobs.workers() == 3);
    std::vector<std::string> ids;
    for (int i = 0; i < 4; ++i) {
        Layout l = two_object_layout();
        l.objects[0].seed = static_cast<std::uint64_t>(100 + i);
        ids.push_back(jobs.submit(l, json{{"cc", {{"num_steps", 5}}}}));
    }
    CHECK(std::set<std::string>(ids.begin(), ids.end()).size() == 4);
    for (const auto& id : ids) {
        const JobRecord r = jobs.wait(id);
        CHECK(r.state == JobState::Done);
        CHECK(std::filesystem::exists(JobDir{r.dir}.scene_image()));
    }
    CHECK(!jobs.get("job-nope").has_value());
    CHECK_THROWS_AS(jobs.regenerate("job-nope", "cat", std::nullopt), Error);
    CHECK(job_state_name(JobState::RunningSog) == "running:sog");
}
