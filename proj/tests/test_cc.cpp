#include "doctest.h"
#include "support.hpp"

#include "layoutgen/cc.hpp"
#include "layoutgen/error.hpp"

#include <mutex>
#include <stdexcept>

using namespace layoutgen;
using namespace testing;

namespace {

/// Forwards to another denoiser and keeps every x_t it sees.
class RecordingDenoiser final : public Denoiser {
  public:
    explicit RecordingDenoiser(std::shared_ptr<const Denoiser> inner) : inner_(std::move(inner)) {}
    [[nodiscard]] Latent predict_noise(const DenoiseRequest& r) const override {
        {
            std::lock_guard lock(mutex_);
            inputs.push_back(r.x_t);
            conditioned.push_back(r.inpaint != nullptr);
        }
        return inner_->predict_noise(r);
    }
    [[nodiscard]] std::string id() const override { return "recording"; }
    mutable std::vector<Latent> inputs;
    mutable std::vector<bool> conditioned;

  private:
    std::shared_ptr<const Denoiser> inner_;
    mutable std::mutex mutex_;
};

class ThrowingDenoiser final : public Denoiser {
  public:
    [[nodiscard]] Latent predict_noise(const DenoiseRequest&) const override { throw std::runtime_error("oom"); }
    [[nodiscard]] std::string id() const override { return "throwing"; }
};

struct Fixture {
    Schedule schedule = make_schedule(ScheduleParams{});
    Layout layout = two_object_layout();
    ToySetup toy = toy_setup(layout, schedule);
    std::vector<ObjectResult> objects;

    Fixture() {
        SogConfig sog;
        sog.guidance_scale = 1.0;
        for (const auto& o : layout.objects) objects.push_back(generate_object(o, sog, schedule, toy.backends));
    }
};

CcConfig unit_cc() {
    CcConfig cfg;
    cfg.guidance_scale = 1.0;
    return cfg;
}

} // namespace

TEST_CASE("the initial latent anchors known pixels and fills the rest with noise") {
    const Schedule s = make_schedule(ScheduleParams{});
    std::mt19937_64 rng(3);
    const Latent known = gaussian_latent(3, 5, 6, rng);
    const Latent eps1 = gaussian_latent(3, 5, 6, rng);
    const Latent eps2 = gaussian_latent(3, 5, 6, rng);
    const BinaryMask inpaint = random_mask(rng, 5, 6);
    for (int t : {1, 100, 800, 1000}) {
        const Latent x = init_inpaint_latent(known, inpaint, t, s, eps1, eps2);
        const double a = s.alpha_bar(t);
        for (int c = 0; c < 3; ++c) {
            for (int y = 0; y < 5; ++y) {
                for (int xx = 0; xx < 6; ++xx) {
                    const double expect = inpaint.at(y, xx)
                                              ? eps2.at(c, y, xx)
                                              : std::sqrt(a) * known.at(c, y, xx) + std::sqrt(1 - a) * eps1.at(c, y, xx);
                    REQUIRE(x.at(c, y, xx) == doctest::Approx(expect).epsilon(1e-14));
                }
            }
        }
    }
}

TEST_CASE("with anchoring to the end the objects survive bit for bit") {
    Fixture f;
    CcConfig cfg;
    cfg.t_min = 0;
    const SceneResult scene = compose_scene(f.objects, f.layout, cfg, f.schedule, f.toy.backends);
    CHECK(scene.anchored_timesteps.size() == 40);
    for (const auto& o : f.objects) {
        for (int y = 0; y < 16; ++y) {
            for (int x = 0; x < 16; ++x) {
                if (!o.refined_mask.at(y, x)) continue;
                for (int c = 0; c < 3; ++c) REQUIRE(scene.image.at(y, x, c) == o.image.at(y, x, c));
            }
        }
    }
}

TEST_CASE("anchoring stops at t_min and every step calls the denoiser twice") {
    Fixture f;
    const SceneResult scene = compose_scene(f.objects, f.layout, unit_cc(), f.schedule, f.toy.backends);
    std::vector<int> expected;
    for (int t : plan_timesteps(40, 1000, 800).steps) {
        if (t > 100) expected.push_back(t);
    }
    CHECK(expected.size() == 35);
    CHECK(scene.anchored_timesteps == expected);
    CHECK(scene.denoiser_calls == 80);
    CHECK(scene.per_object_bboxes == std::vector<BBox>{bbox(f.layout.objects[0].mask), bbox(f.layout.objects[1].mask)});
    CHECK(scene.object_seeds == std::vector<std::uint64_t>{11, 22});
}

TEST_CASE("grouped attention paints each region with its own prompt") {
    Fixture f;
    const SceneResult scene = compose_scene(f.objects, f.layout, unit_cc(), f.schedule, f.toy.backends);
    const auto global = toy_prompt_color(f.layout.global_prompt);
    for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 16; ++x) {
            std::array<float, 3> expect = global;
            for (std::size_t i = 0; i < f.objects.size(); ++i) {
                if (f.objects[i].refined_mask.at(y, x)) expect = toy_prompt_color(f.layout.objects[i].prompt);
            }
            for (int c = 0; c < 3; ++c) REQUIRE(std::abs(scene.image.at(y, x, c) - expect[static_cast<std::size_t>(c)]) < 1e-5);
        }
    }
}

TEST_CASE("the scene seed alone decides the scene noise") {
    Fixture f;
    auto run = [&](std::uint64_t seed) {
        auto rec = std::make_shared<RecordingDenoiser>(f.toy.backends.inpaint_denoiser);
        BackendSet b = f.toy.backends;
        b.inpaint_denoiser = rec;
        CcConfig cfg;
        cfg.seed = seed;
        const SceneResult scene = compose_scene(f.objects, f.layout, cfg, f.schedule, b);
        CHECK(scene.scene_seed == seed);
        CHECK(std::all_of(rec->conditioned.begin(), rec->conditioned.end(), [](bool c) { return c; }));
        return std::make_pair(rec->inputs, scene.latent);
    };
    const auto a = run(5);
    const auto b = run(5);
    const auto c = run(6);
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
    CHECK(a.first.front() != c.first.front());
}

TEST_CASE("composition errors") {
    Fixture f;
    CcConfig cfg;
    cfg.t_min = 800;
    CHECK_THROWS_AS(compose_scene(f.objects, f.layout, cfg, f.schedule, f.toy.backends), Error);
    const std::vector<ObjectResult> one{f.objects[0]};
    try {
        (void)compose_scene(one, f.layout, CcConfig{}, f.schedule, f.toy.backends);
        FAIL("missing object accepted");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::ValidationError);
    }
    BackendSet broken = f.toy.backends;
    broken.inpaint_denoiser = std::make_shared<ThrowingDenoiser>();
    try {
        (void)compose_scene(f.objects, f.layout, CcConfig{}, f.schedule, broken);
        FAIL("backend failure swallowed");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::BackendFailure);
        CHECK(e.stage() == "cc");
    }
}
