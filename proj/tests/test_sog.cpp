#include "doctest.h"
#include "support.hpp"

#include "layoutgen/error.hpp"
#include "layoutgen/sog.hpp"

#include <stdexcept>

using namespace layoutgen;
using namespace testing;

namespace {

SogConfig unit_guidance() {
    SogConfig cfg;
    cfg.guidance_scale = 1.0;
    return cfg;
}

class ThrowingDenoiser final : public Denoiser {
  public:
    [[nodiscard]] Latent predict_noise(const DenoiseRequest&) const override {
        throw std::runtime_error("device lost");
    }
    [[nodiscard]] std::string id() const override { return "throwing"; }
};

class NanDenoiser final : public Denoiser {
  public:
    [[nodiscard]] Latent predict_noise(const DenoiseRequest& r) const override {
        Latent out(r.x_t.channels(), r.x_t.height(), r.x_t.width());
        out.data()[0] = std::nan("");
        return out;
    }
    [[nodiscard]] std::string id() const override { return "nan"; }
};

} // namespace

TEST_CASE("outside the mask the result is the flat background, inside it is the prompt's target") {
    const Schedule schedule = make_schedule(ScheduleParams{});
    const Layout layout = two_object_layout();
    const ToySetup toy = toy_setup(layout, schedule);
    const Latent flat = encode_flat(*toy.backends.latent_codec, 16, 16, -1.0f);

    for (const auto& spec : layout.objects) {
        const ObjectResult r = generate_object(spec, unit_guidance(), schedule, toy.backends);
        const Latent& target = toy.world->target(spec.prompt);
        CHECK(r.object_id == spec.id);
        CHECK(r.bbox == bbox(spec.mask));
        CHECK(r.refined_mask == spec.mask);
        double inside = 0.0;
        for (int c = 0; c < flat.channels(); ++c) {
            for (int y = 0; y < 16; ++y) {
                for (int x = 0; x < 16; ++x) {
                    if (spec.mask.at(y, x)) {
                        inside = std::max(inside, std::abs(r.latent_x0.at(c, y, x) - target.at(c, y, x)));
                    } else {
                        REQUIRE(r.latent_x0.at(c, y, x) == flat.at(c, y, x));
                    }
                }
            }
        }
        CHECK(inside < 1e-5);
        CHECK(r.image == toy.backends.latent_codec->decode(r.latent_x0));
    }
}

TEST_CASE("guidance extrapolates from the unconditional target") {
    const Schedule schedule = make_schedule(ScheduleParams{});
    const Layout layout = two_object_layout();
    const ToySetup toy = toy_setup(layout, schedule);
    for (double g : {0.0, 2.0, 7.5}) {
        SogConfig cfg;
        cfg.guidance_scale = g;
        const ObjectSpec& spec = layout.objects[0];
        const ObjectResult r = generate_object(spec, cfg, schedule, toy.backends);
        const Latent& target = toy.world->target(spec.prompt);
        const Latent& bg = toy.world->background_target();
        for (int c = 0; c < target.channels(); ++c) {
            for (int y = 0; y < 16; ++y) {
                for (int x = 0; x < 16; ++x) {
                    if (!spec.mask.at(y, x)) continue;
                    const double expect = bg.at(c, y, x) + g * (target.at(c, y, x) - bg.at(c, y, x));
                    REQUIRE(std::abs(r.latent_x0.at(c, y, x) - expect) < 1e-5 * std::max(1.0, g));
                }
            }
        }
    }
}

TEST_CASE("a custom flat colour fills the background") {
    const Schedule schedule = make_schedule(ScheduleParams{});
    const Layout layout = two_object_layout();
    const ToySetup toy = toy_setup(layout, schedule);
    SogConfig cfg = unit_guidance();
    cfg.flat_color = 0.5f;
    const ObjectResult r = generate_object(layout.objects[1], cfg, schedule, toy.backends);
    for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 16; ++x) {
            if (layout.objects[1].mask.at(y, x)) continue;
            for (int c = 0; c < 3; ++c) REQUIRE(r.image.at(y, x, c) == 0.5f);
        }
    }
}

TEST_CASE("objects are deterministic and independent of each other") {
    const Schedule schedule = make_schedule(ScheduleParams{});
    Layout layout = two_object_layout();
    const ToySetup toy = toy_setup(layout, schedule);

    std::vector<Latent> trace_a, trace_b;
    SogHooks hooks_a{[&](int, const Latent& x0) { trace_a.push_back(x0); }, {}};
    SogHooks hooks_b{[&](int, const Latent& x0) { trace_b.push_back(x0); }, {}};
    const ObjectResult a = generate_object(layout.objects[0], SogConfig{}, schedule, toy.backends, hooks_a);
    const ObjectResult b = generate_object(layout.objects[0], SogConfig{}, schedule, toy.backends, hooks_b);
    CHECK(a.latent_x0 == b.latent_x0);
    CHECK(trace_a == trace_b);
    CHECK(trace_a.size() == 40);

    // Another object's seed never reaches this object's noise.
    layout.objects[1].seed = 999;
    const ToySetup toy2 = toy_setup(layout, schedule);
    CHECK(generate_object(layout.objects[0], SogConfig{}, schedule, toy2.backends).latent_x0 == a.latent_x0);

    const ObjectNoise n1 = draw_object_noise(11, 3, 4, 4);
    const ObjectNoise n2 = draw_object_noise(11, 3, 4, 4);
    const ObjectNoise n3 = draw_object_noise(12, 3, 4, 4);
    CHECK(n1.foreground == n2.foreground);
    CHECK(n1.background == n2.background);
    CHECK(n1.foreground != n1.background);
    CHECK(n1.foreground != n3.foreground);
}

TEST_CASE("the step hook follows the timestep plan") {
    const Schedule schedule = make_schedule(ScheduleParams{});
    const Layout layout = two_object_layout();
    const ToySetup toy = toy_setup(layout, schedule);
    SogConfig cfg = unit_guidance();
    cfg.num_steps = 10;
    cfg.t_start = 500;
    std::vector<int> seen;
    (void)generate_object(layout.objects[0], cfg, schedule, toy.backends, {[&](int t, const Latent&) { seen.push_back(t); }, {}});
    CHECK(seen == plan_timesteps(10, 1000, 500).steps);
}

TEST_CASE("errors carry the object's stage") {
    const Schedule schedule = make_schedule(ScheduleParams{});
    Layout layout = two_object_layout();
    ToySetup toy = toy_setup(layout, schedule);

    ObjectSpec empty = layout.objects[0];
    empty.mask = BinaryMask(16, 16);
    try {
        (void)generate_object(empty, SogConfig{}, schedule, toy.backends);
        FAIL("empty mask accepted");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::EmptyMask);
        CHECK(e.stage() == "sog:cat");
    }

    for (auto denoiser : {std::shared_ptr<const Denoiser>(std::make_shared<ThrowingDenoiser>()),
                          std::shared_ptr<const Denoiser>(std::make_shared<NanDenoiser>())}) {
        BackendSet broken = toy.backends;
        broken.denoiser = denoiser;
        try {
            (void)generate_object(layout.objects[1], SogConfig{}, schedule, broken);
            FAIL("backend failure swallowed");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::BackendFailure);
            CHECK(e.stage() == "sog:lamp");
        }
    }

    ObjectSpec stranger = layout.objects[0];
    stranger.prompt = "a prompt the toy world never registered";
    CHECK_NOTHROW((void)generate_object(stranger, SogConfig{}, schedule, toy.backends));

    SogConfig bad;
    bad.t_start = 1001;
    CHECK_THROWS_AS(generate_object(layout.objects[0], bad, schedule, toy.backends), Error);
}

TEST_CASE("a downscaling codec works on the latent grid") {
    const Schedule schedule = make_schedule(ScheduleParams{});
    const Layout layout = two_object_layout();
    const ToySetup toy = toy_setup(layout, schedule, 2);
    const ObjectSpec& spec = layout.objects[0];
    const ObjectResult r = generate_object(spec, unit_guidance(), schedule, toy.backends);
    CHECK(r.latent_x0.channels() == 12);
    CHECK(r.latent_x0.height() == 8);
    CHECK(r.image.height() == 16);
    const auto color = toy_prompt_color(spec.prompt);
    for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 16; ++x) {
            for (int c = 0; c < 3; ++c) {
                const float expect = spec.mask.at(y, x) ? color[static_cast<std::size_t>(c)] : -1.0f;
                REQUIRE(std::abs(r.image.at(y, x, c) - expect) < 1e-5);
            }
        }
    }
}
