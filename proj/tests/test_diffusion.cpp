#include "doctest.h"
#include "support.hpp"

#include "layoutgen/diffusion.hpp"
#include "layoutgen/error.hpp"
#include "layoutgen/toy.hpp"

using namespace layoutgen;
using namespace testing;

namespace {

// Independent cumulative product, accumulated in long double.
long double alpha_bar_ref(int t, int T = 1000, long double b0 = 0.00085L, long double b1 = 0.012L) {
    long double acc = 1.0L;
    for (int i = 1; i <= t; ++i) acc *= 1.0L - (b0 + (b1 - b0) * (i - 1) / (T - 1));
    return acc;
}

Latent random_latent(std::mt19937_64& rng, int c = 4, int h = 6, int w = 5) { return gaussian_latent(c, h, w, rng); }

} // namespace

TEST_CASE("schedule tables follow the running product") {
    const Schedule s = make_schedule(ScheduleParams{});
    CHECK(s.steps() == 1000);
    CHECK(s.beta(1) == doctest::Approx(0.00085));
    CHECK(s.beta(1000) == doctest::Approx(0.012));
    CHECK(s.alpha_bar(0) == 1.0);
    for (int t : {1, 2, 10, 100, 500, 800, 999, 1000}) {
        CHECK(std::abs(s.alpha_bar(t) - static_cast<double>(alpha_bar_ref(t))) < 1e-12);
    }
    for (int t = 1; t <= 1000; ++t) REQUIRE(s.alpha_bar(t) < s.alpha_bar(t - 1));
    CHECK_THROWS_AS(make_schedule(0, 0.1, 0.2), Error);
    CHECK_THROWS_AS(make_schedule(10, 0.3, 0.2), Error);
    CHECK_THROWS_AS((void)s.alpha_bar(1001), Error);
}

TEST_CASE("predicting x0 inverts forward noising") {
    const Schedule s = make_schedule(ScheduleParams{});
    std::mt19937_64 rng(42);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const int t = 1 + static_cast<int>(rng() % 1000);
        const Latent x0 = random_latent(rng);
        const Latent eps = random_latent(rng);
        const Latent back = predict_x0(forward_noise(x0, t, eps, s), eps, t, s);
        for (std::size_t i = 0; i < x0.size(); ++i) {
            worst = std::max(worst, std::abs(back.data()[i] - x0.data()[i]) / std::max(1.0, std::abs(x0.data()[i])));
        }
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("a DDIM step with the true noise lands on the forward path") {
    const Schedule s = make_schedule(ScheduleParams{});
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const int t = 2 + static_cast<int>(rng() % 999);
        const int t_prev = static_cast<int>(rng() % t);
        const Latent x0 = random_latent(rng);
        const Latent eps = random_latent(rng);
        const long double a = alpha_bar_ref(t);
        const long double ap = alpha_bar_ref(t_prev);
        Latent x_t = x0;
        for (std::size_t i = 0; i < x_t.size(); ++i) {
            x_t.data()[i] = static_cast<double>(std::sqrt(a) * x0.data()[i] + std::sqrt(1 - a) * eps.data()[i]);
        }
        const Latent stepped = ddim_step(x_t, eps, t, t_prev, s);
        for (std::size_t i = 0; i < x0.size(); ++i) {
            const long double expect = std::sqrt(ap) * x0.data()[i] + std::sqrt(1 - ap) * eps.data()[i];
            REQUIRE(std::abs(stepped.data()[i] - static_cast<double>(expect)) < 1e-8);
        }
    }
}

TEST_CASE("a full DDIM chain under the analytic denoiser reaches its target") {
    const Schedule s = make_schedule(ScheduleParams{});
    std::mt19937_64 rng(3);
    const Latent target = random_latent(rng);
    Latent x = random_latent(rng);
    const TimestepPlan plan = plan_timesteps(50, 1000, 1000);
    for (std::size_t i = 0; i < plan.steps.size(); ++i) {
        const int t = plan.steps[i];
        const int t_prev = i + 1 < plan.steps.size() ? plan.steps[i + 1] : 0;
        x = ddim_step(x, toy_noise_for_target(x, t, target, s), t, t_prev, s);
    }
    CHECK(max_abs_diff(x.data(), target.data()) < 1e-5);
}

TEST_CASE("timestep plans") {
    const TimestepPlan p = plan_timesteps(40, 1000, 800);
    REQUIRE(p.steps.size() == 40);
    CHECK(p.steps.front() == 800);
    CHECK(p.steps.back() == 20);
    for (std::size_t i = 1; i < p.steps.size(); ++i) CHECK(p.steps[i - 1] - p.steps[i] == 20);

    // On-grid starts equal the truncated nominal grid T, T-T/n, ...
    for (int n : {10, 20, 25, 50, 100}) {
        const int spacing = 1000 / n;
        for (int k = 0; k < n; ++k) {
            const int t_start = 1000 - k * spacing;
            std::vector<int> expected;
            for (int t = 1000; t >= 1; t -= spacing) {
                if (t <= t_start) expected.push_back(t);
            }
            const int requested = static_cast<int>(std::lround(static_cast<double>(n) * t_start / 1000.0));
            if (requested < 1) continue;
            const TimestepPlan q = plan_timesteps(requested, 1000, t_start);
            if (static_cast<int>(std::lround(static_cast<double>(requested) * 1000 / t_start)) != n) continue;
            CHECK(q.steps == expected);
        }
    }

    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 300; ++trial) {
        const int T = 1 + static_cast<int>(rng() % 1000);
        const int t_start = 1 + static_cast<int>(rng() % T);
        const int n = 1 + static_cast<int>(rng() % 100);
        const TimestepPlan q = plan_timesteps(n, T, t_start);
        REQUIRE(!q.steps.empty());
        CHECK(q.steps.front() == t_start);
        CHECK(q.steps.back() >= 1);
        for (std::size_t i = 1; i < q.steps.size(); ++i) REQUIRE(q.steps[i] < q.steps[i - 1]);
    }
    CHECK_THROWS_AS(plan_timesteps(40, 1000, 1001), Error);
    CHECK_THROWS_AS(plan_timesteps(0, 1000, 800), Error);
}

TEST_CASE("flat latents, starting latents and background blending") {
    const Schedule s = make_schedule(ScheduleParams{});
    std::mt19937_64 rng(5);
    const Latent flat = random_latent(rng);
    const Latent eps = random_latent(rng);
    CHECK(flat_latent(flat, 0, eps, s) == flat);

    const BinaryMask mask = random_mask(rng, 6, 5);
    const Latent x_flat = flat_latent(flat, 800, eps, s);
    const Latent noise = random_latent(rng);
    const Latent start = compose_starting_latent(x_flat, mask, noise);
    const Latent x = random_latent(rng);
    const Latent blended = blend_background(x, x_flat, mask);
    for (int c = 0; c < 4; ++c) {
        for (int y = 0; y < 6; ++y) {
            for (int xx = 0; xx < 5; ++xx) {
                const double m = mask.at(y, xx);
                REQUIRE(start.at(c, y, xx) == (1 - m) * x_flat.at(c, y, xx) + m * noise.at(c, y, xx));
                REQUIRE(blended.at(c, y, xx) == m * x.at(c, y, xx) + (1 - m) * x_flat.at(c, y, xx));
            }
        }
    }
    CHECK_THROWS_AS(blend_background(x, x_flat, BinaryMask(5, 6)), Error);
    CHECK_THROWS_AS(compose_starting_latent(x_flat, mask, Latent(3, 6, 5)), Error);
}

TEST_CASE("guidance interpolates and extrapolates linearly") {
    std::mt19937_64 rng(8);
    const Latent u = random_latent(rng);
    const Latent c = random_latent(rng);
    CHECK(guided_noise(u, c, 0.0) == u);
    CHECK(max_abs_diff(guided_noise(u, c, 1.0).data(), c.data()) < 1e-15);
    const Latent g = guided_noise(u, c, 7.5);
    for (std::size_t i = 0; i < u.size(); ++i) {
        REQUIRE(g.data()[i] == doctest::Approx(u.data()[i] + 7.5 * (c.data()[i] - u.data()[i])));
    }
}

TEST_CASE("invalid timesteps are rejected") {
    const Schedule s = make_schedule(ScheduleParams{});
    const Latent x(1, 1, 1);
    CHECK_THROWS_AS(ddim_step(x, x, 10, 10, s), Error);
    CHECK_THROWS_AS(ddim_step(x, x, 10, -1, s), Error);
    CHECK_THROWS_AS(ddim_step(x, x, 1001, 5, s), Error);
    try {
        (void)ddim_step(x, x, 5, 9, s);
    } catch (const Error& e) {
        CHECK(e.code() == Errc::InvalidTimesteps);
    }
}
