#include "layoutgen/diffusion.hpp"

#include "layoutgen/error.hpp"
#include "layoutgen/layout.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace layoutgen {

Schedule::Schedule(std::vector<double> beta) : beta_(std::move(beta)) {
    if (beta_.empty()) {
        throw Error(Errc::InvalidRange, "schedule needs at least one step");
    }
    alpha_bar_.reserve(beta_.size());
    double running = 1.0;
    for (double b : beta_) {
        if (!(b > 0.0 && b < 1.0)) {
            throw Error(Errc::InvalidRange, "beta values must lie in (0, 1)");
        }
        running *= 1.0 - b;
        alpha_bar_.push_back(running);
    }
}

double Schedule::alpha_bar(int t) const {
    if (t == 0) return 1.0;
    if (t < 0 || t > steps()) {
        throw Error(Errc::InvalidTimesteps, "timestep " + std::to_string(t) + " outside [0, " +
                                                std::to_string(steps()) + "]");
    }
    return alpha_bar_[static_cast<std::size_t>(t - 1)];
}

Schedule make_schedule(int steps, double beta_start, double beta_end) {
    if (steps < 1 || !(beta_start > 0.0) || beta_start > beta_end || !(beta_end < 1.0)) {
        throw Error(Errc::InvalidRange, "schedule requires T >= 1 and 0 < beta_start <= beta_end < 1");
    }
    std::vector<double> beta(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
        beta[static_cast<std::size_t>(i)] = beta_start + frac * (beta_end - beta_start);
    }
    return Schedule(std::move(beta));
}

Latent::Latent(int channels, int height, int width, double fill)
    : channels_(channels), height_(height), width_(width) {
    if (channels <= 0 || height <= 0 || width <= 0) {
        throw Error(Errc::InvalidRange, "latent dimensions must be positive");
    }
    data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
}

bool Latent::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Latent gaussian_latent(int channels, int height, int width, std::mt19937_64& rng) {
    Latent out(channels, height, width);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : out.data()) v = normal(rng);
    return out;
}

namespace {

void require_same_shape(const Latent& a, const Latent& b, const char* what) {
    if (!a.same_shape(b)) {
        throw Error(Errc::ShapeMismatch, std::string(what) + ": latent shapes differ");
    }
}

void require_mask_fits(const Latent& x, const BinaryMask& mask, const char* what) {
    if (mask.height() != x.height() || mask.width() != x.width()) {
        throw Error(Errc::ShapeMismatch, std::string(what) + ": mask is " + std::to_string(mask.height()) +
                                             "x" + std::to_string(mask.width()) + ", latent is " +
                                             std::to_string(x.height()) + "x" + std::to_string(x.width()));
    }
}

/// a·x + b·y elementwise.
Latent axpby(double a, const Latent& x, double b, const Latent& y) {
    Latent out = x;
    auto& o = out.data();
    const auto& yd = y.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a * o[i] + b * yd[i];
    return out;
}

/// Per pixel: take `on` where mask is 1, `off` where it is 0, for every channel.
Latent select(const BinaryMask& mask, const Latent& on, const Latent& off) {
    Latent out = off;
    const auto m = mask.data();
    const std::size_t plane = static_cast<std::size_t>(out.plane());
    for (int c = 0; c < out.channels(); ++c) {
        const std::size_t base = static_cast<std::size_t>(c) * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            if (m[p]) out.data()[base + p] = on.data()[base + p];
        }
    }
    return out;
}

} // namespace

Latent forward_noise(const Latent& x0, int t, const Latent& eps, const Schedule& s) {
    require_same_shape(x0, eps, "forward_noise");
    const double a = s.alpha_bar(t);
    return axpby(std::sqrt(a), x0, std::sqrt(1.0 - a), eps);
}

Latent predict_x0(const Latent& x_t, const Latent& eps_pred, int t, const Schedule& s) {
    require_same_shape(x_t, eps_pred, "predict_x0");
    const double a = s.alpha_bar(t);
    const double inv = 1.0 / std::sqrt(a);
    return axpby(inv, x_t, -std::sqrt(1.0 - a) * inv, eps_pred);
}

Latent ddim_step(const Latent& x_t, const Latent& eps_pred, int t, int t_prev, const Schedule& s) {
    if (!(t_prev < t) || t_prev < 0 || t > s.steps()) {
        throw Error(Errc::InvalidTimesteps, "ddim_step needs 0 <= t_prev < t <= T, got t=" +
                                                std::to_string(t) + " t_prev=" + std::to_string(t_prev));
    }
    const Latent x0 = predict_x0(x_t, eps_pred, t, s);
    if (t_prev == 0) return x0;
    const double a_prev = s.alpha_bar(t_prev);
    return axpby(std::sqrt(a_prev), x0, std::sqrt(1.0 - a_prev), eps_pred);
}

Latent flat_latent(const Latent& flat_code, int t, const Latent& eps, const Schedule& s) {
    return forward_noise(flat_code, t, eps, s);
}

Latent compose_starting_latent(const Latent& x_flat, const BinaryMask& mask, const Latent& eps) {
    require_same_shape(x_flat, eps, "compose_starting_latent");
    require_mask_fits(x_flat, mask, "compose_starting_latent");
    return select(mask, eps, x_flat);
}

Latent blend_background(const Latent& x_t, const Latent& x_flat_t, const BinaryMask& mask) {
    require_same_shape(x_t, x_flat_t, "blend_background");
    require_mask_fits(x_t, mask, "blend_background");
    return select(mask, x_t, x_flat_t);
}

TimestepPlan plan_timesteps(int num_steps, int total_steps, int t_start) {
    if (num_steps < 1 || total_steps < 1 || t_start < 1 || t_start > total_steps) {
        throw Error(Errc::InvalidRange, "plan_timesteps needs num_steps >= 1 and 1 <= t_start <= T");
    }
    const long nominal = std::max(1L, std::lround(static_cast<double>(num_steps) * total_steps / t_start));
    const double spacing = static_cast<double>(total_steps) / static_cast<double>(nominal);

    TimestepPlan plan;
    plan.t_start = t_start;
    // The nominal grid is T, T − spacing, ...; anchoring it at t_start
    // coincides with truncating it whenever t_start lies on the grid.
    for (long k = 0;; ++k) {
        const long t = std::lround(t_start - static_cast<double>(k) * spacing);
        if (t < 1) break;
        if (plan.steps.empty() || t < plan.steps.back()) plan.steps.push_back(static_cast<int>(t));
    }
    return plan;
}

Latent guided_noise(const Latent& eps_uncond, const Latent& eps_cond, double scale) {
    require_same_shape(eps_uncond, eps_cond, "guided_noise");
    Latent out = eps_uncond;
    auto& o = out.data();
    const auto& c = eps_cond.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += scale * (c[i] - o[i]);
    return out;
}

} // namespace layoutgen
