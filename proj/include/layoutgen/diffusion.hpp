#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace layoutgen {

class BinaryMask;

/// Noise schedule. Timesteps are 1-based; alpha_bar(0) is defined as 1.
class Schedule {
  public:
    Schedule(std::vector<double> beta);

    [[nodiscard]] int steps() const noexcept { return static_cast<int>(beta_.size()); }
    [[nodiscard]] double beta(int t) const { return beta_.at(t - 1); }
    [[nodiscard]] double alpha_bar(int t) const;
    [[nodiscard]] const std::vector<double>& betas() const noexcept { return beta_; }

  private:
    std::vector<double> beta_;
    std::vector<double> alpha_bar_;
};

struct ScheduleParams {
    int steps = 1000;
    double beta_start = 0.00085;
    double beta_end = 0.012;
};

/// Linear beta interpolation. Throws InvalidRange.
[[nodiscard]] Schedule make_schedule(int steps, double beta_start, double beta_end);
[[nodiscard]] inline Schedule make_schedule(const ScheduleParams& p) {
    return make_schedule(p.steps, p.beta_start, p.beta_end);
}

/// C×H×W real tensor, channel-major.
class Latent {
  public:
    Latent() = default;
    Latent(int channels, int height, int width, double fill = 0.0);

    [[nodiscard]] int channels() const noexcept { return channels_; }
    [[nodiscard]] int height() const noexcept { return height_; }
    [[nodiscard]] int width() const noexcept { return width_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] int plane() const noexcept { return height_ * width_; }

    double& at(int c, int y, int x) { return data_[index(c, y, x)]; }
    [[nodiscard]] double at(int c, int y, int x) const { return data_[index(c, y, x)]; }

    [[nodiscard]] std::vector<double>& data() noexcept { return data_; }
    [[nodiscard]] const std::vector<double>& data() const noexcept { return data_; }

    [[nodiscard]] bool same_shape(const Latent& o) const noexcept {
        return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
    }
    [[nodiscard]] bool all_finite() const noexcept;

    bool operator==(const Latent&) const = default;

  private:
    [[nodiscard]] std::size_t index(int c, int y, int x) const {
        return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
    }

    int channels_ = 0;
    int height_ = 0;
    int width_ = 0;
    std::vector<double> data_;
};

/// Standard-normal latent drawn from `rng`, in index order.
[[nodiscard]] Latent gaussian_latent(int channels, int height, int width, std::mt19937_64& rng);

struct TimestepPlan {
    std::vector<int> steps; ///< strictly decreasing, steps.front() == t_start, steps.back() >= 1
    int t_start = 0;
};

/// sqrt(a_t)·x0 + sqrt(1 − a_t)·eps.
[[nodiscard]] Latent forward_noise(const Latent& x0, int t, const Latent& eps, const Schedule& s);

/// (x_t − sqrt(1 − a_t)·eps)/sqrt(a_t).
[[nodiscard]] Latent predict_x0(const Latent& x_t, const Latent& eps_pred, int t, const Schedule& s);

/// Deterministic DDIM update from t to t_prev (t_prev may be 0). Throws InvalidTimesteps.
[[nodiscard]] Latent ddim_step(const Latent& x_t, const Latent& eps_pred, int t, int t_prev,
                               const Schedule& s);

/// Forward-noised flat background code at timestep t.
[[nodiscard]] Latent flat_latent(const Latent& flat_code, int t, const Latent& eps, const Schedule& s);

/// (1 − M)·x_flat + M·eps per channel. `mask` is at latent resolution.
[[nodiscard]] Latent compose_starting_latent(const Latent& x_flat, const BinaryMask& mask,
                                             const Latent& eps);

/// M·x_t + (1 − M)·x_flat_t per channel.
[[nodiscard]] Latent blend_background(const Latent& x_t, const Latent& x_flat_t,
                                      const BinaryMask& mask);

/// Uniform plan: round(num_steps·T/t_start) nominal steps over the full
/// range, keeping those at or below t_start. Throws InvalidRange.
[[nodiscard]] TimestepPlan plan_timesteps(int num_steps, int total_steps, int t_start);

/// eps_uncond + scale·(eps_cond − eps_uncond).
[[nodiscard]] Latent guided_noise(const Latent& eps_uncond, const Latent& eps_cond, double scale);

} // namespace layoutgen
