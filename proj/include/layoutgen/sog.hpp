#pragma once

#include "layoutgen/backends.hpp"
#include "layoutgen/diffusion.hpp"
#include "layoutgen/layout.hpp"
#include "layoutgen/paca.hpp"

#include <functional>
#include <string>

namespace layoutgen {

// Single-object generation: one object per run, confined to its mask on a
// flat background.

struct SogConfig {
    int t_start = 800;
    int num_steps = 40;
    double guidance_scale = 7.5;
    PacaConfig paca;
    bool paca_enabled = true;
    /// Flat background colour in [-1,1]; -1 is black.
    float flat_color = -1.0f;
};

struct ObjectResult {
    std::string object_id;
    Image image;
    Latent latent_x0;
    BinaryMask original_mask;
    BinaryMask refined_mask;
    BBox bbox;
};

struct SogHooks {
    /// Called after every step with the step's timestep and its clean prediction.
    std::function<void(int t, const Latent& x0_pred)> on_step;
    /// Forwarded to the PACA processor.
    ScoreObserver on_scores;
};

/// Codec encoding of a constant image of `color` at canvas size.
[[nodiscard]] Latent encode_flat(const LatentCodec& codec, int height, int width, float color);

/// Per-object noise, drawn from a generator seeded with the object seed in
/// this order: foreground noise, then flat-background noise.
struct ObjectNoise {
    Latent foreground;
    Latent background;
};
[[nodiscard]] ObjectNoise draw_object_noise(std::uint64_t seed, int channels, int height, int width);

/// Throws EmptyMask; backend errors surface as BackendFailure with stage
/// "sog:<object id>". `flat_code` may be passed to skip re-encoding.
[[nodiscard]] ObjectResult generate_object(const ObjectSpec& spec, const SogConfig& cfg,
                                           const Schedule& schedule, const BackendSet& backends,
                                           const SogHooks& hooks = {},
                                           const Latent* flat_code = nullptr);

} // namespace layoutgen
