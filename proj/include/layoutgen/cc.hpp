#pragma once

#include "layoutgen/backends.hpp"
#include "layoutgen/diffusion.hpp"
#include "layoutgen/layout.hpp"
#include "layoutgen/paca.hpp"
#include "layoutgen/segmentation.hpp"
#include "layoutgen/sog.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace layoutgen {

// Comprehensive composition: inpaint a background around the composed
// objects with region-grouped cross-attention.

struct CcConfig {
    int t_start = 800;
    int t_min = 100;
    int num_steps = 40;
    double guidance_scale = 7.5;
    std::string regca_separator = ", ";
    bool regca_enabled = true;
    /// 0 applies grouping to every cross-attention layer.
    int regca_max_attention_resolution = 0;
    /// Scene-level seed, independent of the object seeds.
    std::uint64_t seed = 0;
};

struct SceneResult {
    Image image;
    Latent latent;
    std::vector<BBox> per_object_bboxes;
    std::vector<std::uint64_t> object_seeds;
    std::uint64_t scene_seed = 0;
    /// Timesteps whose step re-anchored the known region, in sampling order.
    std::vector<int> anchored_timesteps;
    std::size_t denoiser_calls = 0;
};

/// Known pixels (inpaint_mask 0) get sqrt(a)·known_code + sqrt(1 − a)·eps1
/// at a = alpha_bar(t_start); pixels to inpaint get eps2.
[[nodiscard]] Latent init_inpaint_latent(const Latent& known_code, const BinaryMask& inpaint_mask,
                                         int t_start, const Schedule& s, const Latent& eps1,
                                         const Latent& eps2);

struct CcHooks {
    std::function<void(int t, const Latent& x0_pred)> on_step;
};

/// `results` carry refined masks. Backend errors surface as BackendFailure
/// with stage "cc".
[[nodiscard]] SceneResult compose_scene(std::span<const ObjectResult> results, const Layout& layout,
                                        const CcConfig& cfg, const Schedule& schedule,
                                        const BackendSet& backends, const CcHooks& hooks = {});

} // namespace layoutgen
