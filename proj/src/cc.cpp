#include "layoutgen/cc.hpp"

#include "layoutgen/error.hpp"
#include "layoutgen/regca.hpp"

#include <cmath>
#include <random>

namespace layoutgen {

Latent init_inpaint_latent(const Latent& known_code, const BinaryMask& inpaint_mask, int t_start,
                           const Schedule& s, const Latent& eps1, const Latent& eps2) {
    // The known region is anchored at the starting timestep itself; the
    // inpaint mask marks where fresh noise goes.
    const Latent anchored = forward_noise(known_code, t_start, eps1, s);
    return blend_background(eps2, anchored, inpaint_mask);
}

namespace {

/// Encoded image with every pixel where `inpaint` is 1 set to 0.
Latent masked_image_code(const LatentCodec& codec, const Image& image, const BinaryMask& inpaint) {
    Image masked = image;
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
            if (inpaint.at(y, x)) {
                for (int c = 0; c < 3; ++c) masked.at(y, x, c) = 0.0f;
            }
        }
    }
    return codec.encode(masked);
}

template <typename F>
auto in_stage(F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const Error& e) {
        if (!e.stage().empty()) throw;
        throw Error(e.code(), e.what(), "cc");
    } catch (const std::exception& e) {
        throw Error(Errc::BackendFailure, e.what(), "cc");
    }
}

} // namespace

SceneResult compose_scene(std::span<const ObjectResult> results, const Layout& layout, const CcConfig& cfg,
                          const Schedule& schedule, const BackendSet& backends, const CcHooks& hooks) {
    if (!(0 <= cfg.t_min && cfg.t_min < cfg.t_start && cfg.t_start <= schedule.steps())) {
        throw Error(Errc::InvalidRange, "cc needs 0 <= t_min < t_start <= T", "cc");
    }
    if (results.size() != layout.objects.size()) {
        throw Error(Errc::ValidationError, "one object result per layout object is required", "cc");
    }
    if (!backends.inpaint_denoiser || !backends.text_encoder || !backends.latent_codec) {
        throw Error(Errc::BackendFailure, "cc needs an inpainting denoiser, a text encoder and a latent codec",
                    "cc");
    }
    const auto& codec = *backends.latent_codec;
    const auto& denoiser = *backends.inpaint_denoiser;

    const CompositeKnown composite = compose_known(results);
    const Latent known_code = in_stage([&] { return codec.encode(composite.known_image); });
    const BinaryMask inpaint = downsample_mask(composite.inpaint_mask, known_code.height(), known_code.width());
    const BinaryMask known = ~inpaint;

    // Conditioning for the anchored phase and for the final full-image phase.
    InpaintConditioning anchored_cond{known_code, inpaint};
    const BinaryMask everything(composite.inpaint_mask.height(), composite.inpaint_mask.width(), 1);
    InpaintConditioning free_cond{
        in_stage([&] { return masked_image_code(codec, composite.known_image, everything); }),
        BinaryMask(known_code.height(), known_code.width(), 1)};

    std::mt19937_64 rng(cfg.seed);
    const Latent eps1 = gaussian_latent(known_code.channels(), known_code.height(), known_code.width(), rng);
    const Latent eps2 = gaussian_latent(known_code.channels(), known_code.height(), known_code.width(), rng);

    const GroupPrompts prompts = build_group_prompts(layout.objects, layout.global_prompt, cfg.regca_separator);
    std::vector<TextEmbedding> cond_groups, uncond_groups;
    for (const auto& g : prompts.groups) {
        cond_groups.push_back(in_stage([&] { return backends.text_encoder->encode(g.conditional); }));
        uncond_groups.push_back(in_stage([&] { return backends.text_encoder->encode(g.unconditional); }));
    }
    const TextEmbedding& cond_text = cond_groups.back();
    const TextEmbedding& uncond_text = uncond_groups.back();

    RegcaProcessor regca(composite.refined_masks, cond_groups, uncond_groups,
                         resolution_selector(cfg.regca_max_attention_resolution));
    StandardAttention plain;
    AttentionProcessor& attention = cfg.regca_enabled ? static_cast<AttentionProcessor&>(regca) : plain;

    SceneResult scene;
    Latent x = init_inpaint_latent(known_code, inpaint, cfg.t_start, schedule, eps1, eps2);
    const TimestepPlan plan = plan_timesteps(cfg.num_steps, schedule.steps(), cfg.t_start);
    for (std::size_t i = 0; i < plan.steps.size(); ++i) {
        const int t = plan.steps[i];
        const int t_prev = i + 1 < plan.steps.size() ? plan.steps[i + 1] : 0;
        const bool anchoring = t > cfg.t_min;
        const InpaintConditioning* cond = anchoring ? &anchored_cond : &free_cond;

        const Latent eps_c = checked_predict(denoiser, {x, t, Branch::Conditional, cond_text, attention, cond}, "cc");
        const Latent eps_u =
            checked_predict(denoiser, {x, t, Branch::Unconditional, uncond_text, attention, cond}, "cc");
        scene.denoiser_calls += 2;
        const Latent eps = guided_noise(eps_u, eps_c, cfg.guidance_scale);
        if (hooks.on_step) hooks.on_step(t, predict_x0(x, eps, t, schedule));
        x = ddim_step(x, eps, t, t_prev, schedule);
        if (anchoring) {
            // Re-anchor the known region on the forward path of the known
            // image; eps1 keeps that path consistent with the initial latent.
            x = blend_background(forward_noise(known_code, t_prev, eps1, schedule), x, known);
            scene.anchored_timesteps.push_back(t);
        }
    }

    scene.image = in_stage([&] { return codec.decode(x); });
    scene.latent = std::move(x);
    for (const auto& o : layout.objects) {
        scene.per_object_bboxes.push_back(bbox(o.mask));
        scene.object_seeds.push_back(o.seed);
    }
    scene.scene_seed = cfg.seed;
    return scene;
}

} // namespace layoutgen
