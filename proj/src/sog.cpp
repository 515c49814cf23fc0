#include "layoutgen/sog.hpp"

#include "layoutgen/error.hpp"

#include <random>

namespace layoutgen {

Latent encode_flat(const LatentCodec& codec, int height, int width, float color) {
    return codec.encode(Image(height, width, color));
}

ObjectNoise draw_object_noise(std::uint64_t seed, int channels, int height, int width) {
    std::mt19937_64 rng(seed);
    ObjectNoise noise;
    noise.foreground = gaussian_latent(channels, height, width, rng);
    noise.background = gaussian_latent(channels, height, width, rng);
    return noise;
}

namespace {

template <typename F>
auto in_stage(const std::string& stage, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const Error& e) {
        if (!e.stage().empty()) throw;
        throw Error(e.code(), e.what(), stage);
    } catch (const std::exception& e) {
        throw Error(Errc::BackendFailure, e.what(), stage);
    }
}

} // namespace

ObjectResult generate_object(const ObjectSpec& spec, const SogConfig& cfg, const Schedule& schedule,
                             const BackendSet& backends, const SogHooks& hooks, const Latent* flat_code) {
    const std::string stage = "sog:" + spec.id;
    if (!spec.mask.any()) {
        throw Error(Errc::EmptyMask, "object '" + spec.id + "' has an empty mask", stage);
    }
    if (cfg.t_start < 1 || cfg.t_start > schedule.steps()) {
        throw Error(Errc::InvalidRange, "sog t_start must lie in [1, T]", stage);
    }
    if (!backends.denoiser || !backends.text_encoder || !backends.latent_codec) {
        throw Error(Errc::BackendFailure, "sog needs a denoiser, a text encoder and a latent codec", stage);
    }
    const auto& codec = *backends.latent_codec;

    const Latent flat = flat_code ? *flat_code : in_stage(stage, [&] {
        return encode_flat(codec, spec.mask.height(), spec.mask.width(), cfg.flat_color);
    });
    const BinaryMask mask = downsample_mask(spec.mask, flat.height(), flat.width());
    const ObjectNoise noise = draw_object_noise(spec.seed, flat.channels(), flat.height(), flat.width());

    const TextEmbedding cond = in_stage(stage, [&] { return backends.text_encoder->encode(spec.prompt); });
    const TextEmbedding uncond = in_stage(stage, [&] { return backends.text_encoder->encode(""); });

    PacaProcessor paca(cfg.paca, spec.mask, schedule, hooks.on_scores);
    StandardAttention plain;
    AttentionProcessor& cond_attention = cfg.paca_enabled ? static_cast<AttentionProcessor&>(paca) : plain;

    Latent x = compose_starting_latent(flat_latent(flat, cfg.t_start, noise.background, schedule), mask,
                                       noise.foreground);
    const TimestepPlan plan = plan_timesteps(cfg.num_steps, schedule.steps(), cfg.t_start);
    for (std::size_t i = 0; i < plan.steps.size(); ++i) {
        const int t = plan.steps[i];
        const int t_prev = i + 1 < plan.steps.size() ? plan.steps[i + 1] : 0;
        const Latent eps_c = checked_predict(*backends.denoiser,
                                             {x, t, Branch::Conditional, cond, cond_attention}, stage);
        const Latent eps_u = checked_predict(*backends.denoiser,
                                             {x, t, Branch::Unconditional, uncond, plain}, stage);
        const Latent eps = guided_noise(eps_u, eps_c, cfg.guidance_scale);
        if (hooks.on_step) hooks.on_step(t, predict_x0(x, eps, t, schedule));
        x = ddim_step(x, eps, t, t_prev, schedule);
        // The background follows one forward path of the flat code, drawn once.
        x = blend_background(x, flat_latent(flat, t_prev, noise.background, schedule), mask);
    }

    ObjectResult result;
    result.object_id = spec.id;
    result.image = in_stage(stage, [&] { return codec.decode(x); });
    result.latent_x0 = std::move(x);
    result.original_mask = spec.mask;
    result.refined_mask = spec.mask;
    result.bbox = bbox(spec.mask);
    return result;
}

} // namespace layoutgen
