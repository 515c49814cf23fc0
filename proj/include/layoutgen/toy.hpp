#pragma once

#include "layoutgen/backends.hpp"

#include <array>
#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace layoutgen {

// Deterministic stand-ins for the pretrained models. They satisfy the same
// contracts as real adapters and make every pipeline path testable with
// exactly known answers.

/// Registered prompts and the clean latent each one denoises towards. Every
/// prompt also owns one axis of the toy embedding space; axis 0 is the
/// start-of-text token and axis 1 collects unregistered prompts.
class ToyWorld {
  public:
    static constexpr int kSotCode = 0;
    static constexpr int kUnknownCode = 1;

    ToyWorld(int channels, int height, int width,
             std::vector<std::pair<std::string, Latent>> targets);
    ToyWorld(int channels, int height, int width,
             std::vector<std::pair<std::string, Latent>> targets, Latent background_target);

    [[nodiscard]] int channels() const noexcept { return channels_; }
    [[nodiscard]] int height() const noexcept { return height_; }
    [[nodiscard]] int width() const noexcept { return width_; }

    /// Throws UnknownPrompt.
    [[nodiscard]] const Latent& target(const std::string& prompt) const;
    [[nodiscard]] bool contains(const std::string& prompt) const;

    [[nodiscard]] int code_dim() const noexcept { return static_cast<int>(prompts_.size()) + 2; }
    [[nodiscard]] int code_of(const std::string& prompt) const;
    /// Target for a decoded axis; start-of-text and unknown map to the background target.
    [[nodiscard]] const Latent& target_for_code(int code) const;
    [[nodiscard]] const Latent& background_target() const noexcept { return background_; }
    [[nodiscard]] const std::vector<std::string>& prompts() const noexcept { return prompts_; }

  private:
    int channels_;
    int height_;
    int width_;
    std::vector<std::string> prompts_;
    std::vector<Latent> targets_;
    std::map<std::string, int, std::less<>> index_;
    Latent background_;
};

/// Noise under which predict_x0 recovers `target` exactly:
/// (x_t − sqrt(a_t)·target)/sqrt(1 − a_t).
[[nodiscard]] Latent toy_noise_for_target(const Latent& x_t, int t, const Latent& target,
                                          const Schedule& s);

/// Same, with the target looked up in `world`. Throws UnknownPrompt.
[[nodiscard]] Latent toy_denoiser_predict(const Latent& x_t, int t, const std::string& prompt,
                                          const ToyWorld& world, const Schedule& s);

/// Whitespace tokenizer: [SOT, word..., EOT, pad...]. Word, EOT and padding
/// rows are the prompt's axis; the SOT row is axis 0.
class ToyTextEncoder final : public TextEncoder {
  public:
    explicit ToyTextEncoder(std::shared_ptr<const ToyWorld> world, int max_tokens = 16);

    [[nodiscard]] TextEmbedding encode(const std::string& prompt) const override;
    [[nodiscard]] bool concurrent_safe() const override { return true; }
    [[nodiscard]] std::string id() const override { return "toy-text"; }

  private:
    std::shared_ptr<const ToyWorld> world_;
    int max_tokens_;
};

/// Analytic denoiser. Each evaluation runs a full-resolution and a
/// half-resolution cross-attention layer through the request's processor;
/// every pixel of the full-resolution output is decoded to the embedding
/// axis with the largest weight, and the predicted noise is the exact noise
/// towards that axis's target. Inpainting conditioning is accepted and
/// ignored.
class ToyDenoiser final : public Denoiser {
  public:
    ToyDenoiser(std::shared_ptr<const ToyWorld> world, Schedule schedule, std::string name = "toy",
                double query_scale = 1.0);

    [[nodiscard]] Latent predict_noise(const DenoiseRequest& request) const override;
    /// As predict_noise, also returning the decoded axis per latent pixel.
    [[nodiscard]] Latent predict_noise(const DenoiseRequest& request, std::vector<int>& codes) const;

    [[nodiscard]] bool concurrent_safe() const override { return true; }
    [[nodiscard]] std::string id() const override { return name_; }

    [[nodiscard]] std::size_t invocations() const noexcept { return invocations_.load(); }
    [[nodiscard]] const std::vector<AttentionLayerInfo>& layers() const noexcept { return layers_; }

  private:
    [[nodiscard]] std::vector<Matrix> queries_for(std::size_t layer) const;

    std::shared_ptr<const ToyWorld> world_;
    Schedule schedule_;
    std::string name_;
    double query_scale_;
    std::vector<AttentionLayerInfo> layers_;
    std::vector<std::vector<Matrix>> queries_;
    mutable std::atomic<std::size_t> invocations_{0};
};

/// Space-to-depth codec: each factor×factor RGB block becomes 3·factor²
/// channels. Exactly invertible; factor 1 is the identity.
class ToyCodec final : public LatentCodec {
  public:
    explicit ToyCodec(int factor = 1);

    [[nodiscard]] Latent encode(const Image& image) const override;
    [[nodiscard]] Image decode(const Latent& latent) const override;
    [[nodiscard]] int downscale() const override { return factor_; }
    [[nodiscard]] int channels() const override { return 3 * factor_ * factor_; }
    [[nodiscard]] bool concurrent_safe() const override { return true; }
    [[nodiscard]] std::string id() const override;

  private:
    int factor_;
};

/// Box-prompted segmenter that keeps pixels brighter than `threshold`
/// (mean of RGB in [-1,1]) inside the box. Returns the thresholded mask
/// (score 0.9) and the filled box (score 0.4).
class MockSegmenter final : public Segmenter {
  public:
    explicit MockSegmenter(float threshold = -0.5f) : threshold_(threshold) {}

    [[nodiscard]] std::vector<ScoredMask> segment(const Image& image, const BBox& box) const override;
    [[nodiscard]] bool concurrent_safe() const override { return true; }
    [[nodiscard]] std::string id() const override { return "mock-segmenter"; }

  private:
    float threshold_;
};

/// Hash-derived unit vectors: identical inputs give identical embeddings.
/// Images are hashed on their 8-bit quantization.
class MockEmbedder final : public ImageTextEmbedder {
  public:
    explicit MockEmbedder(int dim = 64) : dim_(dim) {}

    [[nodiscard]] std::vector<double> embed_image(const Image& image) const override;
    [[nodiscard]] std::vector<double> embed_text(const std::string& text) const override;
    [[nodiscard]] bool concurrent_safe() const override { return true; }
    [[nodiscard]] std::string id() const override { return "mock-embedder"; }

  private:
    int dim_;
};

[[nodiscard]] std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Unit vector of `dim` Gaussian components seeded by `seed`.
[[nodiscard]] std::vector<double> hashed_unit_vector(std::uint64_t seed, int dim);

/// Targets for every prompt in `layout`: each prompt maps to a constant
/// colour (derived from its hash) run through `codec`.
[[nodiscard]] std::shared_ptr<const ToyWorld> make_toy_world(const Layout& layout,
                                                              const LatentCodec& codec);

/// Colour a toy world paints `prompt` with, in [-1,1].
[[nodiscard]] std::array<float, 3> toy_prompt_color(std::string_view prompt);

} // namespace layoutgen
