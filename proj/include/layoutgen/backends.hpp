#pragma once

#include "layoutgen/attention.hpp"
#include "layoutgen/diffusion.hpp"
#include "layoutgen/image.hpp"
#include "layoutgen/layout.hpp"

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace layoutgen {

// Interfaces isolating every pretrained-model dependency. Implementations
// report whether they may be invoked from several threads at once.

struct TextEmbedding {
    std::string prompt;
    Matrix tokens;      ///< token count × embedding dim
    int sot_index = 0;  ///< start-of-text position
    int eot_index = 0;  ///< end-of-text position
    int padding_begin = 0; ///< first padding position (== token count when unpadded)
};

class TextEncoder {
  public:
    virtual ~TextEncoder() = default;
    [[nodiscard]] virtual TextEmbedding encode(const std::string& prompt) const = 0;
    [[nodiscard]] virtual bool concurrent_safe() const { return false; }
    [[nodiscard]] virtual std::string id() const = 0;
};

enum class Branch { Conditional, Unconditional };
enum class BlockPosition { Down, Mid, Up };

struct AttentionLayerInfo {
    std::string name;
    int height = 0; ///< attention-map resolution
    int width = 0;
    int heads = 1;
    BlockPosition block = BlockPosition::Down;

    [[nodiscard]] int pixels() const noexcept { return height * width; }
};

struct HeadKV {
    Matrix keys;   ///< tokens × d
    Matrix values; ///< tokens × d_v
};

/// A cross-attention layer's key/value projection, so processors can build
/// K/V for prompts other than the one the denoiser was called with.
class KeyValueProjector {
  public:
    virtual ~KeyValueProjector() = default;
    [[nodiscard]] virtual std::vector<HeadKV> project(const TextEmbedding& text) const = 0;
};

struct CrossAttentionCall {
    const AttentionLayerInfo& layer;
    Branch branch;
    int timestep;
    std::span<const Matrix> queries;   ///< per head, pixels × d
    const TextEmbedding& text;         ///< prompt the denoiser was called with
    std::span<const HeadKV> context;   ///< `text` projected by this layer
    const KeyValueProjector& projector;
};

/// Computes a cross-attention layer's per-head outputs. The denoiser calls
/// this for every cross-attention layer of every evaluation.
class AttentionProcessor {
  public:
    virtual ~AttentionProcessor() = default;
    [[nodiscard]] virtual std::vector<Matrix> attend(const CrossAttentionCall& call) = 0;
};

/// Plain scaled-dot-product attention against the call's own context.
class StandardAttention final : public AttentionProcessor {
  public:
    [[nodiscard]] std::vector<Matrix> attend(const CrossAttentionCall& call) override;
};

/// Extra inputs of an inpainting denoiser, at latent resolution.
struct InpaintConditioning {
    Latent masked_image; ///< codec encoding of the image with the inpaint region zeroed
    BinaryMask mask;     ///< 1 = region to inpaint
};

struct DenoiseRequest {
    const Latent& x_t;
    int timestep;
    Branch branch;
    const TextEmbedding& text;
    AttentionProcessor& attention;
    const InpaintConditioning* inpaint = nullptr;
};

class Denoiser {
  public:
    virtual ~Denoiser() = default;
    /// Predicted noise, same shape as `x_t`.
    [[nodiscard]] virtual Latent predict_noise(const DenoiseRequest& request) const = 0;
    [[nodiscard]] virtual bool concurrent_safe() const { return false; }
    [[nodiscard]] virtual std::string id() const = 0;
};

class LatentCodec {
  public:
    virtual ~LatentCodec() = default;
    [[nodiscard]] virtual Latent encode(const Image& image) const = 0;
    [[nodiscard]] virtual Image decode(const Latent& latent) const = 0;
    [[nodiscard]] virtual int downscale() const = 0;
    [[nodiscard]] virtual int channels() const = 0;
    [[nodiscard]] virtual bool concurrent_safe() const { return false; }
    [[nodiscard]] virtual std::string id() const = 0;
};

struct ScoredMask {
    BinaryMask mask;
    double score = 0.0;
};

class Segmenter {
  public:
    virtual ~Segmenter() = default;
    /// Candidate masks for the object inside `box`, at image resolution.
    [[nodiscard]] virtual std::vector<ScoredMask> segment(const Image& image, const BBox& box) const = 0;
    [[nodiscard]] virtual bool concurrent_safe() const { return false; }
    [[nodiscard]] virtual std::string id() const = 0;
};

/// Joint image/text embedding space; outputs are unit norm.
class ImageTextEmbedder {
  public:
    virtual ~ImageTextEmbedder() = default;
    [[nodiscard]] virtual std::vector<double> embed_image(const Image& image) const = 0;
    [[nodiscard]] virtual std::vector<double> embed_text(const std::string& text) const = 0;
    [[nodiscard]] virtual bool concurrent_safe() const { return false; }
    [[nodiscard]] virtual std::string id() const = 0;
};

struct BackendSet {
    std::shared_ptr<const Denoiser> denoiser;
    std::shared_ptr<const Denoiser> inpaint_denoiser;
    std::shared_ptr<const TextEncoder> text_encoder;
    std::shared_ptr<const LatentCodec> latent_codec;
    std::shared_ptr<const Segmenter> segmenter;
    std::shared_ptr<const ImageTextEmbedder> embedder;

    /// True when every present backend tolerates concurrent use.
    [[nodiscard]] bool concurrent_safe() const;
};

/// Calls `denoiser` and checks the output contract; any failure surfaces as
/// BackendFailure tagged with `stage`.
[[nodiscard]] Latent checked_predict(const Denoiser& denoiser, const DenoiseRequest& request,
                                     const std::string& stage);

[[nodiscard]] double cosine(std::span<const double> a, std::span<const double> b);

} // namespace layoutgen
