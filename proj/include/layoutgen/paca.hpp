#pragma once

#include "layoutgen/attention.hpp"
#include "layoutgen/backends.hpp"
#include "layoutgen/diffusion.hpp"
#include "layoutgen/layout.hpp"

#include <functional>
#include <map>
#include <mutex>
#include <span>
#include <utility>

namespace layoutgen {

// Prompt-adjusted cross-attention: masked pixels are pushed towards every
// prompt token after start-of-text, unmasked pixels towards start-of-text.

using LayerSelector = std::function<bool(const AttentionLayerInfo&)>;

/// Selects layers whose attention map is at most `max_resolution` on both
/// sides; 0 selects every layer.
[[nodiscard]] LayerSelector resolution_selector(int max_resolution);

struct PacaConfig {
    double w_prime = 0.3;
    int sot_index = 0;
    int eot_index = 1;
    int max_attention_resolution = 32;
    /// Overrides the resolution rule when set.
    LayerSelector layer_selector;

    [[nodiscard]] bool selects(const AttentionLayerInfo& layer) const;
};

/// sqrt(1 − a_t)/sqrt(a_t).
[[nodiscard]] double noise_signal_ratio(int t, const Schedule& s);

/// w′·log(1 + σ_t)·max(S), max over all entries of the unmodified matrix.
[[nodiscard]] double paca_weight(double w_prime, double sigma_t, const SimilarityMatrix& scores);

/// Adds `w_t` to columns sot+1..eot of masked rows and to the SOT column of
/// unmasked rows; the input is left untouched. Throws LengthMismatch, or
/// InvalidRange if the token indices do not fit.
[[nodiscard]] SimilarityMatrix apply_paca(const SimilarityMatrix& scores,
                                          std::span<const std::uint8_t> mask_flat,
                                          const PacaConfig& cfg, double w_t);

/// Receives every adjusted layer's scores, e.g. for heatmap dumps.
using ScoreObserver = std::function<void(const AttentionLayerInfo&, int timestep, int head,
                                         const SimilarityMatrix& before,
                                         const SimilarityMatrix& after)>;

/// Attention processor for one object generation. The object mask is
/// downsampled once per attention resolution and cached. Only the
/// conditional branch is adjusted.
class PacaProcessor final : public AttentionProcessor {
  public:
    PacaProcessor(PacaConfig cfg, BinaryMask object_mask, const Schedule& schedule,
                  ScoreObserver observer = {});

    [[nodiscard]] std::vector<Matrix> attend(const CrossAttentionCall& call) override;

    [[nodiscard]] std::size_t adjusted_calls() const;

  private:
    [[nodiscard]] const BinaryMask& mask_at(int height, int width);

    PacaConfig cfg_;
    BinaryMask object_mask_;
    const Schedule& schedule_;
    ScoreObserver observer_;
    mutable std::mutex mutex_;
    std::map<std::pair<int, int>, BinaryMask> mask_cache_;
    std::size_t adjusted_calls_ = 0;
};

} // namespace layoutgen
