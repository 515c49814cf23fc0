#include "layoutgen/paca.hpp"

#include "layoutgen/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace layoutgen {

LayerSelector resolution_selector(int max_resolution) {
    return [max_resolution](const AttentionLayerInfo& layer) {
        return max_resolution <= 0 || (layer.height <= max_resolution && layer.width <= max_resolution);
    };
}

bool PacaConfig::selects(const AttentionLayerInfo& layer) const {
    return layer_selector ? layer_selector(layer) : resolution_selector(max_attention_resolution)(layer);
}

double noise_signal_ratio(int t, const Schedule& s) {
    if (t < 1 || t > s.steps()) {
        throw Error(Errc::InvalidTimesteps, "noise_signal_ratio needs 1 <= t <= T");
    }
    const double a = s.alpha_bar(t);
    return std::sqrt(1.0 - a) / std::sqrt(a);
}

double paca_weight(double w_prime, double sigma_t, const SimilarityMatrix& scores) {
    if (scores.empty()) {
        throw Error(Errc::DimensionMismatch, "paca_weight of an empty similarity matrix");
    }
    const double peak = *std::max_element(scores.data().begin(), scores.data().end());
    return w_prime * std::log1p(sigma_t) * peak;
}

SimilarityMatrix apply_paca(const SimilarityMatrix& scores, std::span<const std::uint8_t> mask_flat,
                            const PacaConfig& cfg, double w_t) {
    if (mask_flat.size() != static_cast<std::size_t>(scores.rows())) {
        throw Error(Errc::LengthMismatch, "mask has " + std::to_string(mask_flat.size()) +
                                              " entries for " + std::to_string(scores.rows()) + " pixels");
    }
    if (cfg.sot_index < 0 || cfg.sot_index >= cfg.eot_index || cfg.eot_index >= scores.cols()) {
        throw Error(Errc::InvalidRange, "token indices need 0 <= sot < eot < tokens");
    }
    SimilarityMatrix out = scores;
    for (int j = 0; j < out.rows(); ++j) {
        auto row = out.row(j);
        if (mask_flat[static_cast<std::size_t>(j)]) {
            for (int k = cfg.sot_index + 1; k <= cfg.eot_index; ++k) row[static_cast<std::size_t>(k)] += w_t;
        } else {
            row[static_cast<std::size_t>(cfg.sot_index)] += w_t;
        }
    }
    return out;
}

PacaProcessor::PacaProcessor(PacaConfig cfg, BinaryMask object_mask, const Schedule& schedule,
                             ScoreObserver observer)
    : cfg_(std::move(cfg)), object_mask_(std::move(object_mask)), schedule_(schedule),
      observer_(std::move(observer)) {}

const BinaryMask& PacaProcessor::mask_at(int height, int width) {
    std::lock_guard lock(mutex_);
    auto key = std::make_pair(height, width);
    auto it = mask_cache_.find(key);
    if (it == mask_cache_.end()) {
        it = mask_cache_.emplace(key, downsample_mask(object_mask_, height, width)).first;
    }
    return it->second;
}

std::size_t PacaProcessor::adjusted_calls() const {
    std::lock_guard lock(mutex_);
    return adjusted_calls_;
}

std::vector<Matrix> PacaProcessor::attend(const CrossAttentionCall& call) {
    if (call.branch == Branch::Unconditional || !cfg_.selects(call.layer)) {
        return StandardAttention{}.attend(call);
    }
    if (call.queries.size() != call.context.size()) {
        throw Error(Errc::DimensionMismatch, "head count differs between queries and context");
    }
    const BinaryMask& mask = mask_at(call.layer.height, call.layer.width);
    PacaConfig cfg = cfg_;
    cfg.sot_index = call.text.sot_index;
    cfg.eot_index = call.text.eot_index;
    const double sigma = noise_signal_ratio(call.timestep, schedule_);

    std::vector<Matrix> out;
    out.reserve(call.queries.size());
    for (std::size_t h = 0; h < call.queries.size(); ++h) {
        const SimilarityMatrix raw = attention_scores(call.queries[h], call.context[h].keys);
        const double w_t = paca_weight(cfg.w_prime, sigma, raw);
        SimilarityMatrix adjusted = apply_paca(raw, mask.data(), cfg, w_t);
        if (observer_) observer_(call.layer, call.timestep, static_cast<int>(h), raw, adjusted);
        softmax_rows(adjusted);
        out.push_back(weighted_values(adjusted, call.context[h].values));
    }
    {
        std::lock_guard lock(mutex_);
        ++adjusted_calls_;
    }
    return out;
}

} // namespace layoutgen
