#include "layoutgen/backends.hpp"

#include "layoutgen/error.hpp"

#include <cmath>

namespace layoutgen {

std::vector<Matrix> StandardAttention::attend(const CrossAttentionCall& call) {
    if (call.queries.size() != call.context.size()) {
        throw Error(Errc::DimensionMismatch, "head count differs between queries and context");
    }
    std::vector<Matrix> out;
    out.reserve(call.queries.size());
    for (std::size_t h = 0; h < call.queries.size(); ++h) {
        out.push_back(scaled_dot_product_attention(call.queries[h], call.context[h].keys,
                                                   call.context[h].values));
    }
    return out;
}

bool BackendSet::concurrent_safe() const {
    auto ok = [](const auto& p) { return !p || p->concurrent_safe(); };
    return ok(denoiser) && ok(inpaint_denoiser) && ok(text_encoder) && ok(latent_codec) &&
           ok(segmenter) && ok(embedder);
}

Latent checked_predict(const Denoiser& denoiser, const DenoiseRequest& request, const std::string& stage) {
    Latent eps;
    try {
        eps = denoiser.predict_noise(request);
    } catch (const Error& e) {
        if (!e.stage().empty()) throw;
        throw Error(e.code(), std::string(e.what()), stage);
    } catch (const std::exception& e) {
        throw Error(Errc::BackendFailure, denoiser.id() + ": " + e.what(), stage);
    }
    if (!eps.same_shape(request.x_t)) {
        throw Error(Errc::BackendFailure, denoiser.id() + " returned a latent of the wrong shape", stage);
    }
    if (!eps.all_finite()) {
        throw Error(Errc::BackendFailure, denoiser.id() + " returned non-finite values", stage);
    }
    return eps;
}

double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw Error(Errc::DimensionMismatch, "embedding sizes differ");
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / std::sqrt(na * nb);
}

} // namespace layoutgen
