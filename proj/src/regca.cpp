#include "layoutgen/regca.hpp"

#include "layoutgen/error.hpp"

#include <string>

namespace layoutgen {

std::vector<int> GroupAssignment::members(int g) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < group_of_pixel.size(); ++i) {
        if (group_of_pixel[i] == g) out.push_back(static_cast<int>(i));
    }
    return out;
}

GroupAssignment assign_groups(std::span<const BinaryMask> refined_masks, int latent_h, int latent_w) {
    const int background = static_cast<int>(refined_masks.size());
    GroupAssignment out;
    out.group_of_pixel.assign(static_cast<std::size_t>(latent_h) * latent_w, background);
    for (std::size_t o = 0; o < refined_masks.size(); ++o) {
        const BinaryMask small = downsample_mask(refined_masks[o], latent_h, latent_w);
        const auto bits = small.data();
        // Later objects overwrite earlier ones, so overlaps go to the highest index.
        for (std::size_t p = 0; p < bits.size(); ++p) {
            if (bits[p]) out.group_of_pixel[p] = static_cast<int>(o);
        }
        out.groups.push_back({static_cast<int>(o), o});
    }
    out.groups.push_back({background, std::nullopt});
    return out;
}

GroupPrompts build_group_prompts(std::span<const ObjectSpec> objects, const std::string& global_prompt,
                                 const std::string& separator) {
    GroupPrompts out;
    std::string negative;
    for (std::size_t i = 0; i < objects.size(); ++i) {
        out.groups.push_back({objects[i].prompt, ""});
        if (i > 0) negative += separator;
        negative += objects[i].prompt;
    }
    out.groups.push_back({global_prompt, negative});
    return out;
}

Matrix grouped_attention(const Matrix& queries, const GroupAssignment& assignment,
                         std::span<const Matrix> keys, std::span<const Matrix> values) {
    const std::size_t groups = assignment.groups.size();
    if (keys.size() < groups || values.size() < groups) {
        throw Error(Errc::MissingGroupKV, "assignment has " + std::to_string(groups) +
                                              " groups but K/V for " +
                                              std::to_string(std::min(keys.size(), values.size())));
    }
    if (assignment.group_of_pixel.size() != static_cast<std::size_t>(queries.rows())) {
        throw Error(Errc::DimensionMismatch, "assignment covers " +
                                                 std::to_string(assignment.group_of_pixel.size()) +
                                                 " pixels, queries have " + std::to_string(queries.rows()));
    }
    const int out_dim = values[0].cols();
    for (std::size_t g = 0; g < groups; ++g) {
        if (values[g].cols() != out_dim) {
            throw Error(Errc::DimensionMismatch, "value dimensions differ between groups");
        }
    }

    Matrix out(queries.rows(), out_dim);
    for (std::size_t g = 0; g < groups; ++g) {
        const std::vector<int> idx = assignment.members(static_cast<int>(g));
        if (idx.empty()) continue;
        const Matrix part = scaled_dot_product_attention(gather_rows(queries, idx), keys[g], values[g]);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const auto src = part.row(static_cast<int>(i));
            std::copy(src.begin(), src.end(), out.row(idx[i]).begin());
        }
    }
    return out;
}

RegcaOutput regca_attention(const Matrix& queries, const GroupAssignment& assignment,
                            std::span<const GroupKV> group_kv) {
    if (group_kv.size() < assignment.groups.size()) {
        throw Error(Errc::MissingGroupKV, "missing K/V for " +
                                              std::to_string(assignment.groups.size() - group_kv.size()) +
                                              " group(s)");
    }
    std::vector<Matrix> kc, vc, ku, vu;
    for (const auto& kv : group_kv) {
        kc.push_back(kv.keys_cond);
        vc.push_back(kv.values_cond);
        ku.push_back(kv.keys_uncond);
        vu.push_back(kv.values_uncond);
    }
    return {grouped_attention(queries, assignment, kc, vc), grouped_attention(queries, assignment, ku, vu)};
}

RegcaProcessor::RegcaProcessor(std::vector<BinaryMask> refined_masks, std::vector<TextEmbedding> cond_prompts,
                               std::vector<TextEmbedding> uncond_prompts, LayerSelector selector)
    : masks_(std::move(refined_masks)), cond_(std::move(cond_prompts)), uncond_(std::move(uncond_prompts)),
      selector_(std::move(selector)) {
    if (cond_.size() != masks_.size() + 1 || uncond_.size() != masks_.size() + 1) {
        throw Error(Errc::MissingGroupKV, "need one conditional and one unconditional prompt per group");
    }
}

const GroupAssignment& RegcaProcessor::assignment_at(int height, int width) {
    std::lock_guard lock(mutex_);
    auto key = std::make_pair(height, width);
    auto it = assignments_.find(key);
    if (it == assignments_.end()) {
        it = assignments_.emplace(key, assign_groups(masks_, height, width)).first;
    }
    return it->second;
}

const RegcaProcessor::LayerKV& RegcaProcessor::kv_for(const CrossAttentionCall& call) {
    std::lock_guard lock(mutex_);
    auto it = kv_cache_.find(call.layer.name);
    if (it == kv_cache_.end()) {
        LayerKV kv;
        for (const auto& e : cond_) kv.cond.push_back(call.projector.project(e));
        for (const auto& e : uncond_) kv.uncond.push_back(call.projector.project(e));
        it = kv_cache_.emplace(call.layer.name, std::move(kv)).first;
    }
    return it->second;
}

std::vector<Matrix> RegcaProcessor::attend(const CrossAttentionCall& call) {
    if (selector_ && !selector_(call.layer)) {
        return StandardAttention{}.attend(call);
    }
    const GroupAssignment& assignment = assignment_at(call.layer.height, call.layer.width);
    const LayerKV& kv = kv_for(call);
    const auto& per_group = call.branch == Branch::Conditional ? kv.cond : kv.uncond;

    std::vector<Matrix> out;
    out.reserve(call.queries.size());
    for (std::size_t h = 0; h < call.queries.size(); ++h) {
        std::vector<Matrix> keys, values;
        for (const auto& group : per_group) {
            if (h >= group.size()) {
                throw Error(Errc::DimensionMismatch, "projector returned too few heads");
            }
            keys.push_back(group[h].keys);
            values.push_back(group[h].values);
        }
        out.push_back(grouped_attention(call.queries[h], assignment, keys, values));
    }
    return out;
}

} // namespace layoutgen
