#pragma once

#include "layoutgen/attention.hpp"
#include "layoutgen/backends.hpp"
#include "layoutgen/layout.hpp"
#include "layoutgen/paca.hpp"

#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace layoutgen {

// Region-grouped cross-attention: every latent pixel belongs to exactly one
// object group or to the background group, and attends only to its group's
// prompt.

struct GroupAssignment {
    struct Group {
        int id = 0;
        std::optional<std::size_t> object; ///< layout index; empty for background
    };

    std::vector<int> group_of_pixel;
    std::vector<Group> groups; ///< groups[g].id == g; background is last

    [[nodiscard]] int background_group() const noexcept { return static_cast<int>(groups.size()) - 1; }
    /// Pixel indices of group `g`, ascending.
    [[nodiscard]] std::vector<int> members(int g) const;
};

/// Object o gets group o; pixels covered by several masks go to the highest
/// index; uncovered pixels go to the background group (always present).
[[nodiscard]] GroupAssignment assign_groups(std::span<const BinaryMask> refined_masks, int latent_h,
                                            int latent_w);

struct GroupPrompts {
    struct Entry {
        std::string conditional;
        std::string unconditional;
    };
    std::vector<Entry> groups; ///< one per object in layout order, then background
};

[[nodiscard]] GroupPrompts build_group_prompts(std::span<const ObjectSpec> objects,
                                               const std::string& global_prompt,
                                               const std::string& separator = ", ");

struct GroupKV {
    Matrix keys_cond;
    Matrix values_cond;
    Matrix keys_uncond;
    Matrix values_uncond;
};

/// Each group's queries attend to that group's K/V only; results are
/// scattered back into pixel order. Throws MissingGroupKV, DimensionMismatch.
[[nodiscard]] Matrix grouped_attention(const Matrix& queries, const GroupAssignment& assignment,
                                       std::span<const Matrix> keys, std::span<const Matrix> values);

struct RegcaOutput {
    Matrix conditional;
    Matrix unconditional;
};

[[nodiscard]] RegcaOutput regca_attention(const Matrix& queries, const GroupAssignment& assignment,
                                          std::span<const GroupKV> group_kv);

/// Attention processor for one scene composition. Group assignments are
/// cached per attention resolution and group K/V per layer.
class RegcaProcessor final : public AttentionProcessor {
  public:
    RegcaProcessor(std::vector<BinaryMask> refined_masks, std::vector<TextEmbedding> cond_prompts,
                   std::vector<TextEmbedding> uncond_prompts, LayerSelector selector = {});

    [[nodiscard]] std::vector<Matrix> attend(const CrossAttentionCall& call) override;

    /// Assignment used at a given attention resolution.
    [[nodiscard]] const GroupAssignment& assignment_at(int height, int width);

  private:
    struct LayerKV {
        std::vector<std::vector<HeadKV>> cond;   ///< [group][head]
        std::vector<std::vector<HeadKV>> uncond;
    };

    [[nodiscard]] const LayerKV& kv_for(const CrossAttentionCall& call);

    std::vector<BinaryMask> masks_;
    std::vector<TextEmbedding> cond_;
    std::vector<TextEmbedding> uncond_;
    LayerSelector selector_;
    std::mutex mutex_;
    std::map<std::pair<int, int>, GroupAssignment> assignments_;
    std::map<std::string, LayerKV> kv_cache_;
};

} // namespace layoutgen
