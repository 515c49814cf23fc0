#pragma once

#include "layoutgen/backends.hpp"
#include "layoutgen/cc.hpp"
#include "layoutgen/diffusion.hpp"
#include "layoutgen/layout.hpp"
#include "layoutgen/segmentation.hpp"
#include "layoutgen/sog.hpp"
#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace layoutgen {

struct BackendChoice {
    std::string denoiser = "toy";
    std::string codec = "toy";
    int codec_factor = 1;
    std::string segmenter = "mock";
    std::string embedder = "mock";
};

struct EngineConfig {
    ScheduleParams schedule;
    SogConfig sog;
    CcConfig cc;
    RefineOptions refine;
    BackendChoice backends;
    std::filesystem::path output_dir = "runs";
    /// Scene seed; object seeds come from the layout.
    std::uint64_t seed = 0;
    int workers = 2;
};

/// Applies a JSON document (same shape as config_to_json) on top of `base`.
/// Unknown keys and out-of-range values throw ValidationError naming the key.
[[nodiscard]] EngineConfig apply_config(const nlohmann::json& doc, EngineConfig base = {});
[[nodiscard]] EngineConfig load_config_file(const std::filesystem::path& path, EngineConfig base = {});
[[nodiscard]] nlohmann::json config_to_json(const EngineConfig& cfg);
/// Every violated constraint, empty if the configuration is usable.
[[nodiscard]] std::vector<std::string> check_config(const EngineConfig& cfg);
/// "a.b.c=value" → {"a":{"b":{"c":value}}}; the value is parsed as JSON
/// when possible and kept as a string otherwise.
[[nodiscard]] nlohmann::json parse_override(const std::string& assignment);

/// Backends for one layout. The toy backends derive their world from the
/// layout's prompts, so equal prompts give equal backends. Throws
/// ValidationError for unknown backend names.
[[nodiscard]] BackendSet make_backends(const EngineConfig& cfg, const Layout& layout);

void write_latent(const std::filesystem::path& path, const Latent& latent);
[[nodiscard]] Latent read_latent(const std::filesystem::path& path);

/// Files of a job directory.
struct JobDir {
    std::filesystem::path root;

    [[nodiscard]] std::filesystem::path object_dir(const std::string& object_id) const;
    [[nodiscard]] std::filesystem::path scene_image() const { return root / "scene.png"; }
    [[nodiscard]] std::filesystem::path scene_latent() const { return root / "scene_latent.bin"; }
    [[nodiscard]] std::filesystem::path provenance() const { return root / "provenance.json"; }
    [[nodiscard]] std::filesystem::path layout() const { return root / "layout.json"; }
    [[nodiscard]] std::filesystem::path config() const { return root / "config.json"; }
};

/// Object ids are used as directory names; anything outside [A-Za-z0-9._-]
/// becomes '_'.
[[nodiscard]] std::string sanitize_id(const std::string& id);

enum class JobStage { Sog, Segmentation, Cc };

struct ProgressEvent {
    JobStage stage;
    std::string object_id; ///< empty for Cc
    int step = 0;          ///< 1-based step within the stage
    int total_steps = 0;
};

struct RunOptions {
    std::function<void(const ProgressEvent&)> progress;
    /// Objects taken from an earlier job directory instead of regenerated.
    std::optional<std::filesystem::path> reuse_from;
    std::vector<std::string> reuse_objects;
    /// Writes the per-step clean predictions of every object.
    bool dump_intermediate = false;
    /// Writes the ReGCA group partition as a label image.
    bool dump_groups = false;
    std::string parent_job;
};

struct JobOutput {
    std::vector<ObjectResult> objects;
    SceneResult scene;
    JobDir dir;
};

/// Validates the layout (ValidationError lists every issue), runs SOG for
/// each object, refines its mask, composes the scene and writes every
/// artifact under `job_root`.
JobOutput run_job(const Layout& layout, const EngineConfig& cfg, const std::filesystem::path& job_root,
                  const RunOptions& options = {});

/// Reloads one object's stage-1 result from a job directory.
[[nodiscard]] ObjectResult load_object_result(const JobDir& dir, const ObjectSpec& spec,
                                              const LatentCodec& codec);

/// Writes a new job at `new_root` in which only `object_id` is regenerated
/// (optionally with `seed`); every other object's stage-1 files are copied
/// unchanged and the scene is recomposed. Throws NotFound.
JobOutput regenerate_object(const std::filesystem::path& source_root, const std::string& object_id,
                            std::optional<std::uint64_t> seed, const EngineConfig& cfg,
                            const std::filesystem::path& new_root, const RunOptions& options = {});

/// Recomposes the scene of an existing job from its stored stage-1 results.
JobOutput recompose(const std::filesystem::path& source_root, const EngineConfig& cfg,
                    const std::filesystem::path& new_root, const RunOptions& options = {});

} // namespace layoutgen
