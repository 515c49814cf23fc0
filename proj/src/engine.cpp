#include "layoutgen/engine.hpp"

#include "layoutgen/error.hpp"
#include "layoutgen/log.hpp"
#include "layoutgen/regca.hpp"
#include "layoutgen/toy.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace layoutgen {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Strict reader over one JSON object: every key must be consumed.
class Section {
  public:
    Section(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
        if (!doc_.is_object()) fail(path_.empty() ? "config" : path_, "must be an object");
    }

    template <typename T>
    void read(const char* key, T& out) {
        seen_.push_back(key);
        auto it = doc_.find(key);
        if (it == doc_.end()) return;
        try {
            out = it->template get<T>();
        } catch (const json::exception&) {
            fail(name(key), "has the wrong type");
        }
    }

    void read_path(const char* key, fs::path& out) {
        std::string s = out.string();
        read(key, s);
        out = s;
    }

    [[nodiscard]] bool has(const char* key) const { return doc_.contains(key); }

    Section sub(const char* key) {
        seen_.push_back(key);
        static const json empty = json::object();
        auto it = doc_.find(key);
        return Section(it == doc_.end() ? empty : *it, name(key));
    }

    void finish() const {
        for (const auto& [key, value] : doc_.items()) {
            if (std::find(seen_.begin(), seen_.end(), key) == seen_.end()) {
                fail(name(key.c_str()), "is not a known configuration key");
            }
        }
    }

  private:
    [[nodiscard]] std::string name(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

    [[noreturn]] static void fail(const std::string& key, const std::string& what) {
        throw Error(Errc::ValidationError, "config key '" + key + "' " + what, "config");
    }

    const json& doc_;
    std::string path_;
    std::vector<std::string> seen_;
};

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::IoError, "cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
    out << text;
}

} // namespace

EngineConfig apply_config(const json& doc, EngineConfig cfg) {
    Section root(doc, "");
    {
        Section s = root.sub("schedule");
        s.read("steps", cfg.schedule.steps);
        s.read("beta_start", cfg.schedule.beta_start);
        s.read("beta_end", cfg.schedule.beta_end);
        s.finish();
    }
    {
        Section s = root.sub("sog");
        s.read("t_start", cfg.sog.t_start);
        s.read("num_steps", cfg.sog.num_steps);
        s.read("guidance_scale", cfg.sog.guidance_scale);
        s.read("paca_enabled", cfg.sog.paca_enabled);
        s.read("flat_color", cfg.sog.flat_color);
        s.finish();
    }
    {
        Section s = root.sub("paca");
        s.read("w_prime", cfg.sog.paca.w_prime);
        s.read("max_attention_resolution", cfg.sog.paca.max_attention_resolution);
        s.finish();
    }
    {
        Section s = root.sub("cc");
        s.read("t_start", cfg.cc.t_start);
        s.read("t_min", cfg.cc.t_min);
        s.read("num_steps", cfg.cc.num_steps);
        s.read("guidance_scale", cfg.cc.guidance_scale);
        s.finish();
    }
    {
        Section s = root.sub("regca");
        s.read("enabled", cfg.cc.regca_enabled);
        s.read("separator", cfg.cc.regca_separator);
        s.read("max_attention_resolution", cfg.cc.regca_max_attention_resolution);
        s.finish();
    }
    {
        Section s = root.sub("segmentation");
        s.read("allow_fallback", cfg.refine.allow_fallback);
        s.finish();
    }
    {
        Section s = root.sub("backends");
        s.read("denoiser", cfg.backends.denoiser);
        s.read("codec", cfg.backends.codec);
        s.read("codec_factor", cfg.backends.codec_factor);
        s.read("segmenter", cfg.backends.segmenter);
        s.read("embedder", cfg.backends.embedder);
        s.finish();
    }
    root.read_path("output_dir", cfg.output_dir);
    root.read("seed", cfg.seed);
    root.read("workers", cfg.workers);
    root.finish();
    cfg.cc.seed = cfg.seed;

    if (auto issues = check_config(cfg); !issues.empty()) {
        std::string msg = "invalid configuration:";
        for (const auto& i : issues) msg += "\n  - " + i;
        throw Error(Errc::ValidationError, msg, "config");
    }
    return cfg;
}

EngineConfig load_config_file(const fs::path& path, EngineConfig base) {
    json doc;
    try {
        doc = json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw Error(Errc::ParseError, path.string() + ": " + e.what(), "config");
    }
    return apply_config(doc, std::move(base));
}

json config_to_json(const EngineConfig& cfg) {
    return {
        {"schedule",
         {{"steps", cfg.schedule.steps}, {"beta_start", cfg.schedule.beta_start}, {"beta_end", cfg.schedule.beta_end}}},
        {"sog",
         {{"t_start", cfg.sog.t_start},
          {"num_steps", cfg.sog.num_steps},
          {"guidance_scale", cfg.sog.guidance_scale},
          {"paca_enabled", cfg.sog.paca_enabled},
          {"flat_color", cfg.sog.flat_color}}},
        {"paca", {{"w_prime", cfg.sog.paca.w_prime}, {"max_attention_resolution", cfg.sog.paca.max_attention_resolution}}},
        {"cc",
         {{"t_start", cfg.cc.t_start},
          {"t_min", cfg.cc.t_min},
          {"num_steps", cfg.cc.num_steps},
          {"guidance_scale", cfg.cc.guidance_scale}}},
        {"regca",
         {{"enabled", cfg.cc.regca_enabled},
          {"separator", cfg.cc.regca_separator},
          {"max_attention_resolution", cfg.cc.regca_max_attention_resolution}}},
        {"segmentation", {{"allow_fallback", cfg.refine.allow_fallback}}},
        {"backends",
         {{"denoiser", cfg.backends.denoiser},
          {"codec", cfg.backends.codec},
          {"codec_factor", cfg.backends.codec_factor},
          {"segmenter", cfg.backends.segmenter},
          {"embedder", cfg.backends.embedder}}},
        {"output_dir", cfg.output_dir.string()},
        {"seed", cfg.seed},
        {"workers", cfg.workers},
    };
}

std::vector<std::string> check_config(const EngineConfig& cfg) {
    std::vector<std::string> issues;
    const int T = cfg.schedule.steps;
    if (T < 1) issues.push_back("schedule.steps must be positive");
    if (!(0.0 < cfg.schedule.beta_start && cfg.schedule.beta_start <= cfg.schedule.beta_end &&
          cfg.schedule.beta_end < 1.0)) {
        issues.push_back("schedule needs 0 < beta_start <= beta_end < 1");
    }
    if (cfg.sog.t_start < 1 || cfg.sog.t_start > T) issues.push_back("sog.t_start must lie in [1, schedule.steps]");
    if (cfg.sog.num_steps < 1) issues.push_back("sog.num_steps must be positive");
    if (cfg.sog.flat_color < -1.0f || cfg.sog.flat_color > 1.0f) issues.push_back("sog.flat_color must lie in [-1, 1]");
    if (cfg.sog.paca.w_prime < 0.0) issues.push_back("paca.w_prime must be non-negative");
    if (cfg.sog.paca.max_attention_resolution < 0) issues.push_back("paca.max_attention_resolution must be >= 0");
    if (cfg.cc.t_start < 1 || cfg.cc.t_start > T) issues.push_back("cc.t_start must lie in [1, schedule.steps]");
    if (cfg.cc.t_min < 0 || cfg.cc.t_min >= cfg.cc.t_start) issues.push_back("cc.t_min must lie in [0, cc.t_start)");
    if (cfg.cc.num_steps < 1) issues.push_back("cc.num_steps must be positive");
    if (cfg.cc.regca_max_attention_resolution < 0) issues.push_back("regca.max_attention_resolution must be >= 0");
    if (cfg.backends.codec_factor < 1) issues.push_back("backends.codec_factor must be positive");
    if (cfg.workers < 1) issues.push_back("workers must be positive");
    return issues;
}

json parse_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw Error(Errc::ParseError, "override '" + assignment + "' is not of the form key=value", "config");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;

    json out = json::object();
    json* node = &out;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw Error(Errc::ParseError, "override key '" + key + "' is malformed", "config");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            break;
        }
        node = &(*node)[part];
        start = dot + 1;
    }
    return out;
}

BackendSet make_backends(const EngineConfig& cfg, const Layout& layout) {
    const auto& b = cfg.backends;
    BackendSet set;
    if (b.codec != "toy") throw Error(Errc::ValidationError, "unknown codec backend '" + b.codec + "'", "config");
    if (layout.canvas_height % b.codec_factor || layout.canvas_width % b.codec_factor) {
        throw Error(Errc::ValidationError, "canvas size must be a multiple of backends.codec_factor", "config");
    }
    auto codec = std::make_shared<const ToyCodec>(b.codec_factor);
    set.latent_codec = codec;

    if (b.denoiser != "toy") {
        throw Error(Errc::ValidationError, "unknown denoiser backend '" + b.denoiser + "'", "config");
    }
    auto world = make_toy_world(layout, *codec);
    const Schedule schedule = make_schedule(cfg.schedule);
    set.denoiser = std::make_shared<const ToyDenoiser>(world, schedule, "toy");
    set.inpaint_denoiser = std::make_shared<const ToyDenoiser>(world, schedule, "toy-inpaint");
    set.text_encoder = std::make_shared<const ToyTextEncoder>(world);

    if (b.segmenter == "mock") {
        set.segmenter = std::make_shared<const MockSegmenter>();
    } else if (b.segmenter != "none") {
        throw Error(Errc::ValidationError, "unknown segmenter backend '" + b.segmenter + "'", "config");
    }
    if (b.embedder == "mock") {
        set.embedder = std::make_shared<const MockEmbedder>();
    } else if (b.embedder != "none") {
        throw Error(Errc::ValidationError, "unknown embedder backend '" + b.embedder + "'", "config");
    }
    return set;
}

namespace {

constexpr char kLatentMagic[4] = {'L', 'G', 'L', 'T'};
constexpr std::uint32_t kLatentVersion = 1;

} // namespace

void write_latent(const fs::path& path, const Latent& latent) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
    const std::int32_t dims[3] = {latent.channels(), latent.height(), latent.width()};
    out.write(kLatentMagic, 4);
    out.write(reinterpret_cast<const char*>(&kLatentVersion), sizeof kLatentVersion);
    out.write(reinterpret_cast<const char*>(dims), sizeof dims);
    out.write(reinterpret_cast<const char*>(latent.data().data()),
              static_cast<std::streamsize>(latent.size() * sizeof(double)));
    if (!out) throw Error(Errc::IoError, "short write to " + path.string());
}

Latent read_latent(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::IoError, "cannot read " + path.string());
    char magic[4];
    std::uint32_t version = 0;
    std::int32_t dims[3];
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(dims), sizeof dims);
    if (!in || std::memcmp(magic, kLatentMagic, 4) != 0 || version != kLatentVersion) {
        throw Error(Errc::ParseError, path.string() + " is not a latent dump");
    }
    if (dims[0] < 1 || dims[1] < 1 || dims[2] < 1) throw Error(Errc::ParseError, path.string() + ": bad dimensions");
    Latent latent(dims[0], dims[1], dims[2]);
    in.read(reinterpret_cast<char*>(latent.data().data()), static_cast<std::streamsize>(latent.size() * sizeof(double)));
    if (!in) throw Error(Errc::ParseError, path.string() + " is truncated");
    return latent;
}

std::string sanitize_id(const std::string& id) {
    std::string out = id;
    for (char& c : out) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '.' ||
                        c == '_' || c == '-';
        if (!ok) c = '_';
    }
    if (out.empty() || out == "." || out == "..") out = "_" + out;
    return out;
}

fs::path JobDir::object_dir(const std::string& object_id) const { return root / "objects" / sanitize_id(object_id); }

ObjectResult load_object_result(const JobDir& dir, const ObjectSpec& spec, const LatentCodec& codec) {
    const fs::path od = dir.object_dir(spec.id);
    if (!fs::exists(od / "latent.bin")) {
        throw Error(Errc::NotFound, "no stage-1 result for object '" + spec.id + "' in " + dir.root.string());
    }
    ObjectResult r;
    r.object_id = spec.id;
    r.latent_x0 = read_latent(od / "latent.bin");
    r.image = codec.decode(r.latent_x0);
    r.original_mask = spec.mask;
    r.refined_mask = gray_to_mask(read_png_gray(od / "refined_mask.png"));
    r.bbox = bbox(spec.mask);
    if (!r.refined_mask.same_shape(spec.mask) || r.image.height() != spec.mask.height() ||
        r.image.width() != spec.mask.width()) {
        throw Error(Errc::ShapeMismatch, "stored result for object '" + spec.id + "' does not match the layout");
    }
    return r;
}

namespace {

void write_object(const JobDir& dir, const ObjectSpec& spec, const ObjectResult& r) {
    const fs::path od = dir.object_dir(spec.id);
    fs::create_directories(od);
    write_png(od / "image.png", r.image);
    write_latent(od / "latent.bin", r.latent_x0);
    write_png(od / "mask.png", mask_to_gray(r.original_mask));
    write_png(od / "refined_mask.png", mask_to_gray(r.refined_mask));
    const json meta = {{"id", spec.id},
                       {"prompt", spec.prompt},
                       {"seed", spec.seed},
                       {"bbox", {r.bbox.x, r.bbox.y, r.bbox.w, r.bbox.h}}};
    write_text(od / "object.json", meta.dump(2) + "\n");
}

json timesteps_json(const std::vector<int>& steps) { return json(steps); }

} // namespace

JobOutput run_job(const Layout& layout, const EngineConfig& cfg, const fs::path& job_root, const RunOptions& options) {
    if (auto issues = validate(layout); !issues.empty()) {
        std::string msg = "invalid layout:";
        for (const auto& i : issues) msg += "\n  - " + i;
        throw Error(Errc::ValidationError, msg, "layout");
    }
    if (auto issues = check_config(cfg); !issues.empty()) {
        throw Error(Errc::ValidationError, "invalid configuration: " + issues.front(), "config");
    }
    if (options.reuse_from && fs::exists(job_root) && fs::equivalent(*options.reuse_from, job_root)) {
        throw Error(Errc::InvalidState, "a job cannot reuse results from its own directory", "job");
    }
    const BackendSet backends = make_backends(cfg, layout);
    const Schedule schedule = make_schedule(cfg.schedule);
    const auto& codec = *backends.latent_codec;

    JobOutput out;
    out.dir = JobDir{job_root};
    fs::create_directories(job_root);
    write_text(out.dir.layout(), save_layout(layout) + "\n");
    write_text(out.dir.config(), config_to_json(cfg).dump(2) + "\n");

    const int sog_steps = static_cast<int>(plan_timesteps(cfg.sog.num_steps, schedule.steps(), cfg.sog.t_start).steps.size());
    const Latent flat = encode_flat(codec, layout.canvas_height, layout.canvas_width, cfg.sog.flat_color);
    json objects_meta = json::array();
    for (const auto& spec : layout.objects) {
        const bool reuse = options.reuse_from &&
                           std::find(options.reuse_objects.begin(), options.reuse_objects.end(), spec.id) !=
                               options.reuse_objects.end();
        if (reuse) {
            const JobDir source{*options.reuse_from};
            ObjectResult r = load_object_result(source, spec, codec);
            const fs::path dst = out.dir.object_dir(spec.id);
            fs::remove_all(dst);
            fs::create_directories(dst.parent_path());
            fs::copy(source.object_dir(spec.id), dst, fs::copy_options::recursive);
            out.objects.push_back(std::move(r));
            objects_meta.push_back({{"id", spec.id}, {"seed", spec.seed}, {"reused", true}});
            if (options.progress) {
                options.progress({JobStage::Sog, spec.id, sog_steps, sog_steps});
                options.progress({JobStage::Segmentation, spec.id, 1, 1});
            }
            continue;
        }

        SogHooks hooks;
        int step = 0;
        const fs::path steps_dir = out.dir.object_dir(spec.id) / "steps";
        if (options.dump_intermediate) fs::create_directories(steps_dir);
        hooks.on_step = [&](int t, const Latent& x0) {
            ++step;
            if (options.dump_intermediate) {
                char name[32];
                std::snprintf(name, sizeof name, "t%04d.png", t);
                write_png(steps_dir / name, codec.decode(x0));
            }
            if (options.progress) options.progress({JobStage::Sog, spec.id, step, sog_steps});
        };
        ObjectResult r = generate_object(spec, cfg.sog, schedule, backends, hooks, &flat);
        if (backends.segmenter) {
            try {
                r.refined_mask = refine_mask(r.image, spec.mask, *backends.segmenter, cfg.refine);
            } catch (const Error& e) {
                throw Error(e.code(), e.what(), "segmentation:" + spec.id);
            }
        }
        if (options.progress) options.progress({JobStage::Segmentation, spec.id, 1, 1});
        write_object(out.dir, spec, r);
        objects_meta.push_back({{"id", spec.id}, {"seed", spec.seed}, {"reused", false}});
        out.objects.push_back(std::move(r));
    }

    const int cc_steps = static_cast<int>(plan_timesteps(cfg.cc.num_steps, schedule.steps(), cfg.cc.t_start).steps.size());
    CcConfig cc = cfg.cc;
    cc.seed = cfg.seed;
    CcHooks cc_hooks;
    int cc_step = 0;
    cc_hooks.on_step = [&](int, const Latent&) {
        ++cc_step;
        if (options.progress) options.progress({JobStage::Cc, {}, cc_step, cc_steps});
    };
    out.scene = compose_scene(out.objects, layout, cc, schedule, backends, cc_hooks);
    write_png(out.dir.scene_image(), out.scene.image);
    write_latent(out.dir.scene_latent(), out.scene.latent);

    if (options.dump_groups) {
        std::vector<BinaryMask> refined;
        for (const auto& r : out.objects) refined.push_back(r.refined_mask);
        const GroupAssignment g = assign_groups(refined, out.scene.latent.height(), out.scene.latent.width());
        write_label_png(job_root / "groups.png", out.scene.latent.height(), out.scene.latent.width(), g.group_of_pixel);
    }

    json bboxes = json::array();
    for (const auto& b : out.scene.per_object_bboxes) bboxes.push_back({b.x, b.y, b.w, b.h});
    const json provenance = {
        {"job", job_root.filename().string()},
        {"parent", options.parent_job},
        {"config", config_to_json(cfg)},
        {"backends",
         {{"denoiser", backends.denoiser->id()},
          {"inpaint_denoiser", backends.inpaint_denoiser->id()},
          {"text_encoder", backends.text_encoder->id()},
          {"codec", codec.id()},
          {"segmenter", backends.segmenter ? backends.segmenter->id() : "none"},
          {"embedder", backends.embedder ? backends.embedder->id() : "none"}}},
        {"objects", objects_meta},
        {"object_bboxes", bboxes},
        {"scene_seed", out.scene.scene_seed},
        {"sog_timesteps", timesteps_json(plan_timesteps(cfg.sog.num_steps, schedule.steps(), cfg.sog.t_start).steps)},
        {"cc_timesteps", timesteps_json(plan_timesteps(cfg.cc.num_steps, schedule.steps(), cfg.cc.t_start).steps)},
        {"anchored_timesteps", timesteps_json(out.scene.anchored_timesteps)},
        {"cc_denoiser_calls", out.scene.denoiser_calls},
    };
    write_text(out.dir.provenance(), provenance.dump(2) + "\n");
    return out;
}

JobOutput regenerate_object(const fs::path& source_root, const std::string& object_id,
                            std::optional<std::uint64_t> seed, const EngineConfig& cfg, const fs::path& new_root,
                            const RunOptions& options) {
    const JobDir source{source_root};
    if (!fs::exists(source.layout())) {
        throw Error(Errc::NotFound, "no job at " + source_root.string());
    }
    Layout layout = load_layout_file(source.layout());
    ObjectSpec* target = nullptr;
    for (auto& o : layout.objects) {
        if (o.id == object_id) target = &o;
    }
    if (!target) throw Error(Errc::NotFound, "job has no object '" + object_id + "'");
    if (seed) target->seed = *seed;

    RunOptions opts = options;
    opts.reuse_from = source_root;
    opts.reuse_objects.clear();
    for (const auto& o : layout.objects) {
        if (o.id != object_id) opts.reuse_objects.push_back(o.id);
    }
    if (opts.parent_job.empty()) opts.parent_job = source_root.filename().string();
    return run_job(layout, cfg, new_root, opts);
}

JobOutput recompose(const fs::path& source_root, const EngineConfig& cfg, const fs::path& new_root,
                    const RunOptions& options) {
    const JobDir source{source_root};
    if (!fs::exists(source.layout())) {
        throw Error(Errc::NotFound, "no job at " + source_root.string());
    }
    const Layout layout = load_layout_file(source.layout());
    RunOptions opts = options;
    opts.reuse_from = source_root;
    opts.reuse_objects.clear();
    for (const auto& o : layout.objects) opts.reuse_objects.push_back(o.id);
    if (opts.parent_job.empty()) opts.parent_job = source_root.filename().string();
    return run_job(layout, cfg, new_root, opts);
}

} // namespace layoutgen
