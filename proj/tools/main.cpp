#include "layoutgen/engine.hpp"
#include "layoutgen/error.hpp"
#include "layoutgen/eval.hpp"
#include "layoutgen/log.hpp"
#include "layoutgen/service.hpp"
#include "layoutgen/toy.hpp"

#include "CLI11.hpp"
#include "httplib.h"
#include "json.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <csignal>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace layoutgen;

namespace {

// Configuration precedence, lowest first: built-in defaults, --config file,
// --set overrides in command-line order, dedicated flags.
struct ConfigArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string output_dir;

    void add(CLI::App* app) {
        app->add_option("-c,--config", config_path, "engine configuration (JSON)")->check(CLI::ExistingFile);
        app->add_option("--set", overrides, "override one key, e.g. --set sog.t_start=600")->take_all();
        app->add_option("-o,--out", output_dir, "output directory (overrides output_dir)");
    }

    [[nodiscard]] EngineConfig resolve(EngineConfig base = {}) const {
        EngineConfig cfg = config_path.empty() ? std::move(base) : load_config_file(config_path, std::move(base));
        for (const auto& o : overrides) cfg = apply_config(parse_override(o), cfg);
        if (!output_dir.empty()) cfg.output_dir = output_dir;
        return cfg;
    }
};

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::IoError, "cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string fresh_job_id(const fs::path& out_dir) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "job-%Y%m%d-%H%M%S", &tm);
    std::string id = stamp;
    for (int n = 2; fs::exists(out_dir / id); ++n) id = std::string(stamp) + "-" + std::to_string(n);
    return id;
}

void progress_line(const ProgressEvent& e) {
    if (e.step != e.total_steps) return;
    switch (e.stage) {
    case JobStage::Sog: logger()->info("sog {}: {} steps", e.object_id, e.total_steps); break;
    case JobStage::Segmentation: logger()->info("segmentation {}: done", e.object_id); break;
    case JobStage::Cc: logger()->info("cc: {} steps", e.total_steps); break;
    }
}

std::vector<double> parse_list(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw Error(Errc::ParseError, "'" + item + "' is not a number");
        }
    }
    return out;
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
    ConfigArgs config;
    std::string layout_path;
    std::string from;
    std::string regenerate_object;
    std::optional<std::uint64_t> seed;
    std::string job_id;
    bool dump_intermediate = false;
    bool dump_groups = false;
};

int run_generate(const GenerateArgs& a) {
    RunOptions options;
    options.progress = progress_line;
    options.dump_intermediate = a.dump_intermediate;
    options.dump_groups = a.dump_groups;

    if (!a.regenerate_object.empty()) {
        if (a.from.empty()) throw Error(Errc::ValidationError, "--regenerate-object needs --from <job dir>", "cli");
        const JobDir source{a.from};
        EngineConfig cfg = a.config.resolve(load_config_file(source.config()));
        if (a.config.output_dir.empty()) cfg.output_dir = fs::path(a.from).parent_path();
        const std::string id = a.job_id.empty() ? fresh_job_id(cfg.output_dir) : a.job_id;
        const JobOutput out = regenerate_object(a.from, a.regenerate_object, a.seed, cfg, cfg.output_dir / id, options);
        std::cout << out.dir.root.string() << "\n";
        return 0;
    }
    if (a.layout_path.empty()) throw Error(Errc::ValidationError, "generate needs a layout file", "cli");
    EngineConfig cfg = a.config.resolve();
    if (a.seed) cfg.seed = *a.seed;
    const Layout layout = load_layout_file(a.layout_path);
    const std::string id = a.job_id.empty() ? fresh_job_id(cfg.output_dir) : a.job_id;
    const JobOutput out = run_job(layout, cfg, cfg.output_dir / id, options);
    std::cout << out.dir.root.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- sog

struct SogArgs {
    ConfigArgs config;
    std::string layout_path;
    std::string object_id;
    bool dump_intermediate = false;
    bool dump_attention = false;
};

GrayImage heatmap(const Matrix& probs, int column, int height, int width) {
    GrayImage g{height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width)};
    double hi = 0.0;
    for (int p = 0; p < probs.rows(); ++p) hi = std::max(hi, probs.at(p, column));
    for (int p = 0; p < probs.rows(); ++p) {
        g.pixels[static_cast<std::size_t>(p)] =
            static_cast<std::uint8_t>(std::lround(hi > 0.0 ? 255.0 * probs.at(p, column) / hi : 0.0));
    }
    return g;
}

int run_sog(const SogArgs& a) {
    const EngineConfig cfg = a.config.resolve();
    const Layout layout = load_layout_file(a.layout_path);
    if (auto issues = validate(layout); !issues.empty()) {
        throw Error(Errc::ValidationError, "invalid layout: " + issues.front(), "layout");
    }
    const ObjectSpec* spec = layout.find(a.object_id);
    if (!spec) throw Error(Errc::NotFound, "layout has no object '" + a.object_id + "'", "cli");

    const BackendSet backends = make_backends(cfg, layout);
    const Schedule schedule = make_schedule(cfg.schedule);
    const fs::path dir = cfg.output_dir / sanitize_id(spec->id);
    fs::create_directories(dir);

    SogHooks hooks;
    if (a.dump_intermediate) {
        fs::create_directories(dir / "steps");
        hooks.on_step = [&](int t, const Latent& x0) {
            char name[32];
            std::snprintf(name, sizeof name, "t%04d.png", t);
            write_png(dir / "steps" / name, backends.latent_codec->decode(x0));
        };
    }
    if (a.dump_attention) {
        fs::create_directories(dir / "attention");
        hooks.on_scores = [&](const AttentionLayerInfo& layer, int t, int head, const SimilarityMatrix& before,
                              const SimilarityMatrix& after) {
            if (head != 0) return;
            // Column 0 is start-of-text, column 1 the first prompt token.
            for (const auto& [tag, scores] : {std::pair{"before", &before}, std::pair{"after", &after}}) {
                Matrix probs = *scores;
                softmax_rows(probs);
                char name[96];
                std::snprintf(name, sizeof name, "%s_t%04d_%s_sot.png", layer.name.c_str(), t, tag);
                write_png(dir / "attention" / name, heatmap(probs, 0, layer.height, layer.width));
                std::snprintf(name, sizeof name, "%s_t%04d_%s_prompt.png", layer.name.c_str(), t, tag);
                write_png(dir / "attention" / name, heatmap(probs, 1, layer.height, layer.width));
            }
        };
    }
    const ObjectResult r = generate_object(*spec, cfg.sog, schedule, backends, hooks);
    write_png(dir / "image.png", r.image);
    write_latent(dir / "latent.bin", r.latent_x0);
    write_png(dir / "mask.png", mask_to_gray(r.original_mask));
    std::cout << dir.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- compose

struct ComposeArgs {
    ConfigArgs config;
    std::string from;
    std::string job_id;
    bool dump_groups = false;
};

int run_compose(const ComposeArgs& a) {
    const JobDir source{a.from};
    EngineConfig cfg = a.config.resolve(load_config_file(source.config()));
    if (a.config.output_dir.empty()) cfg.output_dir = fs::path(a.from).parent_path();
    RunOptions options;
    options.progress = progress_line;
    options.dump_groups = a.dump_groups;
    const std::string id = a.job_id.empty() ? fresh_job_id(cfg.output_dir) : a.job_id;
    const JobOutput out = recompose(a.from, cfg, cfg.output_dir / id, options);
    std::cout << out.dir.root.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
    ConfigArgs config;
    std::string annotations;
    std::size_t limit = 0;
    int target_size = 512;
    double min_area = 0.05;
    std::string prompt_template = "a photo of a {}";
    std::string images;
    std::string report;
};

int run_eval(const EvalArgs& a) {
    const EngineConfig cfg = a.config.resolve();
    CocoOptions opts;
    opts.limit = a.limit;
    opts.target_size = a.target_size;
    opts.min_area_fraction = a.min_area;
    opts.prompt_template = a.prompt_template;
    const std::vector<Layout> layouts = prepare_layouts(read_text(a.annotations), opts);
    logger()->info("{} layouts after filtering", layouts.size());

    std::vector<std::vector<ObjectScore>> scores;
    for (std::size_t i = 0; i < layouts.size(); ++i) {
        const Layout& layout = layouts[i];
        const BackendSet backends = make_backends(cfg, layout);
        Image image;
        if (!a.images.empty()) {
            image = read_png_rgb(fs::path(a.images) / (std::to_string(i) + ".png"));
        } else {
            image = run_job(layout, cfg, cfg.output_dir / "eval" / std::to_string(i)).scene.image;
        }
        scores.push_back(score_objects(image, layout, backends.embedder.get(), backends.segmenter.get()));
    }
    EvalReport report = aggregate(scores);
    report.assumptions = {
        "global prompt: category names joined with \"" + opts.global_separator + "\"",
        "object prompt template: \"" + opts.prompt_template + "\"",
        "masks with area fraction < " + std::to_string(opts.min_area_fraction) + " dropped; kept masks resized to " +
            std::to_string(opts.target_size) + "x" + std::to_string(opts.target_size) + " (nearest)",
        "embedder: " + cfg.backends.embedder + ", segmenter: " + cfg.backends.segmenter,
    };
    std::cout << format_table(report);
    if (!a.report.empty()) {
        std::ofstream out(a.report);
        out << to_json(report).dump(2) << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------- ablate-start

struct AblateArgs {
    ConfigArgs config;
    std::string layout_path;
    std::string object_id;
    std::string t_starts = "200,400,600,800,1000";
    std::string colors = "-1,0,1";
    bool no_paca = false;
    std::string grid = "ablate_start.png";
};

int run_ablate(const AblateArgs& a) {
    EngineConfig cfg = a.config.resolve();
    if (a.no_paca) cfg.sog.paca_enabled = false;
    const Layout layout = load_layout_file(a.layout_path);
    const ObjectSpec* spec = a.object_id.empty() ? (layout.objects.empty() ? nullptr : &layout.objects.front())
                                                 : layout.find(a.object_id);
    if (!spec) throw Error(Errc::NotFound, "layout has no object '" + a.object_id + "'", "cli");

    const std::vector<double> ts = parse_list(a.t_starts);
    const std::vector<double> colors = parse_list(a.colors);
    const BackendSet backends = make_backends(cfg, layout);
    const Schedule schedule = make_schedule(cfg.schedule);
    const int H = layout.canvas_height;
    const int W = layout.canvas_width;
    constexpr int gap = 2;
    Image grid(static_cast<int>(colors.size()) * (H + gap) - gap, static_cast<int>(ts.size()) * (W + gap) - gap, 1.0f);
    for (std::size_t r = 0; r < colors.size(); ++r) {
        for (std::size_t c = 0; c < ts.size(); ++c) {
            SogConfig sog = cfg.sog;
            sog.t_start = static_cast<int>(ts[c]);
            sog.flat_color = static_cast<float>(colors[r]);
            const Image cell = generate_object(*spec, sog, schedule, backends).image;
            const int oy = static_cast<int>(r) * (H + gap);
            const int ox = static_cast<int>(c) * (W + gap);
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    for (int k = 0; k < 3; ++k) grid.at(oy + y, ox + x, k) = cell.at(y, x, k);
                }
            }
            logger()->info("t_start {} colour {}: done", sog.t_start, sog.flat_color);
        }
    }
    // Relative grid paths land in the output directory.
    const fs::path out = fs::path(a.grid).is_absolute() ? fs::path(a.grid) : cfg.output_dir / a.grid;
    fs::create_directories(out.parent_path());
    write_png(out, grid);
    std::cout << out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- serve

httplib::Server* g_server = nullptr;

int run_serve(const ConfigArgs& config, const std::string& host, int port) {
    const EngineConfig cfg = config.resolve();
    JobManager jobs(cfg, cfg.output_dir);
    httplib::Server server;
    register_routes(server, jobs);
    g_server = &server;
    std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
    });
    logger()->info("listening on http://{}:{}", host, port);
    if (!server.listen(host, port)) throw Error(Errc::IoError, "cannot listen on " + host + ":" + std::to_string(port));
    return 0;
}

int exit_code(const Error& e) {
    switch (e.code()) {
    case Errc::ParseError:
    case Errc::ValidationError: return 2;
    default: return 1;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Layout-conditioned image generation engine"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "debug logging");

    GenerateArgs gen;
    auto* generate = app.add_subcommand("generate", "run both stages for a layout, or regenerate one object of a job");
    gen.config.add(generate);
    generate->add_option("layout", gen.layout_path, "layout document");
    generate->add_option("--from", gen.from, "existing job directory (with --regenerate-object)");
    generate->add_option("--regenerate-object", gen.regenerate_object, "object id to regenerate");
    generate->add_option("--seed", gen.seed, "scene seed, or the new object seed with --regenerate-object");
    generate->add_option("--job-id", gen.job_id, "job directory name");
    generate->add_flag("--dump-intermediate", gen.dump_intermediate, "write per-step clean predictions");
    generate->add_flag("--dump-groups", gen.dump_groups, "write the region-group partition");

    SogArgs sog;
    auto* sog_cmd = app.add_subcommand("sog", "generate a single object on its flat background");
    sog.config.add(sog_cmd);
    sog_cmd->add_option("layout", sog.layout_path, "layout document")->required();
    sog_cmd->add_option("--object", sog.object_id, "object id")->required();
    sog_cmd->add_flag("--dump-intermediate", sog.dump_intermediate, "write per-step clean predictions");
    sog_cmd->add_flag("--dump-attention", sog.dump_attention, "write attention heatmaps before/after adjustment");

    ComposeArgs comp;
    auto* compose = app.add_subcommand("compose", "recompose the scene of a job from its stage-1 results");
    comp.config.add(compose);
    compose->add_option("job", comp.from, "existing job directory")->required()->check(CLI::ExistingDirectory);
    compose->add_option("--job-id", comp.job_id, "job directory name");
    compose->add_flag("--dump-groups", comp.dump_groups, "write the region-group partition");

    EvalArgs ev;
    auto* eval = app.add_subcommand("eval", "local CLIP score and local IoU over COCO layouts");
    ev.config.add(eval);
    eval->add_option("--annotations", ev.annotations, "COCO instance annotations")->required()->check(CLI::ExistingFile);
    eval->add_option("--limit", ev.limit, "number of layouts (0 = all)");
    eval->add_option("--target-size", ev.target_size, "layout canvas size");
    eval->add_option("--min-area", ev.min_area, "minimum mask area fraction");
    eval->add_option("--prompt-template", ev.prompt_template, "object prompt, {} = category");
    eval->add_option("--images", ev.images, "score <dir>/<index>.png instead of generating");
    eval->add_option("--report", ev.report, "write the report as JSON");

    AblateArgs ab;
    auto* ablate = app.add_subcommand("ablate-start", "grid of single-object results over start timestep and flat colour");
    ab.config.add(ablate);
    ablate->add_option("layout", ab.layout_path, "layout document")->required();
    ablate->add_option("--object", ab.object_id, "object id (default: first)");
    ablate->add_option("--t-starts", ab.t_starts, "comma-separated start timesteps");
    ablate->add_option("--colors", ab.colors, "comma-separated flat colours in [-1,1]");
    ablate->add_flag("--no-paca", ab.no_paca, "disable the cross-attention adjustment");
    ablate->add_option("--grid", ab.grid, "output PNG, relative to the output directory");

    ConfigArgs serve_cfg;
    std::string host = "127.0.0.1";
    int port = 8080;
    auto* serve = app.add_subcommand("serve", "HTTP API for the layout editor");
    serve_cfg.add(serve);
    serve->add_option("--host", host, "bind address");
    serve->add_option("--port", port, "port");

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

    try {
        if (*generate) return run_generate(gen);
        if (*sog_cmd) return run_sog(sog);
        if (*compose) return run_compose(comp);
        if (*eval) return run_eval(ev);
        if (*ablate) return run_ablate(ab);
        if (*serve) return run_serve(serve_cfg, host, port);
    } catch (const Error& e) {
        std::cerr << json{{"code", errc_name(e.code())}, {"stage", e.stage()}, {"message", e.what()}}.dump() << "\n";
        return exit_code(e);
    } catch (const std::exception& e) {
        std::cerr << json{{"code", "InternalError"}, {"stage", ""}, {"message", e.what()}}.dump() << "\n";
        return 1;
    }
    return 0;
}
