#pragma once

#include "layoutgen/backends.hpp"
#include "layoutgen/layout.hpp"
#include "layoutgen/log.hpp"
#include "layoutgen/toy.hpp"

#include <spdlog/sinks/ringbuffer_sink.h>

#include <cmath>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace testing {

using namespace layoutgen;

inline BinaryMask random_mask(std::mt19937_64& rng, int h, int w, double p = 0.5) {
    std::bernoulli_distribution on(p);
    BinaryMask m(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) m.set(y, x, on(rng));
    }
    return m;
}

inline BinaryMask rect_mask(int h, int w, int x0, int y0, int rw, int rh) {
    BinaryMask m(h, w);
    for (int y = y0; y < y0 + rh; ++y) {
        for (int x = x0; x < x0 + rw; ++x) m.set(y, x, true);
    }
    return m;
}

inline Matrix random_matrix(std::mt19937_64& rng, int rows, int cols, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(rows, cols);
    for (auto& v : m.data()) v = u(rng);
    return m;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

/// Two rectangles on a small canvas, disjoint unless `overlap` is set.
inline Layout two_object_layout(int size = 16, bool overlap = false) {
    Layout l;
    l.canvas_height = l.canvas_width = size;
    l.global_prompt = "a quiet room";
    const int q = size / 4;
    l.objects.push_back({"cat", "a cat", 11, rect_mask(size, size, q / 2, q / 2, 2 * q, 2 * q)});
    const int x1 = overlap ? q + q / 2 : 2 * q + q / 2;
    l.objects.push_back({"lamp", "a brass lamp", 22, rect_mask(size, size, x1, x1, q + q / 2, q + q / 2)});
    return l;
}

struct ToySetup {
    std::shared_ptr<const ToyWorld> world;
    BackendSet backends;
};

inline ToySetup toy_setup(const Layout& layout, const Schedule& schedule, int codec_factor = 1) {
    ToySetup s;
    auto codec = std::make_shared<const ToyCodec>(codec_factor);
    s.world = make_toy_world(layout, *codec);
    s.backends.latent_codec = codec;
    s.backends.denoiser = std::make_shared<const ToyDenoiser>(s.world, schedule);
    s.backends.inpaint_denoiser = std::make_shared<const ToyDenoiser>(s.world, schedule, "toy-inpaint");
    s.backends.text_encoder = std::make_shared<const ToyTextEncoder>(s.world);
    s.backends.segmenter = std::make_shared<const MockSegmenter>();
    s.backends.embedder = std::make_shared<const MockEmbedder>();
    return s;
}

/// Collects log lines emitted while alive.
class LogCapture {
  public:
    LogCapture() : sink_(std::make_shared<spdlog::sinks::ringbuffer_sink_mt>(256)) {
        logger()->sinks().push_back(sink_);
    }
    ~LogCapture() {
        auto& sinks = logger()->sinks();
        sinks.erase(std::remove(sinks.begin(), sinks.end(), sink_), sinks.end());
    }
    [[nodiscard]] std::vector<std::string> lines() const { return sink_->last_formatted(); }
    [[nodiscard]] bool contains(const std::string& needle) const {
        for (const auto& l : lines()) {
            if (l.find(needle) != std::string::npos) return true;
        }
        return false;
    }

  private:
    std::shared_ptr<spdlog::sinks::ringbuffer_sink_mt> sink_;
};

class TempDir {
  public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / (tag + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    [[nodiscard]] const std::filesystem::path& path() const { return path_; }

  private:
    std::filesystem::path path_;
};

} // namespace testing
