#include "layoutgen/toy.hpp"

#include "layoutgen/error.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace layoutgen {

ToyWorld::ToyWorld(int channels, int height, int width,
                   std::vector<std::pair<std::string, Latent>> targets)
    : ToyWorld(channels, height, width, std::move(targets), Latent(channels, height, width)) {}

ToyWorld::ToyWorld(int channels, int height, int width,
                   std::vector<std::pair<std::string, Latent>> targets, Latent background_target)
    : channels_(channels), height_(height), width_(width), background_(std::move(background_target)) {
    const Latent shape(channels, height, width);
    if (!background_.same_shape(shape)) {
        throw Error(Errc::ShapeMismatch, "toy background target has the wrong shape");
    }
    for (auto& [prompt, target] : targets) {
        if (!target.same_shape(shape)) {
            throw Error(Errc::ShapeMismatch, "toy target for '" + prompt + "' has the wrong shape");
        }
        if (index_.contains(prompt)) continue;
        index_.emplace(prompt, static_cast<int>(prompts_.size()));
        prompts_.push_back(prompt);
        targets_.push_back(std::move(target));
    }
}

const Latent& ToyWorld::target(const std::string& prompt) const {
    auto it = index_.find(prompt);
    if (it == index_.end()) {
        throw Error(Errc::UnknownPrompt, "prompt not registered in toy world: '" + prompt + "'");
    }
    return targets_[static_cast<std::size_t>(it->second)];
}

bool ToyWorld::contains(const std::string& prompt) const { return index_.contains(prompt); }

int ToyWorld::code_of(const std::string& prompt) const {
    auto it = index_.find(prompt);
    return it == index_.end() ? kUnknownCode : it->second + 2;
}

const Latent& ToyWorld::target_for_code(int code) const {
    if (code < 2) return background_;
    return targets_.at(static_cast<std::size_t>(code - 2));
}

Latent toy_noise_for_target(const Latent& x_t, int t, const Latent& target, const Schedule& s) {
    if (t < 1) {
        throw Error(Errc::InvalidTimesteps, "toy denoiser needs t >= 1");
    }
    if (!x_t.same_shape(target)) {
        throw Error(Errc::ShapeMismatch, "toy target shape differs from latent");
    }
    const double a = s.alpha_bar(t);
    const double sa = std::sqrt(a);
    const double inv = 1.0 / std::sqrt(1.0 - a);
    Latent eps = x_t;
    auto& e = eps.data();
    const auto& g = target.data();
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = (e[i] - sa * g[i]) * inv;
    return eps;
}

Latent toy_denoiser_predict(const Latent& x_t, int t, const std::string& prompt, const ToyWorld& world,
                            const Schedule& s) {
    return toy_noise_for_target(x_t, t, world.target(prompt), s);
}

ToyTextEncoder::ToyTextEncoder(std::shared_ptr<const ToyWorld> world, int max_tokens)
    : world_(std::move(world)), max_tokens_(max_tokens) {
    if (max_tokens_ < 2) {
        throw Error(Errc::InvalidRange, "toy text encoder needs room for SOT and EOT");
    }
}

TextEmbedding ToyTextEncoder::encode(const std::string& prompt) const {
    std::istringstream words_in(prompt);
    int words = 0;
    for (std::string w; words_in >> w;) ++words;
    words = std::min(words, max_tokens_ - 2);

    const int dim = world_->code_dim();
    const int code = world_->code_of(prompt);
    TextEmbedding out;
    out.prompt = prompt;
    out.tokens = Matrix(max_tokens_, dim);
    out.sot_index = 0;
    out.eot_index = words + 1;
    out.padding_begin = words + 2;
    out.tokens.at(0, ToyWorld::kSotCode) = 1.0;
    for (int row = 1; row < max_tokens_; ++row) out.tokens.at(row, code) = 1.0;
    return out;
}

namespace {

class IdentityProjector final : public KeyValueProjector {
  public:
    explicit IdentityProjector(int heads) : heads_(heads) {}

    [[nodiscard]] std::vector<HeadKV> project(const TextEmbedding& text) const override {
        return std::vector<HeadKV>(static_cast<std::size_t>(heads_), HeadKV{text.tokens, text.tokens});
    }

  private:
    int heads_;
};

} // namespace

ToyDenoiser::ToyDenoiser(std::shared_ptr<const ToyWorld> world, Schedule schedule, std::string name,
                         double query_scale)
    : world_(std::move(world)), schedule_(std::move(schedule)), name_(std::move(name)),
      query_scale_(query_scale) {
    const int h = world_->height();
    const int w = world_->width();
    layers_.push_back({"down.0.attn2", h, w, 2, BlockPosition::Down});
    layers_.push_back({"mid.0.attn2", (h + 1) / 2, (w + 1) / 2, 1, BlockPosition::Mid});
    for (std::size_t l = 0; l < layers_.size(); ++l) queries_.push_back(queries_for(l));
}

std::vector<Matrix> ToyDenoiser::queries_for(std::size_t layer) const {
    const auto& info = layers_[layer];
    std::vector<Matrix> heads;
    for (int h = 0; h < info.heads; ++h) {
        std::mt19937_64 rng(fnv1a(info.name) + static_cast<std::uint64_t>(h));
        std::uniform_real_distribution<double> uni(0.0, query_scale_);
        Matrix q(info.pixels(), world_->code_dim());
        for (auto& v : q.data()) v = uni(rng);
        heads.push_back(std::move(q));
    }
    return heads;
}

Latent ToyDenoiser::predict_noise(const DenoiseRequest& request) const {
    std::vector<int> codes;
    return predict_noise(request, codes);
}

Latent ToyDenoiser::predict_noise(const DenoiseRequest& request, std::vector<int>& codes) const {
    const Latent& x = request.x_t;
    if (x.channels() != world_->channels() || x.height() != world_->height() ||
        x.width() != world_->width()) {
        throw Error(Errc::DimensionMismatch, name_ + ": latent shape does not match the toy world");
    }
    if (request.text.tokens.cols() != world_->code_dim()) {
        throw Error(Errc::DimensionMismatch, name_ + ": text embedding is not from this toy world");
    }

    std::vector<Matrix> decoded_layer;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const IdentityProjector projector(layers_[l].heads);
        const auto context = projector.project(request.text);
        const CrossAttentionCall call{layers_[l], request.branch, request.timestep, queries_[l],
                                      request.text, context, projector};
        auto out = request.attention.attend(call);
        if (out.size() != static_cast<std::size_t>(layers_[l].heads)) {
            throw Error(Errc::DimensionMismatch, name_ + ": attention processor returned wrong head count");
        }
        for (const auto& head : out) {
            if (head.rows() != layers_[l].pixels() || head.cols() != world_->code_dim()) {
                throw Error(Errc::DimensionMismatch, name_ + ": attention output has the wrong shape");
            }
        }
        if (l == 0) decoded_layer = std::move(out);
    }

    const int pixels = x.plane();
    codes.assign(static_cast<std::size_t>(pixels), ToyWorld::kSotCode);
    for (int p = 0; p < pixels; ++p) {
        int best = 0;
        double best_weight = -1.0;
        for (int k = 0; k < world_->code_dim(); ++k) {
            double weight = 0.0;
            for (const auto& head : decoded_layer) weight += head.at(p, k);
            if (weight > best_weight) {
                best_weight = weight;
                best = k;
            }
        }
        codes[static_cast<std::size_t>(p)] = best;
    }

    Latent target(x.channels(), x.height(), x.width());
    for (int c = 0; c < x.channels(); ++c) {
        for (int p = 0; p < pixels; ++p) {
            const std::size_t i = static_cast<std::size_t>(c) * pixels + p;
            target.data()[i] = world_->target_for_code(codes[static_cast<std::size_t>(p)]).data()[i];
        }
    }
    ++invocations_;
    return toy_noise_for_target(x, request.timestep, target, schedule_);
}

ToyCodec::ToyCodec(int factor) : factor_(factor) {
    if (factor < 1) throw Error(Errc::InvalidRange, "codec factor must be >= 1");
}

std::string ToyCodec::id() const { return "toy-codec-f" + std::to_string(factor_); }

Latent ToyCodec::encode(const Image& image) const {
    if (image.height() % factor_ != 0 || image.width() % factor_ != 0) {
        throw Error(Errc::DimensionMismatch, "image size must be a multiple of the codec factor");
    }
    const int h = image.height() / factor_;
    const int w = image.width() / factor_;
    Latent out(channels(), h, w);
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
            for (int c = 0; c < 3; ++c) {
                const int ch = (c * factor_ + y % factor_) * factor_ + x % factor_;
                out.at(ch, y / factor_, x / factor_) = image.at(y, x, c);
            }
        }
    }
    return out;
}

Image ToyCodec::decode(const Latent& latent) const {
    if (latent.channels() != channels()) {
        throw Error(Errc::DimensionMismatch, "latent channel count does not match the codec");
    }
    Image out(latent.height() * factor_, latent.width() * factor_);
    for (int y = 0; y < out.height(); ++y) {
        for (int x = 0; x < out.width(); ++x) {
            for (int c = 0; c < 3; ++c) {
                const int ch = (c * factor_ + y % factor_) * factor_ + x % factor_;
                out.at(y, x, c) = static_cast<float>(latent.at(ch, y / factor_, x / factor_));
            }
        }
    }
    return out;
}

std::vector<ScoredMask> MockSegmenter::segment(const Image& image, const BBox& box) const {
    if (box.x < 0 || box.y < 0 || box.w < 1 || box.h < 1 || box.x + box.w > image.width() ||
        box.y + box.h > image.height()) {
        throw Error(Errc::InvalidRange, "box prompt outside image");
    }
    BinaryMask bright(image.height(), image.width());
    BinaryMask filled(image.height(), image.width());
    for (int y = box.y; y < box.y + box.h; ++y) {
        for (int x = box.x; x < box.x + box.w; ++x) {
            const float lum = (image.at(y, x, 0) + image.at(y, x, 1) + image.at(y, x, 2)) / 3.0f;
            bright.set(y, x, lum > threshold_);
            filled.set(y, x, true);
        }
    }
    return {ScoredMask{std::move(bright), 0.9}, ScoredMask{std::move(filled), 0.4}};
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::vector<double> hashed_unit_vector(std::uint64_t seed, int dim) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> v(static_cast<std::size_t>(dim));
    double norm = 0.0;
    for (auto& x : v) {
        x = normal(rng);
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    return v;
}

std::vector<double> MockEmbedder::embed_text(const std::string& text) const {
    return hashed_unit_vector(fnv1a(text, fnv1a("text:")), dim_);
}

std::vector<double> MockEmbedder::embed_image(const Image& image) const {
    std::string bytes = "image:" + std::to_string(image.height()) + "x" + std::to_string(image.width());
    bytes.reserve(bytes.size() + image.data().size());
    for (float v : image.data()) bytes.push_back(static_cast<char>(to_byte(v)));
    return hashed_unit_vector(fnv1a(bytes), dim_);
}

std::array<float, 3> toy_prompt_color(std::string_view prompt) {
    std::uint64_t h = fnv1a(prompt);
    std::array<float, 3> rgb{};
    for (auto& c : rgb) {
        // 8-bit levels keep the colour exactly representable after PNG export.
        const auto level = static_cast<std::uint8_t>(100 + (h & 0xFF) % 156);
        c = from_byte(level);
        h >>= 8;
    }
    return rgb;
}

std::shared_ptr<const ToyWorld> make_toy_world(const Layout& layout, const LatentCodec& codec) {
    auto constant = [&](std::array<float, 3> rgb) {
        Image img(layout.canvas_height, layout.canvas_width);
        for (std::size_t i = 0; i < img.data().size(); ++i) img.data()[i] = rgb[i % 3];
        return codec.encode(img);
    };
    std::vector<std::pair<std::string, Latent>> targets;
    for (const auto& o : layout.objects) targets.emplace_back(o.prompt, constant(toy_prompt_color(o.prompt)));
    targets.emplace_back(layout.global_prompt, constant(toy_prompt_color(layout.global_prompt)));
    Latent background = constant({0.0f, 0.0f, 0.0f});
    const int c = background.channels();
    const int h = background.height();
    const int w = background.width();
    return std::make_shared<const ToyWorld>(c, h, w, std::move(targets), std::move(background));
}

} // namespace layoutgen
