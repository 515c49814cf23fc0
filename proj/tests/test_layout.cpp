#include "doctest.h"
#include "support.hpp"

#include "layoutgen/error.hpp"
#include "layoutgen/image.hpp"
#include "layoutgen/layout.hpp"

#include <fstream>
#include <set>

using namespace layoutgen;
using namespace testing;

namespace {

BBox brute_bbox(const BinaryMask& m) {
    int x0 = m.width(), y0 = m.height(), x1 = -1, y1 = -1;
    for (int y = 0; y < m.height(); ++y) {
        for (int x = 0; x < m.width(); ++x) {
            if (!m.at(y, x)) continue;
            x0 = std::min(x0, x);
            y0 = std::min(y0, y);
            x1 = std::max(x1, x);
            y1 = std::max(y1, y);
        }
    }
    return {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

// Cell (r, c) of a downsample covers source rows [r·H/th, (r+1)·H/th); the
// coverage is integrated in floating point over fractional pixel overlaps.
BinaryMask brute_downsample(const BinaryMask& m, int th, int tw) {
    BinaryMask out(th, tw);
    const double sy = static_cast<double>(m.height()) / th;
    const double sx = static_cast<double>(m.width()) / tw;
    for (int r = 0; r < th; ++r) {
        for (int c = 0; c < tw; ++c) {
            double covered = 0.0;
            for (int y = 0; y < m.height(); ++y) {
                const double oy = std::max(0.0, std::min(y + 1.0, (r + 1) * sy) - std::max<double>(y, r * sy));
                if (oy <= 0.0) continue;
                for (int x = 0; x < m.width(); ++x) {
                    if (!m.at(y, x)) continue;
                    const double ox = std::max(0.0, std::min(x + 1.0, (c + 1) * sx) - std::max<double>(x, c * sx));
                    covered += oy * ox;
                }
            }
            out.set(r, c, covered / (sy * sx) > 0.5 + 1e-12);
        }
    }
    return out;
}

std::string minimal_doc(const std::string& prompt = "a cat", const std::string& extra = "") {
    return R"({"canvas":{"h":4,"w":4},"global_prompt":"a room",)" + extra +
           R"("objects":[{"id":"a","prompt":")" + prompt + R"(","seed":3,"mask":{"rle":[5,2,2,2,5]}}]})";
}

} // namespace

TEST_CASE("bbox is the tightest box around the set pixels") {
    BinaryMask single(8, 8);
    single.set(3, 5, true);
    CHECK(bbox(single) == BBox{5, 3, 1, 1});
    CHECK(bbox(BinaryMask(8, 8, 1)) == BBox{0, 0, 8, 8});
    CHECK_THROWS_AS(bbox(BinaryMask(8, 8)), Error);

    std::mt19937_64 rng(7);
    for (int i = 0; i < 200; ++i) {
        BinaryMask m = random_mask(rng, 64, 64, 0.002 + 0.01 * (i % 5));
        if (!m.any()) m.set(i % 64, (i * 7) % 64, true);
        const BBox b = bbox(m);
        REQUIRE(b == brute_bbox(m));
        // Shrinking any side drops a set pixel.
        auto count_in = [&](int x0, int y0, int x1, int y1) {
            int n = 0;
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) n += m.at(y, x);
            return n;
        };
        const int total = static_cast<int>(m.count());
        CHECK(count_in(b.x, b.y, b.x + b.w, b.y + b.h) == total);
        CHECK(count_in(b.x + 1, b.y, b.x + b.w, b.y + b.h) < total);
        CHECK(count_in(b.x, b.y + 1, b.x + b.w, b.y + b.h) < total);
        CHECK(count_in(b.x, b.y, b.x + b.w - 1, b.y + b.h) < total);
        CHECK(count_in(b.x, b.y, b.x + b.w, b.y + b.h - 1) < total);
    }
}

TEST_CASE("area fraction counts set pixels") {
    CHECK(mask_area_fraction(BinaryMask(8, 8)) == 0.0);
    CHECK(mask_area_fraction(BinaryMask(8, 8, 1)) == 1.0);
    BinaryMask m(512, 512);
    for (int i = 0; i < 13107; ++i) m.set(i / 512, i % 512, true);
    CHECK(mask_area_fraction(m) == doctest::Approx(13107.0 / 262144.0).epsilon(1e-15));
}

TEST_CASE("mask values other than 0 and 1 are rejected") {
    CHECK_THROWS_AS(BinaryMask(1, 2, std::vector<std::uint8_t>{0, 2}), Error);
}

TEST_CASE("background is the complement of the union") {
    CHECK(background_mask(std::vector{BinaryMask(4, 4, 1)}) == BinaryMask(4, 4));
    const BinaryMask left = rect_mask(8, 8, 0, 0, 4, 8);
    const BinaryMask right = rect_mask(8, 8, 4, 0, 4, 8);
    CHECK(background_mask(std::vector{left, right}) == BinaryMask(8, 8));

    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<BinaryMask> ms;
        for (int k = 0; k < 3; ++k) ms.push_back(random_mask(rng, 32, 32, 0.2));
        const BinaryMask bg = background_mask(ms);
        for (int y = 0; y < 32; ++y) {
            for (int x = 0; x < 32; ++x) {
                const bool any = ms[0].at(y, x) || ms[1].at(y, x) || ms[2].at(y, x);
                REQUIRE(bg.at(y, x) == !any);
            }
        }
    }
    CHECK_THROWS_AS(background_mask(std::vector{BinaryMask(4, 4), BinaryMask(4, 5)}), Error);
    CHECK(background_mask({}, 3, 2) == BinaryMask(3, 2, 1));
}

TEST_CASE("overlap pairs match a pairwise intersection count") {
    const BinaryMask a = rect_mask(8, 8, 0, 0, 3, 3);
    const BinaryMask b = rect_mask(8, 8, 2, 2, 3, 3);
    const BinaryMask c = rect_mask(8, 8, 4, 4, 3, 3);
    using Pairs = std::vector<std::pair<std::size_t, std::size_t>>;
    CHECK(overlap_pairs(std::vector{a, c}) == Pairs{});
    CHECK(overlap_pairs(std::vector{a, a}) == Pairs{{0, 1}});
    CHECK(overlap_pairs(std::vector{a, b, c}) == Pairs{{0, 1}, {1, 2}});

    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<BinaryMask> ms;
        for (int k = 0; k < 5; ++k) ms.push_back(random_mask(rng, 12, 12, 0.02));
        Pairs expected;
        for (std::size_t i = 0; i < ms.size(); ++i) {
            for (std::size_t j = i + 1; j < ms.size(); ++j) {
                if ((ms[i] & ms[j]).count() > 0) expected.emplace_back(i, j);
            }
        }
        CHECK(overlap_pairs(ms) == expected);
    }
}

TEST_CASE("downsampling averages cell coverage with a strict half threshold") {
    CHECK(downsample_mask(BinaryMask(64, 64, 1), 8, 8) == BinaryMask(8, 8, 1));
    BinaryMask checker(64, 64);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) checker.set(y, x, (x + y) % 2 == 0);
    CHECK(downsample_mask(checker, 8, 8) == BinaryMask(8, 8));
    CHECK(downsample_mask(rect_mask(64, 64, 0, 0, 32, 64), 8, 8) == rect_mask(8, 8, 0, 0, 4, 8));

    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 40; ++trial) {
        const int h = 5 + static_cast<int>(rng() % 40);
        const int w = 5 + static_cast<int>(rng() % 40);
        const int th = 1 + static_cast<int>(rng() % h);
        const int tw = 1 + static_cast<int>(rng() % w);
        const BinaryMask m = random_mask(rng, h, w, 0.5);
        CHECK(downsample_mask(m, th, tw) == brute_downsample(m, th, tw));
        CHECK(downsample_mask(m, h, w) == m);
    }
}

TEST_CASE("nearest resize samples cell centres") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 30; ++trial) {
        const int h = 3 + static_cast<int>(rng() % 30);
        const int w = 3 + static_cast<int>(rng() % 30);
        const int th = 1 + static_cast<int>(rng() % 50);
        const int tw = 1 + static_cast<int>(rng() % 50);
        const BinaryMask m = random_mask(rng, h, w);
        const BinaryMask r = resize_nearest(m, th, tw);
        for (int y = 0; y < th; ++y) {
            for (int x = 0; x < tw; ++x) {
                const int sy = static_cast<int>(std::floor((y + 0.5) * h / th));
                const int sx = static_cast<int>(std::floor((x + 0.5) * w / tw));
                REQUIRE(r.at(y, x) == m.at(sy, sx));
            }
        }
    }
}

TEST_CASE("run-length encoding round trips") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        const BinaryMask m = random_mask(rng, 1 + static_cast<int>(rng() % 20), 1 + static_cast<int>(rng() % 20));
        CHECK(decode_rle(encode_rle(m), m.height(), m.width()) == m);
    }
    CHECK(encode_rle(BinaryMask(2, 2, 1)) == std::vector<std::uint32_t>{0, 4});
    const std::vector<std::uint32_t> short_runs{1, 2};
    CHECK_THROWS_AS(decode_rle(short_runs, 2, 2), Error);
}

TEST_CASE("layout documents load and report problems by location") {
    const Layout l = load_layout(minimal_doc(), {});
    REQUIRE(l.objects.size() == 1);
    CHECK(l.objects[0].id == "a");
    CHECK(l.objects[0].seed == 3);
    CHECK(l.objects[0].mask == rect_mask(4, 4, 1, 1, 2, 2));

    try {
        (void)load_layout(minimal_doc("  "), {});
        FAIL("blank prompt accepted");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::ValidationError);
        CHECK(std::string(e.what()).find("objects[0].prompt") != std::string::npos);
    }
    try {
        (void)load_layout(minimal_doc("a cat", R"("style":"x",)"), {});
        FAIL("unknown key accepted");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::ParseError);
        CHECK(std::string(e.what()).find("style") != std::string::npos);
    }
    try {
        (void)load_layout("{\n  \"canvas\": {\"h\": 4,\n  oops }", {});
        FAIL("malformed JSON accepted");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::ParseError);
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
    try {
        (void)load_layout(R"({"canvas":{"h":4,"w":4},"global_prompt":"g","objects":[{"id":"a","prompt":"p","seed":-1,"mask":{"rle":[16]}}]})", {});
        FAIL("negative seed accepted");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("objects[0].seed") != std::string::npos);
    }
}

TEST_CASE("validation lists every violated invariant") {
    Layout l;
    l.canvas_height = 4;
    l.canvas_width = 4;
    l.objects.push_back({"a", "", 0, BinaryMask(4, 4, 1)});
    l.objects.push_back({"a", "x", 0, BinaryMask(4, 5, 1)});
    l.objects.push_back({"b", "y", 0, BinaryMask(4, 4)});
    const auto issues = validate(l);
    CHECK(issues.size() == 4);
    Layout empty;
    empty.canvas_height = 0;
    empty.canvas_width = 3;
    CHECK(validate(empty).size() == 2);
}

TEST_CASE("overlapping masks load with a warning") {
    LogCapture log;
    const Layout l = two_object_layout(16, true);
    const Layout back = load_layout(save_layout(l), {});
    CHECK(back == l);
    CHECK(log.contains("overlapping"));
}

TEST_CASE("save then load is the identity") {
    std::mt19937_64 rng(21);
    Layout l;
    l.canvas_height = 24;
    l.canvas_width = 40;
    l.global_prompt = "three things on a table";
    for (int k = 0; k < 3; ++k) {
        BinaryMask m = random_mask(rng, 24, 40, 0.3);
        l.objects.push_back({"obj/" + std::to_string(k), "thing " + std::to_string(k), rng(), m});
    }
    CHECK(load_layout(save_layout(l), {}) == l);

    TempDir dir("layout");
    save_layout_file(l, dir.path() / "doc" / "layout.json");
    CHECK(std::filesystem::exists(dir.path() / "doc" / "masks"));
    CHECK(load_layout_file(dir.path() / "doc" / "layout.json") == l);
}

TEST_CASE("masks may be PNG files with a 128 threshold or data URLs") {
    TempDir dir("mask");
    GrayImage g{2, 3, {0, 127, 128, 255, 10, 200}};
    write_png(dir.path() / "m.png", g);
    const std::string doc =
        R"({"canvas":{"h":2,"w":3},"global_prompt":"g","objects":[{"id":"a","prompt":"p","seed":0,"mask":"m.png"}]})";
    const Layout l = load_layout(doc, dir.path());
    CHECK(l.objects[0].mask == BinaryMask(2, 3, std::vector<std::uint8_t>{0, 0, 1, 1, 0, 1}));

    // 1x1 white PNG.
    const std::string url =
        "data:image/png;base64,iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAAAAAA6fptVAAAACklEQVR4nGP4DwABAQEAsTj2FAAAAABJRU5ErkJggg==";
    const Layout u = load_layout(
        R"({"canvas":{"h":1,"w":1},"global_prompt":"g","objects":[{"id":"a","prompt":"p","seed":0,"mask":")" + url +
            R"("}]})",
        {});
    CHECK(u.objects[0].mask == BinaryMask(1, 1, 1));

    CHECK_THROWS_AS(load_layout(R"({"canvas":{"h":2,"w":3},"global_prompt":"g","objects":[{"id":"a","prompt":"p","seed":0,"mask":"missing.png"}]})",
                                dir.path()),
                    Error);
}
