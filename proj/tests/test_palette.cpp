#include <doctest.h>

#include <cmath>

#include "retc/palette.hpp"
#include "retc/rng.hpp"
#include "support/synthetic.hpp"

using namespace retc;
using retc::testing::TempDir;

TEST_SUITE_BEGIN("palette");

TEST_CASE("two-point corpus yields the two colors") {
    std::vector<Rgb> px;
    for (int i = 0; i < 100; ++i) px.push_back({0, 0, 0});
    for (int i = 0; i < 100; ++i) px.push_back({1, 1, 1});
    const Palette p = fit_kmeans(px, 2, 20, 0);
    REQUIRE(p.k() == 2);
    CHECK(p.centroids[0] == Rgb{0, 0, 0});
    CHECK(p.centroids[1] == Rgb{1, 1, 1});
}

TEST_CASE("k=1 centroid is the pixel mean") {
    std::vector<Rgb> px = {{0.2, 0.4, 0.8}, {0.4, 0.2, 0.6}, {0.6, 0.6, 0.4}};
    const Palette p = fit_kmeans(px, 1, 10, 0);
    CHECK(p.centroids[0][0] == doctest::Approx(0.4).epsilon(1e-6));
    CHECK(p.centroids[0][1] == doctest::Approx(0.4).epsilon(1e-6));
    CHECK(p.centroids[0][2] == doctest::Approx(0.6).epsilon(1e-6));
}

TEST_CASE("three separated blobs recover their means") {
    Rng rng = make_rng(5, "pal.blobs");
    const Rgb means[3] = {{0.1, 0.1, 0.1}, {0.5, 0.8, 0.2}, {0.9, 0.2, 0.9}};
    std::vector<Rgb> px;
    Rgb sample_mean[3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
    for (int b = 0; b < 3; ++b) {
        for (int i = 0; i < 400; ++i) {
            Rgb c;
            for (int ch = 0; ch < 3; ++ch) {
                c[static_cast<std::size_t>(ch)] =
                    std::clamp(means[b][static_cast<std::size_t>(ch)] + 0.02 * rng.normal(), 0.0, 1.0);
                sample_mean[b][static_cast<std::size_t>(ch)] += c[static_cast<std::size_t>(ch)] / 400.0;
            }
            px.push_back(c);
        }
    }
    const Palette p = fit_kmeans(px, 3, 50, 1);
    // centroids are sorted; blobs are ordered by red channel already
    for (int b = 0; b < 3; ++b)
        for (int ch = 0; ch < 3; ++ch)
            CHECK(std::abs(p.centroids[static_cast<std::size_t>(b)][static_cast<std::size_t>(ch)] -
                           sample_mean[b][static_cast<std::size_t>(ch)]) < 0.05);
}

TEST_CASE("inertia is non-increasing across iterations") {
    Rng rng = make_rng(6, "pal.inertia");
    std::vector<Rgb> px;
    for (int i = 0; i < 500; ++i) px.push_back({rng.uniform01(), rng.uniform01(), rng.uniform01()});
    KMeansStats stats;
    fit_kmeans(px, 8, 40, 2, &stats);
    REQUIRE(stats.inertia_per_iter.size() >= 2);
    for (std::size_t i = 1; i < stats.inertia_per_iter.size(); ++i)
        CHECK(stats.inertia_per_iter[i] <= stats.inertia_per_iter[i - 1] + 1e-12);
}

TEST_CASE("vocabulary error when distinct colors < k") {
    std::vector<Rgb> px(50, Rgb{0.5, 0.5, 0.5});
    px.push_back({0.1, 0.1, 0.1});
    try {
        fit_kmeans(px, 3, 10, 0);
        FAIL("expected vocabulary error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Vocabulary);
    }
}

TEST_CASE("k >= 2 fit beats the k=1 fit on the same data") {
    Rng rng = make_rng(7, "pal.msq");
    std::vector<Rgb> px;
    for (int i = 0; i < 300; ++i) px.push_back({rng.uniform01(), rng.uniform01(), rng.uniform01()});
    auto mse = [&](const Palette& p) {
        Real acc = 0.0;
        for (const auto& c : px) {
            const auto j = static_cast<std::size_t>(quantize_one(c, p));
            for (int ch = 0; ch < 3; ++ch) {
                const Real d = c[static_cast<std::size_t>(ch)] - p.centroids[j][static_cast<std::size_t>(ch)];
                acc += d * d;
            }
        }
        return acc / static_cast<Real>(px.size());
    };
    CHECK(mse(fit_kmeans(px, 8, 30, 3)) <= mse(fit_kmeans(px, 1, 30, 3)));
}

TEST_CASE("quantize maps exact centroid colors to their indices") {
    const Palette p = retc::testing::make_palette(6, 9);
    Image img(1, 6, 3);
    for (std::int64_t i = 0; i < 6; ++i)
        for (int ch = 0; ch < 3; ++ch)
            img.at(0, i, ch) = p.centroids[static_cast<std::size_t>(i)][static_cast<std::size_t>(ch)];
    const auto idx = quantize(img, p);
    for (std::int64_t i = 0; i < 6; ++i) CHECK(idx[static_cast<std::size_t>(i)] == i);
}

TEST_CASE("quantize breaks ties toward the lowest index") {
    Palette p;
    p.centroids = {{0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}, {0.5, 0.0, 0.0}, {0.0, 0.0, 0.0},
                   {0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}, {1.0, 0.0, 0.0}};
    // pixel equidistant from centroids 2 (0.5) and 7 (1.0)
    CHECK(quantize_one({0.75, 0.0, 0.0}, p) == 2);
}

TEST_CASE("quantize matches the brute-force oracle on random pixels") {
    const Palette p = retc::testing::make_palette(16, 10);
    Rng rng = make_rng(11, "pal.oracle");
    for (int i = 0; i < 2000; ++i) {
        const Rgb px = {rng.uniform01(), rng.uniform01(), rng.uniform01()};
        Real best = 1e300;
        std::int64_t bj = 0;
        for (std::int64_t j = 0; j < p.k(); ++j) {
            Real d = 0.0;
            for (int ch = 0; ch < 3; ++ch) {
                const Real dd = px[static_cast<std::size_t>(ch)] -
                                p.centroids[static_cast<std::size_t>(j)][static_cast<std::size_t>(ch)];
                d += dd * dd;
            }
            if (d < best) {
                best = d;
                bj = j;
            }
        }
        CHECK(quantize_one(px, p) == bj);
    }
}

TEST_CASE("dequantize round trips and validates indices") {
    const Palette p = retc::testing::make_palette(4, 12);
    const std::vector<std::int64_t> tokens = {0, 1, 2, 3};
    const Image img = dequantize(tokens, 2, p);
    const auto back = quantize(img, p);
    CHECK(back == tokens);

    const Image c0 = dequantize({0, 0, 0, 0}, 2, p);
    for (std::int64_t i = 0; i < 4; ++i)
        for (int ch = 0; ch < 3; ++ch)
            CHECK(c0.data[static_cast<std::size_t>(i * 3 + ch)] ==
                  doctest::Approx(p.centroids[0][static_cast<std::size_t>(ch)]));

    CHECK_THROWS_AS(dequantize({0, 1, 2, 9}, 2, p), Error);
}

TEST_CASE("quantize-dequantize identity on random index grids") {
    const Palette p = retc::testing::make_palette(12, 13);
    Rng rng = make_rng(14, "pal.rt");
    for (int it = 0; it < 10; ++it) {
        std::vector<std::int64_t> tokens(16);
        for (auto& t : tokens) t = static_cast<std::int64_t>(rng.uniform_int(12));
        CHECK(quantize(dequantize(tokens, 4, p), p) == tokens);
    }
}

TEST_CASE("serialization is deterministic and round trips") {
    Rng rng = make_rng(15, "pal.ser");
    std::vector<Rgb> px;
    for (int i = 0; i < 400; ++i) px.push_back({rng.uniform01(), rng.uniform01(), rng.uniform01()});
    const Palette a = fit_kmeans(px, 16, 30, 5);
    const Palette b = fit_kmeans(px, 16, 30, 5);
    CHECK(serialize_palette(a) == serialize_palette(b));
    CHECK(palette_hash(a) == palette_hash(b));

    TempDir tmp("pal");
    save_palette(a, tmp.file("p.rcpal"));
    const Palette back = load_palette(tmp.file("p.rcpal"));
    CHECK(back.centroids == a.centroids);

    auto bytes = serialize_palette(a);
    bytes[0] = 'X';
    CHECK_THROWS_AS(deserialize_palette(bytes), Error);
}

TEST_SUITE_END();
