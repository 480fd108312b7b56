#include <doctest.h>

#include <numeric>

#include "oracles.hpp"
#include "subbench/error.hpp"
#include "subbench/features.hpp"
#include "support.hpp"

using namespace subbench;
using testing::random_image;

TEST_SUITE("features") {
    TEST_CASE("offsets lie on the circle") {
        for (int r : {1, 2, 3, 4}) {
            const auto off = lbp_offsets({r, 8});
            REQUIRE(off.size() == 8);
            CHECK(off[0].dx == r);
            CHECK(off[0].dy == 0.0);
            CHECK(off[2].dx == 0.0);
            CHECK(off[2].dy == -r);
            for (const auto& o : off) CHECK(std::hypot(o.dx, o.dy) == doctest::Approx(r));
        }
        CHECK_THROWS_AS(lbp_offsets({2, 3}), ConfigError);
        CHECK_THROWS_AS(lbp_offsets({0, 8}), ConfigError);
    }

    TEST_CASE("constant image codes are all ones") {
        PixelGrid img(9, 9, 1, Range::Unit, 0.4f);
        CHECK(lbp_code(img, 4, 4, {2, 8}) == 255);
        const auto h = lbp_histogram(img, {2, 8});
        CHECK(h[255] == 1.0);
        CHECK(std::accumulate(h.begin(), h.end(), 0.0) == doctest::Approx(1.0));
    }

    TEST_CASE("bright centre gives code zero") {
        PixelGrid img(9, 9, 1, Range::Unit, 0.2f);
        img.at(4, 4) = 0.9f;
        CHECK(lbp_code(img, 4, 4, {2, 8}) == 0);
        CHECK(lbp_code(img, 4, 4, {3, 16}) == 0);
    }

    TEST_CASE("border pixels are rejected") {
        PixelGrid img(9, 9, 1);
        CHECK_THROWS_AS(lbp_code(img, 1, 4, {2, 8}), DataError);
        CHECK_THROWS_AS(lbp_code(img, 4, 7, {2, 8}), DataError);
        CHECK_NOTHROW(lbp_code(img, 2, 6, {2, 8}));
        CHECK_THROWS_AS(lbp_histogram(PixelGrid(4, 9, 1), {2, 8}), DataError);
        CHECK_THROWS_AS(lbp_histogram(PixelGrid(9, 9, 3), {2, 8}), DataError);
    }

    TEST_CASE("random 9x9 patch matches the oracle") {
        Rng rng(21);
        for (int trial = 0; trial < 20; ++trial) {
            const auto img = random_image(9, 9, rng);
            for (int y = 2; y <= 6; ++y) {
                for (int x = 2; x <= 6; ++x) CHECK(lbp_code(img, x, y, {2, 8}) == oracle::lbp_code(img, x, y, 2, 8));
            }
        }
    }

    TEST_CASE("step edge histogram matches the oracle") {
        PixelGrid img(16, 16, 1);
        for (int y = 0; y < 16; ++y) {
            for (int x = 8; x < 16; ++x) img.at(y, x) = 1.0f;
        }
        for (int r : {2, 3, 4}) {
            const auto h = lbp_histogram(img, {r, 8});
            const auto o = oracle::lbp_histogram(img, r, 8);
            for (std::size_t i = 0; i < h.size(); ++i) CHECK(h[i] == o[i]);
        }
    }

    TEST_CASE("histograms sum to one") {
        Rng rng(4);
        for (int trial = 0; trial < 10; ++trial) {
            const auto img = random_image(12 + static_cast<int>(rng.below(20)), 12 + static_cast<int>(rng.below(20)), rng);
            for (int r : {2, 3, 4}) {
                const auto h = lbp_histogram(img, {r, 8});
                CHECK(std::accumulate(h.begin(), h.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
                for (double v : h) CHECK(v >= 0.0);
            }
        }
    }

    TEST_CASE("combined descriptor concatenates per-radius blocks") {
        Rng rng(8);
        const auto img = random_image(20, 20, rng);
        const auto d = combined_descriptor(img);
        REQUIRE(d.size() == 768);
        for (int r : {2, 3, 4}) {
            const auto h = lbp_histogram(img, {r, 8});
            CHECK(std::equal(h.begin(), h.end(), d.begin() + 256 * (r - 2)));
        }
        CHECK(combined_descriptor(img, {2}) == lbp_histogram(img, {2, 8}));
        CHECK_THROWS_AS(combined_descriptor(img, {}), ConfigError);

        PixelGrid rgb(20, 20, 3);
        PixelGrid gray(20, 20, 1);
        for (int y = 0; y < 20; ++y) {
            for (int x = 0; x < 20; ++x) {
                const float v = img.at(y, x);
                rgb.at(y, x, 0) = rgb.at(y, x, 1) = rgb.at(y, x, 2) = v;
                gray.at(y, x) = v;
            }
        }
        const auto dc = combined_descriptor(rgb);
        const auto dg = combined_descriptor(gray);
        for (std::size_t i = 0; i < dc.size(); ++i) CHECK(dc[i] == doctest::Approx(dg[i]));
    }

    TEST_CASE("codes are invariant under positive affine gray maps") {
        Rng rng(31);
        for (int trial = 0; trial < 10; ++trial) {
            PixelGrid img(16, 16, 1), mapped(16, 16, 1);
            for (int y = 0; y < 16; ++y) {
                for (int x = 0; x < 16; ++x) {
                    const float v = static_cast<float>(rng.below(65536)) / 65536.0f;  // dyadic, so the map is exact
                    img.at(y, x) = v;
                    mapped.at(y, x) = 0.5f * v + 0.25f;
                }
            }
            for (int r : {2, 3, 4}) CHECK(lbp_histogram(img, {r, 8}) == lbp_histogram(mapped, {r, 8}));
        }
    }

    TEST_CASE("axis neighbours are invariant under any increasing map") {
        Rng rng(32);
        const auto img = testing::tie_free_image(16, 16, rng);
        PixelGrid cubed = img;
        for (auto& v : cubed.values()) v = v * v * v;
        // Neighbours 0, 2, 4, 6 sit on pixel centres, so no interpolation is involved.
        const int axis_mask = 0b01010101;
        for (int r : {2, 3, 4}) {
            for (int y = r; y + r < 16; ++y) {
                for (int x = r; x + r < 16; ++x) {
                    CHECK((lbp_code(img, x, y, {r, 8}) & axis_mask) == (lbp_code(cubed, x, y, {r, 8}) & axis_mask));
                }
            }
        }
    }

    TEST_CASE("feature csv round trip") {
        testing::TempDir dir("features");
        const std::vector<std::string> ids{"a", "b/c"};
        const std::vector<FeatureVector> rows{{0.1, 1.0 / 3.0, 0.0}, {1e-300, 0.5, 2.0}};
        write_feature_csv(dir / "f.csv", ids, rows);
        const auto t = read_feature_csv(dir / "f.csv");
        CHECK(t.ids == ids);
        CHECK(t.rows == rows);
        CHECK_THROWS_AS(write_feature_csv(dir / "g.csv", {"a"}, rows), DataError);
    }
}
