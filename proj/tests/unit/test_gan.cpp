#include <doctest.h>

#include <cmath>

#include "subbench/error.hpp"
#include "subbench/gan.hpp"
#include "support.hpp"

using namespace subbench;
using nn::Tensor;
using testing::random_image;

namespace {

GanConfig tiny(GanArch arch = GanArch::Dcgan) {
    GanConfig c = GanConfig::desk();
    c.model_id = "tiny";
    c.arch = arch;
    c.image_size = 8;
    c.latent_dim = 4;
    c.batch_size = 4;
    c.epochs = 1;
    c.fmap_base = 64;
    c.fmap_max = 8;
    return c;
}

GanTrainingSet random_set(int n, int size, Rng& rng) {
    GanTrainingSet s;
    for (int i = 0; i < n; ++i) {
        s.ids.push_back("img" + std::to_string(i));
        s.images.push_back(random_image(size, size, rng));
    }
    return s;
}

// Class 0 bright, class 1 dark, both with mild noise.
GanTrainingSet two_level_set(int per_class, int size, Rng& rng) {
    GanTrainingSet s;
    for (int cls = 0; cls < 2; ++cls) {
        for (int i = 0; i < per_class; ++i) {
            PixelGrid g(size, size, 1);
            for (auto& v : g.values()) v = static_cast<float>((cls == 0 ? 0.8 : 0.2) + 0.05 * rng.normal());
            g.clip();
            s.ids.push_back("c" + std::to_string(cls) + "-" + std::to_string(i));
            s.images.push_back(std::move(g));
            s.labels.push_back(cls);
        }
    }
    return s;
}

double mean_value(const std::vector<PixelGrid>& images) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& g : images) {
        for (float v : g.values()) sum += v;
        n += g.size();
    }
    return sum / static_cast<double>(n);
}

}  // namespace

TEST_SUITE("gan") {
    TEST_CASE("losses at one half") {
        const std::vector<double> half{0.5, 0.5, 0.5};
        const auto l = gan_losses(half, half);
        CHECK(l.d_loss == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
        CHECK(l.g_loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }

    TEST_CASE("losses at the clamp limits") {
        const double eps = kProbabilityEps;
        const auto l = gan_losses(std::vector<double>{1.0}, std::vector<double>{0.0});
        CHECK(l.d_loss == doctest::Approx(-2.0 * std::log(1.0 - eps)));
        CHECK(l.d_loss < 1e-6);
        CHECK(l.g_loss == doctest::Approx(-std::log(eps)));
        CHECK_THROWS_AS(gan_losses(std::vector<double>{}, std::vector<double>{0.5}), DataError);
    }

    TEST_CASE("losses match a scalar loop") {
        Rng rng(51);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> real(1 + rng.below(40)), fake(1 + rng.below(40));
            for (auto& p : real) p = rng.uniform();
            for (auto& p : fake) p = rng.uniform();
            double d = 0.0, g = 0.0, f = 0.0;
            for (double p : real) d += -std::log(std::min(std::max(p, 1e-7), 1 - 1e-7));
            for (double p : fake) {
                const double c = std::min(std::max(p, 1e-7), 1 - 1e-7);
                f += -std::log(1 - c);
                g += -std::log(c);
            }
            const auto l = gan_losses(real, fake);
            CHECK(l.d_loss == doctest::Approx(d / real.size() + f / fake.size()).epsilon(1e-12));
            CHECK(l.g_loss == doctest::Approx(g / fake.size()).epsilon(1e-12));
        }
    }

    TEST_CASE("progressive schedule") {
        GanConfig c = tiny(GanArch::Pggan);
        c.pggan_base = 4;
        c.image_size = 256;
        const auto s = progressive_schedule(c);
        REQUIRE(s.size() == 7);
        for (int i = 0; i < 7; ++i) CHECK(s[i].resolution == (4 << i));
        c.image_size = 4;
        CHECK(progressive_schedule(c).size() == 1);
        c.image_size = 6;
        CHECK_THROWS_AS(progressive_schedule(c), ConfigError);
        CHECK_THROWS_AS(c.validate(), ConfigError);
        CHECK_THROWS_AS(progressive_schedule(tiny()), ConfigError);
    }

    TEST_CASE("fade coefficient") {
        CHECK(fade_alpha(0, 0, 100, 0.5) == 1.0);
        CHECK(fade_alpha(1, 0, 100, 0.5) == 0.0);
        CHECK(fade_alpha(1, 25, 100, 0.5) == 0.5);
        CHECK(fade_alpha(1, 50, 100, 0.5) == 1.0);
        CHECK(fade_alpha(1, 99, 100, 0.5) == 1.0);
        CHECK(fade_alpha(2, 3, 100, 0.0) == 1.0);
    }

    TEST_CASE("blend is linear") {
        Rng rng(52);
        Tensor a({3, 1, 4, 4}), b({3, 1, 4, 4});
        for (auto& v : a.data) v = rng.uniform(-1, 1);
        for (auto& v : b.data) v = rng.uniform(-1, 1);
        CHECK(blend(a, b, 0.0).data == a.data);
        CHECK(blend(a, b, 1.0).data == b.data);
        for (int t = 0; t < 10; ++t) {
            const double x = rng.uniform(), y = rng.uniform();
            const double alpha = rng.uniform();
            const auto mix = blend(a, b, alpha);
            for (std::size_t i = 0; i < mix.size(); ++i) {
                CHECK(mix[i] == doctest::Approx(alpha * b[i] + (1 - alpha) * a[i]).epsilon(1e-12));
            }
            // Affine in alpha: blend(x) + blend(y) - blend(0) == blend(x + y) when x + y <= 1.
            if (x + y <= 1.0) {
                const auto bx = blend(a, b, x), by = blend(a, b, y), bxy = blend(a, b, x + y);
                for (std::size_t i = 0; i < a.size(); ++i) CHECK(bx[i] + by[i] - a[i] == doctest::Approx(bxy[i]));
            }
        }
        const std::vector<PixelGrid> zeros{PixelGrid(4, 4, 1, Range::Unit, 0.0f)};
        const std::vector<PixelGrid> ones{PixelGrid(4, 4, 1, Range::Unit, 1.0f)};
        const auto half = blend(zeros, ones, 0.5);
        for (float v : half[0].values()) CHECK(v == 0.5f);
        CHECK_THROWS_AS(blend(a, Tensor({3, 1, 4, 5}), 0.5), DataError);
        CHECK_THROWS_AS(blend(a, b, 1.5), DataError);
    }

    TEST_CASE("config validation and json") {
        GanConfig c = tiny();
        CHECK_NOTHROW(c.validate());
        c.image_size = 12;
        CHECK_THROWS_AS(c.validate(), ConfigError);
        c = tiny();
        c.conditional = true;
        CHECK_THROWS_AS(c.validate(), ConfigError);
        c.label_cardinality = 3;
        CHECK_NOTHROW(c.validate());
        const GanConfig back = gan_config_from_json(to_json(c));
        CHECK(to_json(back) == to_json(c));
        CHECK(GanConfig::paper_xray(true, 8).latent_dim == 512);
        CHECK(GanConfig::paper_histology().channels == 3);
        CHECK(GanConfig::paper_histology().image_size == 256);
    }

    TEST_CASE("desk training yields one checkpoint per epoch") {
        Rng rng(53);
        GanConfig c = GanConfig::desk();
        c.epochs = 1;
        const auto set = random_set(64, 32, rng);
        const auto r = train_gan(c, set, 9);
        REQUIRE(r.checkpoints.size() == 1);
        CHECK_FALSE(r.aborted);
        CHECK(r.d_loss_trace.size() == static_cast<std::size_t>((64 + c.batch_size - 1) / c.batch_size));
        for (double v : r.d_loss_trace) CHECK(std::isfinite(v));
        for (double v : r.g_loss_trace) CHECK(std::isfinite(v));
        CHECK(r.checkpoints[0].id() == "desk-gan-s0-e0");
        CHECK(r.training_ids == set.ids);
    }

    TEST_CASE("same seed reproduces the loss trace") {
        Rng rng(54);
        const auto set = random_set(12, 8, rng);
        for (auto arch : {GanArch::Dcgan, GanArch::Pggan}) {
            GanConfig c = tiny(arch);
            c.epochs = 2;
            const auto a = train_gan(c, set, 17);
            const auto b = train_gan(c, set, 17);
            const auto d = train_gan(c, set, 18);
            CHECK(a.d_loss_trace == b.d_loss_trace);
            CHECK(a.g_loss_trace == b.g_loss_trace);
            CHECK(a.d_loss_trace != d.d_loss_trace);
        }
    }

    TEST_CASE("samples stay in the signed range") {
        Rng rng(55);
        const auto ckpt = train_gan(tiny(), random_set(8, 8, rng), 1).checkpoints.back();
        const auto s = sample(ckpt, 5, {}, 3);
        REQUIRE(s.size() == 5);
        for (const auto& g : s) {
            CHECK(g.height() == 8);
            CHECK(g.range() == Range::Signed);
            for (float v : g.values()) {
                CHECK(v >= -1.0f);
                CHECK(v <= 1.0f);
            }
        }
        CHECK(sample(ckpt, 5, {}, 3) == s);
        CHECK(sample(ckpt, 5, {}, 4) != s);
        CHECK(sample(ckpt, 0, {}, 3).empty());
        CHECK_THROWS_AS(sample(ckpt, 2, {0, 1}, 3), DataError);
        CHECK_THROWS_AS(sample(ckpt, -1, {}, 3), DataError);
    }

    TEST_CASE("progressive training walks every stage") {
        Rng rng(56);
        GanConfig c = tiny(GanArch::Pggan);
        c.pggan_base = 4;
        c.image_size = 16;
        c.epochs = 2;
        const auto r = train_gan(c, random_set(8, 16, rng), 2);
        REQUIRE(r.checkpoints.size() == 6);
        CHECK(r.checkpoints[0].resolution == 4);
        CHECK(r.checkpoints[2].resolution == 8);
        CHECK(r.checkpoints[5].resolution == 16);
        CHECK(r.checkpoints[5].id() == "tiny-s2-e1");
        CHECK(r.checkpoints[5].alpha == 1.0);
        for (const auto& ck : r.checkpoints) {
            const auto s = sample(ck, 2, {}, 1);
            CHECK(s[0].height() == ck.resolution);
            for (float v : s[0].values()) CHECK(std::abs(v) <= 1.0f);
        }
    }

    TEST_CASE("checkpoint save and load") {
        Rng rng(57);
        testing::TempDir dir("gan");
        GanTrainOptions opts;
        opts.checkpoint_dir = dir.path();
        const auto r = train_gan(tiny(), random_set(8, 8, rng), 4, opts);
        const auto path = dir / "tiny-s0-e0.ckpt";
        REQUIRE(std::filesystem::exists(path));
        const auto loaded = Checkpoint::load(path);
        const auto& orig = r.checkpoints[0];
        CHECK(loaded.id() == orig.id());
        CHECK(loaded.training_checksum == orig.training_checksum);
        CHECK(loaded.stats.steps == orig.stats.steps);
        CHECK(sample(loaded, 3, {}, 8) == sample(orig, 3, {}, 8));
        std::vector<PixelGrid> probe{random_image(8, 8, rng)};
        CHECK(discriminate(loaded, probe, {}) == discriminate(orig, probe, {}));
    }

    TEST_CASE("training input validation") {
        Rng rng(58);
        auto set = random_set(4, 8, rng);
        CHECK_THROWS_AS(train_gan(tiny(), GanTrainingSet{}, 1), DataError);
        set.images[2] = random_image(16, 16, rng);
        CHECK_THROWS_AS(train_gan(tiny(), set, 1), DataError);
        GanConfig c = tiny();
        c.conditional = true;
        c.label_cardinality = 2;
        CHECK_THROWS_AS(train_gan(c, random_set(4, 8, rng), 1), DataError);
    }

    TEST_CASE("conditional samples follow their label") {
        Rng rng(59);
        const auto set = two_level_set(64, 8, rng);
        GanConfig c = tiny();
        c.conditional = true;
        c.label_cardinality = 2;
        c.epochs = 60;
        c.batch_size = 16;
        c.fmap_base = 256;
        c.fmap_max = 32;

        std::vector<PixelGrid> class_real[2];
        for (std::size_t i = 0; i < set.images.size(); ++i) class_real[set.labels[i]].push_back(set.images[i]);
        const double real_mean[2] = {mean_value(class_real[0]), mean_value(class_real[1])};

        for (std::uint64_t seed : {6u, 7u, 8u}) {
            const auto ckpt = train_gan(c, set, seed).checkpoints.back();
            for (int label = 0; label < 2; ++label) {
                std::vector<PixelGrid> unit;
                for (const auto& g : sample(ckpt, 32, std::vector<int>(32, label), 11)) unit.push_back(g.to_range(Range::Unit));
                const double m = mean_value(unit);
                CAPTURE(seed);
                CAPTURE(label);
                CAPTURE(m);
                CHECK(std::abs(m - real_mean[label]) < std::abs(m - real_mean[1 - label]));
            }
            CHECK_THROWS_AS(sample(ckpt, 2, {}, 1), DataError);
            CHECK_THROWS_AS(sample(ckpt, 1, {2}, 1), DataError);
        }
    }
}
