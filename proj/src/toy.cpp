#include "subbench/toy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "subbench/error.hpp"
#include "subbench/png_io.hpp"

namespace subbench::toy {

namespace {

float clip01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

}  // namespace

PixelGrid stripes(int size, Rng& rng) {
    const double theta = rng.uniform(0.0, std::numbers::pi);
    const double period = rng.uniform(4.0, 8.0);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double c = std::cos(theta), s = std::sin(theta);
    PixelGrid img(size, size, 1);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double v = 0.5 + 0.4 * std::sin(2.0 * std::numbers::pi * (x * c + y * s) / period + phase);
            img.at(y, x) = clip01(v + 0.03 * rng.normal());
        }
    }
    return img;
}

PixelGrid blobs(int size, Rng& rng) {
    struct Bump {
        double cx, cy, sigma, amp;
    };
    const int count = 6 + static_cast<int>(rng.below(7));
    std::vector<Bump> bumps;
    for (int i = 0; i < count; ++i) {
        bumps.push_back({rng.uniform(0.0, size), rng.uniform(0.0, size), rng.uniform(0.08, 0.2) * size,
                         rng.uniform(-0.4, 0.4)});
    }
    PixelGrid img(size, size, 1);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            double v = 0.5;
            for (const auto& b : bumps) {
                const double dx = x - b.cx, dy = y - b.cy;
                v += b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
            }
            img.at(y, x) = clip01(v + 0.03 * rng.normal());
        }
    }
    return img;
}

PixelGrid anatomy(int size, Rng& rng) {
    const double w = size;
    const double jitter = 0.03 * w;
    const double cy = 0.5 * w + rng.uniform(-jitter, jitter);
    const double cx[2] = {0.32 * w + rng.uniform(-jitter, jitter), 0.68 * w + rng.uniform(-jitter, jitter)};
    const double ax = 0.14 * w * rng.uniform(0.9, 1.1);
    const double ay = 0.30 * w * rng.uniform(0.9, 1.1);
    const double bright = rng.uniform(0.7, 0.8);
    const double dark = rng.uniform(0.05, 0.15);
    PixelGrid img(size, size, 1);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            double v = dark;
            for (double c : cx) {
                const double u = (x - c) / ax, t = (y - cy) / ay;
                if (u * u + t * t <= 1.0) v = bright;
            }
            img.at(y, x) = clip01(v + 0.02 * rng.normal());
        }
    }
    return img;
}

PixelGrid noise(int size, Rng& rng) {
    PixelGrid img(size, size, 1);
    for (auto& v : img.values()) v = static_cast<float>(rng.uniform());
    return img;
}

Manifest write_texture_corpus(const std::filesystem::path& root, int train_per_class, int test_per_class, int size,
                              std::uint64_t seed) {
    if (train_per_class < 0 || test_per_class < 0 || size <= 0) throw ConfigError("toy corpus sizes must be positive");
    for (const char* cls : {kStripes, kBlobs}) {
        Rng rng(Rng::derive(seed, cls));
        for (const auto& [split, count] : {std::pair{"train", train_per_class}, std::pair{"test", test_per_class}}) {
            const auto dir = root / split / cls;
            std::filesystem::create_directories(dir);
            for (int i = 0; i < count; ++i) {
                const PixelGrid img = std::string(cls) == kStripes ? stripes(size, rng) : blobs(size, rng);
                char name[64];
                std::snprintf(name, sizeof(name), "%s_%05d.png", cls, i);
                write_png(dir / name, img);
            }
        }
    }
    auto result = ingest_directory(root, Modality::Histology,
                                   {LabelRule::parse("class=parent"), LabelRule::parse("split=parent:2")});
    if (!result.rejects.empty()) throw DataError("toy corpus contains undecodable files");
    return result.manifest;
}

}  // namespace subbench::toy
