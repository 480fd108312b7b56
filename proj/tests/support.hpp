#pragma once

#include <filesystem>
#include <string>

#include "subbench/image.hpp"
#include "subbench/rng.hpp"

namespace subbench::testing {

// Fresh, empty directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        Rng rng(Rng::derive(static_cast<std::uint64_t>(std::hash<std::string>{}(tag)), "tmp"));
        path_ = std::filesystem::temp_directory_path() / ("subbench-" + tag + "-" + std::to_string(rng.next() % 1000000007));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

// Independent uniform values in [0, 1).
inline PixelGrid random_image(int h, int w, Rng& rng, int channels = 1) {
    PixelGrid g(h, w, channels);
    for (auto& v : g.values()) v = static_cast<float>(rng.uniform());
    return g;
}

// Pixel values pairwise distinct: a random permutation of (k + 0.5) / (h * w).
inline PixelGrid tie_free_image(int h, int w, Rng& rng) {
    std::vector<int> ranks(static_cast<std::size_t>(h) * w);
    for (std::size_t i = 0; i < ranks.size(); ++i) ranks[i] = static_cast<int>(i);
    rng.shuffle(ranks);
    PixelGrid g(h, w, 1);
    for (std::size_t i = 0; i < ranks.size(); ++i) {
        g.values()[i] = static_cast<float>((ranks[i] + 0.5) / static_cast<double>(ranks.size()));
    }
    return g;
}

}  // namespace subbench::testing
