#pragma once

#include <cstdint>
#include <filesystem>

#include "subbench/corpus.hpp"
#include "subbench/image.hpp"
#include "subbench/rng.hpp"

namespace subbench::toy {

// Oriented sinusoidal stripes: random angle, period 4..8 px, phase; mild noise.
PixelGrid stripes(int size, Rng& rng);
// Smooth random field: a handful of Gaussian bumps and dips on mid-gray; mild noise.
PixelGrid blobs(int size, Rng& rng);
// Two bright convex "lung" fields on a dark background with jittered geometry.
PixelGrid anatomy(int size, Rng& rng);
// Independent uniform pixels.
PixelGrid noise(int size, Rng& rng);

inline constexpr const char* kStripes = "stripes";
inline constexpr const char* kBlobs = "blobs";

// Writes <root>/<split>/<class>/<class>_<i>.png for classes stripes and blobs
// and returns the ingested manifest (labels "class", split from the directory).
Manifest write_texture_corpus(const std::filesystem::path& root, int train_per_class, int test_per_class, int size,
                              std::uint64_t seed);

}  // namespace subbench::toy
