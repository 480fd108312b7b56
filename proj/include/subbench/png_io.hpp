#pragma once

#include <filesystem>

#include "subbench/image.hpp"

namespace subbench {

struct DecodedImage {
    PixelGrid grid;  // unit range; 16-bit samples divided by 65535, 8-bit by 255
    int bit_depth = 8;
};

// Decodes a grayscale or RGB PNG. Alpha channels are dropped and palettes
// expanded. Throws DataError on anything libpng cannot decode.
DecodedImage read_png(const std::filesystem::path& path);

// Writes a 1- or 3-channel grid. Signed-range grids are mapped to [0, 1]
// first. bit_depth is 8 or 16.
void write_png(const std::filesystem::path& path, const PixelGrid& grid, int bit_depth = 8);

}  // namespace subbench
