#include "subbench/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <vector>

#include "subbench/error.hpp"

namespace subbench {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void warning_handler(png_structp, png_const_charp) {}
[[noreturn]] void error_handler(png_structp png, png_const_charp) { png_longjmp(png, 1); }

}  // namespace

DecodedImage read_png(const std::filesystem::path& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw DataError("cannot open " + path.string());

    png_byte signature[8];
    if (std::fread(signature, 1, 8, file.get()) != 8 || png_sig_cmp(signature, 0, 8) != 0) {
        throw DataError("not a PNG file: " + path.string());
    }

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, error_handler, warning_handler);
    if (!png) throw DataError("libpng: cannot create read struct");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError("libpng: cannot create info struct");
    }

    // Everything that can longjmp lives between setjmp and the cleanup below;
    // no objects with destructors are created in that window.
    std::vector<unsigned char> raw;
    std::vector<png_bytep> rows;
    png_uint_32 width = 0;
    png_uint_32 height = 0;
    int bit_depth = 0;
    int out_channels = 0;
    std::size_t rowbytes = 0;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("corrupt PNG data: " + path.string());
    }

    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    int color_type = 0;
    png_get_IHDR(png, info, &width, &height, &bit_depth, &color_type, nullptr, nullptr, nullptr);

    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    if (bit_depth == 16) png_set_swap(png);  // little-endian samples in memory

    png_read_update_info(png, info);
    bit_depth = png_get_bit_depth(png, info);
    out_channels = png_get_channels(png, info);
    rowbytes = png_get_rowbytes(png, info);

    raw.resize(rowbytes * height);
    rows.resize(height);
    for (png_uint_32 y = 0; y < height; ++y) rows[y] = raw.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    if (out_channels != 1 && out_channels != 3) throw DataError("unsupported PNG channel layout: " + path.string());
    if (width == 0 || height == 0) throw DataError("empty PNG: " + path.string());

    PixelGrid grid(static_cast<int>(height), static_cast<int>(width), out_channels, Range::Unit);
    auto values = grid.values();
    const std::size_t n = values.size();
    if (bit_depth == 16) {
        for (std::size_t i = 0; i < n; ++i) {
            const unsigned v = raw[2 * i] | (raw[2 * i + 1] << 8);
            values[i] = static_cast<float>(v / 65535.0);
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) values[i] = static_cast<float>(raw[i] / 255.0);
    }
    return {std::move(grid), bit_depth == 16 ? 16 : 8};
}

void write_png(const std::filesystem::path& path, const PixelGrid& input, int bit_depth) {
    if (bit_depth != 8 && bit_depth != 16) throw DataError("PNG bit depth must be 8 or 16");
    const PixelGrid grid = input.to_range(Range::Unit);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());

    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw DataError("cannot create " + path.string());

    const int width = grid.width();
    const int height = grid.height();
    const int channels = grid.channels();
    const int bytes_per_sample = bit_depth / 8;
    const std::size_t rowbytes = static_cast<std::size_t>(width) * channels * bytes_per_sample;

    std::vector<unsigned char> raw(rowbytes * height);
    const auto values = grid.values();
    const double scale = bit_depth == 16 ? 65535.0 : 255.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto q = static_cast<unsigned>(std::lround(std::clamp(static_cast<double>(values[i]), 0.0, 1.0) * scale));
        if (bit_depth == 16) {
            raw[2 * i] = static_cast<unsigned char>(q >> 8);  // PNG is big-endian
            raw[2 * i + 1] = static_cast<unsigned char>(q & 0xFF);
        } else {
            raw[i] = static_cast<unsigned char>(q);
        }
    }
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y) rows[y] = raw.data() + y * rowbytes;

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, error_handler, warning_handler);
    if (!png) throw DataError("libpng: cannot create write struct");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError("libpng: cannot create info struct");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("failed writing PNG: " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, width, height, bit_depth, channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace subbench
