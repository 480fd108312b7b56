#pragma once

// Brute-force reimplementations used as test oracles. They follow the
// definitions directly and share no code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "subbench/image.hpp"

namespace subbench::oracle {

inline double pixel(const PixelGrid& img, int x, int y) { return img.values()[static_cast<std::size_t>(y) * img.width() + x]; }

// Circular LBP code with P neighbours at radius r, sampled by bilinear
// interpolation over the four surrounding pixels.
inline int lbp_code(const PixelGrid& img, int xc, int yc, int r, int p) {
    const double pi = std::acos(-1.0);
    const double centre = pixel(img, xc, yc);
    int code = 0;
    for (int k = 0; k < p; ++k) {
        const double angle = 2.0 * pi * k / p;
        double x = xc + r * std::cos(angle);
        double y = yc - r * std::sin(angle);
        if (std::abs(x - std::nearbyint(x)) < 1e-9) x = std::nearbyint(x);
        if (std::abs(y - std::nearbyint(y)) < 1e-9) y = std::nearbyint(y);
        const int x0 = static_cast<int>(std::floor(x));
        const int y0 = static_cast<int>(std::floor(y));
        const double wx[2] = {1.0 - (x - x0), x - x0};
        const double wy[2] = {1.0 - (y - y0), y - y0};
        double v = 0.0;
        for (int j = 0; j < 2; ++j) {
            for (int i = 0; i < 2; ++i) {
                const double w = wx[i] * wy[j];
                if (w != 0.0) v += w * pixel(img, x0 + i, y0 + j);
            }
        }
        if (v >= centre) code += 1 << k;
    }
    return code;
}

inline std::vector<double> lbp_histogram(const PixelGrid& img, int r, int p) {
    std::vector<double> counts(std::size_t{1} << p, 0.0);
    double total = 0.0;
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            if (x - r < 0 || y - r < 0 || x + r > img.width() - 1 || y + r > img.height() - 1) continue;
            counts[lbp_code(img, x, y, r, p)] += 1.0;
            total += 1.0;
        }
    }
    for (auto& c : counts) c /= total;
    return counts;
}

// Area-average of a single-channel image onto an h x h grid: each output cell
// is the integral of the piecewise-constant input over the cell's footprint
// divided by the footprint area. Computed in 2-D directly.
inline std::vector<double> area_downscale(const PixelGrid& img, int h) {
    const int H = img.height(), W = img.width();
    const double sy = static_cast<double>(H) / h, sx = static_cast<double>(W) / h;
    std::vector<double> out(static_cast<std::size_t>(h) * h, 0.0);
    for (int oy = 0; oy < h; ++oy) {
        for (int ox = 0; ox < h; ++ox) {
            const double y0 = oy * sy, y1 = (oy + 1) * sy, x0 = ox * sx, x1 = (ox + 1) * sx;
            double acc = 0.0;
            for (int y = 0; y < H; ++y) {
                const double oyl = std::max(0.0, std::min<double>(y + 1, y1) - std::max<double>(y, y0));
                if (oyl <= 0.0) continue;
                for (int x = 0; x < W; ++x) {
                    const double oxl = std::max(0.0, std::min<double>(x + 1, x1) - std::max<double>(x, x0));
                    if (oxl > 0.0) acc += oyl * oxl * pixel(img, x, y);
                }
            }
            out[static_cast<std::size_t>(oy) * h + ox] = acc / (sy * sx);
        }
    }
    return out;
}

// Average-hash bits (row-major): cell strictly above the cell mean.
inline std::vector<std::uint8_t> average_hash_bits(const PixelGrid& img, int h) {
    const auto cells = area_downscale(img, h);
    double mean = 0.0;
    for (double c : cells) mean += c;
    mean /= static_cast<double>(cells.size());
    std::vector<std::uint8_t> bits(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) bits[i] = cells[i] > mean;
    return bits;
}

inline int popcount_xor(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    int d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] ^ b[i]) & 1;
    return d;
}

}  // namespace subbench::oracle
