#pragma once

#include <string>
#include <vector>

#include "subbench/image.hpp"

namespace subbench {

struct NormalizeResult {
    PixelGrid image;        // unit range
    bool degenerate = false;  // lo and hi percentiles coincided; image is constant 0.5
    double lo_value = 0.0;
    double hi_value = 0.0;
};

// Nearest-rank percentile of an unsorted sample: the value at 1-based rank
// ceil(pct/100 * n) of the ascending order (rank 1 for pct = 0).
double nearest_rank_percentile(std::vector<double> values, double pct);

// Linear stretch between the lo/hi percentiles of the masked values, clipped to [0, 1].
NormalizeResult percentile_normalize(const PixelGrid& img, const MaskRegion& mask, double lo_pct = 5.0,
                                     double hi_pct = 95.0);

struct ForegroundMask {
    MaskRegion mask;
    bool fallback = false;  // nothing exceeded the threshold; mask covers the whole image
    double threshold = 0.0;
};

// Otsu threshold over a 256-bin histogram spanning [min, max], then the filled
// convex hull of the above-threshold pixels.
ForegroundMask foreground_mask(const PixelGrid& img);

struct Tile {
    PixelGrid image;
    std::string label;
    int row = 0;  // top-left corner in the source image
    int col = 0;
};

// Row-major grid of tile x tile crops; partial border regions are dropped.
std::vector<Tile> tile_image(const PixelGrid& img, int tile = 256, int stride = 256, const std::string& label = {});

// Luma 0.299 R + 0.587 G + 0.114 B. One-channel input is returned unchanged.
PixelGrid to_grayscale(const PixelGrid& img);

// Area averaging along axes that shrink, bilinear (half-pixel centres) along
// axes that grow.
PixelGrid resize(const PixelGrid& img, int out_h, int out_w);

// Same as resize() for a single-channel plane held in doubles.
std::vector<double> resize_plane(const std::vector<double>& plane, int h, int w, int out_h, int out_w);

}  // namespace subbench
