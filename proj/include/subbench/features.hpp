#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "subbench/image.hpp"

namespace subbench {

// Circular LBP: P neighbours on a circle of radius r, raw codes (no
// uniform-pattern reduction), 2^P histogram bins.
struct LbpConfig {
    int radius = 2;
    int points = 8;

    int bins() const { return 1 << points; }
    void validate() const;
};

using FeatureVector = std::vector<double>;

// Offset of neighbour k relative to the centre: (dx, dy) = (r cos t, -r sin t)
// with t = 2 pi k / P. Components within 1e-9 of an integer are snapped to it.
struct NeighborOffset {
    double dx;
    double dy;
};
std::vector<NeighborOffset> lbp_offsets(const LbpConfig& cfg);

// Bit k is set when the bilinearly interpolated neighbour k is >= the centre.
int lbp_code(const PixelGrid& img, int x, int y, const LbpConfig& cfg);

// L1-normalised histogram of lbp_code over every pixel at least r from the border.
FeatureVector lbp_histogram(const PixelGrid& img, const LbpConfig& cfg);

// Per-radius histograms concatenated in the given order. Colour images are
// converted to grayscale first.
FeatureVector combined_descriptor(const PixelGrid& img, const std::vector<int>& radii = {2, 3, 4}, int points = 8);

// One row per image: id, f0, f1, ...
void write_feature_csv(const std::filesystem::path& path, const std::vector<std::string>& ids,
                       const std::vector<FeatureVector>& rows);

struct FeatureTable {
    std::vector<std::string> ids;
    std::vector<FeatureVector> rows;
};
FeatureTable read_feature_csv(const std::filesystem::path& path);

}  // namespace subbench
