#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace subbench {

// Declared numeric range of a PixelGrid.
enum class Range {
    Unit,    // [0, 1]
    Signed,  // [-1, 1]
};

double range_min(Range r);
double range_max(Range r);

// H x W x C image stored interleaved (row-major, channel fastest).
class PixelGrid {
public:
    PixelGrid() = default;
    PixelGrid(int height, int width, int channels, Range range = Range::Unit, float fill = 0.0f);
    PixelGrid(int height, int width, int channels, Range range, std::vector<float> values);

    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return channels_; }
    Range range() const { return range_; }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    float& at(int y, int x, int c = 0) { return values_[index(y, x, c)]; }
    float at(int y, int x, int c = 0) const { return values_[index(y, x, c)]; }

    std::span<float> values() { return values_; }
    std::span<const float> values() const { return values_; }

    // Clamp every value into the declared range.
    void clip();
    // True when every value lies within the declared range.
    bool in_range() const;

    // Affine map between the unit and signed ranges.
    PixelGrid to_range(Range target) const;

    bool operator==(const PixelGrid&) const = default;

private:
    std::size_t index(int y, int x, int c) const {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }

    int height_ = 0;
    int width_ = 0;
    int channels_ = 0;
    Range range_ = Range::Unit;
    std::vector<float> values_;
};

// Binary map of the same height/width as its image; true = inside region.
class MaskRegion {
public:
    MaskRegion() = default;
    MaskRegion(int height, int width, bool fill = false);

    int height() const { return height_; }
    int width() const { return width_; }
    bool at(int y, int x) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
    void set(int y, int x, bool v) { bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }
    std::size_t count() const;

    bool operator==(const MaskRegion&) const = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<unsigned char> bits_;
};

}  // namespace subbench
