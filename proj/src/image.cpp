#include "subbench/image.hpp"

#include <algorithm>
#include <numeric>

#include "subbench/error.hpp"

namespace subbench {

double range_min(Range r) { return r == Range::Unit ? 0.0 : -1.0; }
double range_max(Range) { return 1.0; }

PixelGrid::PixelGrid(int height, int width, int channels, Range range, float fill)
    : height_(height), width_(width), channels_(channels), range_(range) {
    if (height <= 0 || width <= 0) throw DataError("PixelGrid dimensions must be positive");
    if (channels != 1 && channels != 3) throw DataError("PixelGrid must have 1 or 3 channels");
    values_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

PixelGrid::PixelGrid(int height, int width, int channels, Range range, std::vector<float> values)
    : PixelGrid(height, width, channels, range) {
    if (values.size() != values_.size()) throw DataError("PixelGrid value count does not match shape");
    values_ = std::move(values);
}

void PixelGrid::clip() {
    const auto lo = static_cast<float>(range_min(range_));
    const auto hi = static_cast<float>(range_max(range_));
    for (auto& v : values_) v = std::clamp(v, lo, hi);
}

bool PixelGrid::in_range() const {
    const auto lo = static_cast<float>(range_min(range_));
    const auto hi = static_cast<float>(range_max(range_));
    return std::all_of(values_.begin(), values_.end(), [&](float v) { return v >= lo && v <= hi; });
}

PixelGrid PixelGrid::to_range(Range target) const {
    PixelGrid out = *this;
    out.range_ = target;
    if (target == range_) return out;
    for (auto& v : out.values_) {
        v = target == Range::Signed ? v * 2.0f - 1.0f : (v + 1.0f) * 0.5f;
    }
    out.clip();
    return out;
}

MaskRegion::MaskRegion(int height, int width, bool fill)
    : height_(height), width_(width), bits_(static_cast<std::size_t>(height) * width, fill ? 1 : 0) {}

std::size_t MaskRegion::count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1));
}

}  // namespace subbench
