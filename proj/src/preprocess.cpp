#include "subbench/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>

#include "subbench/error.hpp"

namespace subbench {

double nearest_rank_percentile(std::vector<double> values, double pct) {
    if (values.empty()) throw DataError("percentile of an empty sample");
    if (pct < 0.0 || pct > 100.0) throw DataError("percentile must lie in [0, 100]");
    const auto n = static_cast<double>(values.size());
    // pct * n is formed before dividing so integral products stay exact.
    auto rank = static_cast<std::size_t>(std::ceil(pct * n / 100.0 - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, values.size());
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank - 1), values.end());
    return values[rank - 1];
}

NormalizeResult percentile_normalize(const PixelGrid& img, const MaskRegion& mask, double lo_pct, double hi_pct) {
    if (mask.height() != img.height() || mask.width() != img.width()) throw DataError("mask shape differs from image");
    if (lo_pct > hi_pct) throw DataError("lo percentile exceeds hi percentile");

    std::vector<double> sample;
    sample.reserve(mask.count() * img.channels());
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            if (!mask.at(y, x)) continue;
            for (int c = 0; c < img.channels(); ++c) sample.push_back(img.at(y, x, c));
        }
    }
    if (sample.empty()) throw DataError("percentile_normalize: empty mask");

    NormalizeResult out;
    out.lo_value = nearest_rank_percentile(sample, lo_pct);
    out.hi_value = nearest_rank_percentile(std::move(sample), hi_pct);
    out.image = PixelGrid(img.height(), img.width(), img.channels(), Range::Unit);
    auto dst = out.image.values();
    if (out.hi_value == out.lo_value) {
        out.degenerate = true;
        std::fill(dst.begin(), dst.end(), 0.5f);
        return out;
    }
    const double span = out.hi_value - out.lo_value;
    const auto src = img.values();
    for (std::size_t i = 0; i < src.size(); ++i) {
        dst[i] = static_cast<float>(std::clamp((src[i] - out.lo_value) / span, 0.0, 1.0));
    }
    return out;
}

namespace {

struct Point {
    std::int64_t x;
    std::int64_t y;
    auto operator<=>(const Point&) const = default;
};

std::int64_t cross(const Point& o, const Point& a, const Point& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Andrew's monotone chain; counter-clockwise, collinear points dropped.
std::vector<Point> convex_hull(std::vector<Point> pts) {
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    if (pts.size() < 3) return pts;
    std::vector<Point> hull(2 * pts.size());
    std::size_t k = 0;
    for (const auto& p : pts) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
        hull[k++] = p;
    }
    for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
        while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    return hull;
}

bool inside_hull(const std::vector<Point>& hull, const Point& p) {
    if (hull.size() == 1) return p == hull[0];
    if (hull.size() == 2) {
        const auto& a = hull[0];
        const auto& b = hull[1];
        return cross(a, b, p) == 0 && p.x >= std::min(a.x, b.x) && p.x <= std::max(a.x, b.x) &&
               p.y >= std::min(a.y, b.y) && p.y <= std::max(a.y, b.y);
    }
    for (std::size_t i = 0; i < hull.size(); ++i) {
        if (cross(hull[i], hull[(i + 1) % hull.size()], p) < 0) return false;
    }
    return true;
}

}  // namespace

ForegroundMask foreground_mask(const PixelGrid& img) {
    if (img.channels() != 1) throw DataError("foreground_mask expects a single-channel image");
    const auto values = img.values();
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    const double lo = *mn;
    const double hi = *mx;

    ForegroundMask out;
    if (!(hi > lo)) {
        out.mask = MaskRegion(img.height(), img.width(), true);
        out.fallback = true;
        out.threshold = hi;
        return out;
    }

    constexpr int kBins = 256;
    auto bin_of = [&](double v) { return std::min(kBins - 1, static_cast<int>((v - lo) / (hi - lo) * kBins)); };
    std::array<double, kBins> hist{};
    for (float v : values) hist[bin_of(v)] += 1.0;

    const double total = static_cast<double>(values.size());
    double sum_all = 0.0;
    for (int b = 0; b < kBins; ++b) sum_all += b * hist[b];

    // Between-class variance maximization; the first maximizing split wins.
    int best_k = 0;
    double best_var = -1.0;
    double w0 = 0.0;
    double sum0 = 0.0;
    for (int k = 0; k < kBins - 1; ++k) {
        w0 += hist[k];
        sum0 += k * hist[k];
        const double w1 = total - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double mu0 = sum0 / w0;
        const double mu1 = (sum_all - sum0) / w1;
        const double var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (var > best_var) {
            best_var = var;
            best_k = k;
        }
    }
    out.threshold = lo + (best_k + 1) * (hi - lo) / kBins;

    std::vector<Point> fg;
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            if (bin_of(img.at(y, x)) > best_k) fg.push_back({x, y});
        }
    }
    if (fg.empty()) {
        out.mask = MaskRegion(img.height(), img.width(), true);
        out.fallback = true;
        return out;
    }

    const auto hull = convex_hull(std::move(fg));
    std::int64_t x0 = hull[0].x, x1 = hull[0].x, y0 = hull[0].y, y1 = hull[0].y;
    for (const auto& p : hull) {
        x0 = std::min(x0, p.x);
        x1 = std::max(x1, p.x);
        y0 = std::min(y0, p.y);
        y1 = std::max(y1, p.y);
    }
    out.mask = MaskRegion(img.height(), img.width(), false);
    for (auto y = y0; y <= y1; ++y) {
        for (auto x = x0; x <= x1; ++x) {
            if (inside_hull(hull, {x, y})) out.mask.set(static_cast<int>(y), static_cast<int>(x), true);
        }
    }
    return out;
}

std::vector<Tile> tile_image(const PixelGrid& img, int tile, int stride, const std::string& label) {
    if (tile <= 0 || stride <= 0) throw DataError("tile and stride must be positive");
    std::vector<Tile> tiles;
    if (img.empty()) return tiles;
    for (int y = 0; y + tile <= img.height(); y += stride) {
        for (int x = 0; x + tile <= img.width(); x += stride) {
            PixelGrid crop(tile, tile, img.channels(), img.range());
            for (int ty = 0; ty < tile; ++ty) {
                for (int tx = 0; tx < tile; ++tx) {
                    for (int c = 0; c < img.channels(); ++c) crop.at(ty, tx, c) = img.at(y + ty, x + tx, c);
                }
            }
            tiles.push_back({std::move(crop), label, y, x});
        }
    }
    return tiles;
}

PixelGrid to_grayscale(const PixelGrid& img) {
    if (img.channels() == 1) return img;
    PixelGrid out(img.height(), img.width(), 1, img.range());
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            const double v = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
            out.at(y, x) = static_cast<float>(v);
        }
    }
    out.clip();
    return out;
}

namespace {

struct Tap {
    int index;
    double weight;
};

struct Kernel1d {
    std::vector<std::vector<Tap>> taps;
    double divisor = 1.0;
};

// Area weights are integer overlaps in a coordinate system scaled by
// in * out, so a constant row is reproduced exactly.
Kernel1d make_kernel(int in, int out) {
    Kernel1d k;
    k.taps.resize(out);
    if (out <= in) {
        k.divisor = in;
        for (int j = 0; j < out; ++j) {
            const std::int64_t lo = static_cast<std::int64_t>(j) * in;
            const std::int64_t hi = lo + in;
            for (int i = static_cast<int>(lo / out); i < in && static_cast<std::int64_t>(i) * out < hi; ++i) {
                const std::int64_t s0 = std::max<std::int64_t>(lo, static_cast<std::int64_t>(i) * out);
                const std::int64_t s1 = std::min<std::int64_t>(hi, static_cast<std::int64_t>(i + 1) * out);
                if (s1 > s0) k.taps[j].push_back({i, static_cast<double>(s1 - s0)});
            }
        }
    } else {
        for (int j = 0; j < out; ++j) {
            double src = (j + 0.5) * in / out - 0.5;
            src = std::clamp(src, 0.0, static_cast<double>(in - 1));
            const int i0 = static_cast<int>(std::floor(src));
            const int i1 = std::min(i0 + 1, in - 1);
            const double f = src - i0;
            if (f == 0.0 || i0 == i1) {
                k.taps[j].push_back({i0, 1.0});
            } else {
                k.taps[j].push_back({i0, 1.0 - f});
                k.taps[j].push_back({i1, f});
            }
        }
    }
    return k;
}

}  // namespace

std::vector<double> resize_plane(const std::vector<double>& plane, int h, int w, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0) throw DataError("resize target must be positive");
    if (plane.size() != static_cast<std::size_t>(h) * w) throw DataError("resize_plane: size mismatch");
    const auto kx = make_kernel(w, out_w);
    const auto ky = make_kernel(h, out_h);

    std::vector<double> tmp(static_cast<std::size_t>(h) * out_w);
    for (int y = 0; y < h; ++y) {
        for (int j = 0; j < out_w; ++j) {
            double acc = 0.0;
            for (const auto& t : kx.taps[j]) acc += t.weight * plane[static_cast<std::size_t>(y) * w + t.index];
            tmp[static_cast<std::size_t>(y) * out_w + j] = acc / kx.divisor;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(out_h) * out_w);
    for (int i = 0; i < out_h; ++i) {
        for (int x = 0; x < out_w; ++x) {
            double acc = 0.0;
            for (const auto& t : ky.taps[i]) acc += t.weight * tmp[static_cast<std::size_t>(t.index) * out_w + x];
            out[static_cast<std::size_t>(i) * out_w + x] = acc / ky.divisor;
        }
    }
    return out;
}

PixelGrid resize(const PixelGrid& img, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0) throw DataError("resize target must be positive");
    if (out_h == img.height() && out_w == img.width()) return img;
    PixelGrid out(out_h, out_w, img.channels(), img.range());
    const std::size_t n = static_cast<std::size_t>(img.height()) * img.width();
    std::vector<double> plane(n);
    for (int c = 0; c < img.channels(); ++c) {
        for (std::size_t i = 0; i < n; ++i) plane[i] = img.values()[i * img.channels() + c];
        const auto r = resize_plane(plane, img.height(), img.width(), out_h, out_w);
        for (std::size_t i = 0; i < r.size(); ++i) out.values()[i * img.channels() + c] = static_cast<float>(r[i]);
    }
    out.clip();
    return out;
}

}  // namespace subbench
