#include "subbench/features.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "subbench/error.hpp"
#include "subbench/preprocess.hpp"

namespace subbench {

void LbpConfig::validate() const {
    if (radius < 1) throw ConfigError("LBP radius must be >= 1");
    if (points < 4 || points > 24) throw ConfigError("LBP point count must lie in [4, 24]");
}

std::vector<NeighborOffset> lbp_offsets(const LbpConfig& cfg) {
    cfg.validate();
    auto snap = [](double v) {
        const double r = std::round(v);
        return std::abs(v - r) < 1e-9 ? r : v;
    };
    std::vector<NeighborOffset> out(cfg.points);
    for (int k = 0; k < cfg.points; ++k) {
        const double t = 2.0 * std::numbers::pi * k / cfg.points;
        out[k] = {snap(cfg.radius * std::cos(t)), snap(-cfg.radius * std::sin(t))};
    }
    return out;
}

namespace {

double sample_bilinear(const PixelGrid& img, double px, double py) {
    const int x0 = static_cast<int>(std::floor(px));
    const int y0 = static_cast<int>(std::floor(py));
    const double fx = px - x0;
    const double fy = py - y0;
    auto row = [&](int y) {
        const double a = img.at(y, x0);
        return fx == 0.0 ? a : (1.0 - fx) * a + fx * img.at(y, x0 + 1);
    };
    const double top = row(y0);
    return fy == 0.0 ? top : (1.0 - fy) * top + fy * row(y0 + 1);
}

int code_at(const PixelGrid& img, int x, int y, const std::vector<NeighborOffset>& offsets) {
    const double center = img.at(y, x);
    int code = 0;
    for (std::size_t k = 0; k < offsets.size(); ++k) {
        if (sample_bilinear(img, x + offsets[k].dx, y + offsets[k].dy) >= center) code |= 1 << k;
    }
    return code;
}

}  // namespace

int lbp_code(const PixelGrid& img, int x, int y, const LbpConfig& cfg) {
    if (img.channels() != 1) throw DataError("lbp_code expects a single-channel image");
    const int r = cfg.radius;
    if (x < r || y < r || x + r >= img.width() || y + r >= img.height()) {
        throw DataError("lbp_code: pixel (" + std::to_string(x) + "," + std::to_string(y) + ") closer than radius " +
                        std::to_string(r) + " to the border");
    }
    return code_at(img, x, y, lbp_offsets(cfg));
}

FeatureVector lbp_histogram(const PixelGrid& img, const LbpConfig& cfg) {
    if (img.channels() != 1) throw DataError("lbp_histogram expects a single-channel image");
    const auto offsets = lbp_offsets(cfg);
    const int r = cfg.radius;
    if (img.width() < 2 * r + 1 || img.height() < 2 * r + 1) {
        throw DataError("lbp_histogram: image " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                        " too small for radius " + std::to_string(r));
    }
    FeatureVector hist(cfg.bins(), 0.0);
    std::size_t count = 0;
    for (int y = r; y + r < img.height(); ++y) {
        for (int x = r; x + r < img.width(); ++x) {
            hist[code_at(img, x, y, offsets)] += 1.0;
            ++count;
        }
    }
    for (auto& h : hist) h /= static_cast<double>(count);
    return hist;
}

FeatureVector combined_descriptor(const PixelGrid& img, const std::vector<int>& radii, int points) {
    if (radii.empty()) throw ConfigError("combined_descriptor needs at least one radius");
    const PixelGrid gray = to_grayscale(img);
    FeatureVector out;
    for (int r : radii) {
        const auto h = lbp_histogram(gray, {r, points});
        out.insert(out.end(), h.begin(), h.end());
    }
    return out;
}

void write_feature_csv(const std::filesystem::path& path, const std::vector<std::string>& ids,
                       const std::vector<FeatureVector>& rows) {
    if (ids.size() != rows.size()) throw DataError("feature CSV: id and row counts differ");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot create " + path.string());
    const std::size_t dim = rows.empty() ? 0 : rows.front().size();
    out << "id";
    for (std::size_t j = 0; j < dim; ++j) out << ",f" << j;
    out << '\n';
    char buf[32];
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != dim) throw DataError("feature CSV: ragged rows");
        out << ids[i];
        for (double v : rows[i]) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            out << ',' << buf;
        }
        out << '\n';
    }
}

FeatureTable read_feature_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    FeatureTable table;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        std::getline(row, cell, ',');
        table.ids.push_back(cell);
        FeatureVector v;
        while (std::getline(row, cell, ',')) v.push_back(std::stod(cell));
        table.rows.push_back(std::move(v));
    }
    return table;
}

}  // namespace subbench
