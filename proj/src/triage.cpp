#include "subbench/triage.hpp"

#include <algorithm>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "subbench/error.hpp"
#include "subbench/png_io.hpp"
#include "subbench/preprocess.hpp"

namespace subbench {

HashSignature::HashSignature(int h, std::vector<std::uint8_t> bits) : h_(h), bits_(std::move(bits)) {
    if (h <= 0) throw DataError("hash size must be positive");
    if (bits_.size() != static_cast<std::size_t>(h) * h) throw DataError("hash signature must hold h*h bits");
    for (auto& b : bits_) b = b ? 1 : 0;
}

std::size_t HashSignature::popcount() const { return std::count(bits_.begin(), bits_.end(), 1); }

HashSignature HashSignature::complement() const {
    auto bits = bits_;
    for (auto& b : bits) b ^= 1;
    return {h_, std::move(bits)};
}

std::string HashSignature::to_hex() const {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    for (std::size_t i = 0; i < bits_.size(); i += 4) {
        int nibble = 0;
        for (std::size_t j = 0; j < 4; ++j) {
            nibble <<= 1;
            if (i + j < bits_.size()) nibble |= bits_[i + j];
        }
        out.push_back(digits[nibble]);
    }
    return out;
}

HashSignature HashSignature::from_hex(std::string_view hex) {
    std::vector<std::uint8_t> bits;
    for (char ch : hex) {
        int v;
        if (ch >= '0' && ch <= '9') v = ch - '0';
        else if (ch >= 'a' && ch <= 'f') v = ch - 'a' + 10;
        else if (ch >= 'A' && ch <= 'F') v = ch - 'A' + 10;
        else throw DataError("invalid hex digit in hash signature");
        for (int j = 3; j >= 0; --j) bits.push_back((v >> j) & 1);
    }
    int h = 1;
    while (static_cast<std::size_t>(h) * h < bits.size()) ++h;
    if (static_cast<std::size_t>(h) * h != bits.size()) throw DataError("hex signature length is not a square bit count");
    return {h, std::move(bits)};
}

HashSignature average_hash(const PixelGrid& img, int h) {
    if (h <= 0) throw DataError("hash size must be positive");
    const PixelGrid gray = to_grayscale(img);
    std::vector<double> plane(gray.values().begin(), gray.values().end());
    const auto small = resize_plane(plane, gray.height(), gray.width(), h, h);
    double mean = 0.0;
    for (double v : small) mean += v;
    mean /= static_cast<double>(small.size());
    std::vector<std::uint8_t> bits(small.size());
    for (std::size_t i = 0; i < small.size(); ++i) bits[i] = small[i] > mean ? 1 : 0;
    return {h, std::move(bits)};
}

int hamming(const HashSignature& a, const HashSignature& b) {
    if (a.bit_count() != b.bit_count()) throw DataError("hamming: signature lengths differ");
    int d = 0;
    for (std::size_t i = 0; i < a.bit_count(); ++i) d += a.bit(i) != b.bit(i);
    return d;
}

void ReferenceSet::validate() const {
    if (signatures.empty()) throw ConfigError("reference set is empty");
    const auto bits = signatures.front().bit_count();
    for (const auto& s : signatures) {
        if (s.bit_count() != bits) throw ConfigError("reference signatures differ in hash size");
    }
    if (tau < 0 || static_cast<std::size_t>(tau) > bits) throw ConfigError("tau must lie in [0, h*h]");
}

ReferenceSet ReferenceSet::from_images(const std::vector<PixelGrid>& images, int tau, int h) {
    ReferenceSet refs;
    refs.tau = tau;
    for (const auto& img : images) refs.signatures.push_back(average_hash(img, h));
    refs.validate();
    return refs;
}

double TriageResult::rejection_rate() const {
    const auto n = kept.size() + rejected.size();
    return n == 0 ? 0.0 : static_cast<double>(rejected.size()) / static_cast<double>(n);
}

TriageResult filter_synthetic(const std::vector<PixelGrid>& candidates, const ReferenceSet& refs) {
    refs.validate();
    const int h = refs.signatures.front().hash_size();
    TriageResult out;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto sig = average_hash(candidates[i], h);
        int best = std::numeric_limits<int>::max();
        for (const auto& r : refs.signatures) best = std::min(best, hamming(sig, r));
        out.distances.push_back(best);
        out.signatures.push_back(sig);
        (best <= refs.tau ? out.kept : out.rejected).push_back(i);
    }
    return out;
}

void write_triage_audit(const std::filesystem::path& path, const std::vector<std::string>& ids,
                        const TriageResult& result) {
    if (ids.size() != result.distances.size()) throw DataError("triage audit: ids and distances differ in length");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot create " + path.string());
    std::vector<bool> kept(ids.size(), false);
    for (auto i : result.kept) kept[i] = true;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        nlohmann::json j = {{"id", ids[i]},
                            {"distance", result.distances[i]},
                            {"kept", static_cast<bool>(kept[i])},
                            {"hash", result.signatures[i].to_hex()}};
        out << j.dump() << '\n';
    }
}

PixelGrid montage_grid(const std::vector<PixelGrid>& images, int rows, int cols) {
    if (rows <= 0 || cols <= 0) throw DataError("montage needs positive rows and cols");
    if (images.size() != static_cast<std::size_t>(rows) * cols) throw DataError("montage needs rows*cols images");
    const int h = images.front().height(), w = images.front().width(), c = images.front().channels();
    PixelGrid out(rows * h, cols * w, c, Range::Unit);
    for (int r = 0; r < rows; ++r) {
        for (int q = 0; q < cols; ++q) {
            const PixelGrid tile = images[r * cols + q].to_range(Range::Unit);
            if (tile.height() != h || tile.width() != w || tile.channels() != c) {
                throw DataError("montage images differ in shape");
            }
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    for (int ch = 0; ch < c; ++ch) out.at(r * h + y, q * w + x, ch) = tile.at(y, x, ch);
                }
            }
        }
    }
    return out;
}

std::string montage_filename(const Checkpoint& ckpt) {
    return "montage_" + ckpt.model_id + "_s" + std::to_string(ckpt.stage) + "_e" + std::to_string(ckpt.epoch) + "_r" +
           std::to_string(ckpt.resolution) + ".png";
}

std::filesystem::path emit_montage(const Checkpoint& ckpt, int rows, int cols, std::uint64_t seed,
                                   const std::filesystem::path& out_dir) {
    if (rows <= 0 || cols <= 0) throw DataError("montage needs positive rows and cols");
    const int n = rows * cols;
    std::vector<int> labels;
    if (ckpt.config.conditional) {
        for (int i = 0; i < n; ++i) labels.push_back(i % ckpt.config.label_cardinality);
    }
    const auto images = sample(ckpt, n, labels, seed);
    std::filesystem::create_directories(out_dir);
    const auto path = out_dir / montage_filename(ckpt);
    write_png(path, montage_grid(images, rows, cols));
    return path;
}

}  // namespace subbench
