#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "subbench/gan.hpp"
#include "subbench/image.hpp"

namespace subbench {

// h*h bits, row-major.
class HashSignature {
public:
    HashSignature() = default;
    HashSignature(int h, std::vector<std::uint8_t> bits);

    int hash_size() const { return h_; }
    std::size_t bit_count() const { return bits_.size(); }
    bool bit(std::size_t i) const { return bits_.at(i) != 0; }
    std::size_t popcount() const;
    HashSignature complement() const;

    // Four bits per hex digit, first bit in the most significant position.
    std::string to_hex() const;
    static HashSignature from_hex(std::string_view hex);

    bool operator==(const HashSignature&) const = default;

private:
    int h_ = 0;
    std::vector<std::uint8_t> bits_;
};

// Grayscale, area-average down to h x h, bit = value > mean.
HashSignature average_hash(const PixelGrid& img, int h = 16);

int hamming(const HashSignature& a, const HashSignature& b);

struct ReferenceSet {
    std::vector<HashSignature> signatures;
    int tau = 64;

    void validate() const;
    static ReferenceSet from_images(const std::vector<PixelGrid>& images, int tau = 64, int h = 16);
};

struct TriageResult {
    std::vector<std::size_t> kept;      // candidate indices
    std::vector<std::size_t> rejected;
    std::vector<int> distances;         // minimum distance per candidate
    std::vector<HashSignature> signatures;
    double rejection_rate() const;
};

// A candidate is kept when its nearest reference is within tau bits.
TriageResult filter_synthetic(const std::vector<PixelGrid>& candidates, const ReferenceSet& refs);

// One JSON object per candidate: {"id", "distance", "kept", "hash"}.
void write_triage_audit(const std::filesystem::path& path, const std::vector<std::string>& ids,
                        const TriageResult& result);

// rows x cols tiles of equally sized images, row-major, unit range.
PixelGrid montage_grid(const std::vector<PixelGrid>& images, int rows, int cols);

// "montage_<model>_s<stage>_e<epoch>_r<resolution>.png"
std::string montage_filename(const Checkpoint& ckpt);

// Fresh samples from the checkpoint (labels cycle through the classes for
// conditional models) written as a PNG grid. Returns the file path.
std::filesystem::path emit_montage(const Checkpoint& ckpt, int rows, int cols, std::uint64_t seed,
                                   const std::filesystem::path& out_dir);

}  // namespace subbench
