#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace subbench {

// Hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

struct NamedArray {
    std::string name;
    std::vector<int> shape;
    std::vector<float> data;
};

// Self-describing binary container used for GAN checkpoints and fitted
// classifier models.
//
// Layout:
//   8 bytes   magic "SUBBENCH"
//   u32 LE    container format version (1)
//   u64 LE    header length in bytes
//   header    UTF-8 JSON: {"kind", "meta", "arrays": [{"name", "shape", "offset", "count"}]}
//   payload   arrays back to back, little-endian IEEE-754 binary32
struct Container {
    std::string kind;
    nlohmann::json meta = nlohmann::json::object();
    std::vector<NamedArray> arrays;

    const NamedArray& array(std::string_view name) const;
    bool has_array(std::string_view name) const;
};

std::string encode_container(const Container& c);
Container decode_container(std::string_view bytes);

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

// Whole-file helpers.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace subbench
