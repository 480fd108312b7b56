#include "subbench/container.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "subbench/error.hpp"

namespace subbench {

namespace {

constexpr char kMagic[8] = {'S', 'U', 'B', 'B', 'E', 'N', 'C', 'H'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::string& out, T value) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<char>(u & 0xFF));
        u = static_cast<U>(u >> 8);
    }
}

template <typename T>
T get_le(std::string_view bytes, std::size_t pos) {
    if (pos + sizeof(T) > bytes.size()) throw DataError("container truncated");
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        u |= static_cast<std::make_unsigned_t<T>>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    }
    return static_cast<T>(u);
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("SHA-256 computation failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

const NamedArray& Container::array(std::string_view name) const {
    for (const auto& a : arrays) {
        if (a.name == name) return a;
    }
    throw DataError("container has no array named '" + std::string(name) + "'");
}

bool Container::has_array(std::string_view name) const {
    for (const auto& a : arrays) {
        if (a.name == name) return true;
    }
    return false;
}

std::string encode_container(const Container& c) {
    nlohmann::json header;
    header["kind"] = c.kind;
    header["meta"] = c.meta;
    header["arrays"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& a : c.arrays) {
        std::size_t expect = 1;
        for (int d : a.shape) expect *= static_cast<std::size_t>(d);
        if (expect != a.data.size()) throw DataError("array '" + a.name + "' shape does not match its data");
        header["arrays"].push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset}, {"count", a.data.size()}});
        offset += 4 * a.data.size();
    }
    const std::string header_text = header.dump();

    std::string out(kMagic, sizeof(kMagic));
    put_le<std::uint32_t>(out, kVersion);
    put_le<std::uint64_t>(out, header_text.size());
    out += header_text;
    out.reserve(out.size() + offset);
    for (const auto& a : c.arrays) {
        for (float f : a.data) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
    }
    return out;
}

Container decode_container(std::string_view bytes) {
    if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw DataError("not a subbench container");
    }
    const auto version = get_le<std::uint32_t>(bytes, 8);
    if (version != kVersion) throw DataError("unsupported container version " + std::to_string(version));
    const auto header_len = get_le<std::uint64_t>(bytes, 12);
    const std::size_t header_start = 20;
    if (header_start + header_len > bytes.size()) throw DataError("container header truncated");
    const auto header = nlohmann::json::parse(bytes.substr(header_start, header_len));
    const std::size_t payload = header_start + header_len;

    Container c;
    c.kind = header.at("kind").get<std::string>();
    c.meta = header.at("meta");
    for (const auto& entry : header.at("arrays")) {
        NamedArray a;
        a.name = entry.at("name").get<std::string>();
        a.shape = entry.at("shape").get<std::vector<int>>();
        const auto offset = entry.at("offset").get<std::uint64_t>();
        const auto count = entry.at("count").get<std::uint64_t>();
        if (payload + offset + 4 * count > bytes.size()) throw DataError("container payload truncated");
        a.data.resize(count);
        for (std::uint64_t i = 0; i < count; ++i) {
            a.data[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, payload + offset + 4 * i));
        }
        c.arrays.push_back(std::move(a));
    }
    return c;
}

void write_container(const std::filesystem::path& path, const Container& c) {
    write_file(path, encode_container(c));
}

Container read_container(const std::filesystem::path& path) { return decode_container(read_file(path)); }

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot create " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace subbench
