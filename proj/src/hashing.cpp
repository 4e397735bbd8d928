#include "bca/hashing.hpp"

#include <zlib.h>

#include <array>
#include <cstdio>
#include <fstream>

#include "bca/errors.hpp"

namespace bca {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) {
    std::uint64_t h = basis;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t basis) {
    std::uint64_t h = basis;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) { return mix64(seed ^ fnv1a64(tag)); }

std::uint32_t crc32(std::span<const unsigned char> bytes, std::uint32_t running) {
    uLong c = running;
    std::size_t off = 0;
    // zlib takes uInt lengths
    while (off < bytes.size()) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
        c = ::crc32(c, bytes.data() + off, chunk);
        off += chunk;
    }
    return static_cast<std::uint32_t>(c);
}

std::uint32_t file_crc32(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::array<unsigned char, 1 << 16> buf{};
    std::uint32_t c = 0;
    while (in) {
        in.read(reinterpret_cast<char*>(buf.data()), buf.size());
        const auto n = static_cast<std::size_t>(in.gcount());
        if (n == 0) break;
        c = crc32(std::span<const unsigned char>(buf.data(), n), c);
    }
    return c;
}

std::string to_hex(std::uint64_t v, int digits) {
    std::string s(static_cast<std::size_t>(digits), '0');
    for (int i = digits - 1; i >= 0 && v; --i, v >>= 4) s[static_cast<std::size_t>(i)] = "0123456789abcdef"[v & 0xf];
    return s;
}

}  // namespace bca
