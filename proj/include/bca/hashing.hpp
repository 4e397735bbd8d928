#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace bca {

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

/// SplitMix64 finaliser; a bijective bit mixer.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Child seed for a named purpose: mix64(seed ^ fnv1a64(tag)).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

std::uint32_t crc32(std::span<const unsigned char> bytes, std::uint32_t running = 0);
std::uint32_t file_crc32(const std::filesystem::path& path);

/// Lower-case, zero-padded hexadecimal.
std::string to_hex(std::uint64_t v, int digits = 16);

}  // namespace bca
