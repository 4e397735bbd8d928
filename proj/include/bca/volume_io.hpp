#pragma once

#include <cstdint>
#include <filesystem>

#include "bca/volume.hpp"

namespace bca {

/// Payload precision of the raw tensor format.
enum class RawDtype : std::uint8_t { Float32 = 0, Float64 = 1 };

/// Reads a raw tensor (magic "VOL1") or NIfTI-1 (.nii / .nii.gz) file.
/// The format is detected from the file content, not the extension.
Volume3D load_volume(const std::filesystem::path& path);

/// Raw tensor layout, little-endian:
///   "VOL1" | dtype u8 | width, height, depth u32 | spacing x, y, z f32 | payload
/// The payload is stored row by row (x fastest), slice after slice.
void save_volume(const Volume3D& volume, const std::filesystem::path& path,
                 RawDtype dtype = RawDtype::Float64);

/// Writes a single-file NIfTI-1 image with float32 voxels; gzip-compressed when
/// the path ends in ".gz".
void save_nifti(const Volume3D& volume, const std::filesystem::path& path);

}  // namespace bca
