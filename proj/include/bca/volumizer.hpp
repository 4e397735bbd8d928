#pragma once

#include <string>

#include "bca/volume.hpp"

namespace bca {

inline constexpr Dims kStandardShape{224, 224, 25};

enum class Normalization { MinMax };

/// A network input: fixed shape, values in [0, 1].
struct StandardCube {
    Volume3D data;
    std::string source_id;
    Normalization normalization = Normalization::MinMax;
};

/// Corner-aligned bilinear resampling of every axial slice; depth unchanged.
Volume3D resample_inplane(const Volume3D& v, std::size_t target_width = kStandardShape.width,
                          std::size_t target_height = kStandardShape.height);

/// Symmetric centre crop or zero pad along z. Odd excess is taken from (or
/// added at) the end.
Volume3D standardize_depth(const Volume3D& v, std::size_t target_depth = kStandardShape.depth);

/// (x - min) / (max - min); a constant volume maps to all zeros.
Volume3D normalize_intensity(const Volume3D& v);

/// resample_inplane -> standardize_depth -> normalize_intensity.
/// `shape` defaults to 224x224x25; desk-scale experiments pass smaller cubes.
StandardCube standardize(const Volume3D& v, std::string source_id, Dims shape = kStandardShape);

}  // namespace bca
