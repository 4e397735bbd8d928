#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace bca {

/// Grid extent in voxels: width (x), height (y), depth (z).
struct Dims {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t depth = 0;

    std::size_t voxels() const noexcept { return width * height * depth; }
    std::size_t slice_voxels() const noexcept { return width * height; }
    friend bool operator==(const Dims&, const Dims&) = default;
};

std::string to_string(const Dims& d);

/// Voxel size in millimetres along x, y, z.
struct Spacing {
    double x = 1.0;
    double y = 1.0;
    double z = 1.0;
    friend bool operator==(const Spacing&, const Spacing&) = default;
};

/// Dense scalar volume. Storage is x fastest, then y, then z, so each axial
/// slice is a contiguous width*height block.
class Volume3D {
public:
    Volume3D() = default;
    explicit Volume3D(Dims dims, Spacing spacing = {}, double fill = 0.0);
    Volume3D(Dims dims, Spacing spacing, std::vector<double> data);

    const Dims& dims() const noexcept { return dims_; }
    const Spacing& spacing() const noexcept { return spacing_; }
    void set_spacing(Spacing s);

    std::size_t size() const noexcept { return data_.size(); }
    std::size_t index(std::size_t x, std::size_t y, std::size_t z) const noexcept {
        return x + dims_.width * (y + dims_.height * z);
    }

    double& at(std::size_t x, std::size_t y, std::size_t z) { return data_[index(x, y, z)]; }
    double at(std::size_t x, std::size_t y, std::size_t z) const { return data_[index(x, y, z)]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::span<const double> slice(std::size_t z) const;
    std::span<double> slice(std::size_t z);

    std::map<std::string, std::string>& metadata() noexcept { return metadata_; }
    const std::map<std::string, std::string>& metadata() const noexcept { return metadata_; }

    bool all_finite() const noexcept;
    double min() const;
    double max() const;
    double mean() const;

    /// Throws ShapeError / NonFiniteError when the invariants do not hold.
    void validate() const;

    bool same_grid(const Volume3D& other) const noexcept {
        return dims_ == other.dims_ && spacing_ == other.spacing_;
    }

private:
    Dims dims_;
    Spacing spacing_;
    std::vector<double> data_;
    std::map<std::string, std::string> metadata_;
};

}  // namespace bca
