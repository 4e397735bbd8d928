#include "bca/volume.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bca/errors.hpp"

namespace bca {

std::string to_string(const Dims& d) {
    return std::to_string(d.width) + "x" + std::to_string(d.height) + "x" + std::to_string(d.depth);
}

namespace {

void check_dims(const Dims& d) {
    if (d.width == 0 || d.height == 0 || d.depth == 0)
        throw ShapeError("volume dimensions must be >= 1, got " + to_string(d));
}

void check_spacing(const Spacing& s) {
    auto ok = [](double v) { return std::isfinite(v) && v > 0.0; };
    if (!ok(s.x) || !ok(s.y) || !ok(s.z))
        throw ShapeError("voxel spacing must be positive and finite");
}

}  // namespace

Volume3D::Volume3D(Dims dims, Spacing spacing, double fill)
    : dims_(dims), spacing_(spacing) {
    check_dims(dims_);
    check_spacing(spacing_);
    data_.assign(dims_.voxels(), fill);
}

Volume3D::Volume3D(Dims dims, Spacing spacing, std::vector<double> data)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
    check_dims(dims_);
    check_spacing(spacing_);
    if (data_.size() != dims_.voxels())
        throw ShapeError("payload has " + std::to_string(data_.size()) + " values, grid " +
                         to_string(dims_) + " needs " + std::to_string(dims_.voxels()));
}

void Volume3D::set_spacing(Spacing s) {
    check_spacing(s);
    spacing_ = s;
}

std::span<const double> Volume3D::slice(std::size_t z) const {
    return std::span<const double>(data_).subspan(z * dims_.slice_voxels(), dims_.slice_voxels());
}

std::span<double> Volume3D::slice(std::size_t z) {
    return std::span<double>(data_).subspan(z * dims_.slice_voxels(), dims_.slice_voxels());
}

bool Volume3D::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Volume3D::min() const {
    if (data_.empty()) throw ShapeError("empty volume");
    return *std::min_element(data_.begin(), data_.end());
}

double Volume3D::max() const {
    if (data_.empty()) throw ShapeError("empty volume");
    return *std::max_element(data_.begin(), data_.end());
}

double Volume3D::mean() const {
    if (data_.empty()) throw ShapeError("empty volume");
    return std::accumulate(data_.begin(), data_.end(), 0.0) / static_cast<double>(data_.size());
}

void Volume3D::validate() const {
    check_dims(dims_);
    check_spacing(spacing_);
    if (data_.size() != dims_.voxels()) throw ShapeError("payload size does not match grid");
    if (!all_finite()) throw NonFiniteError("volume contains non-finite voxels");
}

}  // namespace bca
