#include "bca/volumizer.hpp"

#include <algorithm>
#include <cmath>

#include "bca/errors.hpp"

namespace bca {

namespace {

// Source coordinate of output sample i on a corner-aligned grid.
double source_coord(std::size_t i, std::size_t in, std::size_t out) {
    if (out == 1 || in == 1) return out == 1 ? 0.5 * static_cast<double>(in - 1) : 0.0;
    return static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
}

double rescaled_spacing(double sp, std::size_t in, std::size_t out) {
    if (in > 1 && out > 1) return sp * static_cast<double>(in - 1) / static_cast<double>(out - 1);
    return sp * static_cast<double>(in) / static_cast<double>(out);
}

}  // namespace

Volume3D resample_inplane(const Volume3D& v, std::size_t target_width, std::size_t target_height) {
    if (target_width == 0 || target_height == 0) throw PreconditionError("target in-plane size must be >= 1");
    const Dims in = v.dims();
    if (in.width == target_width && in.height == target_height) return v;

    const Dims out_dims{target_width, target_height, in.depth};
    Spacing sp = v.spacing();
    sp.x = rescaled_spacing(sp.x, in.width, target_width);
    sp.y = rescaled_spacing(sp.y, in.height, target_height);
    Volume3D out(out_dims, sp);
    out.metadata() = v.metadata();

    // Per-column interpolation weights are shared by every row and slice.
    std::vector<std::size_t> x0(target_width), x1(target_width);
    std::vector<double> wx(target_width);
    for (std::size_t i = 0; i < target_width; ++i) {
        const double s = source_coord(i, in.width, target_width);
        x0[i] = std::min(static_cast<std::size_t>(std::floor(s)), in.width - 1);
        x1[i] = std::min(x0[i] + 1, in.width - 1);
        wx[i] = s - static_cast<double>(x0[i]);
    }
    for (std::size_t z = 0; z < in.depth; ++z) {
        for (std::size_t j = 0; j < target_height; ++j) {
            const double s = source_coord(j, in.height, target_height);
            const std::size_t y0 = std::min(static_cast<std::size_t>(std::floor(s)), in.height - 1);
            const std::size_t y1 = std::min(y0 + 1, in.height - 1);
            const double wy = s - static_cast<double>(y0);
            for (std::size_t i = 0; i < target_width; ++i) {
                const double top = (1.0 - wx[i]) * v.at(x0[i], y0, z) + wx[i] * v.at(x1[i], y0, z);
                const double bottom = (1.0 - wx[i]) * v.at(x0[i], y1, z) + wx[i] * v.at(x1[i], y1, z);
                out.at(i, j, z) = (1.0 - wy) * top + wy * bottom;
            }
        }
    }
    return out;
}

Volume3D standardize_depth(const Volume3D& v, std::size_t target_depth) {
    if (target_depth == 0) throw PreconditionError("target depth must be >= 1");
    const Dims in = v.dims();
    if (in.depth == target_depth) return v;

    Volume3D out({in.width, in.height, target_depth}, v.spacing(), 0.0);
    out.metadata() = v.metadata();
    if (in.depth > target_depth) {
        const std::size_t first = (in.depth - target_depth) / 2;
        for (std::size_t z = 0; z < target_depth; ++z) std::ranges::copy(v.slice(first + z), out.slice(z).begin());
    } else {
        const std::size_t offset = (target_depth - in.depth) / 2;
        for (std::size_t z = 0; z < in.depth; ++z) std::ranges::copy(v.slice(z), out.slice(offset + z).begin());
    }
    return out;
}

Volume3D normalize_intensity(const Volume3D& v) {
    Volume3D out = v;
    const double lo = v.min();
    const double hi = v.max();
    auto data = out.data();
    if (!(hi > lo)) {
        std::ranges::fill(data, 0.0);
        return out;
    }
    const double range = hi - lo;
    for (double& x : data) x = (x - lo) / range;
    return out;
}

StandardCube standardize(const Volume3D& v, std::string source_id, Dims shape) {
    v.validate();
    Volume3D cube = normalize_intensity(standardize_depth(resample_inplane(v, shape.width, shape.height), shape.depth));
    return StandardCube{std::move(cube), std::move(source_id), Normalization::MinMax};
}

}  // namespace bca
