#include "bca/tensor_ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <type_traits>

#include "bca/errors.hpp"

namespace bca::nn {

namespace {

template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapRM = Eigen::Map<MatRM<T>>;
template <class T>
using CMapRM = Eigen::Map<const MatRM<T>>;

// Upper bound on im2col buffer elements per tile.
constexpr std::size_t kTileBudget = std::size_t{1} << 21;

std::size_t out_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p) {
    if (in + 2 * p < k) throw ShapeError("convolution input smaller than kernel");
    return (in + 2 * p - k) / s + 1;
}

// Valid output-x range [lo, hi) for kernel column kx.
struct XRange {
    std::size_t lo, hi;
};

XRange valid_x(std::size_t kx, std::size_t pad, std::size_t stride, std::size_t in_w, std::size_t out_w) {
    const auto k = static_cast<std::ptrdiff_t>(kx), p = static_cast<std::ptrdiff_t>(pad),
               s = static_cast<std::ptrdiff_t>(stride), w = static_cast<std::ptrdiff_t>(in_w);
    // ix = ox*s + k - p must satisfy 0 <= ix < w.
    std::ptrdiff_t lo = p - k <= 0 ? 0 : (p - k + s - 1) / s;
    std::ptrdiff_t hi = w - 1 + p - k < 0 ? 0 : (w - 1 + p - k) / s + 1;
    lo = std::min<std::ptrdiff_t>(lo, static_cast<std::ptrdiff_t>(out_w));
    hi = std::clamp<std::ptrdiff_t>(hi, lo, static_cast<std::ptrdiff_t>(out_w));
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Patches for output rows [row0, row1) of one sample; a row is one (oz, oy).
// Patch row r starts at col + r * ld; ld == 0 means tightly packed.
template <class T, bool Accumulate>
void patch_transfer(const ConvGeometry& g, const Shape5& in, const Shape5& out, std::size_t row0, std::size_t row1,
                    std::conditional_t<Accumulate, T*, const T*> x, std::conditional_t<Accumulate, const T*, T*> col,
                    std::size_t ld = 0) {
    const auto [kd, kh, kw] = g.kernel;
    const auto [sd, sh, sw] = g.stride;
    const auto [pd, ph, pw] = g.pad;
    const std::size_t wo = out.w, ho = out.h, len = ld ? ld : (row1 - row0) * wo;

    std::vector<XRange> xr(kw);
    for (std::size_t kx = 0; kx < kw; ++kx) xr[kx] = valid_x(kx, pw, sw, in.w, wo);

    std::size_t r = 0;
    for (std::size_t ci = 0; ci < g.in_channels; ++ci)
        for (std::size_t kz = 0; kz < kd; ++kz)
            for (std::size_t ky = 0; ky < kh; ++ky)
                for (std::size_t kx = 0; kx < kw; ++kx, ++r) {
                    auto* line0 = col + r * len;
                    const auto [lo, hi] = xr[kx];
                    for (std::size_t row = row0; row < row1; ++row) {
                        const std::size_t oz = row / ho, oy = row % ho;
                        auto* line = line0 + (row - row0) * wo;
                        const auto iz = static_cast<std::ptrdiff_t>(oz * sd + kz) - static_cast<std::ptrdiff_t>(pd);
                        const auto iy = static_cast<std::ptrdiff_t>(oy * sh + ky) - static_cast<std::ptrdiff_t>(ph);
                        const bool inside = iz >= 0 && iz < static_cast<std::ptrdiff_t>(in.d) && iy >= 0 &&
                                            iy < static_cast<std::ptrdiff_t>(in.h);
                        if constexpr (!Accumulate) {
                            if (!inside) {
                                std::fill(line, line + wo, T(0));
                                continue;
                            }
                            std::fill(line, line + lo, T(0));
                            std::fill(line + hi, line + wo, T(0));
                        } else if (!inside) {
                            continue;
                        }
                        auto* src = x + ((ci * in.d + static_cast<std::size_t>(iz)) * in.h + static_cast<std::size_t>(iy)) * in.w;
                        const auto offset = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(pw);
                        for (std::size_t ox = lo; ox < hi; ++ox) {
                            const auto ix = static_cast<std::ptrdiff_t>(ox * sw) + offset;
                            if constexpr (Accumulate)
                                src[ix] += line[ox];
                            else
                                line[ox] = src[ix];
                        }
                    }
                }
}

std::size_t rows_per_tile(const ConvGeometry& g, const Shape5& out) {
    const std::size_t per_row = g.patch_size() * out.w;
    return std::max<std::size_t>(1, kTileBudget / std::max<std::size_t>(per_row, 1));
}

// Samples packed side by side into one GEMM; 1 unless a whole sample fits a tile.
std::size_t samples_per_tile(const ConvGeometry& g, const Shape5& out) {
    const std::size_t per_sample = g.patch_size() * out.spatial();
    if (out.n < 2 || per_sample > kTileBudget) return 1;
    return std::clamp<std::size_t>(kTileBudget / per_sample, 1, out.n);
}

}  // namespace

Shape5 ConvGeometry::output_shape(const Shape5& in) const {
    if (in.c != in_channels)
        throw ShapeError("convolution expects " + std::to_string(in_channels) + " channels, got " + std::to_string(in.c));
    return {in.n, out_channels, out_extent(in.d, kernel[0], stride[0], pad[0]),
            out_extent(in.h, kernel[1], stride[1], pad[1]), out_extent(in.w, kernel[2], stride[2], pad[2])};
}

bool ConvGeometry::pointwise() const noexcept {
    return kernel == std::array<std::size_t, 3>{1, 1, 1} && stride == std::array<std::size_t, 3>{1, 1, 1} &&
           pad == std::array<std::size_t, 3>{0, 0, 0};
}

Shape5 PoolGeometry::output_shape(const Shape5& in) const {
    return {in.n, in.c, out_extent(in.d, kernel[0], stride[0], pad[0]), out_extent(in.h, kernel[1], stride[1], pad[1]),
            out_extent(in.w, kernel[2], stride[2], pad[2])};
}

template <class T>
void conv3d_forward(const ConvGeometry& g, const T* weight, const Tensor5<T>& x, Tensor5<T>& y) {
    const Shape5 os = g.output_shape(x.shape);
    if (y.shape != os || y.data.size() != os.numel()) y = Tensor5<T>(os);
    const std::size_t ps = os.spatial(), rk = g.patch_size();
    CMapRM<T> wm(weight, static_cast<Eigen::Index>(g.out_channels), static_cast<Eigen::Index>(rk));

    if (g.pointwise()) {
        for (std::size_t n = 0; n < x.shape.n; ++n) {
            CMapRM<T> xm(x.sample(n), static_cast<Eigen::Index>(g.in_channels), static_cast<Eigen::Index>(ps));
            MapRM<T> ym(y.sample(n), static_cast<Eigen::Index>(g.out_channels), static_cast<Eigen::Index>(ps));
            ym.noalias() = wm * xm;
        }
        return;
    }

    const std::size_t rows = os.d * os.h, step = rows_per_tile(g, os), group = samples_per_tile(g, os);
    if (group > 1) {
        std::vector<T> col(rk * group * ps);
        MatRM<T> ybuf;
        for (std::size_t n0 = 0; n0 < x.shape.n; n0 += group) {
            const std::size_t nb = std::min(group, x.shape.n - n0), ld = nb * ps;
            for (std::size_t j = 0; j < nb; ++j)
                patch_transfer<T, false>(g, x.shape, os, 0, rows, x.sample(n0 + j), col.data() + j * ps, ld);
            CMapRM<T> cm(col.data(), static_cast<Eigen::Index>(rk), static_cast<Eigen::Index>(ld));
            ybuf.noalias() = wm * cm;
            for (std::size_t j = 0; j < nb; ++j) {
                MapRM<T> ym(y.sample(n0 + j), static_cast<Eigen::Index>(g.out_channels), static_cast<Eigen::Index>(ps));
                ym = ybuf.middleCols(static_cast<Eigen::Index>(j * ps), static_cast<Eigen::Index>(ps));
            }
        }
        return;
    }
    std::vector<T> col(rk * std::min(step, rows) * os.w);
    for (std::size_t n = 0; n < x.shape.n; ++n) {
        MapRM<T> ym(y.sample(n), static_cast<Eigen::Index>(g.out_channels), static_cast<Eigen::Index>(ps));
        for (std::size_t r0 = 0; r0 < rows; r0 += step) {
            const std::size_t r1 = std::min(rows, r0 + step), len = (r1 - r0) * os.w;
            patch_transfer<T, false>(g, x.shape, os, r0, r1, x.sample(n), col.data());
            CMapRM<T> cm(col.data(), static_cast<Eigen::Index>(rk), static_cast<Eigen::Index>(len));
            ym.middleCols(static_cast<Eigen::Index>(r0 * os.w), static_cast<Eigen::Index>(len)).noalias() = wm * cm;
        }
    }
}

template <class T>
void conv3d_backward(const ConvGeometry& g, const T* weight, const Tensor5<T>& x, const Tensor5<T>& dy, T* dweight,
                     Tensor5<T>* dx) {
    const Shape5 os = g.output_shape(x.shape);
    if (dy.shape != os) throw ShapeError("conv3d_backward: gradient shape mismatch");
    const std::size_t ps = os.spatial(), rk = g.patch_size();
    CMapRM<T> wm(weight, static_cast<Eigen::Index>(g.out_channels), static_cast<Eigen::Index>(rk));
    MapRM<T> dwm(dweight, static_cast<Eigen::Index>(g.out_channels), static_cast<Eigen::Index>(rk));
    if (dx) *dx = Tensor5<T>(x.shape);

    if (g.pointwise()) {
        for (std::size_t n = 0; n < x.shape.n; ++n) {
            CMapRM<T> xm(x.sample(n), static_cast<Eigen::Index>(g.in_channels), static_cast<Eigen::Index>(ps));
            CMapRM<T> dym(dy.sample(n), static_cast<Eigen::Index>(g.out_channels), static_cast<Eigen::Index>(ps));
            dwm.noalias() += dym * xm.transpose();
            if (dx) {
                MapRM<T> dxm(dx->sample(n), static_cast<Eigen::Index>(g.in_channels), static_cast<Eigen::Index>(ps));
                dxm.noalias() = wm.transpose() * dym;
            }
        }
        return;
    }

    const std::size_t rows = os.d * os.h, step = rows_per_tile(g, os), group = samples_per_tile(g, os);
    if (group > 1) {
        std::vector<T> col(rk * group * ps), dcol(dx ? col.size() : 0);
        MatRM<T> dybuf;
        for (std::size_t n0 = 0; n0 < x.shape.n; n0 += group) {
            const std::size_t nb = std::min(group, x.shape.n - n0), ld = nb * ps;
            dybuf.resize(static_cast<Eigen::Index>(g.out_channels), static_cast<Eigen::Index>(ld));
            for (std::size_t j = 0; j < nb; ++j) {
                patch_transfer<T, false>(g, x.shape, os, 0, rows, x.sample(n0 + j), col.data() + j * ps, ld);
                dybuf.middleCols(static_cast<Eigen::Index>(j * ps), static_cast<Eigen::Index>(ps)) =
                    CMapRM<T>(dy.sample(n0 + j), static_cast<Eigen::Index>(g.out_channels), static_cast<Eigen::Index>(ps));
            }
            CMapRM<T> cm(col.data(), static_cast<Eigen::Index>(rk), static_cast<Eigen::Index>(ld));
            dwm.noalias() += dybuf * cm.transpose();
            if (dx) {
                MapRM<T> dcm(dcol.data(), static_cast<Eigen::Index>(rk), static_cast<Eigen::Index>(ld));
                dcm.noalias() = wm.transpose() * dybuf;
                for (std::size_t j = 0; j < nb; ++j)
                    patch_transfer<T, true>(g, x.shape, os, 0, rows, dx->sample(n0 + j), dcol.data() + j * ps, ld);
            }
        }
        return;
    }
    std::vector<T> col(rk * std::min(step, rows) * os.w);
    std::vector<T> dcol(dx ? col.size() : 0);
    for (std::size_t n = 0; n < x.shape.n; ++n) {
        CMapRM<T> dym(dy.sample(n), static_cast<Eigen::Index>(g.out_channels), static_cast<Eigen::Index>(ps));
        for (std::size_t r0 = 0; r0 < rows; r0 += step) {
            const std::size_t r1 = std::min(rows, r0 + step), len = (r1 - r0) * os.w;
            const auto dyt = dym.middleCols(static_cast<Eigen::Index>(r0 * os.w), static_cast<Eigen::Index>(len));
            patch_transfer<T, false>(g, x.shape, os, r0, r1, x.sample(n), col.data());
            CMapRM<T> cm(col.data(), static_cast<Eigen::Index>(rk), static_cast<Eigen::Index>(len));
            dwm.noalias() += dyt * cm.transpose();
            if (dx) {
                MapRM<T> dcm(dcol.data(), static_cast<Eigen::Index>(rk), static_cast<Eigen::Index>(len));
                dcm.noalias() = wm.transpose() * dyt;
                patch_transfer<T, true>(g, x.shape, os, r0, r1, dx->sample(n), dcol.data());
            }
        }
    }
}

template <class T>
void maxpool3d_forward(const PoolGeometry& g, const Tensor5<T>& x, Tensor5<T>& y, std::vector<std::uint32_t>* argmax) {
    const Shape5 is = x.shape, os = g.output_shape(is);
    if (is.numel() > std::numeric_limits<std::uint32_t>::max()) throw ShapeError("max-pool input too large");
    y = Tensor5<T>(os);
    if (argmax) argmax->assign(os.numel(), 0);
    std::size_t o = 0;
    for (std::size_t nc = 0; nc < is.n * is.c; ++nc) {
        const std::size_t base = nc * is.spatial();
        for (std::size_t oz = 0; oz < os.d; ++oz)
            for (std::size_t oy = 0; oy < os.h; ++oy)
                for (std::size_t ox = 0; ox < os.w; ++ox, ++o) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::size_t best_i = base;
                    for (std::size_t kz = 0; kz < g.kernel[0]; ++kz) {
                        const auto iz = static_cast<std::ptrdiff_t>(oz * g.stride[0] + kz) - static_cast<std::ptrdiff_t>(g.pad[0]);
                        if (iz < 0 || iz >= static_cast<std::ptrdiff_t>(is.d)) continue;
                        for (std::size_t ky = 0; ky < g.kernel[1]; ++ky) {
                            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride[1] + ky) - static_cast<std::ptrdiff_t>(g.pad[1]);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(is.h)) continue;
                            for (std::size_t kx = 0; kx < g.kernel[2]; ++kx) {
                                const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride[2] + kx) - static_cast<std::ptrdiff_t>(g.pad[2]);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(is.w)) continue;
                                const std::size_t i = base + (static_cast<std::size_t>(iz) * is.h + static_cast<std::size_t>(iy)) * is.w +
                                                      static_cast<std::size_t>(ix);
                                if (x.data[i] > best) {
                                    best = x.data[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    y.data[o] = best;
                    if (argmax) (*argmax)[o] = static_cast<std::uint32_t>(best_i);
                }
    }
}

template <class T>
void maxpool3d_backward(const Tensor5<T>& dy, const std::vector<std::uint32_t>& argmax, Tensor5<T>& dx) {
    if (argmax.size() != dy.data.size()) throw ShapeError("max-pool backward: argmax size mismatch");
    for (std::size_t o = 0; o < dy.data.size(); ++o) dx.data[argmax[o]] += dy.data[o];
}

template <class T>
void BatchNorm<T>::forward_eval(Tensor5<T>& x) const {
    const std::size_t sp = x.shape.spatial();
    for (std::size_t n = 0; n < x.shape.n; ++n)
        for (std::size_t c = 0; c < channels; ++c) {
            const T scale = static_cast<T>(gamma[c] / std::sqrt(static_cast<double>(running_var[c]) + eps));
            const T shift = beta[c] - scale * running_mean[c];
            T* p = x.sample(n) + c * sp;
            for (std::size_t i = 0; i < sp; ++i) p[i] = scale * p[i] + shift;
        }
}

template <class T>
void BatchNorm<T>::forward_train(Tensor5<T>& x) {
    const std::size_t sp = x.shape.spatial(), count = x.shape.n * sp;
    xhat.resize(x.data.size());
    inv_std.assign(channels, 0.0);
    for (std::size_t c = 0; c < channels; ++c) {
        double sum = 0.0, sq = 0.0;
        for (std::size_t n = 0; n < x.shape.n; ++n) {
            const T* p = x.sample(n) + c * sp;
            for (std::size_t i = 0; i < sp; ++i) sum += p[i];
        }
        const double mean = sum / static_cast<double>(count);
        for (std::size_t n = 0; n < x.shape.n; ++n) {
            const T* p = x.sample(n) + c * sp;
            for (std::size_t i = 0; i < sp; ++i) {
                const double d = p[i] - mean;
                sq += d * d;
            }
        }
        const double var = sq / static_cast<double>(count);
        const double istd = 1.0 / std::sqrt(var + eps);
        inv_std[c] = istd;
        for (std::size_t n = 0; n < x.shape.n; ++n) {
            T* p = x.sample(n) + c * sp;
            T* h = xhat.data() + n * x.shape.sample() + c * sp;
            for (std::size_t i = 0; i < sp; ++i) {
                h[i] = static_cast<T>((p[i] - mean) * istd);
                p[i] = gamma[c] * h[i] + beta[c];
            }
        }
        const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
        running_mean[c] = static_cast<T>((1.0 - momentum) * running_mean[c] + momentum * mean);
        running_var[c] = static_cast<T>((1.0 - momentum) * running_var[c] + momentum * unbiased);
    }
}

template <class T>
void BatchNorm<T>::backward(Tensor5<T>& dy) {
    const std::size_t sp = dy.shape.spatial(), count = dy.shape.n * sp;
    if (xhat.size() != dy.data.size()) throw ShapeError("batch-norm backward without matching forward");
    for (std::size_t c = 0; c < channels; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t n = 0; n < dy.shape.n; ++n) {
            const T* g = dy.sample(n) + c * sp;
            const T* h = xhat.data() + n * dy.shape.sample() + c * sp;
            for (std::size_t i = 0; i < sp; ++i) {
                sum_dy += g[i];
                sum_dy_xhat += static_cast<double>(g[i]) * h[i];
            }
        }
        dgamma[c] += static_cast<T>(sum_dy_xhat);
        dbeta[c] += static_cast<T>(sum_dy);
        const double m = static_cast<double>(count);
        const double k = gamma[c] * inv_std[c] / m;
        for (std::size_t n = 0; n < dy.shape.n; ++n) {
            T* g = dy.sample(n) + c * sp;
            const T* h = xhat.data() + n * dy.shape.sample() + c * sp;
            for (std::size_t i = 0; i < sp; ++i) g[i] = static_cast<T>(k * (m * g[i] - sum_dy - h[i] * sum_dy_xhat));
        }
    }
}

template <class T>
void relu_inplace(Tensor5<T>& x) {
    for (T& v : x.data) v = v > T(0) ? v : T(0);
}

template <class T>
void relu_backward_inplace(const Tensor5<T>& activation, Tensor5<T>& dy) {
    for (std::size_t i = 0; i < dy.data.size(); ++i)
        if (!(activation.data[i] > T(0))) dy.data[i] = T(0);
}

#define BCA_INSTANTIATE(T)                                                                                        \
    template void conv3d_forward<T>(const ConvGeometry&, const T*, const Tensor5<T>&, Tensor5<T>&);               \
    template void conv3d_backward<T>(const ConvGeometry&, const T*, const Tensor5<T>&, const Tensor5<T>&, T*,     \
                                     Tensor5<T>*);                                                                \
    template void maxpool3d_forward<T>(const PoolGeometry&, const Tensor5<T>&, Tensor5<T>&,                       \
                                       std::vector<std::uint32_t>*);                                              \
    template void maxpool3d_backward<T>(const Tensor5<T>&, const std::vector<std::uint32_t>&, Tensor5<T>&);       \
    template struct BatchNorm<T>;                                                                                 \
    template void relu_inplace<T>(Tensor5<T>&);                                                                   \
    template void relu_backward_inplace<T>(const Tensor5<T>&, Tensor5<T>&);

BCA_INSTANTIATE(float)
BCA_INSTANTIATE(double)

#undef BCA_INSTANTIATE

}  // namespace bca::nn
