#pragma once

// Test helpers and reference implementations. The references are written
// straight from the definitions, without sharing code with the library.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "bca/volume.hpp"

namespace testing {

class TempDir {
public:
    TempDir() {
        std::string pattern = (std::filesystem::temp_directory_path() / "bca-test-XXXXXX").string();
        if (!mkdtemp(pattern.data())) throw std::runtime_error("mkdtemp failed");
        path_ = pattern;
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
}

inline double rel_err(double got, double want) {
    const double scale = std::max(std::abs(want), 1e-300);
    return std::abs(got - want) / scale;
}

inline bca::Volume3D random_volume(bca::Dims d, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(d.voxels());
    for (double& x : v) x = u(rng);
    return bca::Volume3D(d, {1.0, 1.0, 1.0}, std::move(v));
}

/// Ordinary least squares line y = a + s x via the 2x2 normal equations.
inline std::array<double, 2> ols_line(const std::vector<double>& x, const std::vector<double>& y) {
    double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        n += 1;
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    const double det = n * sxx - sx * sx;
    return {(sy * sxx - sx * sxy) / det, (n * sxy - sx * sy) / det};
}

/// Three stages of CDIs composition written voxel by voxel.
inline std::vector<double> reference_cdis(const std::vector<double>& b, const std::vector<std::vector<double>>& native,
                                          const std::vector<double>& synthetic_b, const std::vector<double>& coeff) {
    const std::size_t nv = native.front().size();
    std::vector<std::vector<double>> signals = native;
    for (double bs : synthetic_b) {
        std::vector<double> s(nv);
        for (std::size_t v = 0; v < nv; ++v) {
            std::vector<double> logs;
            for (std::size_t i = 0; i < b.size(); ++i) logs.push_back(std::log(std::max(native[i][v], 1e-6)));
            auto [a, slope] = ols_line(b, logs);
            const double adc = std::max(0.0, -slope);
            const double s0 = std::max(0.0, std::exp(a));
            s[v] = s0 * std::exp(-bs * adc);
        }
        signals.push_back(s);
    }
    auto minmax = [](std::vector<double> x) {
        const double lo = *std::min_element(x.begin(), x.end()), hi = *std::max_element(x.begin(), x.end());
        for (double& e : x) e = hi > lo ? (e - lo) / (hi - lo) : 0.0;
        return x;
    };
    std::vector<double> prod(nv, 1.0);
    for (std::size_t i = 0; i < signals.size(); ++i) {
        const auto n = minmax(signals[i]);
        for (std::size_t v = 0; v < nv; ++v) {
            if (coeff[i] == 0.0) continue;
            const double base = coeff[i] < 0 ? std::max(n[v], 1e-12) : n[v];
            prod[v] *= std::pow(base, coeff[i]);
        }
    }
    return minmax(prod);
}

/// Direct 3D convolution, weight [co][ci][kd][kh][kw], layout [n][c][d][h][w].
inline std::vector<double> reference_conv3d(const std::vector<double>& x, std::array<std::size_t, 5> xs,
                                            const std::vector<double>& w, std::size_t co, std::array<std::size_t, 3> k,
                                            std::array<std::size_t, 3> s, std::array<std::size_t, 3> p,
                                            std::array<std::size_t, 3>& out) {
    const auto [n, ci, d, h, wd] = xs;
    for (int a = 0; a < 3; ++a) out[a] = ((a == 0 ? d : a == 1 ? h : wd) + 2 * p[a] - k[a]) / s[a] + 1;
    std::vector<double> y(n * co * out[0] * out[1] * out[2], 0.0);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t o = 0; o < co; ++o)
            for (std::size_t z = 0; z < out[0]; ++z)
                for (std::size_t yy = 0; yy < out[1]; ++yy)
                    for (std::size_t xx = 0; xx < out[2]; ++xx) {
                        double acc = 0;
                        for (std::size_t c = 0; c < ci; ++c)
                            for (std::size_t kz = 0; kz < k[0]; ++kz)
                                for (std::size_t ky = 0; ky < k[1]; ++ky)
                                    for (std::size_t kx = 0; kx < k[2]; ++kx) {
                                        const long iz = long(z * s[0] + kz) - long(p[0]);
                                        const long iy = long(yy * s[1] + ky) - long(p[1]);
                                        const long ix = long(xx * s[2] + kx) - long(p[2]);
                                        if (iz < 0 || iy < 0 || ix < 0 || iz >= long(d) || iy >= long(h) ||
                                            ix >= long(wd))
                                            continue;
                                        acc += w[(((o * ci + c) * k[0] + kz) * k[1] + ky) * k[2] + kx] *
                                               x[(((b * ci + c) * d + iz) * h + iy) * wd + ix];
                                    }
                        y[(((b * co + o) * out[0] + z) * out[1] + yy) * out[2] + xx] = acc;
                    }
    return y;
}

/// Corner-aligned bilinear sample of slice z at fractional (fx, fy).
inline double reference_bilinear(const bca::Volume3D& v, std::size_t z, double fx, double fy) {
    const std::size_t w = v.dims().width, h = v.dims().height;
    const std::size_t x0 = std::min<std::size_t>(static_cast<std::size_t>(std::floor(fx)), w - 1);
    const std::size_t y0 = std::min<std::size_t>(static_cast<std::size_t>(std::floor(fy)), h - 1);
    const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
    const double tx = fx - double(x0), ty = fy - double(y0);
    return (1 - tx) * (1 - ty) * v.at(x0, y0, z) + tx * (1 - ty) * v.at(x1, y0, z) + (1 - tx) * ty * v.at(x0, y1, z) +
           tx * ty * v.at(x1, y1, z);
}

}  // namespace testing
