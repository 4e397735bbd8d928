#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace bca::nn {

/// Batch x channels x depth x height x width, width fastest.
struct Shape5 {
    std::size_t n = 0, c = 0, d = 0, h = 0, w = 0;

    std::size_t spatial() const noexcept { return d * h * w; }
    std::size_t sample() const noexcept { return c * spatial(); }
    std::size_t numel() const noexcept { return n * sample(); }
    friend bool operator==(const Shape5&, const Shape5&) = default;
};

template <class T>
struct Tensor5 {
    Shape5 shape;
    std::vector<T> data;

    Tensor5() = default;
    explicit Tensor5(Shape5 s, T fill = T(0)) : shape(s), data(s.numel(), fill) {}

    T* sample(std::size_t n) noexcept { return data.data() + n * shape.sample(); }
    const T* sample(std::size_t n) const noexcept { return data.data() + n * shape.sample(); }
};

/// Kernel, stride and padding are given in (depth, height, width) order.
struct ConvGeometry {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::array<std::size_t, 3> kernel{3, 3, 3};
    std::array<std::size_t, 3> stride{1, 1, 1};
    std::array<std::size_t, 3> pad{1, 1, 1};

    Shape5 output_shape(const Shape5& in) const;
    std::size_t patch_size() const noexcept { return in_channels * kernel[0] * kernel[1] * kernel[2]; }
    std::size_t weight_count() const noexcept { return out_channels * patch_size(); }
    bool pointwise() const noexcept;
};

struct PoolGeometry {
    std::array<std::size_t, 3> kernel{3, 3, 3};
    std::array<std::size_t, 3> stride{1, 2, 2};
    std::array<std::size_t, 3> pad{1, 1, 1};

    Shape5 output_shape(const Shape5& in) const;
};

/// y = conv(x, weight); weight is [out][in][kd][kh][kw], no bias.
template <class T>
void conv3d_forward(const ConvGeometry& g, const T* weight, const Tensor5<T>& x, Tensor5<T>& y);

/// Accumulates into dweight; writes dx when non-null.
template <class T>
void conv3d_backward(const ConvGeometry& g, const T* weight, const Tensor5<T>& x, const Tensor5<T>& dy, T* dweight,
                     Tensor5<T>* dx);

/// Max pooling with implicit -inf padding. `argmax` receives, per output
/// element, the flat index of the winning input element.
template <class T>
void maxpool3d_forward(const PoolGeometry& g, const Tensor5<T>& x, Tensor5<T>& y, std::vector<std::uint32_t>* argmax);

template <class T>
void maxpool3d_backward(const Tensor5<T>& dy, const std::vector<std::uint32_t>& argmax, Tensor5<T>& dx);

/// Per-channel affine normalisation state.
template <class T>
struct BatchNorm {
    std::size_t channels = 0;
    double eps = 1e-5;
    double momentum = 0.1;
    std::vector<T> gamma, beta, running_mean, running_var;
    std::vector<T> dgamma, dbeta;
    // training cache
    std::vector<T> xhat;
    std::vector<double> inv_std;

    BatchNorm() = default;
    explicit BatchNorm(std::size_t c)
        : channels(c), gamma(c, T(1)), beta(c, T(0)), running_mean(c, T(0)), running_var(c, T(1)),
          dgamma(c, T(0)), dbeta(c, T(0)) {}

    /// Uses running statistics; in place.
    void forward_eval(Tensor5<T>& x) const;
    /// Uses batch statistics, updates running statistics; in place.
    void forward_train(Tensor5<T>& x);
    /// dy -> dx in place; accumulates dgamma / dbeta.
    void backward(Tensor5<T>& dy);
};

template <class T>
void relu_inplace(Tensor5<T>& x);

/// dy *= (activation > 0).
template <class T>
void relu_backward_inplace(const Tensor5<T>& activation, Tensor5<T>& dy);

}  // namespace bca::nn
