#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace bca::nn {

/// Adaptive-moment optimiser over a fixed list of parameter blocks.
template <class T>
class Adam {
public:
    explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    /// `values[i]` and `grads[i]` must keep the same sizes between calls.
    void step(const std::vector<std::span<T>>& values, const std::vector<std::span<const T>>& grads) {
        if (m_.empty()) {
            m_.resize(values.size());
            v_.resize(values.size());
            for (std::size_t i = 0; i < values.size(); ++i) {
                m_[i].assign(values[i].size(), T(0));
                v_[i].assign(values[i].size(), T(0));
            }
        }
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        const T step = static_cast<T>(lr_ / c1);
        const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
        const T inv_c2 = static_cast<T>(1.0 / c2), eps = static_cast<T>(eps_);
        for (std::size_t i = 0; i < values.size(); ++i) {
            T* p = values[i].data();
            const T* g = grads[i].data();
            T* m = m_[i].data();
            T* v = v_[i].data();
            for (std::size_t k = 0, n = values[i].size(); k < n; ++k) {
                m[k] = b1 * m[k] + (T(1) - b1) * g[k];
                v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
                p[k] -= step * m[k] / (std::sqrt(v[k] * inv_c2) + eps);
            }
        }
    }

    std::size_t steps() const noexcept { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

}  // namespace bca::nn
