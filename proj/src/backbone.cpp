#include "bca/backbone.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "bca/errors.hpp"
#include "bca/hashing.hpp"
#include "bca/optim.hpp"

namespace bca {

void BackboneConfig::validate() const {
    for (auto b : block_counts)
        if (b == 0) throw PreconditionError("block counts must be positive");
    for (auto c : stage_channels)
        if (c == 0) throw PreconditionError("stage channel counts must be positive");
    if (input_channels == 0) throw PreconditionError("input_channels must be positive");
    if (feature_dim != stage_channels.back())
        throw PreconditionError("feature_dim (" + std::to_string(feature_dim) +
                                ") must equal the last stage channel count (" +
                                std::to_string(stage_channels.back()) + ")");
}

std::size_t BackboneConfig::parameterized_layer_count() const noexcept {
    return 1 + 2 * std::accumulate(block_counts.begin(), block_counts.end(), std::size_t{0}) + 1;
}

bool BackboneConfig::same_architecture(const BackboneConfig& o) const noexcept {
    return block_counts == o.block_counts && stage_channels == o.stage_channels &&
           input_channels == o.input_channels && feature_dim == o.feature_dim;
}

namespace nn {

namespace {

template <class T>
Conv<T> make_conv(std::size_t in, std::size_t out, std::array<std::size_t, 3> k, std::array<std::size_t, 3> s,
                  std::array<std::size_t, 3> p) {
    Conv<T> c;
    c.geometry = ConvGeometry{in, out, k, s, p};
    c.weight.assign(c.geometry.weight_count(), T(0));
    c.grad.assign(c.geometry.weight_count(), T(0));
    return c;
}

template <class T>
std::vector<std::size_t> conv_shape(const Conv<T>& c) {
    const auto& g = c.geometry;
    return {g.out_channels, g.in_channels, g.kernel[0], g.kernel[1], g.kernel[2]};
}

template <class T>
void add_inplace(Tensor5<T>& a, const Tensor5<T>& b) {
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

template <class T>
void push_conv(std::vector<ParamRef<T>>& out, const std::string& name, Conv<T>& c) {
    out.push_back({name + ".weight", conv_shape(c), c.weight, c.grad});
}

template <class T>
void push_bn(std::vector<ParamRef<T>>& out, const std::string& name, BatchNorm<T>& bn) {
    out.push_back({name + ".gamma", {bn.channels}, bn.gamma, bn.dgamma});
    out.push_back({name + ".beta", {bn.channels}, bn.beta, bn.dbeta});
}

template <class T>
void push_bn_buffers(std::vector<BufferRef<T>>& out, const std::string& name, BatchNorm<T>& bn) {
    out.push_back({name + ".running_mean", {bn.channels}, bn.running_mean});
    out.push_back({name + ".running_var", {bn.channels}, bn.running_var});
}

std::string block_name(std::size_t stage, std::size_t index) {
    return "layer" + std::to_string(stage + 1) + "." + std::to_string(index);
}

template <class T>
std::vector<T> global_average(const Tensor5<T>& x) {
    const std::size_t sp = x.shape.spatial();
    std::vector<T> out(x.shape.n * x.shape.c);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T* p = x.data.data() + i * sp;
        double s = 0.0;
        for (std::size_t k = 0; k < sp; ++k) s += p[k];
        out[i] = static_cast<T>(s / static_cast<double>(sp));
    }
    return out;
}

}  // namespace

template <class T>
BasicBackbone<T>::BasicBackbone(const BackboneConfig& config) : config_(config) {
    config_.validate();
    stem_ = make_conv<T>(config_.input_channels, config_.stage_channels[0], {3, 7, 7}, {1, 2, 2}, {1, 3, 3});
    stem_bn_ = BatchNorm<T>(config_.stage_channels[0]);
    pool_ = PoolGeometry{{3, 3, 3}, {1, 2, 2}, {1, 1, 1}};

    std::size_t in = config_.stage_channels[0];
    for (std::size_t s = 0; s < 4; ++s) {
        const std::size_t out = config_.stage_channels[s];
        for (std::size_t b = 0; b < config_.block_counts[s]; ++b) {
            const std::size_t st = (s > 0 && b == 0) ? 2 : 1;
            BasicBlock<T> blk;
            blk.conv1 = make_conv<T>(in, out, {3, 3, 3}, {st, st, st}, {1, 1, 1});
            blk.bn1 = BatchNorm<T>(out);
            blk.conv2 = make_conv<T>(out, out, {3, 3, 3}, {1, 1, 1}, {1, 1, 1});
            blk.bn2 = BatchNorm<T>(out);
            if (st != 1 || in != out) {
                blk.proj = make_conv<T>(in, out, {1, 1, 1}, {st, st, st}, {0, 0, 0});
                blk.proj_bn = BatchNorm<T>(out);
            }
            blocks_.push_back(std::move(blk));
            in = out;
        }
    }

    // He (fan-in) normal initialisation of every convolution, in parameter order.
    std::mt19937_64 rng(config_.seed);
    for (auto& p : parameters()) {
        if (p.shape.size() != 5) continue;
        const std::size_t fan_in = p.shape[1] * p.shape[2] * p.shape[3] * p.shape[4];
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        for (T& w : p.value) w = static_cast<T>(dist(rng));
    }
}

template <class T>
std::size_t BasicBackbone<T>::parameterized_layer_count() const noexcept {
    // stem + two convolutions per block + fully-connected projection
    return 1 + 2 * blocks_.size() + 1;
}

template <class T>
std::size_t BasicBackbone<T>::parameter_count() const {
    auto& self = const_cast<BasicBackbone&>(*this);
    std::size_t n = 0;
    for (const auto& p : self.parameters()) n += p.value.size();
    return n;
}

template <class T>
std::vector<ParamRef<T>> BasicBackbone<T>::parameters() {
    std::vector<ParamRef<T>> out;
    push_conv(out, "stem.conv", stem_);
    push_bn(out, "stem.bn", stem_bn_);
    std::size_t idx = 0;
    for (std::size_t s = 0; s < 4; ++s)
        for (std::size_t b = 0; b < config_.block_counts[s]; ++b, ++idx) {
            auto& blk = blocks_[idx];
            const std::string name = block_name(s, b);
            push_conv(out, name + ".conv1", blk.conv1);
            push_bn(out, name + ".bn1", blk.bn1);
            push_conv(out, name + ".conv2", blk.conv2);
            push_bn(out, name + ".bn2", blk.bn2);
            if (blk.proj) {
                push_conv(out, name + ".proj", *blk.proj);
                push_bn(out, name + ".proj_bn", *blk.proj_bn);
            }
        }
    return out;
}

template <class T>
std::vector<BufferRef<T>> BasicBackbone<T>::buffers() {
    std::vector<BufferRef<T>> out;
    push_bn_buffers(out, "stem.bn", stem_bn_);
    std::size_t idx = 0;
    for (std::size_t s = 0; s < 4; ++s)
        for (std::size_t b = 0; b < config_.block_counts[s]; ++b, ++idx) {
            auto& blk = blocks_[idx];
            const std::string name = block_name(s, b);
            push_bn_buffers(out, name + ".bn1", blk.bn1);
            push_bn_buffers(out, name + ".bn2", blk.bn2);
            if (blk.proj_bn) push_bn_buffers(out, name + ".proj_bn", *blk.proj_bn);
        }
    return out;
}

template <class T>
std::vector<T> BasicBackbone<T>::sample_forward(const Tensor5<T>& x) const {
    Tensor5<T> z;
    conv3d_forward(stem_.geometry, stem_.weight.data(), x, z);
    stem_bn_.forward_eval(z);
    relu_inplace(z);
    Tensor5<T> cur;
    maxpool3d_forward(pool_, z, cur, nullptr);
    for (const auto& blk : blocks_) {
        Tensor5<T> a, b;
        conv3d_forward(blk.conv1.geometry, blk.conv1.weight.data(), cur, a);
        blk.bn1.forward_eval(a);
        relu_inplace(a);
        conv3d_forward(blk.conv2.geometry, blk.conv2.weight.data(), a, b);
        blk.bn2.forward_eval(b);
        if (blk.proj) {
            Tensor5<T> s;
            conv3d_forward(blk.proj->geometry, blk.proj->weight.data(), cur, s);
            blk.proj_bn->forward_eval(s);
            add_inplace(b, s);
        } else {
            add_inplace(b, cur);
        }
        relu_inplace(b);
        cur = std::move(b);
    }
    return global_average(cur);
}

template <class T>
std::vector<T> BasicBackbone<T>::forward_eval(const Tensor5<T>& x) const {
    if (x.shape.c != config_.input_channels)
        throw ShapeError("network expects " + std::to_string(config_.input_channels) + " input channel(s), got " +
                         std::to_string(x.shape.c));
    std::vector<T> out;
    out.reserve(x.shape.n * config_.feature_dim);
    Shape5 one = x.shape;
    one.n = 1;
    for (std::size_t n = 0; n < x.shape.n; ++n) {
        Tensor5<T> sample;
        sample.shape = one;
        sample.data.assign(x.sample(n), x.sample(n) + one.sample());
        const auto f = sample_forward(sample);
        out.insert(out.end(), f.begin(), f.end());
    }
    return out;
}

template <class T>
std::vector<T> BasicBackbone<T>::forward_train(const Tensor5<T>& x) {
    if (x.shape.c != config_.input_channels) throw ShapeError("input channel count does not match the network");
    input_ = x;
    Tensor5<T> z;
    conv3d_forward(stem_.geometry, stem_.weight.data(), x, z);
    stem_bn_.forward_train(z);
    relu_inplace(z);
    stem_act_ = std::move(z);
    Tensor5<T> cur;
    maxpool3d_forward(pool_, stem_act_, cur, &pool_argmax_);
    for (auto& blk : blocks_) {
        blk.input = std::move(cur);
        Tensor5<T> a, b;
        conv3d_forward(blk.conv1.geometry, blk.conv1.weight.data(), blk.input, a);
        blk.bn1.forward_train(a);
        relu_inplace(a);
        blk.act1 = std::move(a);
        conv3d_forward(blk.conv2.geometry, blk.conv2.weight.data(), blk.act1, b);
        blk.bn2.forward_train(b);
        if (blk.proj) {
            Tensor5<T> s;
            conv3d_forward(blk.proj->geometry, blk.proj->weight.data(), blk.input, s);
            blk.proj_bn->forward_train(s);
            add_inplace(b, s);
        } else {
            add_inplace(b, blk.input);
        }
        relu_inplace(b);
        blk.output = b;
        cur = std::move(b);
    }
    last_out_ = cur;
    return global_average(cur);
}

template <class T>
std::uint64_t BasicBackbone<T>::activation_pattern() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](std::uint64_t v) {
        h ^= v;
        h *= 1099511628211ull;
    };
    auto signs = [&](const Tensor5<T>& t) {
        for (T v : t.data) mix(v > T(0));
    };
    signs(stem_act_);
    for (auto i : pool_argmax_) mix(i);
    for (const auto& blk : blocks_) {
        signs(blk.act1);
        signs(blk.output);
    }
    return h;
}

template <class T>
void BasicBackbone<T>::backward(std::span<const T> dfeatures) {
    const Shape5 ls = last_out_.shape;
    if (dfeatures.size() != ls.n * ls.c) throw ShapeError("feature gradient has the wrong size");
    Tensor5<T> dcur(ls);
    const std::size_t sp = ls.spatial();
    for (std::size_t i = 0; i < ls.n * ls.c; ++i) {
        const T g = static_cast<T>(dfeatures[i] / static_cast<double>(sp));
        std::fill(dcur.data.begin() + static_cast<std::ptrdiff_t>(i * sp),
                  dcur.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * sp), g);
    }
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
        auto& blk = *it;
        Tensor5<T> g = std::move(dcur);
        relu_backward_inplace(blk.output, g);

        Tensor5<T> d2 = g;
        blk.bn2.backward(d2);
        Tensor5<T> da1;
        conv3d_backward(blk.conv2.geometry, blk.conv2.weight.data(), blk.act1, d2, blk.conv2.grad.data(), &da1);
        relu_backward_inplace(blk.act1, da1);
        blk.bn1.backward(da1);
        Tensor5<T> dx;
        conv3d_backward(blk.conv1.geometry, blk.conv1.weight.data(), blk.input, da1, blk.conv1.grad.data(), &dx);

        if (blk.proj) {
            blk.proj_bn->backward(g);
            Tensor5<T> ds;
            conv3d_backward(blk.proj->geometry, blk.proj->weight.data(), blk.input, g, blk.proj->grad.data(), &ds);
            add_inplace(dx, ds);
        } else {
            add_inplace(dx, g);
        }
        dcur = std::move(dx);
    }
    Tensor5<T> dstem(stem_act_.shape);
    maxpool3d_backward(dcur, pool_argmax_, dstem);
    relu_backward_inplace(stem_act_, dstem);
    stem_bn_.backward(dstem);
    conv3d_backward<T>(stem_.geometry, stem_.weight.data(), input_, dstem, stem_.grad.data(), nullptr);
}

template <class T>
void BasicBackbone<T>::zero_grad() {
    for (auto& p : parameters()) std::ranges::fill(p.grad, T(0));
}

template <class T>
LinearClassifier<T>::LinearClassifier(std::size_t in_features, std::size_t n_classes, std::uint64_t seed)
    : in(in_features), classes(n_classes), weight(in_features * n_classes), bias(n_classes, T(0)),
      dweight(in_features * n_classes, T(0)), dbias(n_classes, T(0)) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / static_cast<double>(in_features)));
    for (T& w : weight) w = static_cast<T>(dist(rng));
}

template <class T>
std::vector<ParamRef<T>> LinearClassifier<T>::parameters() {
    return {{"fc.weight", {classes, in}, weight, dweight}, {"fc.bias", {classes}, bias, dbias}};
}

template <class T>
void LinearClassifier<T>::zero_grad() {
    std::ranges::fill(dweight, T(0));
    std::ranges::fill(dbias, T(0));
}

template <class T>
double classification_loss(BasicBackbone<T>& net, LinearClassifier<T>& head, const Tensor5<T>& x,
                           std::span<const int> labels, bool with_gradients) {
    const std::size_t n = x.shape.n, f = net.feature_dim(), k = head.classes;
    if (labels.size() != n) throw PreconditionError("one label per sample is required");
    const std::vector<T> feats = net.forward_train(x);
    std::vector<T> dfeat(n * f, T(0));
    double loss = 0.0;
    std::vector<double> logits(k), prob(k);
    for (std::size_t i = 0; i < n; ++i) {
        const T* fi = feats.data() + i * f;
        for (std::size_t c = 0; c < k; ++c) {
            double z = head.bias[c];
            for (std::size_t j = 0; j < f; ++j) z += static_cast<double>(head.weight[c * f + j]) * fi[j];
            logits[c] = z;
        }
        const double mx = *std::max_element(logits.begin(), logits.end());
        double denom = 0.0;
        for (std::size_t c = 0; c < k; ++c) denom += std::exp(logits[c] - mx);
        const auto y = static_cast<std::size_t>(labels[i]);
        if (y >= k) throw PreconditionError("label out of range");
        loss += -(logits[y] - mx - std::log(denom));
        if (!with_gradients) continue;
        for (std::size_t c = 0; c < k; ++c) {
            prob[c] = std::exp(logits[c] - mx) / denom;
            const double g = (prob[c] - (c == y ? 1.0 : 0.0)) / static_cast<double>(n);
            head.dbias[c] += static_cast<T>(g);
            for (std::size_t j = 0; j < f; ++j) {
                head.dweight[c * f + j] += static_cast<T>(g * fi[j]);
                dfeat[i * f + j] += static_cast<T>(g * head.weight[c * f + j]);
            }
        }
    }
    if (with_gradients) net.backward(dfeat);
    return loss / static_cast<double>(n);
}

template class BasicBackbone<float>;
template class BasicBackbone<double>;
template struct LinearClassifier<float>;
template struct LinearClassifier<double>;
template double classification_loss<float>(BasicBackbone<float>&, LinearClassifier<float>&, const Tensor5<float>&,
                                           std::span<const int>, bool);
template double classification_loss<double>(BasicBackbone<double>&, LinearClassifier<double>&,
                                            const Tensor5<double>&, std::span<const int>, bool);

}  // namespace nn

Backbone build_backbone(const BackboneConfig& config) { return Backbone(config); }

template <class T>
nn::Tensor5<T> stack_cubes(std::span<const StandardCube> cubes) {
    if (cubes.empty()) throw PreconditionError("no cubes to stack");
    const Dims d = cubes.front().data.dims();
    nn::Tensor5<T> x(nn::Shape5{cubes.size(), 1, d.depth, d.height, d.width});
    for (std::size_t n = 0; n < cubes.size(); ++n) {
        if (cubes[n].data.dims() != d)
            throw ShapeError("cube " + cubes[n].source_id + " has shape " + to_string(cubes[n].data.dims()) +
                             ", expected " + to_string(d));
        std::ranges::transform(cubes[n].data.data(), x.sample(n), [](double v) { return static_cast<T>(v); });
    }
    return x;
}

template nn::Tensor5<float> stack_cubes<float>(std::span<const StandardCube>);
template nn::Tensor5<double> stack_cubes<double>(std::span<const StandardCube>);

std::vector<FeatureVector> extract_features(const Backbone& net, std::span<const StandardCube> cubes) {
    std::vector<FeatureVector> out;
    out.reserve(cubes.size());
    for (const auto& cube : cubes) {
        const auto x = stack_cubes<float>(std::span<const StandardCube>(&cube, 1));
        const auto f = net.forward_eval(x);
        FeatureVector fv{std::vector<double>(f.begin(), f.end()), cube.source_id};
        for (double v : fv.values)
            if (!std::isfinite(v)) throw NonFiniteError("non-finite feature for " + cube.source_id);
        out.push_back(std::move(fv));
    }
    return out;
}

std::vector<double> pretrain_backbone(Backbone& net, std::span<const StandardCube> cubes,
                                      std::span<const CategorizedGrade> labels, const PretrainConfig& config) {
    if (cubes.size() != labels.size()) throw PreconditionError("one label per cube is required");
    const bool has_high = std::ranges::count(labels, CategorizedGrade::High) > 0;
    const bool has_low = std::ranges::count(labels, CategorizedGrade::LowIntermediate) > 0;
    if (!has_high || !has_low) throw PreconditionError("pretraining needs both grade categories");
    if (config.batch_size == 0) throw PreconditionError("batch size must be positive");
    if (!(config.learning_rate > 0.0)) throw PreconditionError("learning rate must be positive");
    std::vector<double> curve;
    if (config.epochs == 0) return curve;

    nn::LinearClassifier<float> head(net.feature_dim(), 2, derive_seed(config.seed, "pretrain.head"));
    nn::Adam<float> opt(config.learning_rate);
    std::vector<std::span<float>> values;
    std::vector<std::span<const float>> grads;
    auto collect = [&](auto params) {
        for (auto& p : params) {
            values.push_back(p.value);
            grads.push_back(p.grad);
        }
    };
    collect(net.parameters());
    collect(head.parameters());

    std::mt19937_64 rng(derive_seed(config.seed, "pretrain.shuffle"));
    std::vector<std::size_t> order(cubes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t stop = std::min(order.size(), start + config.batch_size);
            std::vector<StandardCube> batch;
            std::vector<int> y;
            for (std::size_t i = start; i < stop; ++i) {
                batch.push_back(cubes[order[i]]);
                y.push_back(labels[order[i]] == CategorizedGrade::High ? 1 : 0);
            }
            const auto x = stack_cubes<float>(batch);
            net.zero_grad();
            head.zero_grad();
            total += nn::classification_loss(net, head, x, y, true) * static_cast<double>(stop - start);
            opt.step(values, grads);
        }
        curve.push_back(total / static_cast<double>(order.size()));
    }
    return curve;
}

}  // namespace bca
