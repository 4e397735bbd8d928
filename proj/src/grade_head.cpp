#include "bca/grade_head.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "bca/errors.hpp"
#include "bca/hashing.hpp"
#include "bca/optim.hpp"

namespace bca {

void HeadConfig::validate() const {
    if (layer_dims.size() < 2) throw PreconditionError("head needs at least an input and an output layer");
    for (auto d : layer_dims)
        if (d == 0) throw PreconditionError("head layer widths must be positive");
    if (layer_dims.back() != 1) throw PreconditionError("head output width must be 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw PreconditionError("dropout rate must be in [0, 1)");
    if (!(learning_rate > 0.0)) throw PreconditionError("head learning rate must be positive");
    if (epochs == 0) throw PreconditionError("head epochs must be positive");
    if (batch_size == 0) throw PreconditionError("head batch size must be positive");
    if (!(threshold > 0.0 && threshold < 1.0)) throw PreconditionError("threshold must be in (0, 1)");
}

ClassWeights class_weights(std::size_t n_low, std::size_t n_high, ClassWeighting weighting) {
    if (weighting == ClassWeighting::None) return {};
    if (n_low == 0 || n_high == 0)
        throw PreconditionError("inverse-frequency weighting needs both grade categories");
    const double n = static_cast<double>(n_low + n_high);
    return {n / (2.0 * static_cast<double>(n_low)), n / (2.0 * static_cast<double>(n_high))};
}

namespace {

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

Eigen::VectorXd standardized(const TrainedHead& head, const FeatureVector& f) {
    if (static_cast<Eigen::Index>(f.values.size()) != head.feature_mean.size())
        throw ShapeError("feature vector has " + std::to_string(f.values.size()) + " values, head expects " +
                         std::to_string(head.feature_mean.size()));
    const Eigen::Map<const Eigen::VectorXd> v(f.values.data(), static_cast<Eigen::Index>(f.values.size()));
    return (v - head.feature_mean).cwiseProduct(head.feature_scale);
}

}  // namespace

double head_loss(const std::vector<DenseLayer>& layers, const Eigen::MatrixXd& x, const Eigen::VectorXd& targets,
                 const Eigen::VectorXd& sample_weights, const std::vector<Eigen::MatrixXd>* dropout_masks,
                 HeadGradient* grad) {
    const Eigen::Index n = x.cols();
    const std::size_t depth = layers.size();
    std::vector<Eigen::MatrixXd> acts{x};  // input of each layer
    for (std::size_t l = 0; l + 1 < depth; ++l) {
        Eigen::MatrixXd h = ((layers[l].weight * acts.back()).colwise() + layers[l].bias).cwiseMax(0.0);
        if (dropout_masks) h = h.cwiseProduct((*dropout_masks)[l]);
        acts.push_back(std::move(h));
    }
    const Eigen::RowVectorXd z = (layers.back().weight * acts.back()).colwise() + layers.back().bias;

    double loss = 0.0;
    Eigen::RowVectorXd dz(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        loss += sample_weights[i] * (softplus(z[i]) - targets[i] * z[i]);
        dz[i] = sample_weights[i] * (sigmoid(z[i]) - targets[i]) / static_cast<double>(n);
    }
    loss /= static_cast<double>(n);
    if (!grad) return loss;

    grad->weight.assign(depth, {});
    grad->bias.assign(depth, {});
    Eigen::MatrixXd delta = dz;
    for (std::size_t l = depth; l-- > 0;) {
        grad->weight[l] = delta * acts[l].transpose();
        grad->bias[l] = delta.rowwise().sum();
        if (l == 0) break;
        Eigen::MatrixXd back = layers[l].weight.transpose() * delta;
        if (dropout_masks) back = back.cwiseProduct((*dropout_masks)[l - 1]);
        // ReLU gate: acts[l] > 0 exactly where the pre-activation was positive
        // (and the unit was kept by dropout).
        delta = back.cwiseProduct((acts[l].array() > 0.0).cast<double>().matrix());
    }
    return loss;
}

std::vector<DenseLayer> init_head_layers(const HeadConfig& config) {
    config.validate();
    std::mt19937_64 rng(derive_seed(config.seed, "head.init"));
    std::vector<DenseLayer> layers;
    for (std::size_t l = 0; l + 1 < config.layer_dims.size(); ++l) {
        const auto in = static_cast<Eigen::Index>(config.layer_dims[l]);
        const auto out = static_cast<Eigen::Index>(config.layer_dims[l + 1]);
        const bool last = l + 2 == config.layer_dims.size();
        std::normal_distribution<double> dist(0.0, std::sqrt((last ? 1.0 : 2.0) / static_cast<double>(in)));
        DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
        for (Eigen::Index r = 0; r < out; ++r)
            for (Eigen::Index c = 0; c < in; ++c) layer.weight(r, c) = dist(rng);
        layers.push_back(std::move(layer));
    }
    return layers;
}

TrainedHead train_head(std::span<const FeatureVector> features, std::span<const CategorizedGrade> labels,
                       const HeadConfig& config) {
    config.validate();
    if (features.size() != labels.size())
        throw PreconditionError("got " + std::to_string(features.size()) + " feature vectors but " +
                                std::to_string(labels.size()) + " labels");
    if (features.size() < 2) throw PreconditionError("head training needs at least 2 samples");
    const std::size_t dim = features.front().values.size();
    if (dim != config.layer_dims.front())
        throw ShapeError("head input width " + std::to_string(config.layer_dims.front()) +
                         " does not match feature length " + std::to_string(dim));

    const auto n = static_cast<Eigen::Index>(features.size());
    const auto f = static_cast<Eigen::Index>(dim);
    const auto n_high = static_cast<std::size_t>(std::ranges::count(labels, CategorizedGrade::High));
    const ClassWeights cw = class_weights(features.size() - n_high, n_high, config.class_weighting);

    Eigen::MatrixXd x(f, n);
    Eigen::VectorXd y(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& v = features[static_cast<std::size_t>(i)].values;
        if (v.size() != dim) throw ShapeError("feature vectors differ in length");
        x.col(i) = Eigen::Map<const Eigen::VectorXd>(v.data(), f);
        const bool high = labels[static_cast<std::size_t>(i)] == CategorizedGrade::High;
        y[i] = high ? 1.0 : 0.0;
        w[i] = high ? cw.high : cw.low;
    }

    TrainedHead head;
    head.config = config;
    head.feature_mean = x.rowwise().mean();
    const Eigen::MatrixXd centered = x.colwise() - head.feature_mean;
    const Eigen::VectorXd sd = (centered.array().square().rowwise().sum() / static_cast<double>(n)).sqrt();
    head.feature_scale = sd.unaryExpr([](double s) { return s > 1e-12 ? 1.0 / s : 1.0; });
    const Eigen::MatrixXd xs = head.feature_scale.asDiagonal() * centered;
    head.layers = init_head_layers(config);

    nn::Adam<double> opt(config.learning_rate);
    std::mt19937_64 rng(derive_seed(config.seed, "head.dropout"));
    std::mt19937_64 order_rng(derive_seed(config.seed, "head.shuffle"));
    std::bernoulli_distribution keep(1.0 - config.dropout_rate);
    const double inv_keep = 1.0 / (1.0 - config.dropout_rate);
    const bool dropout = config.dropout_rate > 0.0;
    const auto batch = static_cast<Eigen::Index>(std::min<std::size_t>(config.batch_size, features.size()));

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    HeadGradient grad;
    std::vector<Eigen::MatrixXd> masks;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), order_rng);
        double epoch_loss = 0.0;
        for (Eigen::Index start = 0; start < n; start += batch) {
            const Eigen::Index nb = std::min(batch, n - start);
            Eigen::MatrixXd xb(f, nb);
            Eigen::VectorXd yb(nb), wb(nb);
            for (Eigen::Index k = 0; k < nb; ++k) {
                const Eigen::Index i = order[static_cast<std::size_t>(start + k)];
                xb.col(k) = xs.col(i);
                yb[k] = y[i];
                wb[k] = w[i];
            }
            if (dropout) {
                masks.clear();
                for (std::size_t l = 0; l + 1 < head.layers.size(); ++l) {
                    Eigen::MatrixXd m(head.layers[l].weight.rows(), nb);
                    for (Eigen::Index c = 0; c < nb; ++c)
                        for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = keep(rng) ? inv_keep : 0.0;
                    masks.push_back(std::move(m));
                }
            }
            epoch_loss += head_loss(head.layers, xb, yb, wb, dropout ? &masks : nullptr, &grad) * static_cast<double>(nb);

            std::vector<std::span<double>> values;
            std::vector<std::span<const double>> grads;
            for (std::size_t l = 0; l < head.layers.size(); ++l) {
                auto& L = head.layers[l];
                values.emplace_back(L.weight.data(), static_cast<std::size_t>(L.weight.size()));
                grads.emplace_back(grad.weight[l].data(), static_cast<std::size_t>(grad.weight[l].size()));
                values.emplace_back(L.bias.data(), static_cast<std::size_t>(L.bias.size()));
                grads.emplace_back(grad.bias[l].data(), static_cast<std::size_t>(grad.bias[l].size()));
            }
            opt.step(values, grads);
        }
        head.training_loss_curve.push_back(epoch_loss / static_cast<double>(n));
    }
    return head;
}

double predict_proba(const TrainedHead& head, const FeatureVector& f) {
    Eigen::VectorXd a = standardized(head, f);
    for (std::size_t l = 0; l + 1 < head.layers.size(); ++l)
        a = ((head.layers[l].weight * a) + head.layers[l].bias).cwiseMax(0.0);
    const double z = (head.layers.back().weight * a + head.layers.back().bias)[0];
    return sigmoid(z);
}

CategorizedGrade predict_grade(const TrainedHead& head, const FeatureVector& f) {
    return grade_from_probability(predict_proba(head, f), head.config.threshold);
}

}  // namespace bca
