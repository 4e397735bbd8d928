#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bca/ingest.hpp"
#include "bca/tensor_ops.hpp"
#include "bca/volumizer.hpp"

namespace bca {

/// Volumetric residual network layout. With the defaults the network has 34
/// parameterised layers: the stem convolution, two convolutions per basic
/// block (3 + 4 + 6 + 3 blocks) and the final fully-connected projection.
/// Projection shortcuts are not counted.
struct BackboneConfig {
    std::array<std::size_t, 4> block_counts{3, 4, 6, 3};
    std::array<std::size_t, 4> stage_channels{64, 128, 256, 512};
    std::size_t input_channels = 1;
    std::size_t feature_dim = 512;
    std::uint64_t seed = 0;

    void validate() const;
    std::size_t parameterized_layer_count() const noexcept;
    /// True when the two configs build structurally identical networks (seed ignored).
    bool same_architecture(const BackboneConfig& other) const noexcept;
    friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

/// Deep radiomic representation of one patient.
struct FeatureVector {
    std::vector<double> values;
    std::string patient_id;
};

namespace nn {

template <class T>
struct ParamRef {
    std::string name;
    std::vector<std::size_t> shape;
    std::span<T> value;
    std::span<T> grad;
};

template <class T>
struct BufferRef {
    std::string name;
    std::vector<std::size_t> shape;
    std::span<T> value;
};

template <class T>
struct Conv {
    ConvGeometry geometry;
    std::vector<T> weight, grad;
};

template <class T>
struct BasicBlock {
    Conv<T> conv1, conv2;
    BatchNorm<T> bn1, bn2;
    std::optional<Conv<T>> proj;
    std::optional<BatchNorm<T>> proj_bn;
    // training cache
    Tensor5<T> input, act1, output;
};

/// Stem (7x7x3 conv, stride 2x2x1; 3x3x3 max-pool, stride 2x2x1), four stages
/// of basic residual blocks, global average pooling. Stages after the first
/// downsample by 2 along every axis.
template <class T>
class BasicBackbone {
public:
    explicit BasicBackbone(const BackboneConfig& config);

    const BackboneConfig& config() const noexcept { return config_; }
    std::size_t feature_dim() const noexcept { return config_.feature_dim; }
    std::size_t parameterized_layer_count() const noexcept;
    std::size_t parameter_count() const;

    /// Trainable tensors in a fixed order.
    std::vector<ParamRef<T>> parameters();
    /// Batch-norm running statistics.
    std::vector<BufferRef<T>> buffers();

    /// Evaluation mode: running statistics, samples processed independently.
    /// Returns n x feature_dim, row-major.
    std::vector<T> forward_eval(const Tensor5<T>& x) const;

    /// Training mode: batch statistics; caches activations for backward().
    std::vector<T> forward_train(const Tensor5<T>& x);
    /// Accumulates parameter gradients from d(loss)/d(features).
    void backward(std::span<const T> dfeatures);
    void zero_grad();
    /// Hash of every ReLU on/off state and max-pool winner from the last
    /// forward_train. Equal hashes mean the network was on the same linear piece.
    std::uint64_t activation_pattern() const;

private:
    std::vector<T> sample_forward(const Tensor5<T>& x) const;

    BackboneConfig config_;
    Conv<T> stem_;
    BatchNorm<T> stem_bn_;
    PoolGeometry pool_;
    std::vector<BasicBlock<T>> blocks_;
    // training cache
    Tensor5<T> input_, stem_act_, last_out_;
    std::vector<std::uint32_t> pool_argmax_;
};

/// Linear layer producing class logits; the temporary head used during
/// supervised pretraining.
template <class T>
struct LinearClassifier {
    std::size_t in = 0, classes = 2;
    std::vector<T> weight, bias, dweight, dbias;

    LinearClassifier(std::size_t in_features, std::size_t n_classes, std::uint64_t seed);
    std::vector<ParamRef<T>> parameters();
    void zero_grad();
};

/// Mean softmax cross-entropy of classifier(net(x)) in training mode. When
/// `with_gradients` is set, parameter gradients of both networks are
/// accumulated.
template <class T>
double classification_loss(BasicBackbone<T>& net, LinearClassifier<T>& head, const Tensor5<T>& x,
                           std::span<const int> labels, bool with_gradients);

}  // namespace nn

using Backbone = nn::BasicBackbone<float>;

Backbone build_backbone(const BackboneConfig& config);

/// Stacks cubes of identical shape into a single-channel batch.
template <class T>
nn::Tensor5<T> stack_cubes(std::span<const StandardCube> cubes);

/// One vector per cube, evaluation mode.
std::vector<FeatureVector> extract_features(const Backbone& net, std::span<const StandardCube> cubes);

struct PretrainConfig {
    std::size_t epochs = 10;
    double learning_rate = 1e-4;
    std::size_t batch_size = 4;
    std::uint64_t seed = 0;
};

/// Supervised training on categorised grade through a temporary linear head,
/// which is discarded. Returns the mean training loss of every epoch.
std::vector<double> pretrain_backbone(Backbone& net, std::span<const StandardCube> cubes,
                                      std::span<const CategorizedGrade> labels, const PretrainConfig& config);

}  // namespace bca
