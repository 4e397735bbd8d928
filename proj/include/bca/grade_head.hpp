#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "bca/backbone.hpp"
#include "bca/ingest.hpp"

namespace bca {

enum class ClassWeighting { None, InverseFrequency };

struct HeadConfig {
    /// Input width, hidden widths..., 1.
    std::vector<std::size_t> layer_dims{512, 128, 1};
    double dropout_rate = 0.2;
    double learning_rate = 1e-3;
    std::size_t epochs = 100;
    /// Samples per optimiser step; every epoch visits each sample once in a seeded order.
    std::size_t batch_size = 8;
    ClassWeighting class_weighting = ClassWeighting::InverseFrequency;
    double threshold = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
    friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

struct DenseLayer {
    Eigen::MatrixXd weight;  // out x in
    Eigen::VectorXd bias;
};

/// Fully-connected grade predictor. Inputs are standardised with the
/// per-feature mean and inverse standard deviation of its training set.
struct TrainedHead {
    std::vector<DenseLayer> layers;
    Eigen::VectorXd feature_mean;
    Eigen::VectorXd feature_scale;
    HeadConfig config;
    std::vector<double> training_loss_curve;
};

/// Per-class loss weights; positive class is High.
struct ClassWeights {
    double low = 1.0;
    double high = 1.0;
};

/// InverseFrequency gives N / (2 * N_class). Throws PreconditionError when a
/// class is empty under InverseFrequency.
ClassWeights class_weights(std::size_t n_low, std::size_t n_high, ClassWeighting weighting);

struct HeadGradient {
    std::vector<Eigen::MatrixXd> weight;
    std::vector<Eigen::VectorXd> bias;
};

/// Weighted binary cross-entropy (mean over samples) of a head on standardised
/// inputs `x` (features x samples). `dropout_masks`, when given, hold one
/// multiplicative mask per hidden layer (units x samples). Fills `grad` when
/// non-null.
double head_loss(const std::vector<DenseLayer>& layers, const Eigen::MatrixXd& x, const Eigen::VectorXd& targets,
                 const Eigen::VectorXd& sample_weights, const std::vector<Eigen::MatrixXd>* dropout_masks,
                 HeadGradient* grad);

std::vector<DenseLayer> init_head_layers(const HeadConfig& config);

TrainedHead train_head(std::span<const FeatureVector> features, std::span<const CategorizedGrade> labels,
                       const HeadConfig& config);

double predict_proba(const TrainedHead& head, const FeatureVector& f);

/// High iff p >= threshold.
constexpr CategorizedGrade grade_from_probability(double p, double threshold) noexcept {
    return p >= threshold ? CategorizedGrade::High : CategorizedGrade::LowIntermediate;
}

CategorizedGrade predict_grade(const TrainedHead& head, const FeatureVector& f);

}  // namespace bca
