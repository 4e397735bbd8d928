#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bca/backbone.hpp"
#include "bca/cdis.hpp"
#include "bca/grade_head.hpp"
#include "bca/ingest.hpp"

namespace bca {

/// Positive class is High.
struct ConfusionMatrix {
    std::size_t tp = 0, fn = 0, tn = 0, fp = 0;

    std::size_t total() const noexcept { return tp + fn + tn + fp; }
    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

/// A percentage held as an exact count of hundredths; empty when undefined.
struct Percent {
    std::optional<std::int64_t> hundredths;

    /// 100 * num / den rounded half-up to two decimals; undefined when den == 0.
    static Percent of(std::uint64_t num, std::uint64_t den);
    bool defined() const noexcept { return hundredths.has_value(); }
    /// "87.70" or "n/a".
    std::string str() const;
    friend bool operator==(const Percent&, const Percent&) = default;
};

struct MetricsReport {
    Percent accuracy, sensitivity, specificity;
    friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

struct FoldResult {
    std::string patient_id;
    CategorizedGrade true_label = CategorizedGrade::LowIntermediate;
    CategorizedGrade predicted_label = CategorizedGrade::LowIntermediate;
    double probability = 0.0;
    friend bool operator==(const FoldResult&, const FoldResult&) = default;
};

struct Fold {
    std::vector<std::size_t> train;
    std::size_t test = 0;
    friend bool operator==(const Fold&, const Fold&) = default;
};

std::vector<Fold> loocv_folds(std::size_t n);

/// One fresh head per fold, trained with seed (seed XOR fold index). A fold
/// whose training split holds a single class under inverse-frequency weighting
/// is trained unweighted instead.
std::vector<FoldResult> run_loocv(std::span<const FeatureVector> features, std::span<const CategorizedGrade> labels,
                                  const HeadConfig& head_config, std::uint64_t seed);

ConfusionMatrix confusion_matrix(std::span<const FoldResult> results);

MetricsReport compute_metrics(const ConfusionMatrix& cm);

struct ModalityRunConfig {
    Modality modality = Modality::CDIS;
    BackboneConfig backbone;
    HeadConfig head;
    std::optional<MixingConfig> mixing;  // CDIS only
    std::uint64_t seed = 0;

    void validate() const;
};

/// Per-patient features of one modality plus labels, in cohort order.
struct ModalityFeatures {
    std::vector<FeatureVector> features;
    std::vector<CategorizedGrade> labels;
};

using FeatureProvider = std::function<ModalityFeatures(const ModalityRunConfig&)>;

struct ComparisonRow {
    ModalityRunConfig config;
    ConfusionMatrix confusion;
    MetricsReport metrics;
    std::vector<FoldResult> folds;
};

struct ComparisonTable {
    std::vector<ComparisonRow> rows;  // accuracy descending, ties in input order
    std::vector<std::string> cohort;  // patient ids common to every modality
};

/// Runs LOOCV per modality over the patients every provider returned.
ComparisonTable compare_modalities(std::span<const ModalityRunConfig> configs, const FeatureProvider& provider);

/// Orders rows by exact accuracy, descending; stable for ties.
void sort_by_accuracy(std::vector<ComparisonRow>& rows);

/// CSV: patient_id,true_label,predicted_label,probability
std::string fold_results_csv(std::span<const FoldResult> results);
std::vector<FoldResult> parse_fold_results_csv(const std::string& text);

/// CSV: modality,accuracy,sensitivity,specificity
std::string comparison_csv(const ComparisonTable& table);
nlohmann::json comparison_json(const ComparisonTable& table);

nlohmann::json to_json_value(const ConfusionMatrix& cm);
nlohmann::json to_json_value(const MetricsReport& m);
nlohmann::json to_json_value(const ModalityRunConfig& c);

}  // namespace bca
