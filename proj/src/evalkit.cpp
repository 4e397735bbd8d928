#include "bca/evalkit.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <set>
#include <sstream>
#include <unordered_map>

#include "bca/config_json.hpp"
#include "bca/errors.hpp"

namespace bca {

using nlohmann::json;

Percent Percent::of(std::uint64_t num, std::uint64_t den) {
    if (den == 0) return {};
    // floor(10000 * num / den + 1/2)
    const auto h = (20000u * static_cast<unsigned __int128>(num) + den) / (2u * static_cast<unsigned __int128>(den));
    return {static_cast<std::int64_t>(h)};
}

std::string Percent::str() const {
    if (!hundredths) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%lld.%02lld", static_cast<long long>(*hundredths / 100),
                  static_cast<long long>(*hundredths % 100));
    return buf;
}

std::vector<Fold> loocv_folds(std::size_t n) {
    if (n < 2) throw PreconditionError("leave-one-out needs at least 2 samples, got " + std::to_string(n));
    std::vector<Fold> folds(n);
    for (std::size_t i = 0; i < n; ++i) {
        folds[i].test = i;
        folds[i].train.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) folds[i].train.push_back(j);
    }
    return folds;
}

std::vector<FoldResult> run_loocv(std::span<const FeatureVector> features, std::span<const CategorizedGrade> labels,
                                  const HeadConfig& head_config, std::uint64_t seed) {
    if (features.size() != labels.size())
        throw PreconditionError("got " + std::to_string(features.size()) + " feature vectors but " +
                                std::to_string(labels.size()) + " labels");
    std::vector<FoldResult> results;
    results.reserve(features.size());
    for (const Fold& fold : loocv_folds(features.size())) {
        std::vector<FeatureVector> train_x;
        std::vector<CategorizedGrade> train_y;
        train_x.reserve(fold.train.size());
        for (std::size_t j : fold.train) {
            train_x.push_back(features[j]);
            train_y.push_back(labels[j]);
        }
        HeadConfig cfg = head_config;
        cfg.seed = seed ^ static_cast<std::uint64_t>(fold.test);
        const bool single_class = std::ranges::all_of(train_y, [&](auto g) { return g == train_y.front(); });
        if (single_class && cfg.class_weighting == ClassWeighting::InverseFrequency) {
            spdlog::warn("fold {} ({}): training split holds one class, training unweighted", fold.test,
                         features[fold.test].patient_id);
            cfg.class_weighting = ClassWeighting::None;
        }
        const TrainedHead head = train_head(train_x, train_y, cfg);
        const double p = predict_proba(head, features[fold.test]);
        results.push_back({features[fold.test].patient_id, labels[fold.test], grade_from_probability(p, cfg.threshold), p});
    }
    return results;
}

ConfusionMatrix confusion_matrix(std::span<const FoldResult> results) {
    ConfusionMatrix cm;
    for (const auto& r : results) {
        const bool truth = r.true_label == CategorizedGrade::High;
        const bool pred = r.predicted_label == CategorizedGrade::High;
        if (truth && pred) ++cm.tp;
        else if (truth) ++cm.fn;
        else if (pred) ++cm.fp;
        else ++cm.tn;
    }
    return cm;
}

MetricsReport compute_metrics(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw PreconditionError("cannot compute metrics of an empty confusion matrix");
    return {Percent::of(cm.tp + cm.tn, cm.total()), Percent::of(cm.tp, cm.tp + cm.fn), Percent::of(cm.tn, cm.tn + cm.fp)};
}

void ModalityRunConfig::validate() const {
    if (mixing.has_value() != (modality == Modality::CDIS))
        throw PreconditionError("a mixing config is required for CDIs and not allowed for other modalities");
    backbone.validate();
    head.validate();
    if (head.layer_dims.front() != backbone.feature_dim)
        throw PreconditionError("head input width must equal the backbone feature dimension");
}

void sort_by_accuracy(std::vector<ComparisonRow>& rows) {
    std::ranges::stable_sort(rows, [](const ComparisonRow& a, const ComparisonRow& b) {
        // (a.tp + a.tn) / a.total > (b.tp + b.tn) / b.total, exactly
        const auto an = static_cast<unsigned __int128>(a.confusion.tp + a.confusion.tn) * b.confusion.total();
        const auto bn = static_cast<unsigned __int128>(b.confusion.tp + b.confusion.tn) * a.confusion.total();
        return an > bn;
    });
}

ComparisonTable compare_modalities(std::span<const ModalityRunConfig> configs, const FeatureProvider& provider) {
    if (configs.empty()) throw PreconditionError("no modality configs given");
    std::vector<ModalityFeatures> data;
    for (const auto& c : configs) {
        c.validate();
        data.push_back(provider(c));
        if (data.back().features.size() != data.back().labels.size())
            throw PreconditionError("feature provider returned mismatched features and labels");
    }

    // Common cohort, in the order of the first modality.
    std::vector<std::string> cohort;
    for (const auto& f : data.front().features) {
        const bool everywhere = std::ranges::all_of(data, [&](const ModalityFeatures& m) {
            return std::ranges::any_of(m.features, [&](const FeatureVector& v) { return v.patient_id == f.patient_id; });
        });
        if (everywhere) cohort.push_back(f.patient_id);
    }
    if (cohort.empty()) throw PreconditionError("no patient is available in every requested modality");

    ComparisonTable table;
    table.cohort = cohort;
    for (std::size_t k = 0; k < configs.size(); ++k) {
        std::unordered_map<std::string, std::size_t> index;
        for (std::size_t i = 0; i < data[k].features.size(); ++i) index.emplace(data[k].features[i].patient_id, i);
        std::vector<FeatureVector> x;
        std::vector<CategorizedGrade> y;
        for (const auto& id : cohort) {
            const std::size_t i = index.at(id);
            x.push_back(data[k].features[i]);
            y.push_back(data[k].labels[i]);
        }
        ComparisonRow row;
        row.config = configs[k];
        row.folds = run_loocv(x, y, configs[k].head, configs[k].seed);
        row.confusion = confusion_matrix(row.folds);
        row.metrics = compute_metrics(row.confusion);
        table.rows.push_back(std::move(row));
    }
    sort_by_accuracy(table.rows);
    return table;
}

namespace {

std::string format_probability(double p) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", p);
    return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(line);
    while (std::getline(in, cur, sep)) out.push_back(cur);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

}  // namespace

std::string fold_results_csv(std::span<const FoldResult> results) {
    std::string out = "patient_id,true_label,predicted_label,probability\n";
    for (const auto& r : results) {
        if (r.patient_id.find_first_of(",\n\"") != std::string::npos)
            throw FormatError("patient id not representable in CSV: " + r.patient_id);
        out += r.patient_id + "," + std::string(to_string(r.true_label)) + "," + std::string(to_string(r.predicted_label)) +
               "," + format_probability(r.probability) + "\n";
    }
    return out;
}

std::vector<FoldResult> parse_fold_results_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t n = 1;
    if (!std::getline(in, line) || line != "patient_id,true_label,predicted_label,probability")
        throw ParseError("missing fold-results header", 1);
    std::vector<FoldResult> out;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        const auto cells = split(line, ',');
        if (cells.size() != 4) throw ParseError("expected 4 columns", n);
        FoldResult r;
        r.patient_id = cells[0];
        try {
            r.true_label = parse_categorized_grade(cells[1]);
            r.predicted_label = parse_categorized_grade(cells[2]);
            r.probability = std::stod(cells[3]);
        } catch (const std::exception& e) {
            throw ParseError(e.what(), n);
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::string comparison_csv(const ComparisonTable& table) {
    std::string out = "modality,accuracy,sensitivity,specificity\n";
    for (const auto& row : table.rows)
        out += std::string(display_name(row.config.modality)) + "," + row.metrics.accuracy.str() + "," +
               row.metrics.sensitivity.str() + "," + row.metrics.specificity.str() + "\n";
    return out;
}

json to_json_value(const ConfusionMatrix& cm) {
    return json{{"tp", cm.tp}, {"fn", cm.fn}, {"tn", cm.tn}, {"fp", cm.fp}};
}

json to_json_value(const MetricsReport& m) {
    return json{{"accuracy", m.accuracy.str()}, {"sensitivity", m.sensitivity.str()}, {"specificity", m.specificity.str()}};
}

json to_json_value(const ModalityRunConfig& c) {
    json j{{"modality", to_key(c.modality)}, {"backbone_config", c.backbone}, {"head_config", c.head}, {"seed", c.seed}};
    if (c.mixing) j["mixing_config"] = *c.mixing;
    return j;
}

json comparison_json(const ComparisonTable& table) {
    json rows = json::array();
    for (const auto& row : table.rows)
        rows.push_back({{"modality", display_name(row.config.modality)},
                        {"config", to_json_value(row.config)},
                        {"confusion_matrix", to_json_value(row.confusion)},
                        {"metrics", to_json_value(row.metrics)}});
    return json{{"cohort_size", table.cohort.size()}, {"rows", rows}};
}

}  // namespace bca
