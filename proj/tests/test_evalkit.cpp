#include <doctest.h>

#include <map>
#include <set>

#include "bca/config_json.hpp"
#include "bca/errors.hpp"
#include "bca/evalkit.hpp"
#include "support.hpp"

using namespace bca;

namespace {

constexpr auto H = CategorizedGrade::High;
constexpr auto L = CategorizedGrade::LowIntermediate;

// Rounds 100 * num / den half-up to two decimals, through floating point.
std::string oracle_percent(std::uint64_t num, std::uint64_t den) {
    if (den == 0) return "n/a";
    const double hundredths = std::floor(10000.0 * double(num) / double(den) + 0.5);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", hundredths / 100.0);
    return buf;
}

ModalityRunConfig run_config(Modality m, std::size_t dim, std::uint64_t seed = 0) {
    ModalityRunConfig c;
    c.modality = m;
    c.backbone.stage_channels = {8, 8, 8, dim};
    c.backbone.feature_dim = dim;
    c.head.layer_dims = {dim, 128, 1};
    c.seed = seed;
    if (m == Modality::CDIS) c.mixing = MixingConfig{};
    return c;
}

// Unit-variance features shifted by +-signal along every axis according to the label.
ModalityFeatures labelled(std::size_t n, std::size_t dim, double signal, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    ModalityFeatures out;
    for (std::size_t i = 0; i < n; ++i) {
        const auto y = i % 3 == 0 ? L : H;
        FeatureVector f;
        f.patient_id = "P" + std::to_string(100 + i);
        for (std::size_t d = 0; d < dim; ++d) f.values.push_back(g(rng));
        for (double& v : f.values) v += y == H ? signal : -signal;
        out.features.push_back(std::move(f));
        out.labels.push_back(y);
    }
    return out;
}

}  // namespace

TEST_CASE("loocv folds for three samples") {
    const auto f = loocv_folds(3);
    REQUIRE(f.size() == 3);
    CHECK(f[0] == Fold{{1, 2}, 0});
    CHECK(f[1] == Fold{{0, 2}, 1});
    CHECK(f[2] == Fold{{0, 1}, 2});
    CHECK_THROWS_AS(loocv_folds(1), PreconditionError);
    CHECK_THROWS_AS(loocv_folds(0), PreconditionError);
}

TEST_CASE("loocv folds partition the cohort") {
    for (std::size_t n : {2u, 5u, 10u, 252u}) {
        const auto folds = loocv_folds(n);
        REQUIRE(folds.size() == n);
        std::set<std::size_t> tests;
        for (const auto& fold : folds) {
            tests.insert(fold.test);
            CHECK(fold.train.size() == n - 1);
            CHECK(std::find(fold.train.begin(), fold.train.end(), fold.test) == fold.train.end());
            CHECK(std::is_sorted(fold.train.begin(), fold.train.end()));
            CHECK(std::set<std::size_t>(fold.train.begin(), fold.train.end()).size() == n - 1);
        }
        CHECK(tests.size() == n);
        CHECK(*tests.rbegin() == n - 1);
    }
}

TEST_CASE("percentages round half up") {
    CHECK(Percent::of(221, 252).str() == "87.70");
    CHECK(Percent::of(1, 8).str() == "12.50");
    CHECK(Percent::of(1, 3).str() == "33.33");
    CHECK(Percent::of(2, 3).str() == "66.67");
    CHECK(Percent::of(1, 16000).str() == "0.01");  // 0.00625 -> 0.01
    CHECK(Percent::of(1, 40000).str() == "0.00");  // 0.0025 -> 0.00
    CHECK(Percent::of(0, 77).str() == "0.00");
    CHECK(Percent::of(5, 5).str() == "100.00");
    CHECK(Percent::of(3, 0).str() == "n/a");
    CHECK_FALSE(Percent::of(0, 0).defined());
    std::mt19937_64 rng(1);
    for (int i = 0; i < 20000; ++i) {
        const std::uint64_t den = 1 + rng() % 5000, num = rng() % (den + 1);
        REQUIRE(Percent::of(num, den).str() == oracle_percent(num, den));
    }
}

TEST_CASE("hand-counted confusion matrix") {
    const std::vector<FoldResult> r{
        {"a", H, H, 0.9}, {"b", H, L, 0.2}, {"c", L, L, 0.1}, {"d", L, H, 0.6},
        {"e", H, H, 0.7}, {"f", L, L, 0.4}, {"g", H, H, 0.5},
    };
    const ConfusionMatrix cm = confusion_matrix(r);
    CHECK(cm == ConfusionMatrix{3, 1, 2, 1});
    const MetricsReport m = compute_metrics(cm);
    CHECK(m.accuracy.str() == "71.43");
    CHECK(m.sensitivity.str() == "75.00");
    CHECK(m.specificity.str() == "66.67");
}

TEST_CASE("reported cohort rows from integer confusion matrices") {
    struct Row {
        ConfusionMatrix cm;
        const char *acc, *sens, *spec;
    };
    const Row rows[] = {
        {{158, 17, 63, 14}, "87.70", "90.29", "81.82"},
        {{174, 1, 19, 58}, "76.59", "99.43", "24.68"},
        {{175, 0, 0, 77}, "69.44", "100.00", "0.00"},
        {{167, 8, 8, 69}, "69.44", "95.43", "10.39"},
    };
    for (const auto& r : rows) {
        CHECK(r.cm.total() == 252);
        CHECK(r.cm.tp + r.cm.fn == 175);
        const MetricsReport m = compute_metrics(r.cm);
        CHECK(m.accuracy.str() == r.acc);
        CHECK(m.sensitivity.str() == r.sens);
        CHECK(m.specificity.str() == r.spec);
        CHECK(m.accuracy.str() == oracle_percent(r.cm.tp + r.cm.tn, r.cm.total()));
    }
}

TEST_CASE("metrics depend only on proportions") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 500; ++i) {
        const ConfusionMatrix cm{rng() % 50, rng() % 50, rng() % 50, 1 + rng() % 50};
        const std::size_t k = 2 + rng() % 30;
        const ConfusionMatrix big{cm.tp * k, cm.fn * k, cm.tn * k, cm.fp * k};
        REQUIRE(compute_metrics(cm) == compute_metrics(big));
    }
}

TEST_CASE("all-High labels leave specificity undefined") {
    std::vector<FoldResult> r;
    for (int i = 0; i < 6; ++i) r.push_back({"p" + std::to_string(i), H, H, 0.8});
    const MetricsReport m = compute_metrics(confusion_matrix(r));
    CHECK(m.sensitivity.str() == "100.00");
    CHECK(m.specificity.str() == "n/a");
    CHECK(m.accuracy.str() == "100.00");

    ModalityFeatures data = labelled(6, 3, 0.0, 4);
    std::fill(data.labels.begin(), data.labels.end(), H);
    HeadConfig cfg = run_config(Modality::DWI, 3).head;
    cfg.class_weighting = ClassWeighting::None;
    const auto folds = run_loocv(data.features, data.labels, cfg, 1);
    for (const auto& f : folds) CHECK(f.predicted_label == H);
    const MetricsReport lm = compute_metrics(confusion_matrix(folds));
    CHECK(lm.sensitivity.str() == "100.00");
    CHECK(lm.specificity.str() == "n/a");

    // Under inverse-frequency weighting, single-class splits fall back to unweighted training.
    cfg.class_weighting = ClassWeighting::InverseFrequency;
    CHECK(run_loocv(data.features, data.labels, cfg, 1) == folds);
}

TEST_CASE("separable features give perfect LOOCV accuracy") {
    const ModalityFeatures data = labelled(20, 4, 10.0, 5);
    const auto folds = run_loocv(data.features, data.labels, run_config(Modality::DWI, 4).head, 2);
    REQUIRE(folds.size() == 20);
    for (std::size_t i = 0; i < 20; ++i) {
        CHECK(folds[i].patient_id == data.features[i].patient_id);
        CHECK(folds[i].true_label == data.labels[i]);
    }
    CHECK(compute_metrics(confusion_matrix(folds)).accuracy.str() == "100.00");
}

TEST_CASE("run_loocv is deterministic and checks lengths") {
    const ModalityFeatures data = labelled(9, 3, 1.0, 6);
    const auto cfg = run_config(Modality::DWI, 3).head;
    CHECK(run_loocv(data.features, data.labels, cfg, 7) == run_loocv(data.features, data.labels, cfg, 7));
    CHECK_THROWS_AS(run_loocv(data.features, std::span(data.labels).first(8), cfg, 7), PreconditionError);
}

TEST_CASE("fold results round-trip through CSV") {
    const std::vector<FoldResult> r{{"P1", H, L, 0.1234567890123456789}, {"P2", L, L, 1e-300}, {"P3", H, H, 1.0}};
    const std::string csv = fold_results_csv(r);
    CHECK(csv.rfind("patient_id,true_label,predicted_label,probability\nP1,High,LowIntermediate,", 0) == 0);
    CHECK(parse_fold_results_csv(csv) == r);
    CHECK_THROWS_AS(parse_fold_results_csv("nope\n"), ParseError);
    CHECK_THROWS_AS(parse_fold_results_csv("patient_id,true_label,predicted_label,probability\nP1,High\n"), ParseError);
    CHECK_THROWS_AS(fold_results_csv(std::vector<FoldResult>{{"a,b", H, H, 0.5}}), FormatError);
}

TEST_CASE("modality comparison") {
    const std::size_t dim = 4;
    std::map<Modality, ModalityFeatures> source{
        {Modality::CDIS, labelled(18, dim, 4.0, 8)},
        {Modality::DWI, labelled(18, dim, 0.0, 9)},
    };
    const FeatureProvider provider = [&](const ModalityRunConfig& c) { return source.at(c.modality); };

    SUBCASE("a correlated modality outranks noise") {
        const std::vector<ModalityRunConfig> cfgs{run_config(Modality::DWI, dim, 1), run_config(Modality::CDIS, dim, 1)};
        const ComparisonTable t = compare_modalities(cfgs, provider);
        REQUIRE(t.rows.size() == 2);
        CHECK(t.rows[0].config.modality == Modality::CDIS);
        CHECK(t.rows[0].metrics.accuracy.hundredths > t.rows[1].metrics.accuracy.hundredths);
        CHECK(t.cohort.size() == 18);
        const std::string csv = comparison_csv(t);
        CHECK(csv.rfind("modality,accuracy,sensitivity,specificity\nCDIs,", 0) == 0);
        const auto j = comparison_json(t);
        CHECK(j["cohort_size"] == 18);
        CHECK(j["rows"][0]["modality"] == "CDIs");
    }
    SUBCASE("a single config gives a single row") {
        const std::vector<ModalityRunConfig> cfgs{run_config(Modality::CDIS, dim)};
        CHECK(compare_modalities(cfgs, provider).rows.size() == 1);
    }
    SUBCASE("identical configs give identical rows") {
        const std::vector<ModalityRunConfig> cfgs{run_config(Modality::DWI, dim, 3), run_config(Modality::DWI, dim, 3)};
        const ComparisonTable t = compare_modalities(cfgs, provider);
        REQUIRE(t.rows.size() == 2);
        CHECK(t.rows[0].folds == t.rows[1].folds);
        CHECK(t.rows[0].confusion == t.rows[1].confusion);
    }
    SUBCASE("only patients present in every modality are compared") {
        source[Modality::DWI].features.erase(source[Modality::DWI].features.begin() + 2);
        source[Modality::DWI].labels.erase(source[Modality::DWI].labels.begin() + 2);
        const std::vector<ModalityRunConfig> cfgs{run_config(Modality::CDIS, dim), run_config(Modality::DWI, dim)};
        const ComparisonTable t = compare_modalities(cfgs, provider);
        CHECK(t.cohort.size() == 17);
        CHECK(std::find(t.cohort.begin(), t.cohort.end(), "P102") == t.cohort.end());
        for (const auto& row : t.rows) CHECK(row.folds.size() == 17);
    }
    SUBCASE("invalid configs are rejected") {
        ModalityRunConfig c = run_config(Modality::DWI, dim);
        c.mixing = MixingConfig{};
        CHECK_THROWS_AS(compare_modalities(std::vector{c}, provider), PreconditionError);
        CHECK_THROWS_AS(compare_modalities(std::vector<ModalityRunConfig>{}, provider), PreconditionError);
    }
}

TEST_CASE("ties in accuracy keep input order") {
    auto row = [](Modality m, ConfusionMatrix cm) {
        ComparisonRow r;
        r.config.modality = m;
        r.confusion = cm;
        r.metrics = compute_metrics(cm);
        return r;
    };
    std::vector<ComparisonRow> rows{row(Modality::ADC, {175, 0, 0, 77}), row(Modality::T2W, {174, 1, 19, 58}),
                                    row(Modality::DWI, {167, 8, 8, 69}), row(Modality::CDIS, {158, 17, 63, 14})};
    sort_by_accuracy(rows);
    std::vector<Modality> order;
    for (const auto& r : rows) order.push_back(r.config.modality);
    CHECK(order == std::vector<Modality>{Modality::CDIS, Modality::T2W, Modality::ADC, Modality::DWI});
}
