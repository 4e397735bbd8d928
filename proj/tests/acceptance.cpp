// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "bca/backbone.hpp"
#include "bca/cdis.hpp"
#include "bca/evalkit.hpp"
#include "bca/phantom.hpp"
#include "bca/pipeline.hpp"
#include "bca/volumizer.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace bca;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

// --- 1, 2: metrics -------------------------------------------------------

void metrics_oracle(Outcome& o) {
    struct Row {
        const char* name;
        ConfusionMatrix cm;
        const char *acc, *sens, *spec;
    };
    const Row rows[] = {{"CDIs", {158, 17, 63, 14}, "87.70", "90.29", "81.82"},
                        {"T2w", {174, 1, 19, 58}, "76.59", "99.43", "24.68"},
                        {"ADC", {175, 0, 0, 77}, "69.44", "100.00", "0.00"},
                        {"DWI", {167, 8, 8, 69}, "69.44", "95.43", "10.39"}};
    for (const Row& r : rows) {
        o.require(r.cm.tp + r.cm.fn == 175 && r.cm.tn + r.cm.fp == 77, std::string(r.name) + " class sizes");
        const MetricsReport m = compute_metrics(r.cm);
        o.require(m.accuracy.str() == r.acc, std::string(r.name) + " accuracy " + m.accuracy.str());
        o.require(m.sensitivity.str() == r.sens, std::string(r.name) + " sensitivity " + m.sensitivity.str());
        o.require(m.specificity.str() == r.spec, std::string(r.name) + " specificity " + m.specificity.str());
        o.detail << r.name << " " << m.accuracy.str() << "/" << m.sensitivity.str() << "/" << m.specificity.str() << " ";
    }
}

void prevalence(Outcome& o) {
    std::vector<FoldResult> folds;
    for (std::size_t i = 0; i < 252; ++i)
        folds.push_back({"p" + std::to_string(i), i < 175 ? CategorizedGrade::High : CategorizedGrade::LowIntermediate,
                         CategorizedGrade::High, 1.0});
    const MetricsReport m = compute_metrics(confusion_matrix(folds));
    // Oracle: 175/252 in hundredths of a percent, rounded half-up with integers.
    const std::int64_t want = (175 * 10000 * 2 + 252) / (2 * 252);
    o.require(m.accuracy.hundredths == want, "accuracy hundredths");
    o.require(m.accuracy.str() == "69.44", "accuracy " + m.accuracy.str());
    o.require(m.sensitivity.str() == "100.00", "sensitivity " + m.sensitivity.str());
    o.require(m.specificity.str() == "0.00", "specificity " + m.specificity.str());
    o.detail << m.accuracy.str() << "/" << m.sensitivity.str() << "/" << m.specificity.str();
}

// --- 3, 4: signal model and synthesis -------------------------------------

const std::vector<double> kB{0, 100, 600, 800};

PhantomSpec nested_boxes(Dims d, double noise, std::uint64_t seed) {
    PhantomSpec s;
    s.dims = d;
    s.background_s0 = 150.0;
    s.background_adc = 2.8e-3;
    const auto w = d.width, h = d.height, z = d.depth;
    s.regions = {{{w / 8, h / 8, z / 8, w - w / 8, h - h / 8, z - z / 8}, 900.0, 1.6e-3},
                 {{w / 4, h / 4, z / 4, w / 2, h / 2, z / 2}, 1200.0, 0.7e-3},
                 {{w / 2, h / 2, z / 2, 3 * w / 4, 3 * h / 4, 3 * z / 4}, 600.0, 2.1e-3}};
    s.noise_sigma = noise;
    s.seed = seed;
    return s;
}

void fit_round_trip(Outcome& o) {
    const DwiPhantom clean = make_dwi_phantom(nested_boxes({64, 64, 64}, 0.0, 1), kB);
    const SignalModelParams fit = fit_signal_model(clean.stack);
    double worst = 0;
    for (std::size_t i = 0; i < fit.adc_map.size(); ++i)
        worst = std::max({worst, testing::rel_err(fit.s0_map[i], clean.truth.s0_map[i]),
                          testing::rel_err(fit.adc_map[i], clean.truth.adc_map[i])});
    o.require(worst < 1e-6, "noiseless relative error");

    const DwiPhantom noisy = make_dwi_phantom(nested_boxes({64, 64, 64}, 0.01, 2), kB);
    const SignalModelParams nfit = fit_signal_model(noisy.stack);
    std::vector<double> err;
    for (std::size_t i = 0; i < nfit.adc_map.size(); ++i)
        if (noisy.foreground[i] > 0) err.push_back(testing::rel_err(nfit.adc_map[i], noisy.truth.adc_map[i]));
    std::nth_element(err.begin(), err.begin() + err.size() / 2, err.end());
    const double median = err[err.size() / 2];
    o.require(median < 0.02, "1% noise median ADC error");
    o.detail << "noiseless max rel err " << worst << ", 1% noise median ADC rel err " << median;
}

void synthesis(Outcome& o) {
    const DwiPhantom ph = make_dwi_phantom(nested_boxes({32, 32, 16}, 0.0, 3), kB);
    const SignalModelParams fit = fit_signal_model(ph.stack);
    double worst = 0;
    for (std::size_t k = 0; k < kB.size(); ++k) {
        const Volume3D s = synthesize_signal(fit, kB[k]);
        for (std::size_t i = 0; i < s.size(); ++i)
            worst = std::max(worst, testing::rel_err(s[i], ph.stack.volumes[k][i]));
    }
    o.require(worst < 1e-6, "native re-synthesis");

    const DwiPhantom noisy = make_dwi_phantom(nested_boxes({24, 24, 12}, 0.02, 4), kB);
    std::vector<std::vector<double>> native;
    for (const auto& v : noisy.stack.volumes) native.emplace_back(v.data().begin(), v.data().end());
    double mix_worst = 0;
    for (const MixingConfig& cfg :
         {MixingConfig{}, MixingConfig{{1500.0, 2000.0}, {1.0, 0.5, 0.0, 2.0, -0.5, 1.0}}}) {
        auto synth = cfg.synthetic_b_values;
        std::sort(synth.begin(), synth.end());
        const auto want = testing::reference_cdis(kB, native, synth, cfg.resolved_coefficients(kB.size()));
        const CdisVolume got = compute_cdis(noisy.stack, cfg);
        for (std::size_t i = 0; i < want.size(); ++i) mix_worst = std::max(mix_worst, std::abs(got.data[i] - want[i]));
    }
    o.require(mix_worst <= 1e-9, "CDIs vs oracle");
    o.detail << "re-synthesis max rel err " << worst << ", CDIs max abs diff " << mix_worst;
}

// --- 5: folds --------------------------------------------------------------

void loocv_structure(Outcome& o) {
    for (std::size_t n : {2u, 10u, 252u}) {
        const auto folds = loocv_folds(n);
        o.require(folds.size() == n, "fold count");
        std::set<std::size_t> tests;
        for (const Fold& f : folds) {
            tests.insert(f.test);
            std::set<std::size_t> train(f.train.begin(), f.train.end());
            o.require(train.size() == n - 1 && f.train.size() == n - 1, "train size");
            o.require(!train.count(f.test), "train/test overlap");
            o.require(train.empty() || *train.rbegin() < n, "train index range");
        }
        o.require(tests.size() == n && *tests.rbegin() == n - 1, "test partition");
    }
    o.detail << "n = 2, 10, 252";
}

// --- 6, 7: backbone --------------------------------------------------------

void backbone_contracts(Outcome& o) {
    const Backbone net = build_backbone(BackboneConfig{});
    o.require(net.parameterized_layer_count() == 34, "34 layers");
    std::vector<StandardCube> cubes;
    for (std::uint64_t s = 0; s < 2; ++s)
        cubes.push_back({testing::random_volume(kStandardShape, 20 + s), "c" + std::to_string(s)});
    const auto batch = extract_features(net, cubes);
    bool finite = batch.size() == 2;
    for (const auto& f : batch) {
        finite = finite && f.values.size() == 512;
        for (double v : f.values) finite = finite && std::isfinite(v);
    }
    o.require(finite, "512 finite values per 224x224x25 cube");
    double worst = 0;
    for (std::size_t i = 0; i < cubes.size(); ++i) {
        const auto one = extract_features(net, std::span(&cubes[i], 1));
        for (std::size_t j = 0; j < 512; ++j) worst = std::max(worst, std::abs(one[0].values[j] - batch[i].values[j]));
    }
    o.require(worst <= 1e-5, "batched vs single");
    o.detail << "34 layers, 512 finite features, batch/single max diff " << worst;
}

void gradient_checks(Outcome& o) {
    const auto bb = testing::backbone_gradcheck(24, 3);
    o.require(bb.checked >= 20 && bb.max_rel_err < 1e-3, "backbone " + bb.worst);
    double head_worst = 0;
    std::size_t head_checked = 0;
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto h = testing::head_gradcheck(25, seed);
        head_checked += h.checked;
        head_worst = std::max(head_worst, h.max_rel_err);
        o.require(h.checked >= 20 && h.max_rel_err < 1e-4, "head " + h.worst);
    }
    o.detail << "backbone " << bb.checked << " params max rel err " << bb.max_rel_err << " (" << bb.rejected_at_kinks
             << " kink draws replaced), head " << head_checked << " params max rel err " << head_worst;
}

// --- 8: end to end ---------------------------------------------------------

std::vector<StandardCube> toy_cubes(const ToyCohort& c) {
    std::vector<StandardCube> out;
    for (std::size_t i = 0; i < c.volumes.size(); ++i)
        out.push_back(standardize(c.volumes[i], c.ids[i], c.volumes[i].dims()));
    return out;
}

// Pretrain a default backbone on a disjoint 10-per-class toy set, then LOOCV
// the default head on 20 per class.
double toy_accuracy(double effect, std::uint64_t seed) {
    const ToyCohort pre = make_toy_cohort(ToyCohortSpec{10, {32, 32, 8}, effect, seed * 2 + 1000});
    const ToyCohort eval = make_toy_cohort(ToyCohortSpec{20, {32, 32, 8}, effect, seed * 2 + 1});
    BackboneConfig bc;
    bc.seed = seed;
    Backbone net = build_backbone(bc);
    PretrainConfig pc;
    pc.epochs = 10;
    pc.seed = seed;
    pretrain_backbone(net, toy_cubes(pre), pre.labels, pc);
    const auto features = extract_features(net, toy_cubes(eval));
    HeadConfig hc;
    hc.seed = seed;
    const auto folds = run_loocv(features, eval.labels, hc, seed);
    const auto& acc = compute_metrics(confusion_matrix(folds)).accuracy;
    return double(*acc.hundredths) / 100.0;
}

void end_to_end(Outcome& o) {
    const double signal = toy_accuracy(10.0, 7);
    o.require(signal >= 95.0, "effect 10 accuracy");
    double sum = 0;
    o.detail << "effect 10: " << signal << "%; effect 0:";
    for (std::uint64_t s = 1; s <= 5; ++s) {
        const double a = toy_accuracy(0.0, s);
        o.detail << " " << a;
        sum += a;
    }
    const double mean = sum / 5.0;
    o.require(std::abs(mean - 50.0) <= 10.0, "null mean accuracy");
    o.detail << " (mean " << mean << "%)";
}

// --- 9: disclosure ---------------------------------------------------------

void disclosure(Outcome& o) {
    const std::string readme = testing::slurp(BCA_README_PATH);
    o.require(!readme.empty(), "README present");
    o.require(readme.find("87.70%") != std::string::npos, "names the 87.70% figure");
    o.require(readme.find("NOT reproducible") != std::string::npos, "states non-reproducibility");
    o.require(readme.find("dataset") != std::string::npos && readme.find("pretrained weights") != std::string::npos,
              "names the external dataset and weights");
    o.detail << BCA_README_PATH;
}

// --- 10: determinism -------------------------------------------------------

void determinism(Outcome& o) {
    configure_logging("warn", std::nullopt);
    testing::TempDir dir;
    DwiCohortSpec spec;
    spec.n_per_class = 3;
    spec.dims = {16, 16, 6};
    spec.seed = 9;
    write_dwi_phantom_cohort(spec, dir / "cohort");
    const nlohmann::json j{
        {"manifest_path", "cohort/manifest.jsonl"},
        {"modalities", {"cdis", "t2w"}},
        {"backbone_config", {{"block_counts", {1, 1, 1, 1}}, {"stage_channels", {8, 16, 32, 64}}, {"feature_dim", 64}}},
        {"head_config", {{"layer_dims", {64, 16, 1}}, {"epochs", 30}}},
        {"cube_shape", {16, 16, 8}},
        {"seed", 21}};
    testing::spit(dir / "experiment.json", j.dump(2));

    struct Artifacts {
        std::vector<std::string> files;
        std::string report;
    };
    auto run_in = [&](const std::string& out) {
        ConfigOverrides ov;
        ov.output_dir = dir / out;
        const auto cfg = load_experiment_config(dir / "experiment.json", ov);
        cmd_synth(cfg);
        cmd_extract(cfg);
        const CommandStatus s = cmd_loocv(cfg);
        const RunDirectory run = RunDirectory::existing(s.run_dir);
        Artifacts a;
        for (Modality m : cfg.modalities) {
            a.files.push_back(testing::slurp(run.folds(m)));
            a.files.push_back(testing::slurp(run.metrics(m)));
            a.files.push_back(testing::slurp(run.features(m)));
        }
        a.files.push_back(testing::slurp(run.comparison_csv()));
        a.files.push_back(testing::slurp(run.comparison_json()));
        a.report = cmd_report(run.root());
        // Repeating a command inside the same run directory leaves every artifact in place.
        cmd_loocv(cfg);
        o.require(testing::slurp(run.folds(cfg.modalities[0])) == a.files[0], "rerun in place");
        o.require(cmd_report(run.root()) == a.report, "report twice");
        return a;
    };
    const Artifacts a = run_in("first"), b = run_in("second");
    o.require(a.files == b.files, "fold, metrics and feature files");
    o.require(a.report == b.report, "report");
    o.detail << a.files.size() << " artifacts and the report byte-identical across runs";
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<void(Outcome&)>>> criteria{
        {"metrics oracle", metrics_oracle},
        {"prevalence consistency", prevalence},
        {"fit round trip", fit_round_trip},
        {"synthesis consistency", synthesis},
        {"LOOCV structure", loocv_structure},
        {"backbone contracts", backbone_contracts},
        {"gradient checks", gradient_checks},
        {"end-to-end toy cohorts", end_to_end},
        {"non-reproducibility disclosure", disclosure},
        {"determinism", determinism},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            criteria[i].second(o);
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << " [exception: " << e.what() << "]";
        }
        const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failures += !o.pass;
        std::printf("%s %2zu %-32s %8.2f s  %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, sec,
                    o.detail.str().c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria failed\n", failures, criteria.size());
    return failures ? 1 : 0;
}
