#include "bca/pipeline.hpp"

#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "bca/checkpoint.hpp"
#include "bca/config_json.hpp"
#include "bca/errors.hpp"
#include "bca/hashing.hpp"
#include "bca/volume_io.hpp"
#include "bca/volumizer.hpp"

namespace bca {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Written under a temporary name and renamed, so readers never see a partial file.
void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << text;
        if (!out.flush()) throw IoError("short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

fs::path resolve(const fs::path& p, const fs::path& base) {
    return fs::absolute(p.is_absolute() ? p : base / p).lexically_normal();
}

std::string json_text(const json& j) { return j.dump(2) + "\n"; }

spdlog::level::level_enum g_level = spdlog::level::info;

void attach_run_log(const RunDirectory& run) {
    std::vector<spdlog::sink_ptr> sinks{std::make_shared<spdlog::sinks::stderr_color_sink_mt>()};
    sinks.push_back(std::make_shared<spdlog::sinks::basic_file_sink_mt>(run.log_file().string(), false));
    auto logger = std::make_shared<spdlog::logger>("bcagrade", sinks.begin(), sinks.end());
    logger->set_level(g_level);
    logger->flush_on(spdlog::level::info);
    spdlog::set_default_logger(logger);
}

std::string now_utc() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Identity of the inputs a synthesized CDIs depends on.
std::string cdis_stamp(const PatientRecord& r, const MixingConfig& mixing) {
    json inputs = json::array();
    for (std::size_t i = 0; i < r.dwi.size(); ++i)
        inputs.push_back({{"b_value", r.b_values[i]}, {"crc32", to_hex(file_crc32(r.dwi[i]), 8)}});
    const json stamp{{"mixing_config", mixing}, {"inputs", inputs}};
    return to_hex(fnv1a64(stamp.dump()));
}

Volume3D highest_b_volume(const PatientRecord& r) {
    const auto it = std::ranges::max_element(r.b_values);
    return load_volume(r.dwi[static_cast<std::size_t>(it - r.b_values.begin())]);
}

// nullopt when the record cannot supply the modality.
std::optional<Volume3D> modality_volume(const PatientRecord& r, Modality m, const RunDirectory* run,
                                        const MixingConfig& mixing) {
    switch (m) {
        case Modality::CDIS:
            if (r.cdis) return load_volume(*r.cdis);
            if (run) {
                if (fs::exists(run->cdis_volume(r.patient_id))) return load_volume(run->cdis_volume(r.patient_id));
                return std::nullopt;
            }
            if (r.dwi.empty()) return std::nullopt;
            return compute_cdis(load_dwi_stack(r), mixing).data;
        case Modality::DWI:
            if (r.dwi.empty()) return std::nullopt;
            return highest_b_volume(r);
        case Modality::ADC:
            if (r.adc) return load_volume(*r.adc);
            if (r.dwi.size() >= 2) return compute_adc_map(load_dwi_stack(r));
            return std::nullopt;
        case Modality::T2W:
            if (r.t2w) return load_volume(*r.t2w);
            return std::nullopt;
    }
    return std::nullopt;
}

struct CubeCohort {
    std::vector<StandardCube> cubes;
    std::vector<CategorizedGrade> labels;
    std::size_t skipped = 0;
};

CubeCohort load_cubes(std::span<const PatientRecord> records, Modality m, const RunDirectory* run,
                      const ExperimentConfig& cfg) {
    CubeCohort out;
    for (const auto& r : records) {
        try {
            auto v = modality_volume(r, m, run, cfg.mixing);
            if (!v) {
                spdlog::warn("{}: no {} input, skipped{}", r.patient_id, display_name(m),
                             m == Modality::CDIS && run ? " (run synth first)" : "");
                ++out.skipped;
                continue;
            }
            out.cubes.push_back(standardize(*v, r.patient_id, cfg.cube_shape));
            out.labels.push_back(r.category());
        } catch (const Error& e) {
            spdlog::error("{}: {} input unusable, skipped: {}", r.patient_id, display_name(m), e.what());
            ++out.skipped;
        }
    }
    return out;
}

std::string cohort_hash(const CubeCohort& c) {
    std::uint64_t h = fnv1a64(std::string_view{});
    for (std::size_t i = 0; i < c.cubes.size(); ++i) {
        h = fnv1a64(c.cubes[i].source_id, h);
        h = fnv1a64(to_string(c.labels[i]), h);
        const auto data = c.cubes[i].data.data();
        h = fnv1a64(std::span(reinterpret_cast<const unsigned char*>(data.data()), data.size_bytes()), h);
    }
    return to_hex(h);
}

Backbone acquire_backbone(const ExperimentConfig& cfg, const RunDirectory& run, Modality m) {
    if (cfg.checkpoint) {
        spdlog::info("loading backbone weights from {}", cfg.checkpoint->string());
        return load_weights(*cfg.checkpoint, cfg.backbone);
    }
    Backbone net = build_backbone(cfg.backbone);
    if (!cfg.pretrain) return net;

    const fs::path path = run.backbone_checkpoint(m);
    if (fs::exists(path)) {
        try {
            spdlog::info("reusing pretrained backbone {}", path.string());
            return load_weights(path, cfg.backbone);
        } catch (const ChecksumError& e) {
            spdlog::warn("pretrained backbone {} unreadable ({}), pretraining again", path.string(), e.what());
        }
    }
    const auto records = load_manifest(cfg.pretrain->manifest_path);
    const CubeCohort cohort = load_cubes(records, m, nullptr, cfg);
    PretrainConfig pc = cfg.pretrain->config;
    pc.seed = pretrain_seed(cfg.seed, m);
    spdlog::info("pretraining {} backbone on {} volumes for {} epochs", display_name(m), cohort.cubes.size(), pc.epochs);
    const auto curve = pretrain_backbone(net, cohort.cubes, cohort.labels, pc);
    for (std::size_t e = 0; e < curve.size(); ++e) spdlog::info("pretrain epoch {}: loss {:.6f}", e + 1, curve[e]);
    fs::create_directories(path.parent_path());
    save_weights(net, path);
    return net;
}

// Paths named by the config must exist before a command touches the run directory.
void check_inputs(const ExperimentConfig& cfg) {
    if (!fs::exists(cfg.manifest_path)) throw IoError("manifest not found: " + cfg.manifest_path.string());
    if (cfg.checkpoint && !fs::exists(*cfg.checkpoint))
        throw IoError("backbone checkpoint not found: " + cfg.checkpoint->string());
    if (cfg.pretrain && !fs::exists(cfg.pretrain->manifest_path))
        throw IoError("pretrain manifest not found: " + cfg.pretrain->manifest_path.string());
}

ComparisonRow row_from_metrics(const json& j) {
    ComparisonRow row;
    row.config.modality = parse_modality(j.at("modality").get<std::string>());
    const auto& cm = j.at("confusion_matrix");
    row.confusion = {cm.at("tp").get<std::size_t>(), cm.at("fn").get<std::size_t>(), cm.at("tn").get<std::size_t>(),
                     cm.at("fp").get<std::size_t>()};
    return row;
}

}  // namespace

std::uint64_t backbone_init_seed(std::uint64_t seed) { return derive_seed(seed, "backbone.init"); }
std::uint64_t head_seed(std::uint64_t seed) { return seed; }
std::uint64_t pretrain_seed(std::uint64_t seed, Modality m) {
    return derive_seed(seed, "pretrain." + std::string(to_key(m)));
}

ModalityRunConfig ExperimentConfig::run_config(Modality m) const {
    ModalityRunConfig c;
    c.modality = m;
    c.backbone = backbone;
    c.head = head;
    if (m == Modality::CDIS) c.mixing = mixing;
    c.seed = head_seed(seed);
    return c;
}

ExperimentConfig parse_experiment_config(const std::string& text, const fs::path& base_dir,
                                         const ConfigOverrides& overrides) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(std::string("experiment config is not valid JSON: ") + e.what());
    }
    reject_unknown_keys(j,
                        {"manifest_path", "modalities", "mixing_config", "backbone_config", "head_config", "seed",
                         "output_dir", "cube_shape", "checkpoint", "pretrain"},
                        "experiment config");
    ExperimentConfig c;
    c.source_text = text;
    try {
        if (!j.contains("manifest_path")) throw Error("experiment config needs \"manifest_path\"");
        c.manifest_path = resolve(j.at("manifest_path").get<std::string>(), base_dir);
        if (auto it = j.find("modalities"); it != j.end()) {
            c.modalities.clear();
            for (const auto& m : *it) c.modalities.push_back(parse_modality(m.get<std::string>()));
        }
        if (auto it = j.find("mixing_config"); it != j.end()) c.mixing = it->get<MixingConfig>();
        if (auto it = j.find("backbone_config"); it != j.end()) c.backbone = it->get<BackboneConfig>();
        if (auto it = j.find("head_config"); it != j.end()) c.head = it->get<HeadConfig>();
        if (auto it = j.find("seed"); it != j.end()) c.seed = it->get<std::uint64_t>();
        c.output_dir = resolve(j.value("output_dir", std::string("runs")), base_dir);
        if (auto it = j.find("cube_shape"); it != j.end()) {
            const auto s = it->get<std::vector<std::size_t>>();
            if (s.size() != 3) throw Error("cube_shape must be [width, height, depth]");
            c.cube_shape = {s[0], s[1], s[2]};
        }
        if (auto it = j.find("checkpoint"); it != j.end() && !it->is_null())
            c.checkpoint = resolve(it->get<std::string>(), base_dir);
        if (auto it = j.find("pretrain"); it != j.end() && !it->is_null()) {
            json p = *it;
            if (!p.is_object() || !p.contains("manifest_path")) throw Error("pretrain needs \"manifest_path\"");
            if (p.contains("seed")) throw Error("pretrain seed is derived from the top-level seed");
            PretrainSpec spec;
            spec.manifest_path = resolve(p.at("manifest_path").get<std::string>(), base_dir);
            p.erase("manifest_path");
            spec.config = p.get<PretrainConfig>();
            c.pretrain = spec;
        }
    } catch (const json::exception& e) {
        throw Error(std::string("experiment config: ") + e.what());
    }

    if (overrides.output_dir) c.output_dir = fs::absolute(*overrides.output_dir).lexically_normal();
    if (overrides.seed) c.seed = *overrides.seed;
    if (!overrides.modalities.empty()) c.modalities = overrides.modalities;

    if (c.modalities.empty()) throw Error("experiment config requests no modality");
    if (std::set<Modality>(c.modalities.begin(), c.modalities.end()).size() != c.modalities.size())
        throw Error("experiment config lists a modality twice");
    if (c.checkpoint && c.pretrain) throw Error("give either a backbone checkpoint or a pretrain cohort, not both");
    if (c.cube_shape.width < 1 || c.cube_shape.height < 1 || c.cube_shape.depth < 1)
        throw Error("cube_shape entries must be positive");
    c.backbone.seed = backbone_init_seed(c.seed);
    c.head.seed = head_seed(c.seed);
    for (Modality m : c.modalities) c.run_config(m).validate();
    return c;
}

ExperimentConfig load_experiment_config(const fs::path& path, const ConfigOverrides& overrides) {
    const fs::path abs = fs::absolute(path).lexically_normal();
    ExperimentConfig c = parse_experiment_config(read_text(abs), abs.parent_path(), overrides);
    c.source_path = abs;
    return c;
}

json semantic_json(const ExperimentConfig& c) {
    json modalities = json::array();
    for (Modality m : c.modalities) modalities.push_back(to_key(m));
    json j{{"manifest_path", c.manifest_path.lexically_normal().string()},
           {"modalities", modalities},
           {"mixing_config", c.mixing},
           {"backbone_config", c.backbone},
           {"head_config", c.head},
           {"seed", c.seed},
           {"cube_shape", {c.cube_shape.width, c.cube_shape.height, c.cube_shape.depth}},
           {"checkpoint", c.checkpoint ? json(c.checkpoint->lexically_normal().string()) : json(nullptr)},
           {"pretrain", nullptr}};
    if (c.pretrain) {
        json p = c.pretrain->config;
        p.erase("seed");
        p["manifest_path"] = c.pretrain->manifest_path.lexically_normal().string();
        j["pretrain"] = p;
    }
    return j;
}

std::string config_hash(const ExperimentConfig& c) { return to_hex(fnv1a64(semantic_json(c).dump())); }

RunDirectory RunDirectory::open(const ExperimentConfig& config) {
    const std::string hash = config_hash(config);
    RunDirectory run(config.output_dir / ("run-" + hash));
    fs::create_directories(run.root());
    if (!fs::exists(run.run_info())) {
        write_text(run.snapshot(), config.source_text);
        write_text(run.run_info(),
                   json_text({{"config_hash", hash}, {"config", semantic_json(config)}, {"created_at", now_utc()}}));
    } else {
        const json info = json::parse(read_text(run.run_info()));
        if (info.value("config_hash", std::string()) != hash)
            throw Error("run directory " + run.root().string() + " belongs to a different config");
    }
    return run;
}

RunDirectory RunDirectory::existing(const fs::path& root) {
    RunDirectory run(fs::absolute(root).lexically_normal());
    if (!fs::exists(run.run_info())) throw IoError("not a run directory (no run.json): " + run.root().string());
    return run;
}

fs::path RunDirectory::features(Modality m) const {
    return root_ / "features" / (std::string(to_key(m)) + ".features");
}
fs::path RunDirectory::feature_ids(Modality m) const {
    return root_ / "features" / (std::string(to_key(m)) + ".ids.txt");
}
fs::path RunDirectory::backbone_checkpoint(Modality m) const {
    return root_ / "checkpoints" / ("backbone-" + std::string(to_key(m)) + ".ckpt");
}
fs::path RunDirectory::folds(Modality m) const { return root_ / "folds" / (std::string(to_key(m)) + ".csv"); }
fs::path RunDirectory::metrics(Modality m) const { return root_ / "metrics" / (std::string(to_key(m)) + ".json"); }

void write_feature_file(const FeatureFile& file, const fs::path& path) {
    if (file.features.size() != file.labels.size()) throw PreconditionError("features and labels differ in length");
    const std::size_t dim = file.features.empty() ? 0 : file.features.front().values.size();
    std::vector<double> flat;
    flat.reserve(file.features.size() * dim);
    json ids = json::array(), labels = json::array();
    for (std::size_t i = 0; i < file.features.size(); ++i) {
        if (file.features[i].values.size() != dim) throw ShapeError("feature vectors differ in length");
        flat.insert(flat.end(), file.features[i].values.begin(), file.features[i].values.end());
        ids.push_back(file.features[i].patient_id);
        labels.push_back(to_string(file.labels[i]));
    }
    Checkpoint ck;
    ck.meta = {{"kind", "features"}, {"key", file.key}, {"patient_ids", ids}, {"labels", labels}};
    ck.tensors.push_back(StoredTensor::from("features", {file.features.size(), dim}, std::span<const double>(flat)));
    fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    write_checkpoint(ck, tmp);
    fs::rename(tmp, path);
}

FeatureFile read_feature_file(const fs::path& path) {
    const Checkpoint ck = read_checkpoint(path);
    if (ck.meta.value("kind", std::string()) != "features") throw FormatError(path.string() + " is not a feature file");
    const StoredTensor& t = ck.find("features");
    if (t.shape.size() != 2) throw FormatError("feature tensor must be two-dimensional");
    const auto& ids = ck.meta.at("patient_ids");
    const auto& labels = ck.meta.at("labels");
    if (ids.size() != t.shape[0] || labels.size() != t.shape[0])
        throw FormatError("feature file index does not match its matrix");
    std::vector<double> flat(t.count());
    t.copy_to(std::span<double>(flat));
    FeatureFile out;
    out.key = ck.meta.at("key");
    for (std::size_t i = 0; i < t.shape[0]; ++i) {
        FeatureVector f;
        f.patient_id = ids[i].get<std::string>();
        f.values.assign(flat.begin() + static_cast<std::ptrdiff_t>(i * t.shape[1]),
                        flat.begin() + static_cast<std::ptrdiff_t>((i + 1) * t.shape[1]));
        out.features.push_back(std::move(f));
        out.labels.push_back(parse_categorized_grade(labels[i].get<std::string>()));
    }
    return out;
}

void configure_logging(const std::string& level, const std::optional<fs::path>& log_file) {
    g_level = spdlog::level::from_str(level);
    if (g_level == spdlog::level::off && level != "off") throw Error("unknown log level \"" + level + "\"");
    std::vector<spdlog::sink_ptr> sinks{std::make_shared<spdlog::sinks::stderr_color_sink_mt>()};
    if (log_file) sinks.push_back(std::make_shared<spdlog::sinks::basic_file_sink_mt>(log_file->string(), false));
    auto logger = std::make_shared<spdlog::logger>("bcagrade", sinks.begin(), sinks.end());
    logger->set_level(g_level);
    spdlog::set_default_logger(logger);
}

CommandStatus cmd_synth(const ExperimentConfig& cfg) {
    check_inputs(cfg);
    const RunDirectory run = RunDirectory::open(cfg);
    attach_run_log(run);
    CommandStatus status;
    status.run_dir = run.root();
    const auto records = load_manifest(cfg.manifest_path);
    spdlog::info("synth: {} patients, run {}", records.size(), run.root().string());
    for (const auto& r : records) {
        if (r.dwi.empty()) {
            if (r.cdis) {
                spdlog::info("{}: precomputed CDIs given, nothing to synthesize", r.patient_id);
                ++status.reused;
            } else {
                spdlog::warn("{}: no DWI series, skipped", r.patient_id);
                ++status.skipped;
            }
            continue;
        }
        try {
            const std::string stamp = cdis_stamp(r, cfg.mixing);
            const fs::path out = run.cdis_volume(r.patient_id), stamp_path = run.cdis_stamp(r.patient_id);
            if (fs::exists(out) && fs::exists(stamp_path) &&
                json::parse(read_text(stamp_path)).value("input_hash", std::string()) == stamp) {
                spdlog::debug("{}: CDIs up to date", r.patient_id);
                ++status.reused;
                continue;
            }
            const CdisVolume cdis = compute_cdis(load_dwi_stack(r), cfg.mixing);
            fs::create_directories(out.parent_path());
            const fs::path tmp = out.string() + ".tmp";
            save_volume(cdis.data, tmp);
            fs::rename(tmp, out);
            write_text(stamp_path,
                       json_text({{"input_hash", stamp}, {"mixing_config", cfg.mixing}, {"seed", cfg.seed}}));
            spdlog::info("{}: CDIs written", r.patient_id);
            ++status.processed;
        } catch (const Error& e) {
            spdlog::error("{}: CDIs synthesis failed, skipped: {}", r.patient_id, e.what());
            ++status.skipped;
        }
    }
    spdlog::info("synth: {} written, {} up to date, {} skipped", status.processed, status.reused, status.skipped);
    if (status.processed + status.reused == 0 && !records.empty()) status.exit_code = 1;
    else if (status.skipped > 0) status.exit_code = 2;
    return status;
}

CommandStatus cmd_extract(const ExperimentConfig& cfg) {
    check_inputs(cfg);
    const RunDirectory run = RunDirectory::open(cfg);
    attach_run_log(run);
    CommandStatus status;
    status.run_dir = run.root();
    const auto records = load_manifest(cfg.manifest_path);
    for (Modality m : cfg.modalities) {
        const CubeCohort cohort = load_cubes(records, m, &run, cfg);
        status.skipped += cohort.skipped;
        if (cohort.cubes.empty()) {
            spdlog::error("extract: no patient has a usable {} input", display_name(m));
            status.exit_code = 1;
            return status;
        }
        Backbone net = acquire_backbone(cfg, run, m);
        const json key{{"weights_crc32", to_hex(weights_checksum(net), 8)},
                       {"modality", to_key(m)},
                       {"cohort_hash", cohort_hash(cohort)},
                       {"seed", cfg.seed},
                       {"cube_shape", {cfg.cube_shape.width, cfg.cube_shape.height, cfg.cube_shape.depth}}};
        const fs::path path = run.features(m);
        if (fs::exists(path)) {
            try {
                if (read_feature_file(path).key == key) {
                    spdlog::info("extract: {} features cached", display_name(m));
                    status.reused += cohort.cubes.size();
                    continue;
                }
                spdlog::info("extract: {} feature cache is stale, recomputing", display_name(m));
            } catch (const Error& e) {
                spdlog::warn("extract: {} feature cache corrupt ({}), recomputing", display_name(m), e.what());
            }
        }
        spdlog::info("extract: {} features for {} patients", display_name(m), cohort.cubes.size());
        FeatureFile file{key, extract_features(net, cohort.cubes), cohort.labels};
        write_feature_file(file, path);
        std::string ids;
        for (const auto& f : file.features) ids += f.patient_id + "\n";
        write_text(run.feature_ids(m), ids);
        status.processed += cohort.cubes.size();
    }
    if (status.skipped > 0) status.exit_code = 2;
    return status;
}

CommandStatus cmd_loocv(const ExperimentConfig& cfg) {
    check_inputs(cfg);
    const RunDirectory run = RunDirectory::open(cfg);
    attach_run_log(run);
    CommandStatus status;
    status.run_dir = run.root();
    std::vector<ModalityRunConfig> configs;
    for (Modality m : cfg.modalities) configs.push_back(cfg.run_config(m));
    const FeatureProvider provider = [&](const ModalityRunConfig& c) {
        const fs::path path = run.features(c.modality);
        if (!fs::exists(path))
            throw IncompleteRunError("no " + std::string(display_name(c.modality)) + " features in " +
                                     run.root().string() + " (run extract first)");
        FeatureFile f = read_feature_file(path);
        return ModalityFeatures{std::move(f.features), std::move(f.labels)};
    };
    const ComparisonTable table = compare_modalities(configs, provider);
    for (const auto& row : table.rows) {
        write_text(run.folds(row.config.modality), fold_results_csv(row.folds));
        write_text(run.metrics(row.config.modality),
                   json_text({{"modality", to_key(row.config.modality)},
                              {"display_name", display_name(row.config.modality)},
                              {"cohort_size", table.cohort.size()},
                              {"confusion_matrix", to_json_value(row.confusion)},
                              {"metrics", to_json_value(row.metrics)},
                              {"config", to_json_value(row.config)}}));
        spdlog::info("loocv: {} accuracy {} sensitivity {} specificity {}", display_name(row.config.modality),
                     row.metrics.accuracy.str(), row.metrics.sensitivity.str(), row.metrics.specificity.str());
        status.processed += row.folds.size();
    }
    if (cfg.modalities.size() > 1) {
        write_text(run.comparison_csv(), comparison_csv(table));
        write_text(run.comparison_json(), json_text(comparison_json(table)));
    }
    return status;
}

std::string cmd_report(const fs::path& run_dir) {
    const RunDirectory run = RunDirectory::existing(run_dir);
    const json info = json::parse(read_text(run.run_info()));
    std::vector<Modality> modalities;
    for (const auto& m : info.at("config").at("modalities")) modalities.push_back(parse_modality(m.get<std::string>()));

    std::vector<ComparisonRow> rows;
    std::vector<json> metrics;
    std::size_t cohort = 0;
    for (Modality m : modalities) {
        if (!fs::exists(run.folds(m)))
            throw IncompleteRunError("incomplete run: missing fold results " + run.folds(m).string());
        if (!fs::exists(run.metrics(m)))
            throw IncompleteRunError("incomplete run: missing metrics " + run.metrics(m).string());
        const auto folds = parse_fold_results_csv(read_text(run.folds(m)));
        json j = json::parse(read_text(run.metrics(m)));
        ComparisonRow row = row_from_metrics(j);
        if (row.confusion != confusion_matrix(folds))
            throw FormatError("fold results and metrics disagree for " + std::string(display_name(m)));
        cohort = j.at("cohort_size").get<std::size_t>();
        rows.push_back(row);
        metrics.push_back(std::move(j));
    }
    // Same order as the persisted comparison: accuracy descending, ties by request order.
    std::vector<std::size_t> order(rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) {
        const auto& ca = rows[a].confusion;
        const auto& cb = rows[b].confusion;
        return static_cast<unsigned __int128>(ca.tp + ca.tn) * cb.total() >
               static_cast<unsigned __int128>(cb.tp + cb.tn) * ca.total();
    });

    std::vector<std::array<std::string, 4>> cells{{"Modality", "Accuracy", "Sensitivity", "Specificity"}};
    auto pct = [](const json& v) {
        const std::string s = v.get<std::string>();
        return s == "n/a" ? s : s + "%";
    };
    for (std::size_t i : order) {
        const auto& mj = metrics[i].at("metrics");
        cells.push_back({metrics[i].at("display_name").get<std::string>(), pct(mj.at("accuracy")),
                         pct(mj.at("sensitivity")), pct(mj.at("specificity"))});
    }
    std::array<std::size_t, 4> width{};
    for (const auto& r : cells)
        for (std::size_t k = 0; k < 4; ++k) width[k] = std::max(width[k], r[k].size());
    std::string out = "Run " + info.at("config_hash").get<std::string>() + ", cohort of " + std::to_string(cohort) +
                      " patients, seed " + std::to_string(info.at("config").at("seed").get<std::uint64_t>()) + "\n";
    for (std::size_t r = 0; r < cells.size(); ++r) {
        std::string line;
        for (std::size_t k = 0; k < 4; ++k) {
            std::string cell = cells[r][k];
            cell.resize(width[k], ' ');
            line += (k ? "  " : "") + cell;
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        out += line + "\n";
        if (r == 0) {
            std::size_t total = 3 * 2;
            for (auto w : width) total += w;
            out += std::string(total, '-') + "\n";
        }
    }
    return out;
}

}  // namespace bca
