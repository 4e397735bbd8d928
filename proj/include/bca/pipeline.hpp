#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bca/backbone.hpp"
#include "bca/cdis.hpp"
#include "bca/errors.hpp"
#include "bca/evalkit.hpp"
#include "bca/grade_head.hpp"
#include "bca/ingest.hpp"

namespace bca {

struct PretrainSpec {
    std::filesystem::path manifest_path;  // cohort disjoint from the evaluation manifest
    PretrainConfig config;
};

/// One experiment: a JSON document. Relative paths resolve against the
/// directory holding the config file.
struct ExperimentConfig {
    std::filesystem::path source_path;
    std::string source_text;  // verbatim bytes of the config file

    std::filesystem::path manifest_path;
    std::vector<Modality> modalities{Modality::CDIS};
    MixingConfig mixing;
    BackboneConfig backbone;
    HeadConfig head;
    std::uint64_t seed = 0;
    std::filesystem::path output_dir{"runs"};
    Dims cube_shape = kStandardShape;
    std::optional<std::filesystem::path> checkpoint;
    std::optional<PretrainSpec> pretrain;

    /// Modality-level run config; seeds follow the documented derivations.
    ModalityRunConfig run_config(Modality m) const;
};

struct ConfigOverrides {
    std::optional<std::filesystem::path> output_dir;
    std::optional<std::uint64_t> seed;
    std::vector<Modality> modalities;
};

ExperimentConfig parse_experiment_config(const std::string& text, const std::filesystem::path& base_dir,
                                         const ConfigOverrides& overrides = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path, const ConfigOverrides& overrides = {});

/// Canonical form of every field that affects results; paths are absolute and
/// lexically normalised, the output directory is excluded.
nlohmann::json semantic_json(const ExperimentConfig& config);

/// 16 hex digits of FNV-1a over semantic_json().
std::string config_hash(const ExperimentConfig& config);

/// Seed derivations from the single top-level seed.
std::uint64_t backbone_init_seed(std::uint64_t seed);
std::uint64_t head_seed(std::uint64_t seed);
std::uint64_t pretrain_seed(std::uint64_t seed, Modality m);

/// <output_dir>/run-<config hash>. Files are written once and reused.
class RunDirectory {
public:
    /// Creates the directory, the verbatim config snapshot and run.json on
    /// first use; afterwards checks that run.json names the same hash.
    static RunDirectory open(const ExperimentConfig& config);
    /// An existing run directory; throws IoError if run.json is missing.
    static RunDirectory existing(const std::filesystem::path& root);

    const std::filesystem::path& root() const noexcept { return root_; }
    std::filesystem::path snapshot() const { return root_ / "config.json"; }
    std::filesystem::path run_info() const { return root_ / "run.json"; }
    std::filesystem::path log_file() const { return root_ / "log.txt"; }
    std::filesystem::path cdis_volume(const std::string& id) const { return root_ / "cdis" / (id + ".vol"); }
    std::filesystem::path cdis_stamp(const std::string& id) const { return root_ / "cdis" / (id + ".json"); }
    std::filesystem::path features(Modality m) const;
    std::filesystem::path feature_ids(Modality m) const;
    std::filesystem::path backbone_checkpoint(Modality m) const;
    std::filesystem::path folds(Modality m) const;
    std::filesystem::path metrics(Modality m) const;
    std::filesystem::path comparison_csv() const { return root_ / "comparison.csv"; }
    std::filesystem::path comparison_json() const { return root_ / "comparison.json"; }

private:
    explicit RunDirectory(std::filesystem::path root) : root_(std::move(root)) {}
    std::filesystem::path root_;
};

/// Outcome of one command: 0 success, 1 fatal, 2 partial success with skips.
struct CommandStatus {
    int exit_code = 0;
    std::size_t processed = 0;
    std::size_t reused = 0;
    std::size_t skipped = 0;
    std::filesystem::path run_dir;
};

CommandStatus cmd_synth(const ExperimentConfig& config);
CommandStatus cmd_extract(const ExperimentConfig& config);
CommandStatus cmd_loocv(const ExperimentConfig& config);

/// Text table rendered from persisted results only. Throws IncompleteRunError.
std::string cmd_report(const std::filesystem::path& run_dir);

class IncompleteRunError : public Error {
public:
    using Error::Error;
};

/// Persisted feature matrix of one modality.
struct FeatureFile {
    nlohmann::json key;  // cache key
    std::vector<FeatureVector> features;
    std::vector<CategorizedGrade> labels;
};

void write_feature_file(const FeatureFile& file, const std::filesystem::path& path);
FeatureFile read_feature_file(const std::filesystem::path& path);

/// Attaches a file sink for the run log and sets the global level.
void configure_logging(const std::string& level, const std::optional<std::filesystem::path>& log_file);

}  // namespace bca
