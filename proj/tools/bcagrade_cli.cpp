#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <iostream>

#include "bca/errors.hpp"
#include "bca/phantom.hpp"
#include "bca/pipeline.hpp"

namespace {

struct RunOptions {
    std::string config;
    std::string output_dir;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> modalities;

    bca::ExperimentConfig load() const {
        bca::ConfigOverrides o;
        if (!output_dir.empty()) o.output_dir = output_dir;
        o.seed = seed;
        for (const auto& m : modalities) o.modalities.push_back(bca::parse_modality(m));
        return bca::load_experiment_config(config, o);
    }
};

void add_run_options(CLI::App* cmd, RunOptions& opts, bool config_required = true) {
    auto* c = cmd->add_option("-c,--config", opts.config, "experiment config (JSON)")->check(CLI::ExistingFile);
    if (config_required) c->required();
    cmd->add_option("-o,--output-dir", opts.output_dir, "override the config's output directory");
    cmd->add_option("-s,--seed", opts.seed, "override the config's seed");
    cmd->add_option("-m,--modality", opts.modalities, "modality to run (cdis, dwi, t2w, adc); repeatable");
}

int report_status(const char* name, const bca::CommandStatus& s) {
    std::cout << name << ": " << s.processed << " processed, " << s.reused << " reused, " << s.skipped
              << " skipped; run directory " << s.run_dir.string() << "\n";
    return s.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bladder cancer grading from diffusion MRI"};
    app.require_subcommand(1);
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error, critical, off")->capture_default_str();

    RunOptions synth_opts, extract_opts, loocv_opts, all_opts, report_opts;
    auto* synth = app.add_subcommand("synth", "synthesize CDIs volumes for every patient with DWI");
    add_run_options(synth, synth_opts);
    auto* extract = app.add_subcommand("extract", "extract backbone features per modality");
    add_run_options(extract, extract_opts);
    auto* loocv = app.add_subcommand("loocv", "leave-one-out evaluation of the grade head");
    add_run_options(loocv, loocv_opts);
    auto* all = app.add_subcommand("run", "synth (when CDIs is requested), extract, loocv and report");
    add_run_options(all, all_opts);

    auto* report = app.add_subcommand("report", "print the metrics table of a finished run");
    std::string run_dir;
    report->add_option("-r,--run-dir", run_dir, "run directory")->check(CLI::ExistingDirectory);
    add_run_options(report, report_opts, false);

    auto* phantom = app.add_subcommand("phantom", "write a synthetic cohort with a manifest");
    std::string kind = "toy", phantom_dir, phantom_modality = "cdis";
    std::size_t n_per_class = 20;
    double effect = 10.0;
    std::vector<std::size_t> dims;
    std::uint64_t phantom_seed = 0;
    phantom->add_option("--kind", kind, "toy (blob cubes) or dwi (DWI stacks with T2w and ADC)")
        ->check(CLI::IsMember({"toy", "dwi"}))
        ->capture_default_str();
    phantom->add_option("-o,--output-dir", phantom_dir, "destination directory")->required();
    phantom->add_option("-n,--n-per-class", n_per_class, "patients per class")->capture_default_str();
    phantom->add_option("--effect-size", effect, "toy blob contrast in noise sigmas")->capture_default_str();
    phantom->add_option("--dims", dims, "width height depth")->expected(3);
    phantom->add_option("--modality", phantom_modality, "manifest key of toy volumes")->capture_default_str();
    phantom->add_option("-s,--seed", phantom_seed, "generator seed")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        bca::configure_logging(log_level, std::nullopt);
        if (*synth) return report_status("synth", bca::cmd_synth(synth_opts.load()));
        if (*extract) return report_status("extract", bca::cmd_extract(extract_opts.load()));
        if (*loocv) return report_status("loocv", bca::cmd_loocv(loocv_opts.load()));
        if (*all) {
            const auto cfg = all_opts.load();
            int worst = 0;
            const bool wants_cdis =
                std::ranges::find(cfg.modalities, bca::Modality::CDIS) != cfg.modalities.end();
            for (int step = wants_cdis ? 0 : 1; step < 3; ++step) {
                const bca::CommandStatus s = step == 0   ? bca::cmd_synth(cfg)
                                             : step == 1 ? bca::cmd_extract(cfg)
                                                         : bca::cmd_loocv(cfg);
                const int code = report_status(step == 0 ? "synth" : step == 1 ? "extract" : "loocv", s);
                if (code == 1) return 1;
                worst = std::max(worst, code);
                if (step == 2) std::cout << bca::cmd_report(s.run_dir);
            }
            return worst;
        }
        if (*report) {
            if (run_dir.empty() == report_opts.config.empty())
                throw bca::Error("report needs exactly one of --run-dir or --config");
            if (run_dir.empty()) {
                const auto cfg = report_opts.load();
                run_dir = (cfg.output_dir / ("run-" + bca::config_hash(cfg))).string();
            }
            std::cout << bca::cmd_report(run_dir);
            return 0;
        }
        if (*phantom) {
            if (kind == "toy") {
                bca::ToyCohortSpec spec;
                spec.n_per_class = n_per_class;
                spec.effect_size = effect;
                spec.seed = phantom_seed;
                if (!dims.empty()) spec.cube_dims = {dims[0], dims[1], dims[2]};
                const auto cohort = bca::make_toy_cohort(spec, phantom_dir, bca::parse_modality(phantom_modality));
                std::cout << "wrote " << cohort.ids.size() << " toy volumes, manifest " << cohort.manifest_path->string()
                          << "\n";
            } else {
                bca::DwiCohortSpec spec;
                spec.n_per_class = n_per_class;
                spec.seed = phantom_seed;
                if (!dims.empty()) spec.dims = {dims[0], dims[1], dims[2]};
                const auto records = bca::write_dwi_phantom_cohort(spec, phantom_dir);
                std::cout << "wrote " << records.size() << " DWI phantom patients to " << phantom_dir << "\n";
            }
            return 0;
        }
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 1;
}
