#include "bca/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "bca/errors.hpp"
#include "bca/hashing.hpp"
#include "bca/volume_io.hpp"

namespace bca {

void PhantomSpec::validate() const {
    if (dims.voxels() == 0) throw PreconditionError("phantom dimensions must be positive");
    if (background_s0 < 0 || background_adc < 0) throw PreconditionError("background S0 and ADC must be >= 0");
    if (!(noise_sigma >= 0)) throw PreconditionError("noise sigma must be >= 0");
    for (const auto& r : regions) {
        const auto& b = r.box;
        if (b.x0 >= b.x1 || b.y0 >= b.y1 || b.z0 >= b.z1) throw PreconditionError("phantom region box is empty");
        if (b.x1 > dims.width || b.y1 > dims.height || b.z1 > dims.depth)
            throw PreconditionError("phantom region box exceeds the grid");
        if (r.s0 < 0 || r.adc < 0) throw PreconditionError("region S0 and ADC must be >= 0");
    }
}

DwiPhantom make_dwi_phantom(const PhantomSpec& spec, std::span<const double> b_values) {
    spec.validate();
    if (b_values.size() < 2) throw PreconditionError("a DWI phantom needs at least 2 b-values");

    DwiPhantom out{{}, {Volume3D(spec.dims, {}, spec.background_s0), Volume3D(spec.dims, {}, spec.background_adc)},
                   Volume3D(spec.dims, {}, 0.0)};
    for (const auto& r : spec.regions)
        for (std::size_t z = r.box.z0; z < r.box.z1; ++z)
            for (std::size_t y = r.box.y0; y < r.box.y1; ++y)
                for (std::size_t x = r.box.x0; x < r.box.x1; ++x) {
                    out.truth.s0_map.at(x, y, z) = r.s0;
                    out.truth.adc_map.at(x, y, z) = r.adc;
                    out.foreground.at(x, y, z) = 1.0;
                }

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    out.stack.b_values.assign(b_values.begin(), b_values.end());
    for (double b : b_values) {
        if (b < 0) throw PreconditionError("b-values must be non-negative");
        Volume3D s(spec.dims);
        for (std::size_t i = 0; i < s.size(); ++i) {
            const double s0 = out.truth.s0_map[i];
            double v = s0 * std::exp(-b * out.truth.adc_map[i]);
            if (spec.noise_sigma > 0) v = std::max(0.0, v + spec.noise_sigma * s0 * unit(rng));
            s[i] = v;
        }
        out.stack.volumes.push_back(std::move(s));
    }
    return out;
}

void ToyCohortSpec::validate() const {
    if (n_per_class == 0) throw PreconditionError("toy cohort needs at least one patient per class");
    if (cube_dims.width == 0 || cube_dims.height == 0 || cube_dims.depth == 0)
        throw PreconditionError("toy cube dimensions must be positive");
    if (!(effect_size >= 0) || !std::isfinite(effect_size)) throw PreconditionError("effect size must be >= 0");
}

bool in_toy_sphere(const Dims& d, std::size_t x, std::size_t y, std::size_t z) {
    auto term = [](std::size_t i, std::size_t n) {
        const double c = 0.5 * static_cast<double>(n - 1);
        const double r = std::max(0.25 * static_cast<double>(n), 0.5);
        const double u = (static_cast<double>(i) - c) / r;
        return u * u;
    };
    return term(x, d.width) + term(y, d.height) + term(z, d.depth) <= 1.0;
}

ToyCohort make_toy_cohort(const ToyCohortSpec& spec, const std::optional<std::filesystem::path>& output_dir,
                          Modality modality) {
    spec.validate();
    ToyCohort cohort;
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> noise(0.0, kToyNoiseSigma);
    const Dims d = spec.cube_dims;
    const double shift = spec.effect_size * kToyNoiseSigma;
    for (std::size_t i = 0; i < 2 * spec.n_per_class; ++i) {
        const auto label = i % 2 == 0 ? CategorizedGrade::LowIntermediate : CategorizedGrade::High;
        Volume3D v(d);
        for (std::size_t z = 0; z < d.depth; ++z)
            for (std::size_t y = 0; y < d.height; ++y)
                for (std::size_t x = 0; x < d.width; ++x) {
                    double mean = kToyBackgroundMean;
                    if (label == CategorizedGrade::High && in_toy_sphere(d, x, y, z)) mean += shift;
                    v.at(x, y, z) = mean + noise(rng);
                }
        char id[32];
        std::snprintf(id, sizeof id, "toy-%04zu", i);
        cohort.ids.emplace_back(id);
        cohort.volumes.push_back(std::move(v));
        cohort.labels.push_back(label);
    }

    if (output_dir) {
        const auto dir = *output_dir;
        for (std::size_t i = 0; i < cohort.ids.size(); ++i) {
            const auto rel = std::filesystem::path("volumes") / (cohort.ids[i] + ".vol");
            save_volume(cohort.volumes[i], dir / rel);
            PatientRecord r;
            r.patient_id = cohort.ids[i];
            r.institution = "toy";
            r.grade = cohort.labels[i] == CategorizedGrade::High ? SbrGrade::GradeIII
                                                                 : (i % 4 == 0 ? SbrGrade::GradeII : SbrGrade::GradeI);
            switch (modality) {
                case Modality::CDIS: r.cdis = rel; break;
                case Modality::T2W: r.t2w = rel; break;
                case Modality::ADC: r.adc = rel; break;
                case Modality::DWI: throw PreconditionError("toy cohorts hold single volumes; use a DWI phantom cohort");
            }
            cohort.manifest.push_back(std::move(r));
        }
        cohort.manifest_path = dir / "manifest.jsonl";
        write_manifest(cohort.manifest, *cohort.manifest_path);
    }
    return cohort;
}

std::vector<PatientRecord> write_dwi_phantom_cohort(const DwiCohortSpec& spec, const std::filesystem::path& output_dir) {
    if (spec.n_per_class == 0) throw PreconditionError("phantom cohort needs at least one patient per class");
    const Dims d = spec.dims;
    if (d.width < 4 || d.height < 4 || d.depth < 2) throw PreconditionError("phantom cohort grid is too small");
    std::vector<PatientRecord> records;
    for (std::size_t i = 0; i < 2 * spec.n_per_class; ++i) {
        const bool high = i % 2 == 1;
        PhantomSpec ps;
        ps.dims = d;
        ps.background_s0 = 200.0;
        ps.background_adc = 2.5e-3;
        ps.regions.push_back({{d.width / 8, d.height / 8, 0, d.width - d.width / 8, d.height - d.height / 8, d.depth},
                              800.0, 1.5e-3});
        ps.regions.push_back({{d.width / 3, d.height / 3, d.depth / 4, 2 * d.width / 3, 2 * d.height / 3,
                               std::max(d.depth / 4 + 1, 3 * d.depth / 4)},
                              1000.0, high ? 0.8e-3 : 1.4e-3});
        ps.noise_sigma = spec.noise_sigma;
        ps.seed = derive_seed(spec.seed, "dwi-phantom:" + std::to_string(i));
        const DwiPhantom ph = make_dwi_phantom(ps, spec.b_values);

        char id[32];
        std::snprintf(id, sizeof id, "ph-%04zu", i);
        PatientRecord r;
        r.patient_id = id;
        r.institution = "phantom";
        r.grade = high ? SbrGrade::GradeIII : (i % 4 == 0 ? SbrGrade::GradeII : SbrGrade::GradeI);
        r.b_values = spec.b_values;
        const std::filesystem::path base = std::filesystem::path("volumes") / id;
        for (std::size_t k = 0; k < ph.stack.volumes.size(); ++k) {
            const auto rel = base / ("dwi_b" + std::to_string(static_cast<long long>(spec.b_values[k])) + ".vol");
            save_volume(ph.stack.volumes[k], output_dir / rel);
            r.dwi.push_back(rel);
        }
        r.t2w = base / "t2w.vol";
        save_volume(ph.stack.volumes.front(), output_dir / *r.t2w);
        r.adc = base / "adc.vol";
        save_volume(ph.truth.adc_map, output_dir / *r.adc);
        records.push_back(std::move(r));
    }
    write_manifest(records, output_dir / "manifest.jsonl");
    return records;
}

}  // namespace bca
