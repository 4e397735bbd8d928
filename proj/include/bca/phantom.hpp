#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bca/cdis.hpp"
#include "bca/ingest.hpp"
#include "bca/volume.hpp"

namespace bca {

/// Half-open voxel box [lo, hi) along each axis.
struct Box {
    std::size_t x0 = 0, y0 = 0, z0 = 0;
    std::size_t x1 = 0, y1 = 0, z1 = 0;

    bool contains(std::size_t x, std::size_t y, std::size_t z) const noexcept {
        return x >= x0 && x < x1 && y >= y0 && y < y1 && z >= z0 && z < z1;
    }
};

struct PhantomRegion {
    Box box;
    double s0 = 0.0;
    double adc = 0.0;  // mm^2/s
};

/// Regions are painted in order; later regions overwrite earlier ones.
struct PhantomSpec {
    Dims dims;
    std::vector<PhantomRegion> regions;
    double background_s0 = 0.0;
    double background_adc = 0.0;
    /// Standard deviation of the additive noise as a fraction of the voxel's S0.
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct DwiPhantom {
    DwiStack stack;
    SignalModelParams truth;
    /// 1 inside any region, 0 in the background.
    Volume3D foreground;
};

/// Noise-free signals S0 * exp(-b * ADC) plus Gaussian noise, clamped at 0.
DwiPhantom make_dwi_phantom(const PhantomSpec& spec, std::span<const double> b_values);

struct ToyCohortSpec {
    std::size_t n_per_class = 20;
    Dims cube_dims{32, 32, 8};
    /// Sphere mean offset over the background, in units of the voxel noise sigma.
    double effect_size = 10.0;
    std::uint64_t seed = 0;

    void validate() const;
};

inline constexpr double kToyBackgroundMean = 100.0;
inline constexpr double kToyNoiseSigma = 10.0;

struct ToyCohort {
    std::vector<std::string> ids;
    std::vector<Volume3D> volumes;
    std::vector<CategorizedGrade> labels;
    /// Filled when the cohort was written to disk.
    std::vector<PatientRecord> manifest;
    std::optional<std::filesystem::path> manifest_path;
};

/// Classes alternate LowIntermediate, High, ... . High volumes carry a centred
/// bright ellipsoid with semi-axes a quarter of each dimension. When
/// `output_dir` is given, volumes are written as raw tensors under the chosen
/// modality key together with `manifest.jsonl`.
ToyCohort make_toy_cohort(const ToyCohortSpec& spec, const std::optional<std::filesystem::path>& output_dir = {},
                          Modality modality = Modality::CDIS);

/// Sphere mask used by make_toy_cohort for the given cube.
bool in_toy_sphere(const Dims& d, std::size_t x, std::size_t y, std::size_t z);

struct DwiCohortSpec {
    std::size_t n_per_class = 3;
    Dims dims{24, 24, 6};
    std::vector<double> b_values{0.0, 100.0, 600.0, 800.0};
    double noise_sigma = 0.01;
    std::uint64_t seed = 0;
};

/// Multi-modality phantom cohort on disk: per patient a DWI stack, a T2w-like
/// S0 image and an ADC map, with a lesion whose diffusivity is lower for High
/// grade. Returns the written manifest records.
std::vector<PatientRecord> write_dwi_phantom_cohort(const DwiCohortSpec& spec, const std::filesystem::path& output_dir);

}  // namespace bca
