#pragma once

#include <span>
#include <vector>

#include "bca/ingest.hpp"
#include "bca/volume.hpp"

namespace bca {

/// Co-registered diffusion-weighted volumes, one per b-value (s/mm^2).
struct DwiStack {
    std::vector<double> b_values;
    std::vector<Volume3D> volumes;

    /// Throws PreconditionError / ShapeError unless: >= 2 b-values, strictly
    /// increasing and non-negative, one volume per b-value on a shared grid,
    /// all signal values >= 0 and finite.
    void validate() const;
    const Dims& dims() const { return volumes.front().dims(); }
};

/// Monoexponential model maps: S(b) = S0 * exp(-b * ADC), ADC in mm^2/s.
struct SignalModelParams {
    Volume3D s0_map;
    Volume3D adc_map;
};

struct MixingConfig {
    std::vector<double> synthetic_b_values{1500.0, 2000.0, 2500.0};
    /// One exponent per signal, natives first (ascending b) then synthetics
    /// (ascending b). Empty means every coefficient is 1.
    std::vector<double> coefficients;

    /// Coefficients expanded for `native_count` native signals; throws
    /// PreconditionError on a length mismatch or non-finite entry.
    std::vector<double> resolved_coefficients(std::size_t native_count) const;
    friend bool operator==(const MixingConfig&, const MixingConfig&) = default;
};

struct CdisVolume {
    Volume3D data;
    MixingConfig config;
};

inline constexpr double kDefaultSignalFloor = 1e-6;
inline constexpr double kNormalizedFloor = 1e-12;

/// Voxelwise ordinary least squares of ln(max(S, floor)) against b; ADC and S0
/// are clamped to >= 0.
SignalModelParams fit_signal_model(const DwiStack& stack, double floor = kDefaultSignalFloor);

Volume3D synthesize_signal(const SignalModelParams& params, double b_value);

/// Product of per-signal min-max normalised volumes raised to their
/// coefficients, renormalised to [0, 1].
CdisVolume mix_signals(std::span<const Volume3D> signals, std::span<const double> coefficients);

Volume3D compute_adc_map(const DwiStack& stack);

CdisVolume compute_cdis(const DwiStack& stack, const MixingConfig& config);

/// Loads the DWI volumes named by a manifest record.
DwiStack load_dwi_stack(const PatientRecord& record);

}  // namespace bca
