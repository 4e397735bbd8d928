#include "bca/cdis.hpp"

#include <algorithm>
#include <cmath>

#include "bca/errors.hpp"
#include "bca/volume_io.hpp"
#include "bca/volumizer.hpp"

namespace bca {

void DwiStack::validate() const {
    if (b_values.size() < 2) throw PreconditionError("a DWI stack needs at least 2 b-values");
    if (volumes.size() != b_values.size()) throw PreconditionError("one volume per b-value is required");
    if (b_values.front() < 0.0) throw PreconditionError("b-values must be non-negative");
    for (std::size_t i = 1; i < b_values.size(); ++i)
        if (!(b_values[i] > b_values[i - 1])) throw PreconditionError("b-values must be strictly increasing");
    for (const auto& v : volumes) {
        if (!v.same_grid(volumes.front())) throw ShapeError("DWI volumes do not share one grid");
        v.validate();
        if (v.min() < 0.0) throw PreconditionError("DWI signal values must be >= 0");
    }
}

std::vector<double> MixingConfig::resolved_coefficients(std::size_t native_count) const {
    const std::size_t n = native_count + synthetic_b_values.size();
    if (coefficients.empty()) return std::vector<double>(n, 1.0);
    if (coefficients.size() != n)
        throw PreconditionError("mixing config has " + std::to_string(coefficients.size()) +
                                " coefficients but there are " + std::to_string(n) + " signals");
    for (double c : coefficients)
        if (!std::isfinite(c)) throw PreconditionError("mixing coefficients must be finite");
    return coefficients;
}

SignalModelParams fit_signal_model(const DwiStack& stack, double floor) {
    if (!(floor > 0.0)) throw PreconditionError("signal floor must be positive");
    stack.validate();

    const auto& b = stack.b_values;
    const std::size_t m = b.size();
    double b_mean = 0.0;
    for (double x : b) b_mean += x;
    b_mean /= static_cast<double>(m);
    double sxx = 0.0;
    for (double x : b) sxx += (x - b_mean) * (x - b_mean);

    const Volume3D& ref = stack.volumes.front();
    SignalModelParams p{Volume3D(ref.dims(), ref.spacing()), Volume3D(ref.dims(), ref.spacing())};
    const std::size_t n = ref.size();
    for (std::size_t v = 0; v < n; ++v) {
        double y_mean = 0.0;
        for (std::size_t i = 0; i < m; ++i) y_mean += std::log(std::max(stack.volumes[i][v], floor));
        y_mean /= static_cast<double>(m);
        double sxy = 0.0;
        for (std::size_t i = 0; i < m; ++i)
            sxy += (b[i] - b_mean) * (std::log(std::max(stack.volumes[i][v], floor)) - y_mean);
        const double slope = sxy / sxx;
        const double intercept = y_mean - slope * b_mean;
        p.adc_map[v] = std::max(-slope, 0.0);
        p.s0_map[v] = std::exp(intercept);
    }
    return p;
}

Volume3D synthesize_signal(const SignalModelParams& params, double b_value) {
    if (!(b_value >= 0.0)) throw PreconditionError("b-value must be non-negative");
    if (!params.s0_map.same_grid(params.adc_map)) throw ShapeError("S0 and ADC maps differ in shape");
    Volume3D out = params.s0_map;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = params.s0_map[i] * std::exp(-b_value * params.adc_map[i]);
    return out;
}

CdisVolume mix_signals(std::span<const Volume3D> signals, std::span<const double> coefficients) {
    if (signals.empty()) throw PreconditionError("mix_signals needs at least one signal");
    if (signals.size() != coefficients.size())
        throw PreconditionError("got " + std::to_string(signals.size()) + " signals but " +
                                std::to_string(coefficients.size()) + " coefficients");
    for (const auto& s : signals)
        if (s.dims() != signals.front().dims()) throw ShapeError("signals do not share one grid");

    Volume3D product(signals.front().dims(), signals.front().spacing(), 1.0);
    for (std::size_t k = 0; k < signals.size(); ++k) {
        const double c = coefficients[k];
        if (!std::isfinite(c)) throw PreconditionError("mixing coefficients must be finite");
        if (c == 0.0) continue;  // n^0 == 1, including 0^0
        const Volume3D n = normalize_intensity(signals[k]);
        for (std::size_t i = 0; i < product.size(); ++i) {
            const double base = c < 0.0 ? std::max(n[i], kNormalizedFloor) : n[i];
            product[i] *= c == 1.0 ? base : std::pow(base, c);
        }
    }
    CdisVolume out{normalize_intensity(product), {}};
    out.config.synthetic_b_values.clear();
    out.config.coefficients.assign(coefficients.begin(), coefficients.end());
    return out;
}

Volume3D compute_adc_map(const DwiStack& stack) { return fit_signal_model(stack).adc_map; }

CdisVolume compute_cdis(const DwiStack& stack, const MixingConfig& config) {
    stack.validate();
    const auto coefficients = config.resolved_coefficients(stack.volumes.size());
    std::vector<Volume3D> signals = stack.volumes;
    if (!config.synthetic_b_values.empty()) {
        std::vector<double> synth = config.synthetic_b_values;
        std::ranges::sort(synth);
        const SignalModelParams params = fit_signal_model(stack);
        for (double b : synth) signals.push_back(synthesize_signal(params, b));
    }
    CdisVolume out = mix_signals(signals, coefficients);
    out.config = config;
    out.data.metadata()["modality"] = "cdis";
    return out;
}

DwiStack load_dwi_stack(const PatientRecord& record) {
    if (record.dwi.empty()) throw PreconditionError("patient " + record.patient_id + " has no DWI volumes");
    DwiStack stack;
    stack.b_values = record.b_values;
    for (const auto& p : record.dwi) stack.volumes.push_back(load_volume(p));
    stack.validate();
    return stack;
}

}  // namespace bca
