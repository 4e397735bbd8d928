#include <doctest.h>

#include <bit>

#include "bca/cdis.hpp"
#include "bca/errors.hpp"
#include "bca/phantom.hpp"
#include "bca/volumizer.hpp"
#include "support.hpp"

using namespace bca;

namespace {

DwiStack one_voxel(std::vector<double> b, std::vector<double> s) {
    DwiStack st;
    st.b_values = std::move(b);
    for (double v : s) st.volumes.emplace_back(Dims{1, 1, 1}, Spacing{}, v);
    return st;
}

Volume3D filled(std::vector<double> v) {
    const std::size_t n = v.size();
    return Volume3D(Dims{n, 1, 1}, {}, std::move(v));
}

PhantomSpec cube_phantom(std::size_t n, double noise, std::uint64_t seed) {
    PhantomSpec s;
    s.dims = {n, n, n};
    s.background_s0 = 150.0;
    s.background_adc = 2.8e-3;
    s.regions.push_back({{n / 8, n / 8, n / 8, n - n / 8, n - n / 8, n - n / 8}, 900.0, 1.4e-3});
    s.regions.push_back({{n / 4, n / 4, n / 4, n / 2, n / 2, n / 2}, 1200.0, 1.1e-3});
    s.regions.push_back({{n / 2, n / 2, n / 3, 3 * n / 4, 3 * n / 4, 2 * n / 3}, 700.0, 1.8e-3});
    s.noise_sigma = noise;
    s.seed = seed;
    return s;
}

}  // namespace

TEST_CASE("two-point fit recovers S0 and ADC") {
    const auto p = fit_signal_model(one_voxel({0, 800}, {1000, 449.329}), kDefaultSignalFloor);
    // Closed form for two points: ADC = ln(S_a / S_b) / (b_b - b_a).
    const double adc = std::log(1000.0 / 449.329) / 800.0;
    CHECK(testing::rel_err(p.adc_map[0], adc) < 1e-12);
    CHECK(testing::rel_err(p.s0_map[0], 1000.0) < 1e-12);
    CHECK(testing::rel_err(p.adc_map[0], 1.0e-3) < 1e-6);
}

TEST_CASE("constant signal fits zero diffusion") {
    const auto p = fit_signal_model(one_voxel({0, 100, 600}, {5, 5, 5}), kDefaultSignalFloor);
    CHECK(std::abs(p.adc_map[0]) < 1e-15);
    CHECK(testing::rel_err(p.s0_map[0], 5.0) < 1e-12);
}

TEST_CASE("rising signal clamps ADC at zero") {
    const auto p = fit_signal_model(one_voxel({0, 500}, {100, 150}), kDefaultSignalFloor);
    CHECK(p.adc_map[0] == 0.0);
    CHECK(p.s0_map[0] > 0.0);
}

TEST_CASE("zero signal is floored before the logarithm") {
    const auto p = fit_signal_model(one_voxel({0, 800}, {0, 0}), kDefaultSignalFloor);
    CHECK(std::isfinite(p.s0_map[0]));
    CHECK(std::isfinite(p.adc_map[0]));
    CHECK(testing::rel_err(p.s0_map[0], kDefaultSignalFloor) < 1e-9);
}

TEST_CASE("fit matches normal-equation least squares on noisy voxels") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(1.0, 2000.0);
    const std::vector<double> b{0, 150, 400, 900, 1200};
    DwiStack st;
    st.b_values = b;
    for (std::size_t i = 0; i < b.size(); ++i) st.volumes.push_back(testing::random_volume({4, 3, 2}, rng(), 1, 2000));
    const auto p = fit_signal_model(st, kDefaultSignalFloor);
    for (std::size_t v = 0; v < 24; ++v) {
        std::vector<double> y;
        for (const auto& vol : st.volumes) y.push_back(std::log(vol[v]));
        const auto [a, slope] = testing::ols_line(b, y);
        CHECK(testing::rel_err(p.s0_map[v], std::exp(a)) < 1e-9);
        CHECK(std::abs(p.adc_map[v] - std::max(0.0, -slope)) < 1e-12);
    }
}

TEST_CASE("fit preconditions") {
    CHECK_THROWS_AS(fit_signal_model(one_voxel({0}, {1}), kDefaultSignalFloor), PreconditionError);
    CHECK_THROWS_AS(fit_signal_model(one_voxel({0, 800}, {1, 1}), 0.0), PreconditionError);
    CHECK_THROWS_AS(fit_signal_model(one_voxel({800, 0}, {1, 1}), kDefaultSignalFloor), PreconditionError);
    CHECK_THROWS_AS(fit_signal_model(one_voxel({0, 800}, {1, -1}), kDefaultSignalFloor), PreconditionError);
    DwiStack mismatched = one_voxel({0, 800}, {1, 1});
    mismatched.volumes[1] = Volume3D(Dims{2, 1, 1}, {}, 1.0);
    CHECK_THROWS_AS(fit_signal_model(mismatched, kDefaultSignalFloor), ShapeError);
}

TEST_CASE("noiseless 16^3 phantom round-trips through the fit") {
    const std::vector<double> b{0, 100, 600, 800};
    const DwiPhantom ph = make_dwi_phantom(cube_phantom(16, 0.0, 1), b);
    const auto p = fit_signal_model(ph.stack, kDefaultSignalFloor);
    double worst_s0 = 0, worst_adc = 0;
    for (std::size_t i = 0; i < p.s0_map.size(); ++i) {
        worst_s0 = std::max(worst_s0, testing::rel_err(p.s0_map[i], ph.truth.s0_map[i]));
        worst_adc = std::max(worst_adc, testing::rel_err(p.adc_map[i], ph.truth.adc_map[i]));
    }
    CHECK(worst_s0 < 1e-6);
    CHECK(worst_adc < 1e-6);
}

TEST_CASE("fit is exact on noiseless data for any b-value set") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t m = 2 + rng() % 5;
        std::vector<double> b{double(rng() % 200)};
        for (std::size_t i = 1; i < m; ++i) b.push_back(b.back() + 50.0 + double(rng() % 700));
        const DwiPhantom ph = make_dwi_phantom(cube_phantom(8, 0.0, rng()), b);
        const auto p = fit_signal_model(ph.stack, kDefaultSignalFloor);
        for (std::size_t i = 0; i < p.s0_map.size(); ++i) {
            REQUIRE(testing::rel_err(p.s0_map[i], ph.truth.s0_map[i]) < 1e-6);
            REQUIRE(testing::rel_err(p.adc_map[i], ph.truth.adc_map[i]) < 1e-6);
        }
        // Synthesis at each native b reproduces the native volume.
        for (std::size_t k = 0; k < b.size(); ++k) {
            const Volume3D s = synthesize_signal(p, b[k]);
            for (std::size_t i = 0; i < s.size(); ++i) REQUIRE(testing::rel_err(s[i], ph.stack.volumes[k][i]) < 1e-6);
        }
    }
}

TEST_CASE("synthesize_signal examples") {
    SignalModelParams p{Volume3D(Dims{2, 2, 1}, {}, std::vector<double>{1000, 20, 0, 7.5}),
                        Volume3D(Dims{2, 2, 1}, {}, std::vector<double>{1e-3, 2e-3, 5e-4, 0})};
    const Volume3D at0 = synthesize_signal(p, 0.0);
    for (std::size_t i = 0; i < 4; ++i) CHECK(at0[i] == p.s0_map[i]);

    SignalModelParams flat{p.s0_map, Volume3D(Dims{2, 2, 1}, {}, 0.0)};
    const Volume3D any = synthesize_signal(flat, 1234.5);
    for (std::size_t i = 0; i < 4; ++i) CHECK(any[i] == p.s0_map[i]);

    const Volume3D at2000 = synthesize_signal(p, 2000.0);
    CHECK(at2000[0] == doctest::Approx(135.335).epsilon(1e-5));
    CHECK(testing::rel_err(at2000[0], 1000.0 * std::exp(-2.0)) < 1e-15);
    CHECK(at2000.dims() == p.s0_map.dims());
    CHECK_THROWS_AS(synthesize_signal(p, -1.0), PreconditionError);
}

TEST_CASE("mix_signals examples") {
    const Volume3D a = filled({3, 7, 11, 5});
    SUBCASE("single signal, coefficient one") {
        const std::vector<double> c{1.0};
        const auto out = mix_signals(std::span(&a, 1), c);
        const Volume3D n = normalize_intensity(a);
        for (std::size_t i = 0; i < 4; ++i) CHECK(out.data[i] == doctest::Approx(n[i]).epsilon(1e-15));
    }
    SUBCASE("all coefficients zero gives all zeros") {
        const std::vector<Volume3D> s{a, filled({0, 1, 0, 2})};
        const std::vector<double> c{0.0, 0.0};
        const auto out = mix_signals(s, c);
        for (std::size_t i = 0; i < 4; ++i) CHECK(out.data[i] == 0.0);
    }
    SUBCASE("product of halves") {
        const std::vector<Volume3D> s{filled({0, 0.5, 1}), filled({10, 15, 20})};
        const std::vector<double> c{1.0, 1.0};
        const auto out = mix_signals(s, c);
        CHECK(out.data[1] == doctest::Approx(0.25).epsilon(1e-15));
    }
    SUBCASE("negative coefficients stay finite") {
        const std::vector<Volume3D> s{filled({0, 1, 2, 3}), filled({3, 2, 1, 0})};
        const std::vector<double> c{-1.5, 2.0};
        const auto out = mix_signals(s, c);
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(std::isfinite(out.data[i]));
            CHECK(out.data[i] >= 0.0);
            CHECK(out.data[i] <= 1.0);
        }
    }
    SUBCASE("errors") {
        const std::vector<double> one{1.0}, two{1.0, 1.0};
        CHECK_THROWS_AS(mix_signals({}, {}), PreconditionError);
        const std::vector<Volume3D> s{a, filled({1, 2})};
        CHECK_THROWS_AS(mix_signals(s, two), ShapeError);
        const std::vector<Volume3D> t{a, a};
        CHECK_THROWS_AS(mix_signals(t, one), PreconditionError);
        const std::vector<double> bad{1.0, std::numeric_limits<double>::infinity()};
        CHECK_THROWS_AS(mix_signals(t, bad), PreconditionError);
    }
}

TEST_CASE("mix_signals stays in [0, 1] and ignores rescaling") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> coef(-2.0, 3.0), scale(1e-3, 1e3);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t k = 1 + rng() % 4;
        std::vector<Volume3D> s;
        std::vector<double> c;
        for (std::size_t i = 0; i < k; ++i) {
            s.push_back(testing::random_volume({5, 4, 3}, rng(), 0.0, 100.0));
            c.push_back(coef(rng));
        }
        const auto out = mix_signals(s, c);
        for (double v : out.data.data()) {
            REQUIRE(std::isfinite(v));
            REQUIRE(v >= 0.0);
            REQUIRE(v <= 1.0);
        }
        auto scaled = s;
        const std::size_t which = rng() % k;
        const double f = scale(rng);
        for (double& v : scaled[which].data()) v *= f;
        const auto again = mix_signals(scaled, c);
        for (std::size_t i = 0; i < out.data.size(); ++i)
            REQUIRE(std::abs(again.data[i] - out.data[i]) <= 1e-12);
    }
}

TEST_CASE("compute_adc_map examples") {
    DwiStack two;
    two.b_values = {0, 800};
    two.volumes = {Volume3D(Dims{3, 2, 2}, {}, 1000.0), Volume3D(Dims{3, 2, 2}, {}, 1000.0 * std::exp(-0.8))};
    const Volume3D map = compute_adc_map(two);
    for (double v : map.data()) CHECK(testing::rel_err(v, 1.0e-3) < 1e-9);

    DwiStack flat;
    flat.b_values = {0, 100, 600};
    flat.volumes.assign(3, Volume3D(Dims{2, 2, 2}, {}, 42.0));
    const Volume3D zero = compute_adc_map(flat);
    for (double v : zero.data()) CHECK(std::abs(v) < 1e-15);

    const std::vector<double> b{0, 100, 600, 800};
    const DwiPhantom ph = make_dwi_phantom(cube_phantom(12, 0.0, 9), b);
    const Volume3D adc = compute_adc_map(ph.stack);
    for (std::size_t i = 0; i < adc.size(); ++i) CHECK(testing::rel_err(adc[i], ph.truth.adc_map[i]) < 1e-6);
}

TEST_CASE("compute_cdis with natives only equals the normalized native") {
    // A stack holds at least two b-values; a zero exponent removes the second.
    const std::vector<double> b{0, 800};
    const DwiPhantom ph = make_dwi_phantom(cube_phantom(10, 0.02, 4), b);
    MixingConfig cfg;
    cfg.synthetic_b_values.clear();
    cfg.coefficients = {1.0, 0.0};
    const auto out = compute_cdis(ph.stack, cfg);
    const Volume3D n = normalize_intensity(ph.stack.volumes[0]);
    for (std::size_t i = 0; i < n.size(); ++i) CHECK(out.data[i] == doctest::Approx(n[i]).epsilon(1e-14));
    CHECK(out.config == cfg);
}

TEST_CASE("compute_cdis matches a voxel-by-voxel composition") {
    const std::vector<double> b{0, 100, 600, 800};
    const DwiPhantom ph = make_dwi_phantom(cube_phantom(12, 0.0, 8), b);
    std::vector<std::vector<double>> native;
    for (const auto& v : ph.stack.volumes) native.emplace_back(v.data().begin(), v.data().end());

    for (const auto& cfg : {MixingConfig{{2000.0}, {}}, MixingConfig{{2500.0, 1500.0}, {1, 0.5, 2, 1, 0.25, -0.5}},
                            MixingConfig{}}) {
        const auto coeff = cfg.resolved_coefficients(b.size());
        auto synth = cfg.synthetic_b_values;
        std::sort(synth.begin(), synth.end());
        const auto want = testing::reference_cdis(b, native, synth, coeff);
        const auto got = compute_cdis(ph.stack, cfg);
        REQUIRE(got.data.size() == want.size());
        double worst = 0;
        for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::abs(got.data[i] - want[i]));
        CHECK(worst <= 1e-9);
        CHECK(got.data.dims() == ph.stack.dims());
    }
}

TEST_CASE("compute_cdis is deterministic") {
    const std::vector<double> b{0, 100, 600, 800};
    const DwiPhantom ph = make_dwi_phantom(cube_phantom(10, 0.01, 2), b);
    const auto a = compute_cdis(ph.stack, MixingConfig{});
    const auto c = compute_cdis(ph.stack, MixingConfig{});
    for (std::size_t i = 0; i < a.data.size(); ++i)
        CHECK(std::bit_cast<std::uint64_t>(a.data[i]) == std::bit_cast<std::uint64_t>(c.data[i]));
}

TEST_CASE("mixing config coefficient count must match the signals") {
    MixingConfig cfg;
    CHECK(cfg.resolved_coefficients(4).size() == 7);
    cfg.coefficients = {1, 1, 1};
    CHECK_THROWS_AS(cfg.resolved_coefficients(4), PreconditionError);
    const DwiPhantom ph = make_dwi_phantom(cube_phantom(8, 0.0, 1), std::vector<double>{0, 800});
    CHECK_THROWS_AS(compute_cdis(ph.stack, cfg), PreconditionError);
}
