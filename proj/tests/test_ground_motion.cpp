#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "seisforge/ground_motion.hpp"

using namespace seisforge;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    static fs::path dir = [] {
        fs::path p = fs::temp_directory_path() / "seisforge_gm_tests";
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    out << content;
}

// Test-only DFT band energy, independent of any library FFT.
double band_energy(const Vec& x, double dt, double f_lo, double f_hi) {
    const std::size_t n = x.size();
    double energy = 0.0;
    for (std::size_t k = 0; k <= n / 2; ++k) {
        const double f = k / (n * dt);
        if (f < f_lo || f > f_hi) continue;
        double re = 0.0, im = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            const double ang = -2.0 * std::numbers::pi * k * t / n;
            re += x[t] * std::cos(ang);
            im += x[t] * std::sin(ang);
        }
        const double w = (k == 0 || 2 * k == n) ? 1.0 : 2.0; // one-sided spectrum
        energy += w * (re * re + im * im);
    }
    return energy;
}

} // namespace

TEST_CASE("load_record round-trips a written file") {
    const fs::path p = temp_dir() / "basic.txt";
    write_file(p, "# dt=0.02 unit=m/s2 id=rec1\n0.0\n0.1\n-0.1\n");
    const auto g = gm::load_record(p);
    CHECK(g.dt == 0.02);
    CHECK(g.id == "rec1");
    REQUIRE(g.samples.size() == 3);
    CHECK(g.samples[0] == 0.0);
    CHECK(g.samples[1] == 0.1);
    CHECK(g.samples[2] == -0.1);
    CHECK(g.source == gm::MotionSource::imported);

    const fs::path q = temp_dir() / "rewritten.txt";
    gm::save_record(q, g);
    const auto g2 = gm::load_record(q);
    CHECK(g2.dt == g.dt);
    CHECK(g2.samples == g.samples);
}

TEST_CASE("load_record converts g units") {
    const fs::path p = temp_dir() / "gunits.txt";
    write_file(p, "# dt=0.01 unit=g id=r\n1.0\n-0.5\n");
    const auto g = gm::load_record(p);
    CHECK(g.samples[0] == doctest::Approx(9.80665).epsilon(1e-15));
    CHECK(g.samples[1] == doctest::Approx(-4.903325).epsilon(1e-15));
}

TEST_CASE("load_record rejects degenerate input") {
    const fs::path empty = temp_dir() / "empty.txt";
    write_file(empty, "");
    CHECK_THROWS_AS(gm::load_record(empty), ParseError);

    const fs::path nan_file = temp_dir() / "nan.txt";
    write_file(nan_file, "# dt=0.02 unit=m/s2 id=r\n0.1\nNaN\n0.2\n");
    try {
        gm::load_record(nan_file);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find(":3") != std::string::npos); // offending row named
    }

    const fs::path garbled = temp_dir() / "garbled.txt";
    write_file(garbled, "# dt=0.02 unit=m/s2 id=r\n0.1\nnot-a-number\n");
    CHECK_THROWS_AS(gm::load_record(garbled), ParseError);

    const fs::path no_header = temp_dir() / "nohdr.txt";
    write_file(no_header, "0.1\n0.2\n");
    CHECK_THROWS_AS(gm::load_record(no_header), ParseError);
}

TEST_CASE("load_record honors dt override") {
    const fs::path p = temp_dir() / "override.txt";
    write_file(p, "# dt=0.02 unit=m/s2 id=r\n0.1\n0.2\n");
    CHECK(gm::load_record(p, 0.01).dt == 0.01);
}

TEST_CASE("synth_record is deterministic and hits the target PGA exactly") {
    gm::SynthSpec spec;
    spec.seed = 1234;
    spec.target_pga = 1.5;
    const auto a = gm::synth_record(spec, 0.02);
    const auto b = gm::synth_record(spec, 0.02);
    CHECK(a.samples == b.samples); // bitwise
    CHECK(gm::pga(a) == 1.5);      // peak sample is exactly the target
}

TEST_CASE("synth_record scales linearly with target_pga") {
    gm::SynthSpec s1;
    s1.seed = 77;
    s1.target_pga = 1.0;
    gm::SynthSpec s2 = s1;
    s2.target_pga = 2.0;
    const auto a = gm::synth_record(s1, 0.02);
    const auto b = gm::synth_record(s2, 0.02);
    REQUIRE(a.samples.size() == b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i)
        CHECK(b.samples[i] == 2.0 * a.samples[i]); // exact: power-of-two scaling
}

TEST_CASE("synth_record rejects bad specs") {
    gm::SynthSpec spec;
    spec.f_hi_hz = 30.0; // Nyquist at dt=0.02 is 25 Hz
    CHECK_THROWS_AS(gm::synth_record(spec, 0.02), ConfigError);

    gm::SynthSpec env;
    env.rise_s = 5.0;
    env.plateau_s = 5.0;
    env.decay_s = 5.0; // > 8 s duration
    CHECK_THROWS_AS(gm::synth_record(env, 0.02), ConfigError);

    gm::SynthSpec neg;
    neg.target_pga = -1.0;
    CHECK_THROWS_AS(gm::synth_record(neg, 0.02), ConfigError);
}

TEST_CASE("synth_record keeps out-of-band energy at least 20 dB down") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        gm::SynthSpec spec;
        spec.seed = seed;
        spec.duration_s = 10.0;
        spec.rise_s = 1.0;
        spec.plateau_s = 6.0;
        spec.decay_s = 3.0;
        const auto g = gm::synth_record(spec, 0.02);
        const double in_band = band_energy(g.samples, g.dt, spec.f_lo_hz, spec.f_hi_hz);
        const double total = band_energy(g.samples, g.dt, 0.0, 25.0);
        const double out_band = total - in_band;
        REQUIRE(in_band > 0.0);
        CHECK(10.0 * std::log10(in_band / out_band) >= 20.0);
    }
}

TEST_CASE("scale_to_pga basics") {
    gm::GroundMotion g;
    g.id = "t";
    g.dt = 0.02;
    g.samples = {0.0, 1.0, -0.5};

    const auto scaled = gm::scale_to_pga(g, 2.0);
    CHECK(scaled.samples == Vec{0.0, 2.0, -1.0});

    const auto same = gm::scale_to_pga(g, 1.0); // target equals current pga
    CHECK(same.samples == g.samples);           // bitwise unchanged

    gm::GroundMotion zeros;
    zeros.dt = 0.02;
    zeros.samples = {0.0, 0.0, 0.0};
    CHECK_THROWS_AS(gm::scale_to_pga(zeros, 1.0), DataError);
}

TEST_CASE("scale_to_pga reassigns the intensity class from the PGA bands") {
    gm::GroundMotion g;
    g.dt = 0.02;
    g.samples = {0.0, 1.0, -0.5};
    CHECK(gm::scale_to_pga(g, 0.07 * gm::kGravity).intensity_class == gm::IntensityClass::I6);
    CHECK(gm::scale_to_pga(g, 0.15 * gm::kGravity).intensity_class == gm::IntensityClass::I7);
    CHECK(gm::scale_to_pga(g, 0.25 * gm::kGravity).intensity_class == gm::IntensityClass::I8);
    CHECK(gm::scale_to_pga(g, 0.55 * gm::kGravity).intensity_class == gm::IntensityClass::I9);
}

TEST_CASE("scale_to_pga is idempotent and multiplicative to <= 1 ulp") {
    SplitMix64 rng(99);
    gm::GroundMotion g;
    g.dt = 0.02;
    g.samples.resize(257);
    for (auto& v : g.samples) v = rng.normal();

    const double a = 2.7, b = 0.9;
    const auto ga = gm::scale_to_pga(g, a);
    CHECK(gm::pga(ga) == a); // peak attained bitwise
    const auto gaa = gm::scale_to_pga(ga, a);
    CHECK(gaa.samples == ga.samples); // idempotent bitwise

    // composition: one rounding through the intermediate record, <= 1 ulp
    const auto gb = gm::scale_to_pga(g, b);
    const auto gab = gm::scale_to_pga(ga, b);
    for (std::size_t i = 0; i < g.samples.size(); ++i) {
        const double want = gb.samples[i];
        const double got = gab.samples[i];
        const double ulp = std::abs(want) * std::numeric_limits<double>::epsilon();
        CHECK(std::abs(got - want) <= ulp);
    }
}

TEST_CASE("resample identity and linear interpolation") {
    gm::GroundMotion g;
    g.dt = 0.02;
    g.samples = {0.0, 1.0};

    const auto same = gm::resample(g, 0.02);
    CHECK(same.samples == g.samples); // bitwise

    const auto finer = gm::resample(g, 0.01);
    REQUIRE(finer.samples.size() == 3);
    CHECK(finer.samples == Vec{0.0, 0.5, 1.0});
}

TEST_CASE("resample of a 1 Hz sinusoid matches the closed form") {
    // Oracle: linear interpolation of sin(2*pi*t) sampled at dt has its worst
    // error at the segment midpoints, 1 - cos(pi*f*dt) = 1.9739e-3 of the
    // amplitude for f = 1 Hz, dt = 0.02 s. Frozen bound: 2.2e-3.
    gm::GroundMotion g;
    g.dt = 0.02;
    const std::size_t n = 201; // 4 s
    g.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        g.samples[i] = std::sin(2.0 * std::numbers::pi * (i * g.dt));

    const auto r = gm::resample(g, 0.01);
    double max_err = 0.0;
    for (std::size_t i = 0; i < r.samples.size(); ++i) {
        const double t = i * 0.01;
        max_err = std::max(max_err, std::abs(r.samples[i] - std::sin(2.0 * std::numbers::pi * t)));
    }
    CHECK(max_err < 2.2e-3);
    CHECK(max_err > 1.0e-3); // the midpoint error really is ~1.97e-3
    // duration preserved within one dt_new
    CHECK(std::abs(r.duration() - g.duration()) <= 0.01 + 1e-12);
}
