#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "seisforge/errors.hpp"
#include "seisforge/linalg.hpp"
#include "seisforge/rng.hpp"

namespace seisforge::gm {

constexpr double kGravity = 9.80665; // m/s^2 per g

enum class IntensityClass { I6, I7, I8, I9 };
enum class MotionSource { imported, synthetic };

inline const char* to_string(IntensityClass c) {
    switch (c) {
        case IntensityClass::I6: return "I6";
        case IntensityClass::I7: return "I7";
        case IntensityClass::I8: return "I8";
        case IntensityClass::I9: return "I9";
    }
    return "?";
}

inline IntensityClass intensity_from_string(const std::string& s) {
    if (s == "I6") return IntensityClass::I6;
    if (s == "I7") return IntensityClass::I7;
    if (s == "I8") return IntensityClass::I8;
    if (s == "I9") return IntensityClass::I9;
    throw ConfigError("unknown intensity class '" + s + "'");
}

/// PGA banding for intensity classes, in g. Follows common design-code PGA
/// bands; the thresholds are configurable.
struct IntensityBands {
    double i7_lo_g = 0.10;
    double i8_lo_g = 0.20;
    double i9_lo_g = 0.40;

    IntensityClass classify(double pga_m_s2) const {
        const double g = pga_m_s2 / kGravity;
        if (g >= i9_lo_g) return IntensityClass::I9;
        if (g >= i8_lo_g) return IntensityClass::I8;
        if (g >= i7_lo_g) return IntensityClass::I7;
        return IntensityClass::I6;
    }
};

/// Uniformly sampled ground-acceleration record, m/s^2.
struct GroundMotion {
    std::string id;
    double dt = 0.02;
    Vec samples;
    IntensityClass intensity_class = IntensityClass::I6;
    MotionSource source = MotionSource::synthetic;

    std::size_t size() const { return samples.size(); }
    double duration() const { return samples.empty() ? 0.0 : (samples.size() - 1) * dt; }

    void validate() const {
        if (dt <= 0.0) throw DataError("ground motion '" + id + "': dt must be > 0");
        if (samples.size() < 2) throw DataError("ground motion '" + id + "': needs >= 2 samples");
        for (std::size_t i = 0; i < samples.size(); ++i)
            if (!std::isfinite(samples[i]))
                throw DataError("ground motion '" + id + "': non-finite sample at row " +
                                std::to_string(i + 1));
    }
};

inline double pga(const GroundMotion& g) { return inf_norm(g.samples); }

// ---------------------------------------------------------------------------
// Record file format (text):
//   line 1:  # dt=<seconds> unit=<m/s2|g> id=<string>
//   then one acceleration value per line, decimal notation, LF endings.
// ---------------------------------------------------------------------------

inline std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline GroundMotion load_record(const std::filesystem::path& path,
                                std::optional<double> dt_override = std::nullopt,
                                const IntensityBands& bands = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open record file " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.empty())
        throw ParseError(path.string() + ":1: empty record file");
    if (line[0] != '#')
        throw ParseError(path.string() + ":1: header must start with '#'");

    GroundMotion g;
    g.source = MotionSource::imported;
    double unit_factor = 0.0;
    bool have_dt = false;
    std::istringstream hdr(line.substr(1));
    std::string tok;
    while (hdr >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos)
            throw ParseError(path.string() + ":1: bad header token '" + tok + "'");
        const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
        if (key == "dt") {
            try { g.dt = std::stod(val); } catch (...) {
                throw ParseError(path.string() + ":1: bad dt value '" + val + "'");
            }
            have_dt = true;
        } else if (key == "unit") {
            if (val == "m/s2") unit_factor = 1.0;
            else if (val == "g") unit_factor = kGravity;
            else throw ParseError(path.string() + ":1: unknown unit '" + val + "'");
        } else if (key == "id") {
            g.id = val;
        } else {
            throw ParseError(path.string() + ":1: unknown header key '" + key + "'");
        }
    }
    if (!have_dt) throw ParseError(path.string() + ":1: header missing dt");
    if (unit_factor == 0.0) throw ParseError(path.string() + ":1: header missing unit");
    if (g.id.empty()) g.id = path.stem().string();
    if (dt_override) g.dt = *dt_override;
    if (g.dt <= 0.0) throw ParseError(path.string() + ":1: dt must be > 0");

    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        char* end = nullptr;
        const double v = std::strtod(line.c_str(), &end);
        while (end && *end == ' ') ++end;
        if (end == line.c_str() || (end && *end != '\0' && *end != '\r'))
            throw ParseError(path.string() + ":" + std::to_string(lineno) +
                             ": cannot parse acceleration value '" + line + "'");
        if (!std::isfinite(v))
            throw DataError(path.string() + ":" + std::to_string(lineno) +
                            ": non-finite acceleration value");
        g.samples.push_back(v * unit_factor);
    }
    if (g.samples.empty())
        throw ParseError(path.string() + ": record has no data rows");
    if (g.samples.size() < 2)
        throw DataError(path.string() + ": record needs at least 2 samples");
    g.intensity_class = bands.classify(pga(g));
    return g;
}

inline void save_record(const std::filesystem::path& path, const GroundMotion& g) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write record file " + path.string());
    out << "# dt=" << fmt_g17(g.dt) << " unit=m/s2 id=" << g.id << "\n";
    for (double v : g.samples) out << fmt_g17(v) << "\n";
}

// ---------------------------------------------------------------------------
// Synthetic motions: Gaussian white noise -> band-pass (cascaded second-order
// sections) -> trapezoidal envelope -> PGA scaling.
// ---------------------------------------------------------------------------

/// Generation recipe for one synthetic record.
struct SynthSpec {
    double duration_s = 8.0;
    double f_lo_hz = 0.5;
    double f_hi_hz = 10.0;
    double rise_s = 1.0;
    double plateau_s = 4.0;
    double decay_s = 3.0;
    double target_pga = 1.0; // m/s^2
    std::uint64_t seed = 0;

    void validate(double dt) const {
        if (dt <= 0.0) throw ConfigError("synth: dt must be > 0");
        if (!(f_lo_hz > 0.0 && f_lo_hz < f_hi_hz))
            throw ConfigError("synth: need 0 < f_lo < f_hi");
        if (!(f_hi_hz < 0.5 / dt))
            throw ConfigError("synth: f_hi must be below the Nyquist frequency");
        if (rise_s < 0 || plateau_s < 0 || decay_s < 0 ||
            rise_s + plateau_s + decay_s > duration_s + 1e-12)
            throw ConfigError("synth: envelope must fit inside the duration");
        if (!(target_pga > 0.0)) throw ConfigError("synth: target_pga must be > 0");
        if (duration_s < dt) throw ConfigError("synth: duration shorter than dt");
    }
};

namespace detail {

/// One direct-form-II-transposed biquad section.
struct Biquad {
    double b0, b1, b2, a1, a2; // normalized (a0 = 1)
    double z1 = 0.0, z2 = 0.0;

    double step(double x) {
        const double y = b0 * x + z1;
        z1 = b1 * x - a1 * y + z2;
        z2 = b2 * x - a2 * y;
        return y;
    }
};

inline Biquad lowpass(double fc, double fs, double q) {
    const double w0 = 2.0 * std::numbers::pi * fc / fs;
    const double c = std::cos(w0), a = std::sin(w0) / (2.0 * q);
    const double a0 = 1.0 + a;
    return {(1.0 - c) / 2.0 / a0, (1.0 - c) / a0, (1.0 - c) / 2.0 / a0,
            -2.0 * c / a0, (1.0 - a) / a0};
}

inline Biquad highpass(double fc, double fs, double q) {
    const double w0 = 2.0 * std::numbers::pi * fc / fs;
    const double c = std::cos(w0), a = std::sin(w0) / (2.0 * q);
    const double a0 = 1.0 + a;
    return {(1.0 + c) / 2.0 / a0, -(1.0 + c) / a0, (1.0 + c) / 2.0 / a0,
            -2.0 * c / a0, (1.0 - a) / a0};
}

// 8th-order Butterworth pole-pair Qs: 1/(2 cos((2k+1)pi/16)).
inline constexpr std::array<double, 4> kButter8Q = {
    0.50979557910415918, 0.60134488693504529, 0.89997622313641557, 2.5629154477415055};

} // namespace detail

/// Deterministic band-limited synthetic accelerogram. The Butterworth corners
/// are shaded inside [f_lo, f_hi] so the out-of-band spectral energy of the
/// finished record stays >= 20 dB below the in-band energy.
inline GroundMotion synth_record(const SynthSpec& spec, double dt,
                                 const IntensityBands& bands = {}) {
    spec.validate(dt);
    const std::size_t n = static_cast<std::size_t>(std::llround(spec.duration_s / dt)) + 1;
    const double fs = 1.0 / dt;

    SplitMix64 rng(spec.seed);
    Vec x(n);
    for (auto& v : x) v = rng.normal();

    // corner shading keeps the -3 dB points strictly inside the band
    const double margin = std::min(1.25, std::sqrt(spec.f_hi_hz / spec.f_lo_hz));
    std::vector<detail::Biquad> sections;
    for (double q : detail::kButter8Q) sections.push_back(detail::highpass(spec.f_lo_hz * margin, fs, q));
    for (double q : detail::kButter8Q) sections.push_back(detail::lowpass(spec.f_hi_hz / margin, fs, q));
    for (auto& v : x)
        for (auto& s : sections) v = s.step(v);

    for (std::size_t i = 0; i < n; ++i) {
        const double t = i * dt;
        double e = 0.0;
        if (t < spec.rise_s)
            e = spec.rise_s > 0 ? t / spec.rise_s : 1.0;
        else if (t < spec.rise_s + spec.plateau_s)
            e = 1.0;
        else if (t < spec.rise_s + spec.plateau_s + spec.decay_s)
            e = 1.0 - (t - spec.rise_s - spec.plateau_s) / spec.decay_s;
        x[i] *= e;
    }

    const double peak = inf_norm(x);
    if (peak == 0.0) throw GenerationError("synth: degenerate all-zero signal");
    // divide by the peak first: the peak sample becomes exactly +-1.0, so the
    // scaled record attains target_pga bitwise
    for (auto& v : x) v = (v / peak) * spec.target_pga;

    GroundMotion g;
    g.id = "synth-" + std::to_string(spec.seed);
    g.dt = dt;
    g.samples = std::move(x);
    g.source = MotionSource::synthetic;
    g.intensity_class = bands.classify(spec.target_pga);
    return g;
}

/// Rescale to a target PGA; intensity class is reassigned from the banding
/// table. The peak sample of the result equals `target` bitwise, and scaling
/// to the current PGA is the identity.
inline GroundMotion scale_to_pga(const GroundMotion& g, double target,
                                 const IntensityBands& bands = {}) {
    if (!(target > 0.0)) throw ConfigError("scale_to_pga: target must be > 0");
    const double peak = pga(g);
    if (peak == 0.0) throw DataError("scale_to_pga: all-zero record '" + g.id + "'");
    GroundMotion out = g;
    if (target != peak)
        for (auto& v : out.samples) v = (v / peak) * target;
    out.intensity_class = bands.classify(target);
    return out;
}

/// Linear interpolation onto a new uniform grid; duration preserved within
/// one dt_new. Resampling to the same dt returns the record unchanged.
inline GroundMotion resample(const GroundMotion& g, double dt_new) {
    if (!(dt_new > 0.0)) throw ConfigError("resample: dt must be > 0");
    if (dt_new == g.dt) return g;
    const std::size_t n = g.samples.size();
    const double total = (n - 1) * g.dt;
    const std::size_t n_new = static_cast<std::size_t>(std::floor(total / dt_new)) + 1;
    GroundMotion out = g;
    out.dt = dt_new;
    out.samples.assign(n_new, 0.0);
    for (std::size_t i = 0; i < n_new; ++i) {
        const double pos = (i * dt_new) / g.dt;
        std::size_t j = static_cast<std::size_t>(pos);
        if (j > n - 2) j = n - 2;
        const double frac = pos - static_cast<double>(j);
        out.samples[i] = g.samples[j] + frac * (g.samples[j + 1] - g.samples[j]);
    }
    return out;
}

} // namespace seisforge::gm
