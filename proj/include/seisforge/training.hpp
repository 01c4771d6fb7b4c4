#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "seisforge/checkpoint.hpp"
#include "seisforge/dynamics.hpp"
#include "seisforge/errors.hpp"
#include "seisforge/ground_motion.hpp"
#include "seisforge/identification.hpp"
#include "seisforge/jsondoc.hpp"
#include "seisforge/parallel.hpp"
#include "seisforge/rng.hpp"
#include "seisforge/srfd.hpp"
#include "seisforge/structure_model.hpp"

namespace seisforge::train {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

/// Intensity mix follows the wave-count distribution of the source protocol;
/// structure mix follows the 50k/20k/10k building-type split.
struct GenConfig {
    int n_samples = 100;
    std::uint64_t seed = 42;
    double train_fraction = 0.9;
    double validation_fraction = 0.0;
    double mix_frame = 0.625, mix_shear_frame = 0.25, mix_complex = 0.125;
    double p_i6 = 0.481, p_i7 = 0.4177, p_i8 = 0.0886, p_i9 = 0.0127;
    double duration_s = 8.0, dt_s = 0.02;
    double f_lo_hz = 0.5, f_hi_hz = 10.0;
    double rise_s = 1.0, plateau_s = 4.0, decay_s = 3.0;
    std::string spring_kind = "linear"; // or "bilinear" for the hysteretic oracle
    double post_yield_ratio = 0.1;
    double yield_drift_ratio = 0.003; // u_yield = ratio * floor height
    double damping_ratio = 0.05;
    int max_stories = 33;

    void validate() const {
        if (n_samples < 1) throw ConfigError("gen: n_samples must be >= 1");
        if (train_fraction <= 0.0 || train_fraction > 1.0)
            throw ConfigError("gen: train_fraction must be in (0, 1]");
        if (validation_fraction < 0.0 || train_fraction + validation_fraction > 1.0)
            throw ConfigError("gen: validation_fraction out of range");
        for (double m : {mix_frame, mix_shear_frame, mix_complex})
            if (m < 0.0) throw ConfigError("gen: type mix entries must be >= 0");
        if (mix_frame + mix_shear_frame + mix_complex <= 0.0)
            throw ConfigError("gen: type mix must have positive total");
        for (double p : {p_i6, p_i7, p_i8, p_i9})
            if (p < 0.0) throw ConfigError("gen: intensity mix entries must be >= 0");
        if (p_i6 + p_i7 + p_i8 + p_i9 <= 0.0)
            throw ConfigError("gen: intensity mix must have positive total");
        if (spring_kind != "linear" && spring_kind != "bilinear")
            throw ConfigError("gen: spring_kind must be linear or bilinear");
        if (max_stories < 1 || max_stories > 33)
            throw ConfigError("gen: max_stories must be in [1, 33]");
        gm::SynthSpec probe;
        probe.duration_s = duration_s;
        probe.f_lo_hz = f_lo_hz;
        probe.f_hi_hz = f_hi_hz;
        probe.rise_s = rise_s;
        probe.plateau_s = plateau_s;
        probe.decay_s = decay_s;
        probe.validate(dt_s);
    }

    Doc to_doc() const {
        Doc d;
        d["n_samples"] = n_samples;
        d["seed"] = seed;
        d["train_fraction"] = train_fraction;
        d["validation_fraction"] = validation_fraction;
        d["type_mix"] = Doc{{"frame", mix_frame},
                            {"shear_frame", mix_shear_frame},
                            {"complex_shear", mix_complex}};
        d["intensity_mix"] = Doc{{"I6", p_i6}, {"I7", p_i7}, {"I8", p_i8}, {"I9", p_i9}};
        d["motion"] = Doc{{"duration_s", duration_s}, {"dt_s", dt_s},
                          {"f_lo_hz", f_lo_hz},       {"f_hi_hz", f_hi_hz},
                          {"rise_s", rise_s},         {"plateau_s", plateau_s},
                          {"decay_s", decay_s}};
        d["springs"] = Doc{{"kind", spring_kind},
                           {"post_yield_ratio", post_yield_ratio},
                           {"yield_drift_ratio", yield_drift_ratio}};
        d["damping_ratio"] = damping_ratio;
        d["max_stories"] = max_stories;
        return d;
    }

    static GenConfig from_doc(const Doc& d) {
        reject_unknown_keys(d,
                            {"n_samples", "seed", "train_fraction", "validation_fraction",
                             "type_mix", "intensity_mix", "motion", "springs", "damping_ratio",
                             "max_stories"},
                            "gen config");
        GenConfig g;
        g.n_samples = doc_get(d, "n_samples", g.n_samples);
        g.seed = doc_get(d, "seed", g.seed);
        g.train_fraction = doc_get(d, "train_fraction", g.train_fraction);
        g.validation_fraction = doc_get(d, "validation_fraction", g.validation_fraction);
        if (d.contains("type_mix")) {
            const auto& t = d.at("type_mix");
            reject_unknown_keys(t, {"frame", "shear_frame", "complex_shear"}, "type_mix");
            g.mix_frame = doc_get(t, "frame", g.mix_frame);
            g.mix_shear_frame = doc_get(t, "shear_frame", g.mix_shear_frame);
            g.mix_complex = doc_get(t, "complex_shear", g.mix_complex);
        }
        if (d.contains("intensity_mix")) {
            const auto& t = d.at("intensity_mix");
            reject_unknown_keys(t, {"I6", "I7", "I8", "I9"}, "intensity_mix");
            g.p_i6 = doc_get(t, "I6", g.p_i6);
            g.p_i7 = doc_get(t, "I7", g.p_i7);
            g.p_i8 = doc_get(t, "I8", g.p_i8);
            g.p_i9 = doc_get(t, "I9", g.p_i9);
        }
        if (d.contains("motion")) {
            const auto& t = d.at("motion");
            reject_unknown_keys(
                t, {"duration_s", "dt_s", "f_lo_hz", "f_hi_hz", "rise_s", "plateau_s", "decay_s"},
                "motion");
            g.duration_s = doc_get(t, "duration_s", g.duration_s);
            g.dt_s = doc_get(t, "dt_s", g.dt_s);
            g.f_lo_hz = doc_get(t, "f_lo_hz", g.f_lo_hz);
            g.f_hi_hz = doc_get(t, "f_hi_hz", g.f_hi_hz);
            g.rise_s = doc_get(t, "rise_s", g.rise_s);
            g.plateau_s = doc_get(t, "plateau_s", g.plateau_s);
            g.decay_s = doc_get(t, "decay_s", g.decay_s);
        }
        if (d.contains("springs")) {
            const auto& t = d.at("springs");
            reject_unknown_keys(t, {"kind", "post_yield_ratio", "yield_drift_ratio"}, "springs");
            g.spring_kind = doc_get<std::string>(t, "kind", g.spring_kind);
            g.post_yield_ratio = doc_get(t, "post_yield_ratio", g.post_yield_ratio);
            g.yield_drift_ratio = doc_get(t, "yield_drift_ratio", g.yield_drift_ratio);
        }
        g.damping_ratio = doc_get(d, "damping_ratio", g.damping_ratio);
        g.max_stories = doc_get(d, "max_stories", g.max_stories);
        g.validate();
        return g;
    }
};

struct SampleMeta {
    std::string id;
    std::string structure_type;
    std::string intensity;
    std::string direction; // "x" or "y"
    std::string split;     // "train", "validation" or "test"
    int n_stories = 0;
    int n_steps = 0;
    std::string motion_path, model_path, oracle_path, sdr_path;
};

struct DatasetManifest {
    int version = 1;
    std::uint64_t seed = 0;
    Doc gen_config;
    NormStats stats;
    Doc counts;
    std::vector<SampleMeta> samples;
    std::vector<std::string> skipped;
    fs::path dir; // directory of the manifest, for resolving relative paths

    Doc to_doc() const {
        Doc d;
        d["version"] = version;
        d["seed"] = seed;
        d["gen_config"] = gen_config;
        d["normalization"] = stats.to_doc();
        d["counts"] = counts;
        Doc idx = Doc::array();
        for (const auto& s : samples) {
            Doc e;
            e["id"] = s.id;
            e["structure_type"] = s.structure_type;
            e["intensity"] = s.intensity;
            e["direction"] = s.direction;
            e["split"] = s.split;
            e["n_stories"] = s.n_stories;
            e["n_steps"] = s.n_steps;
            e["motion_path"] = s.motion_path;
            e["model_path"] = s.model_path;
            e["oracle_path"] = s.oracle_path;
            e["sdr_path"] = s.sdr_path;
            idx.push_back(std::move(e));
        }
        d["samples"] = std::move(idx);
        d["skipped"] = skipped;
        return d;
    }

    static DatasetManifest from_doc(const Doc& d, const fs::path& dir) {
        DatasetManifest m;
        m.version = doc_require<int>(d, "version", "manifest");
        if (m.version != 1)
            throw CompatibilityError("manifest: unsupported version " + std::to_string(m.version));
        m.seed = doc_require<std::uint64_t>(d, "seed", "manifest");
        m.gen_config = doc_get(d, "gen_config", Doc::object());
        m.stats = NormStats::from_doc(d.at("normalization"));
        m.counts = doc_get(d, "counts", Doc::object());
        for (const auto& e : d.at("samples")) {
            SampleMeta s;
            s.id = e.at("id").get<std::string>();
            s.structure_type = e.at("structure_type").get<std::string>();
            s.intensity = e.at("intensity").get<std::string>();
            s.direction = e.at("direction").get<std::string>();
            s.split = e.at("split").get<std::string>();
            s.n_stories = e.at("n_stories").get<int>();
            s.n_steps = e.at("n_steps").get<int>();
            s.motion_path = e.at("motion_path").get<std::string>();
            s.model_path = e.at("model_path").get<std::string>();
            s.oracle_path = e.at("oracle_path").get<std::string>();
            s.sdr_path = e.at("sdr_path").get<std::string>();
            m.samples.push_back(std::move(s));
        }
        if (d.contains("skipped"))
            for (const auto& e : d.at("skipped")) m.skipped.push_back(e.get<std::string>());
        m.dir = dir;
        return m;
    }
};

inline DatasetManifest load_manifest(const fs::path& path) {
    return DatasetManifest::from_doc(load_doc(path), path.parent_path());
}

struct LoadedSample {
    gm::GroundMotion motion;
    model::LumpedMassModel model;
    dyn::ResponseHistory oracle;
    dyn::ResponseHistory sdr;
};

inline LoadedSample load_sample(const DatasetManifest& m, const SampleMeta& s) {
    LoadedSample out;
    out.motion = gm::load_record(m.dir / s.motion_path);
    out.model = model::model_from_doc(load_doc(m.dir / s.model_path));
    out.oracle = dyn::load_response(m.dir / s.oracle_path);
    out.sdr = dyn::load_response(m.dir / s.sdr_path);
    return out;
}

namespace detail {

inline gm::IntensityClass draw_intensity(SplitMix64& rng, const GenConfig& g) {
    const double total = g.p_i6 + g.p_i7 + g.p_i8 + g.p_i9;
    const double u = rng.uniform01() * total;
    if (u < g.p_i6) return gm::IntensityClass::I6;
    if (u < g.p_i6 + g.p_i7) return gm::IntensityClass::I7;
    if (u < g.p_i6 + g.p_i7 + g.p_i8) return gm::IntensityClass::I8;
    return gm::IntensityClass::I9;
}

inline model::StructureType draw_type(SplitMix64& rng, const GenConfig& g) {
    const double total = g.mix_frame + g.mix_shear_frame + g.mix_complex;
    const double u = rng.uniform01() * total;
    if (u < g.mix_frame) return model::StructureType::frame;
    if (u < g.mix_frame + g.mix_shear_frame) return model::StructureType::shear_frame;
    return model::StructureType::complex_shear;
}

// PGA band per intensity class, in g
inline std::pair<double, double> pga_band(gm::IntensityClass c) {
    switch (c) {
        case gm::IntensityClass::I6: return {0.05, 0.10};
        case gm::IntensityClass::I7: return {0.10, 0.20};
        case gm::IntensityClass::I8: return {0.20, 0.40};
        case gm::IntensityClass::I9: return {0.40, 0.80};
    }
    return {0.05, 0.10};
}

struct BuiltSample {
    bool ok = false;
    std::string error;
    SampleMeta meta;
    gm::GroundMotion motion;
    model::BuildingConfig building;
    model::LumpedMassModel mdl;
    dyn::ResponseHistory oracle;
    dyn::ResponseHistory sdr;
};

inline BuiltSample build_one_sample(const GenConfig& g, int index) {
    BuiltSample out;
    char idbuf[16];
    std::snprintf(idbuf, sizeof idbuf, "s%06d", index);
    out.meta.id = idbuf;
    try {
        SplitMix64 rng = substream(g.seed, static_cast<std::uint64_t>(index));
        const auto type = draw_type(rng, g);
        const auto intensity = draw_intensity(rng, g);
        const auto [glo, ghi] = pga_band(intensity);
        const double pga = rng.uniform(glo, ghi) * gm::kGravity;
        const std::uint64_t building_seed = rng.next();
        const std::uint64_t motion_seed = rng.next();
        const auto dir = index % 2 == 0 ? model::Direction::x : model::Direction::y;

        out.building = model::sample_building(type, building_seed, g.max_stories);
        out.mdl = model::reduce_to_mdof(out.building, dir);
        out.mdl.id = out.meta.id;
        out.mdl.damping_ratio = g.damping_ratio;
        if (g.spring_kind == "bilinear") {
            for (std::size_t s = 0; s < out.mdl.n_stories(); ++s) {
                auto& law = out.mdl.spring_law[s];
                law.kind = dyn::StorySpringLaw::Kind::bilinear;
                law.post_yield_ratio = g.post_yield_ratio;
                law.u_yield = g.yield_drift_ratio * out.building.floor_height_m;
            }
        }

        gm::SynthSpec spec;
        spec.duration_s = g.duration_s;
        spec.f_lo_hz = g.f_lo_hz;
        spec.f_hi_hz = g.f_hi_hz;
        spec.rise_s = g.rise_s;
        spec.plateau_s = g.plateau_s;
        spec.decay_s = g.decay_s;
        spec.target_pga = pga;
        spec.seed = motion_seed;
        out.motion = gm::synth_record(spec, g.dt_s);
        out.motion.id = out.meta.id + "-wave";

        const dyn::IntegratorParams p{0.5, 0.25, g.dt_s};
        out.oracle = dyn::simulate(out.mdl, out.motion, p);
        out.sdr = dyn::sdr_response(out.mdl, out.motion, p);

        out.meta.structure_type = model::to_string(type);
        out.meta.intensity = gm::to_string(intensity);
        out.meta.direction = dir == model::Direction::x ? "x" : "y";
        out.meta.n_stories = out.building.n_stories;
        out.meta.n_steps = static_cast<int>(out.motion.samples.size());
        out.ok = true;
    } catch (const std::exception& e) {
        out.error = e.what();
    }
    return out;
}

} // namespace detail

/// Generate the dataset: buildings, motions, oracle and SDR responses, the
/// train/test split, and normalization statistics (train split only). Fully
/// deterministic per seed; failed samples are skipped and recorded.
inline DatasetManifest build_dataset(const GenConfig& g, const fs::path& out_dir) {
    g.validate();
    fs::create_directories(out_dir / "samples");

    std::vector<detail::BuiltSample> built(g.n_samples);
    parallel_for(static_cast<std::size_t>(g.n_samples),
                 [&](std::size_t i) { built[i] = detail::build_one_sample(g, static_cast<int>(i)); });

    DatasetManifest m;
    m.seed = g.seed;
    m.gen_config = g.to_doc();

    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < built.size(); ++i) {
        if (built[i].ok)
            kept.push_back(i);
        else
            m.skipped.push_back(built[i].meta.id + ": " + built[i].error);
    }

    // split by seeded shuffle of the kept samples
    std::vector<std::size_t> order(kept.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    SplitMix64 shuffle_rng = substream(g.seed, 0xF00Du);
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    const std::size_t n_train = static_cast<std::size_t>(std::llround(g.train_fraction * kept.size()));
    const std::size_t n_val =
        static_cast<std::size_t>(std::llround(g.validation_fraction * kept.size()));
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        auto& s = built[kept[order[rank]]];
        s.meta.split = rank < n_train ? "train" : rank < n_train + n_val ? "validation" : "test";
    }

    // normalization statistics over the train split only
    double wave_sum = 0.0, wave_ss = 0.0, disp_sum = 0.0, disp_ss = 0.0, acc_sum = 0.0,
           acc_ss = 0.0;
    std::size_t wave_n = 0, resp_n = 0;
    for (std::size_t i : kept) {
        const auto& b = built[i];
        if (b.meta.split != "train") continue;
        for (double v : b.motion.samples) {
            wave_sum += v;
            wave_ss += v * v;
            ++wave_n;
        }
        for (double v : b.oracle.u) {
            const double f = static_cast<float>(v); // files store f32
            disp_sum += f;
            disp_ss += f * f;
        }
        for (double v : b.oracle.a) {
            const double f = static_cast<float>(v);
            acc_sum += f;
            acc_ss += f * f;
        }
        resp_n += b.oracle.u.size();
    }
    auto finalize = [](double sum, double ss, std::size_t n, double& mean, double& stdev) {
        if (n == 0) {
            mean = 0.0;
            stdev = 1.0;
            return;
        }
        mean = sum / n;
        const double var = std::max(ss / n - mean * mean, 0.0);
        stdev = var > 0.0 ? std::sqrt(var) : 1.0;
    };
    m.stats.dt = g.dt_s;
    finalize(wave_sum, wave_ss, wave_n, m.stats.wave_mean, m.stats.wave_std);
    finalize(disp_sum, disp_ss, resp_n, m.stats.disp_mean, m.stats.disp_std);
    finalize(acc_sum, acc_ss, resp_n, m.stats.acc_mean, m.stats.acc_std);

    // counts
    Doc by_type = Doc::object(), by_intensity = Doc::object(), by_split = Doc::object();
    for (std::size_t i : kept) {
        const auto& meta = built[i].meta;
        by_type[meta.structure_type] = doc_get(by_type, meta.structure_type, 0) + 1;
        by_intensity[meta.intensity] = doc_get(by_intensity, meta.intensity, 0) + 1;
        by_split[meta.split] = doc_get(by_split, meta.split, 0) + 1;
    }
    m.counts = Doc{{"by_type", by_type}, {"by_intensity", by_intensity}, {"by_split", by_split}};

    // persist sample files and the index, in sample order
    for (std::size_t i : kept) {
        auto& b = built[i];
        const std::string base = "samples/" + b.meta.id;
        b.meta.motion_path = base + ".motion.txt";
        b.meta.model_path = base + ".model.json";
        b.meta.oracle_path = base + ".oracle.sfrh";
        b.meta.sdr_path = base + ".sdr.sfrh";
        gm::save_record(out_dir / b.meta.motion_path, b.motion);
        Doc mdoc = model::to_doc(b.mdl);
        save_doc(out_dir / b.meta.model_path, mdoc);
        dyn::save_response(out_dir / b.meta.oracle_path, b.oracle);
        dyn::save_response(out_dir / b.meta.sdr_path, b.sdr);
        Doc meta_doc;
        meta_doc["id"] = b.meta.id;
        meta_doc["building"] = model::to_doc(b.building);
        meta_doc["direction"] = b.meta.direction;
        meta_doc["intensity"] = b.meta.intensity;
        meta_doc["split"] = b.meta.split;
        save_doc(out_dir / (base + ".meta.json"), meta_doc);
        m.samples.push_back(b.meta);
    }
    m.dir = out_dir;
    save_doc(out_dir / "manifest.json", m.to_doc());
    return m;
}

// ---------------------------------------------------------------------------
// Windows and loss
// ---------------------------------------------------------------------------

/// Normalized per-model story vectors: masses by total mass, stiffnesses by
/// the maximum story stiffness, zero-padded to n_max with the mask.
inline void story_vectors(const model::LumpedMassModel& m, int n_max, std::vector<float>& mv,
                          std::vector<float>& kv, std::vector<std::uint8_t>& mask) {
    const std::size_t n = m.n_stories();
    if (static_cast<int>(n) > n_max)
        throw ConfigError("model has " + std::to_string(n) + " stories, exceeding n_max " +
                          std::to_string(n_max));
    mv.assign(n_max, 0.0f);
    kv.assign(n_max, 0.0f);
    mask.assign(n_max, 0);
    double total_mass = 0.0, max_k = 0.0;
    for (double v : m.masses_kg) total_mass += v;
    for (double v : m.story_stiffness_n_per_m) max_k = std::max(max_k, v);
    for (std::size_t s = 0; s < n; ++s) {
        mv[s] = static_cast<float>(m.masses_kg[s] / total_mass);
        kv[s] = static_cast<float>(m.story_stiffness_n_per_m[s] / max_k);
        mask[s] = 1;
    }
}

/// One teacher-forced training window.
struct TrainingWindow {
    srfd::StepInputs<float> inputs;
    srfd::Mat<float> target;
    int valid_from = 0, valid_to = 0;
    std::string sample_id;
    int window_index = 0;
    long start = 0; // global step of window position 0
};

namespace detail {

inline float clip_input(double v, double clip) {
    return static_cast<float>(std::clamp(v, -clip, clip));
}

/// Normalized response value: channel q*n_max+s, quantity 0 = displacement,
/// 1 = acceleration; global step g outside [0, n_steps) reads as zero.
inline double norm_response(const dyn::ResponseHistory& r, const NormStats& st, int q, int s,
                            long g) {
    if (g < 0 || g >= static_cast<long>(r.n_steps)) return 0.0;
    const double raw =
        q == 0 ? static_cast<float>(r.get_u(s, g)) : static_cast<float>(r.get_a(s, g));
    return raw / (q == 0 ? st.disp_std : st.acc_std);
}

} // namespace detail

/// Cut one sample into teacher-forced windows: window w covers global steps
/// [start, start+W) with start = w*hop; its history channel is the oracle
/// over [start-W, start), zeros before step 0. Samples shorter than W get a
/// single front-padded window.
inline std::vector<TrainingWindow> make_windows(const LoadedSample& sample, const NormStats& st,
                                                const srfd::SrfdConfig& cfg, int hop,
                                                const std::string& sample_id) {
    if (hop < 1) throw ConfigError("make_windows: hop must be >= 1");
    const int W = cfg.window;
    const int n = static_cast<int>(sample.oracle.n_steps);
    const int n_stories = static_cast<int>(sample.oracle.n_stories);
    const int oc = cfg.out_channels();

    std::vector<float> mv, kv;
    std::vector<std::uint8_t> mask;
    story_vectors(sample.model, cfg.n_max, mv, kv, mask);

    std::vector<long> starts;
    if (n <= W)
        starts.push_back(n - W); // front padding
    else {
        const int nw = static_cast<int>((n - W + hop - 1) / hop) + 1;
        for (int w = 0; w < nw; ++w) starts.push_back(static_cast<long>(w) * hop);
    }

    std::vector<TrainingWindow> out;
    out.reserve(starts.size());
    for (std::size_t wi = 0; wi < starts.size(); ++wi) {
        const long s0 = starts[wi];
        TrainingWindow tw;
        tw.sample_id = sample_id;
        tw.window_index = static_cast<int>(wi);
        tw.start = s0;
        tw.inputs.wave = srfd::Mat<float>(W, 1);
        tw.inputs.history = srfd::Mat<float>(W, oc);
        tw.inputs.sdr = srfd::Mat<float>(W, oc);
        tw.target = srfd::Mat<float>(W, oc);
        tw.inputs.m_vec = mv;
        tw.inputs.k_vec = kv;
        tw.inputs.story_mask = mask;
        for (int t = 0; t < W; ++t) {
            const long g = s0 + t;
            const double wave =
                (g >= 0 && g < n) ? sample.motion.samples[g] / st.wave_std : 0.0;
            tw.inputs.wave(t, 0) = detail::clip_input(wave, st.input_clip);
            for (int q = 0; q < 2; ++q)
                for (int s = 0; s < n_stories; ++s) {
                    const int c = q * cfg.n_max + s;
                    tw.inputs.history(t, c) = detail::clip_input(
                        detail::norm_response(sample.oracle, st, q, s, g - W), st.input_clip);
                    tw.inputs.sdr(t, c) = detail::clip_input(
                        detail::norm_response(sample.sdr, st, q, s, g), st.input_clip);
                    tw.target(t, c) =
                        static_cast<float>(detail::norm_response(sample.oracle, st, q, s, g));
                }
        }
        const long lo = std::max(0L, -s0);            // first in-range window step
        const long hi = std::min<long>(W, n - s0);    // one past the last
        tw.valid_from = static_cast<int>(lo);
        tw.valid_to = static_cast<int>(std::max(lo, hi));
        out.push_back(std::move(tw));
    }
    return out;
}

/// Combined per-quantity MSE over the unmasked stories (unit weights), with
/// the optional gradient in `dpred`.
inline double loss_masked(const srfd::Mat<float>& pred, const srfd::Mat<float>& target,
                          const std::vector<std::uint8_t>& story_mask, int n_max, int valid_from,
                          int valid_to, srfd::Mat<float>* dpred = nullptr) {
    if (pred.rows != target.rows || pred.cols != target.cols)
        throw ConfigError("loss: prediction/target shape mismatch");
    if (dpred) dpred->zero();
    int active = 0;
    for (std::uint8_t m : story_mask) active += m ? 1 : 0;
    const long count = static_cast<long>(valid_to - valid_from) * active;
    if (count <= 0) return 0.0;
    double total = 0.0;
    for (int q = 0; q < 2; ++q) {
        double acc = 0.0;
        for (int t = valid_from; t < valid_to; ++t)
            for (int s = 0; s < n_max; ++s) {
                if (!story_mask[s]) continue;
                const int c = q * n_max + s;
                const double e = double(pred(t, c)) - double(target(t, c));
                acc += e * e;
                if (dpred) (*dpred)(t, c) = static_cast<float>(2.0 * e / count);
            }
        total += acc / count;
    }
    return total;
}

/// The plain operation: combined MSE over a full window.
inline double loss(const srfd::Mat<float>& pred, const srfd::Mat<float>& target,
                   const std::vector<std::uint8_t>& story_mask) {
    const int n_max = static_cast<int>(story_mask.size());
    return loss_masked(pred, target, story_mask, n_max, 0, pred.rows, nullptr);
}

// ---------------------------------------------------------------------------
// Optimizer and training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
    srfd::SrfdConfig model;
    int batch_size = 8;
    int max_steps = 2000;
    double peak_lr = 3e-4;
    double warmup_frac = 0.05;
    double final_lr_frac = 0.1;
    double grad_clip = 1.0;
    int hop = 0; // 0 means non-overlapping (hop = window)
    double scheduled_sampling = 0.0;
    int checkpoint_every = 0; // 0 means final checkpoint only
    std::uint64_t seed = 7;

    int effective_hop() const { return hop > 0 ? hop : model.window; }

    void validate() const {
        model.validate();
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (max_steps < 1) throw ConfigError("train: max_steps must be >= 1");
        if (peak_lr < 0.0) throw ConfigError("train: peak_lr must be >= 0");
        if (grad_clip <= 0.0) throw ConfigError("train: grad_clip must be > 0");
        if (scheduled_sampling < 0.0 || scheduled_sampling > 1.0)
            throw ConfigError("train: scheduled_sampling must be in [0, 1]");
    }

    Doc to_doc() const {
        Doc d;
        d["model"] = model.to_doc();
        d["batch_size"] = batch_size;
        d["max_steps"] = max_steps;
        d["peak_lr"] = peak_lr;
        d["warmup_frac"] = warmup_frac;
        d["final_lr_frac"] = final_lr_frac;
        d["grad_clip"] = grad_clip;
        d["hop"] = hop;
        d["scheduled_sampling"] = scheduled_sampling;
        d["checkpoint_every"] = checkpoint_every;
        d["seed"] = seed;
        return d;
    }

    static TrainConfig from_doc(const Doc& d) {
        reject_unknown_keys(d,
                            {"model", "batch_size", "max_steps", "peak_lr", "warmup_frac",
                             "final_lr_frac", "grad_clip", "hop", "scheduled_sampling",
                             "checkpoint_every", "seed"},
                            "train config");
        TrainConfig c;
        if (d.contains("model")) c.model = srfd::SrfdConfig::from_doc(d.at("model"));
        c.batch_size = doc_get(d, "batch_size", c.batch_size);
        c.max_steps = doc_get(d, "max_steps", c.max_steps);
        c.peak_lr = doc_get(d, "peak_lr", c.peak_lr);
        c.warmup_frac = doc_get(d, "warmup_frac", c.warmup_frac);
        c.final_lr_frac = doc_get(d, "final_lr_frac", c.final_lr_frac);
        c.grad_clip = doc_get(d, "grad_clip", c.grad_clip);
        c.hop = doc_get(d, "hop", c.hop);
        c.scheduled_sampling = doc_get(d, "scheduled_sampling", c.scheduled_sampling);
        c.checkpoint_every = doc_get(d, "checkpoint_every", c.checkpoint_every);
        c.seed = doc_get(d, "seed", c.seed);
        c.validate();
        return c;
    }
};

struct LogRow {
    int step;
    double loss;
    double lr;
    double grad_norm;
};

inline void write_training_log(const fs::path& path, const std::vector<LogRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << "step,loss,lr,grad_norm\n";
    for (const auto& r : rows)
        out << r.step << "," << gm::fmt_g17(r.loss) << "," << gm::fmt_g17(r.lr) << ","
            << gm::fmt_g17(r.grad_norm) << "\n";
}

namespace detail {

/// Adam with 64-bit moments; parameters stay 32-bit.
class Adam {
public:
    explicit Adam(const std::vector<srfd::Mat<float>*>& params) {
        for (auto* p : params) {
            m_.emplace_back(p->d.size(), 0.0);
            v_.emplace_back(p->d.size(), 0.0);
        }
    }

    void step(const std::vector<srfd::Mat<float>*>& params,
              const std::vector<srfd::Mat<float>*>& grads, double lr) {
        ++t_;
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double bc1 = 1.0 - std::pow(b1, t_);
        const double bc2 = 1.0 - std::pow(b2, t_);
        for (std::size_t p = 0; p < params.size(); ++p) {
            auto& theta = params[p]->d;
            const auto& g = grads[p]->d;
            for (std::size_t i = 0; i < theta.size(); ++i) {
                const double gi = g[i];
                m_[p][i] = b1 * m_[p][i] + (1.0 - b1) * gi;
                v_[p][i] = b2 * v_[p][i] + (1.0 - b2) * gi * gi;
                const double mh = m_[p][i] / bc1;
                const double vh = v_[p][i] / bc2;
                theta[i] = static_cast<float>(double(theta[i]) - lr * mh / (std::sqrt(vh) + eps));
            }
        }
    }

private:
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

inline double lr_at(const TrainConfig& c, int step) {
    const int total = c.max_steps;
    const int warmup = std::max(1, static_cast<int>(std::lround(c.warmup_frac * total)));
    if (step < warmup) return c.peak_lr * (step + 1) / warmup;
    const double final_lr = c.final_lr_frac * c.peak_lr;
    if (total <= warmup) return final_lr;
    const double progress = static_cast<double>(step - warmup) / (total - warmup);
    return final_lr + (c.peak_lr - final_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

inline double clip_grads(const std::vector<srfd::Mat<float>*>& grads, double max_norm) {
    double ss = 0.0;
    for (auto* g : grads)
        for (float v : g->d) ss += double(v) * double(v);
    const double norm = std::sqrt(ss);
    if (norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        for (auto* g : grads)
            for (auto& v : g->d) v = static_cast<float>(double(v) * scale);
    }
    return norm;
}

} // namespace detail

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<LogRow> log;
};

/// Teacher-forced windowed training with Adam, warmup+cosine learning rate,
/// global gradient-norm clipping and a fixed batch order per seed.
/// When `tune` is non-null only the adapters receive updates; the base
/// weights stay bit-identical.
inline TrainResult train_loop(const TrainConfig& cfg, const DatasetManifest& manifest,
                              srfd::SrfdWeights<float> weights, srfd::LoraSet<float>* tune,
                              const std::string& split = "train",
                              const std::function<void(int, const Checkpoint&)>& on_checkpoint = {}) {
    cfg.validate();

    // materialize every window of the split
    std::vector<TrainingWindow> windows;
    for (const auto& meta : manifest.samples) {
        if (meta.split != split) continue;
        const auto sample = load_sample(manifest, meta);
        auto ws = make_windows(sample, manifest.stats, cfg.model, cfg.effective_hop(), meta.id);
        for (auto& w : ws) windows.push_back(std::move(w));
    }
    if (windows.empty()) throw ConfigError("train: split '" + split + "' has no samples");

    // scheduled sampling substitutes the model's prediction of the window one
    // full W earlier in the same sample as the history channel
    std::vector<long> history_source(windows.size(), -1);
    if (cfg.scheduled_sampling > 0.0) {
        for (std::size_t i = 0; i < windows.size(); ++i)
            for (std::size_t j = 0; j < windows.size(); ++j)
                if (windows[j].sample_id == windows[i].sample_id &&
                    windows[j].start == windows[i].start - cfg.model.window)
                    history_source[i] = static_cast<long>(j);
    }

    std::vector<srfd::Mat<float>*> params, grads_list;
    auto dweights = srfd::zeros_like(weights);
    srfd::LoraSet<float> dlora;
    if (tune) {
        dlora = srfd::lora_zeros_like(*tune);
        tune->visit(weights, [&](const std::string&, srfd::Mat<float>& m) { params.push_back(&m); });
        dlora.visit(weights, [&](const std::string&, srfd::Mat<float>& m) { grads_list.push_back(&m); });
    } else {
        weights.visit([&](const std::string&, srfd::Mat<float>& m) { params.push_back(&m); });
        dweights.visit([&](const std::string&, srfd::Mat<float>& m) { grads_list.push_back(&m); });
    }
    detail::Adam adam(params);

    SplitMix64 order_rng = substream(cfg.seed, 0x08DEu);
    std::vector<std::size_t> order(windows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t cursor = order.size(); // forces an initial shuffle

    SplitMix64 ss_rng = substream(cfg.seed, 0x55AAu);
    srfd::SrfdState<float> state;
    std::vector<LogRow> log;
    TrainResult result;

    for (int step = 0; step < cfg.max_steps; ++step) {
        // zero gradients
        for (auto* g : grads_list) g->zero();
        if (tune) {
            // adapter training still runs the base backward; discard into scratch
        }
        double batch_loss = 0.0;
        std::vector<std::string> batch_ids;
        for (int b = 0; b < cfg.batch_size; ++b) {
            if (cursor >= order.size()) {
                for (std::size_t i = order.size(); i > 1; --i)
                    std::swap(order[i - 1], order[order_rng.below(i)]);
                cursor = 0;
            }
            TrainingWindow& w = windows[order[cursor++]];
            batch_ids.push_back(w.sample_id + "#" + std::to_string(w.window_index));

            srfd::StepInputs<float>* inputs = &w.inputs;
            srfd::StepInputs<float> sampled;
            if (cfg.scheduled_sampling > 0.0 && ss_rng.uniform01() < cfg.scheduled_sampling) {
                const long src = history_source[order[cursor - 1]];
                if (src >= 0) {
                    sampled = w.inputs;
                    srfd::SrfdState<float> h_state;
                    srfd::srfd_forward(cfg.model, weights, tune, windows[src].inputs, h_state);
                    sampled.history = h_state.y;
                    inputs = &sampled;
                }
            }

            srfd::srfd_forward(cfg.model, weights, tune, *inputs, state);
            srfd::Mat<float> dpred(cfg.model.window, cfg.model.out_channels());
            const double l = loss_masked(state.y, w.target, w.inputs.story_mask, cfg.model.n_max,
                                         w.valid_from, w.valid_to, &dpred);
            batch_loss += l;
            for (auto& v : dpred.d) v = static_cast<float>(double(v) / cfg.batch_size);
            if (tune)
                srfd::srfd_backward(cfg.model, weights, tune, *inputs, state, dpred, dweights,
                                    &dlora, nullptr);
            else
                srfd::srfd_backward(cfg.model, weights, nullptr, *inputs, state, dpred, dweights,
                                    nullptr, nullptr);
        }
        batch_loss /= cfg.batch_size;
        if (!std::isfinite(batch_loss)) {
            std::string ids;
            for (const auto& id : batch_ids) ids += (ids.empty() ? "" : ", ") + id;
            throw NumericalError("train: non-finite loss at step " + std::to_string(step) +
                                 " (batch: " + ids + ")");
        }

        const double gnorm = detail::clip_grads(grads_list, cfg.grad_clip);
        const double lr = detail::lr_at(cfg, step);
        adam.step(params, grads_list, lr);
        log.push_back({step, batch_loss, lr, gnorm});

        if (tune) dweights.visit([](const std::string&, srfd::Mat<float>& m) { m.zero(); });
        if (!tune && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
            on_checkpoint) {
            Checkpoint ck;
            ck.config = cfg.model;
            ck.weights = weights;
            ck.stats = manifest.stats;
            ck.provenance = Doc{{"seed", cfg.seed}, {"steps", step + 1}};
            on_checkpoint(step + 1, ck);
        }
    }

    result.checkpoint.config = cfg.model;
    result.checkpoint.weights = std::move(weights);
    result.checkpoint.stats = manifest.stats;
    result.checkpoint.provenance = Doc{{"seed", cfg.seed}, {"steps", cfg.max_steps}};
    result.log = std::move(log);
    return result;
}

inline TrainResult train(const TrainConfig& cfg, const DatasetManifest& manifest,
                         const std::function<void(int, const Checkpoint&)>& on_checkpoint = {}) {
    auto weights = srfd::init_weights<float>(cfg.model, cfg.seed);
    return train_loop(cfg, manifest, std::move(weights), nullptr, "train", on_checkpoint);
}

// ---------------------------------------------------------------------------
// Rollout prediction
// ---------------------------------------------------------------------------

/// Free-running autoregressive prediction over an arbitrary-length motion:
/// the SDR channel is simulated internally, window 0 uses zero history, and
/// every subsequent window's history is the model's own previous prediction.
inline dyn::ResponseHistory predict_rollout(const Checkpoint& ckpt,
                                            const srfd::LoraSet<float>* lora,
                                            const model::LumpedMassModel& m,
                                            const gm::GroundMotion& g) {
    const auto& cfg = ckpt.config;
    const auto& st = ckpt.stats;
    if (g.dt != st.dt)
        throw ConfigError("predict: motion dt " + gm::fmt_g17(g.dt) +
                          " differs from the checkpoint dt " + gm::fmt_g17(st.dt) +
                          " (resample first)");
    const int n_stories = static_cast<int>(m.n_stories());
    if (n_stories > cfg.n_max)
        throw ConfigError("predict: model has " + std::to_string(n_stories) +
                          " stories but the checkpoint supports " + std::to_string(cfg.n_max));

    const dyn::IntegratorParams p{0.5, 0.25, g.dt};
    dyn::ResponseHistory sdr;
    if (g.samples.size() >= 2) {
        sdr = dyn::sdr_response(m, g, p);
    } else {
        // single-sample motion: zero initial conditions are the whole response
        sdr.dt = g.dt;
        sdr.resize(n_stories, g.samples.size());
    }

    std::vector<float> mv, kv;
    std::vector<std::uint8_t> mask;
    story_vectors(m, cfg.n_max, mv, kv, mask);

    const int W = cfg.window;
    const long n = static_cast<long>(g.samples.size());
    const long n_windows = n <= W ? 1 : (n + W - 1) / W;

    dyn::ResponseHistory out;
    out.dt = g.dt;
    out.resize(n_stories, n);

    srfd::StepInputs<float> in;
    in.wave = srfd::Mat<float>(W, 1);
    in.history = srfd::Mat<float>(W, cfg.out_channels());
    in.sdr = srfd::Mat<float>(W, cfg.out_channels());
    in.m_vec = mv;
    in.k_vec = kv;
    in.story_mask = mask;

    srfd::Mat<float> prev_pred(W, cfg.out_channels()); // normalized, zeros for window 0
    srfd::SrfdState<float> state;
    for (long w = 0; w < n_windows; ++w) {
        const long s0 = n <= W ? n - W : w * static_cast<long>(W);
        for (int t = 0; t < W; ++t) {
            const long gidx = s0 + t;
            const double wave = (gidx >= 0 && gidx < n) ? g.samples[gidx] / st.wave_std : 0.0;
            in.wave(t, 0) = detail::clip_input(wave, st.input_clip);
            for (int q = 0; q < 2; ++q)
                for (int s = 0; s < n_stories; ++s) {
                    const int c = q * cfg.n_max + s;
                    in.sdr(t, c) =
                        detail::clip_input(detail::norm_response(sdr, st, q, s, gidx), st.input_clip);
                    in.history(t, c) =
                        detail::clip_input(double(prev_pred(t, c)), st.input_clip);
                }
        }
        srfd::srfd_forward(cfg, ckpt.weights, lora, in, state);
        prev_pred = state.y;
        for (int t = 0; t < W; ++t) {
            const long gidx = s0 + t;
            if (gidx < 0 || gidx >= n) continue;
            for (int s = 0; s < n_stories; ++s) {
                out.at(out.u, s, gidx) = double(state.y(t, s)) * st.disp_std;
                out.at(out.a, s, gidx) = double(state.y(t, cfg.n_max + s)) * st.acc_std;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct MetricSet {
    double mse = 0.0, mae = 0.0, mre = 0.0, r = 0.0;
    long count = 0;
};

/// MSE/MAE/MRE and the Pearson correlation over paired value streams.
/// MRE = sum|error| / sum|target|; degenerate variance pins R to 0.
inline MetricSet compute_metrics(const std::vector<double>& pred,
                                 const std::vector<double>& target) {
    MetricSet ms;
    const std::size_t n = pred.size();
    if (n == 0 || target.size() != n) return ms;
    double se = 0.0, ae = 0.0, at = 0.0;
    double sx = 0.0, sy = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = pred[i] - target[i];
        se += e * e;
        ae += std::abs(e);
        at += std::abs(target[i]);
        sx += pred[i];
        sy += target[i];
        sxx += pred[i] * pred[i];
        syy += target[i] * target[i];
        sxy += pred[i] * target[i];
    }
    ms.count = static_cast<long>(n);
    ms.mse = se / n;
    ms.mae = ae / n;
    ms.mre = at > 0.0 ? ae / at : 0.0;
    const double covxy = sxy / n - (sx / n) * (sy / n);
    const double varx = sxx / n - (sx / n) * (sx / n);
    const double vary = syy / n - (sy / n) * (sy / n);
    ms.r = (varx > 0.0 && vary > 0.0) ? covxy / std::sqrt(varx * vary) : 0.0;
    return ms;
}

struct EvalReport {
    MetricSet displacement, acceleration;
    std::vector<MetricSet> per_floor_disp, per_floor_acc;
    struct WorstCase {
        std::string sample_id;
        double r_disp;
    };
    std::vector<WorstCase> worst; // ascending displacement R
    int n_samples = 0;

    Doc to_doc() const {
        auto metric_doc = [](const MetricSet& m) {
            return Doc{{"mse", m.mse}, {"mae", m.mae}, {"mre", m.mre}, {"r", m.r},
                       {"count", m.count}};
        };
        Doc d;
        d["n_samples"] = n_samples;
        d["displacement"] = metric_doc(displacement);
        d["acceleration"] = metric_doc(acceleration);
        Doc pf = Doc::array();
        for (std::size_t s = 0; s < per_floor_disp.size(); ++s)
            pf.push_back(Doc{{"floor", s + 1},
                             {"displacement", metric_doc(per_floor_disp[s])},
                             {"acceleration", metric_doc(per_floor_acc[s])}});
        d["per_floor"] = std::move(pf);
        Doc wc = Doc::array();
        for (const auto& w : worst) wc.push_back(Doc{{"id", w.sample_id}, {"r_disp", w.r_disp}});
        d["worst_cases"] = std::move(wc);
        return d;
    }
};

inline void write_eval_csv(const fs::path& path, const EvalReport& rep) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << "quantity,floor,mse,mae,mre,r\n";
    auto row = [&](const std::string& q, const std::string& floor, const MetricSet& m) {
        out << q << "," << floor << "," << gm::fmt_g17(m.mse) << "," << gm::fmt_g17(m.mae) << ","
            << gm::fmt_g17(m.mre) << "," << gm::fmt_g17(m.r) << "\n";
    };
    row("displacement", "all", rep.displacement);
    row("acceleration", "all", rep.acceleration);
    for (std::size_t s = 0; s < rep.per_floor_disp.size(); ++s) {
        row("displacement", std::to_string(s + 1), rep.per_floor_disp[s]);
        row("acceleration", std::to_string(s + 1), rep.per_floor_acc[s]);
    }
}

/// Rollout every split sample and aggregate the metrics.
inline EvalReport evaluate(const Checkpoint& ckpt, const srfd::LoraSet<float>* lora,
                           const DatasetManifest& manifest, const std::string& split,
                           std::vector<dyn::ResponseHistory>* predictions = nullptr,
                           std::vector<const SampleMeta*>* metas_out = nullptr) {
    std::vector<const SampleMeta*> metas;
    for (const auto& s : manifest.samples)
        if (s.split == split) metas.push_back(&s);
    if (metas.empty()) throw ConfigError("evaluate: split '" + split + "' has no samples");

    struct PerSample {
        std::vector<double> pd, td, pa, ta; // pred/target per quantity
        double r_disp = 0.0;
        dyn::ResponseHistory pred;
        std::size_t n_stories = 0, n_steps = 0;
        std::vector<double> floor_pd, floor_td, floor_pa, floor_ta; // flattened per-floor
    };
    std::vector<PerSample> results(metas.size());

    parallel_for(metas.size(), [&](std::size_t i) {
        const auto sample = load_sample(manifest, *metas[i]);
        auto pred = predict_rollout(ckpt, lora, sample.model, sample.motion);
        PerSample& ps = results[i];
        ps.n_stories = pred.n_stories;
        ps.n_steps = pred.n_steps;
        for (std::size_t s = 0; s < pred.n_stories; ++s)
            for (std::size_t t = 0; t < pred.n_steps; ++t) {
                ps.pd.push_back(pred.get_u(s, t));
                ps.td.push_back(static_cast<float>(sample.oracle.get_u(s, t)));
                ps.pa.push_back(pred.get_a(s, t));
                ps.ta.push_back(static_cast<float>(sample.oracle.get_a(s, t)));
            }
        ps.r_disp = compute_metrics(ps.pd, ps.td).r;
        ps.pred = std::move(pred);
    });

    EvalReport rep;
    rep.n_samples = static_cast<int>(metas.size());
    std::vector<double> all_pd, all_td, all_pa, all_ta;
    std::size_t max_stories = 0;
    for (const auto& ps : results) max_stories = std::max(max_stories, ps.n_stories);
    std::vector<std::vector<double>> f_pd(max_stories), f_td(max_stories), f_pa(max_stories),
        f_ta(max_stories);
    for (const auto& ps : results) {
        all_pd.insert(all_pd.end(), ps.pd.begin(), ps.pd.end());
        all_td.insert(all_td.end(), ps.td.begin(), ps.td.end());
        all_pa.insert(all_pa.end(), ps.pa.begin(), ps.pa.end());
        all_ta.insert(all_ta.end(), ps.ta.begin(), ps.ta.end());
        for (std::size_t s = 0; s < ps.n_stories; ++s)
            for (std::size_t t = 0; t < ps.n_steps; ++t) {
                const std::size_t idx = s * ps.n_steps + t;
                f_pd[s].push_back(ps.pd[idx]);
                f_td[s].push_back(ps.td[idx]);
                f_pa[s].push_back(ps.pa[idx]);
                f_ta[s].push_back(ps.ta[idx]);
            }
    }
    rep.displacement = compute_metrics(all_pd, all_td);
    rep.acceleration = compute_metrics(all_pa, all_ta);
    for (std::size_t s = 0; s < max_stories; ++s) {
        rep.per_floor_disp.push_back(compute_metrics(f_pd[s], f_td[s]));
        rep.per_floor_acc.push_back(compute_metrics(f_pa[s], f_ta[s]));
    }
    for (std::size_t i = 0; i < metas.size(); ++i)
        rep.worst.push_back({metas[i]->id, results[i].r_disp});
    std::stable_sort(rep.worst.begin(), rep.worst.end(),
                     [](const auto& a, const auto& b) { return a.r_disp < b.r_disp; });
    if (predictions) {
        predictions->clear();
        for (auto& ps : results) predictions->push_back(std::move(ps.pred));
    }
    if (metas_out) *metas_out = metas;
    return rep;
}

// ---------------------------------------------------------------------------
// LoRA fine-tuning
// ---------------------------------------------------------------------------

/// Attach zero-initialized adapters to every attention map and train only
/// them; the returned adapter references the base checkpoint's content hash.
inline AdapterCheckpoint finetune_lora(const Checkpoint& base, const std::string& base_bytes,
                                       const DatasetManifest& manifest, int rank, double alpha,
                                       const TrainConfig& tune_cfg_in,
                                       std::vector<LogRow>* log_out = nullptr,
                                       const std::string& split = "train") {
    if (rank < 1) throw ConfigError("finetune: rank must be >= 1");
    TrainConfig cfg = tune_cfg_in;
    cfg.model = base.config;
    cfg.model.lora_rank = rank;
    cfg.model.lora_alpha = alpha;
    cfg.validate();

    auto weights = base.weights; // frozen; train_loop never updates it in tune mode
    auto lora = srfd::make_lora<float>(cfg.model, weights, cfg.seed);
    // windows must be normalized with the base checkpoint's frozen statistics,
    // not the fine-tune dataset's own
    DatasetManifest tuned_manifest = manifest;
    tuned_manifest.stats = base.stats;
    auto result = train_loop(cfg, tuned_manifest, std::move(weights), &lora, split);
    if (log_out) *log_out = std::move(result.log);

    AdapterCheckpoint a;
    a.config = cfg.model;
    a.lora = std::move(lora);
    a.base_hash_hex = hex64(fnv1a64(base_bytes));
    a.provenance = Doc{{"seed", cfg.seed}, {"steps", cfg.max_steps}, {"split", split}};
    return a;
}

} // namespace seisforge::train
