#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "seisforge/errors.hpp"
#include "seisforge/jsondoc.hpp"
#include "seisforge/linalg.hpp"
#include "seisforge/rng.hpp"
#include "seisforge/spring_law.hpp"

namespace seisforge::model {

struct DomainError : ConfigError {
    using ConfigError::ConfigError;
};

enum class StructureType { frame, shear_frame, complex_shear };
enum class ConcreteGrade { C25, C30, C35, C40, C45, C50 };
enum class Direction { x, y };

inline const char* to_string(StructureType t) {
    switch (t) {
        case StructureType::frame: return "frame";
        case StructureType::shear_frame: return "shear_frame";
        case StructureType::complex_shear: return "complex_shear";
    }
    return "?";
}

inline StructureType structure_type_from_string(const std::string& s) {
    if (s == "frame") return StructureType::frame;
    if (s == "shear_frame") return StructureType::shear_frame;
    if (s == "complex_shear") return StructureType::complex_shear;
    throw ConfigError("unknown structure type '" + s + "'");
}

inline double fck_mpa(ConcreteGrade g) {
    switch (g) {
        case ConcreteGrade::C25: return 25.0;
        case ConcreteGrade::C30: return 30.0;
        case ConcreteGrade::C35: return 35.0;
        case ConcreteGrade::C40: return 40.0;
        case ConcreteGrade::C45: return 45.0;
        case ConcreteGrade::C50: return 50.0;
    }
    return 0.0;
}

inline std::string to_string(ConcreteGrade g) {
    return "C" + std::to_string(static_cast<int>(fck_mpa(g)));
}

inline ConcreteGrade grade_from_string(const std::string& s) {
    if (s == "C25") return ConcreteGrade::C25;
    if (s == "C30") return ConcreteGrade::C30;
    if (s == "C35") return ConcreteGrade::C35;
    if (s == "C40") return ConcreteGrade::C40;
    if (s == "C45") return ConcreteGrade::C45;
    if (s == "C50") return ConcreteGrade::C50;
    throw ConfigError("unknown concrete grade '" + s + "'");
}

// Story banding per structure type: frame 1-10, shear-frame 11-20,
// complex shear 20-33.
inline std::pair<int, int> story_band(StructureType t) {
    switch (t) {
        case StructureType::frame: return {1, 10};
        case StructureType::shear_frame: return {11, 20};
        case StructureType::complex_shear: return {20, 33};
    }
    return {1, 1};
}

/// Parametric RC building description. Field ranges follow the design-table
/// conventions; discrete parameters sample from the enumerated support sets.
struct BuildingConfig {
    int n_stories = 1;
    double floor_height_m = 3.0;
    double slab_thickness_mm = 100.0;
    int n_spans_x = 4;
    int n_spans_y = 4;
    double span_length_m = 7.5;
    double aspect_ratio = 0.8; // plan length-to-width ratio, y relative to x
    double column_w_mm = 500.0; // dimension along x
    double column_d_mm = 500.0; // dimension along y
    double beam_w_mm = 300.0;
    double beam_d_mm = 600.0;
    std::optional<double> wall_thickness_mm; // present for wall-bearing types
    ConcreteGrade concrete_grade = ConcreteGrade::C30;
    double rebar_strength_mpa = 377.5;
    StructureType structure_type = StructureType::frame;

    int n_columns() const { return (n_spans_x + 1) * (n_spans_y + 1); }
    double plan_length_x_m() const { return n_spans_x * span_length_m; }
    double plan_length_y_m() const { return n_spans_y * span_length_m * aspect_ratio; }
    double plan_area_m2() const { return plan_length_x_m() * plan_length_y_m(); }

    void validate() const {
        auto [lo, hi] = story_band(structure_type);
        if (n_stories < lo || n_stories > hi)
            throw ConfigError("building: n_stories " + std::to_string(n_stories) +
                              " outside the band for " + to_string(structure_type));
        if (floor_height_m < 3.0 - 1e-9 || floor_height_m > 3.6 + 1e-9)
            throw ConfigError("building: floor_height out of range");
        if (slab_thickness_mm < 80 || slab_thickness_mm > 150)
            throw ConfigError("building: slab_thickness out of range");
        if (n_spans_x < 3 || n_spans_x > 10 || n_spans_y < 3 || n_spans_y > 10)
            throw ConfigError("building: span count out of range");
        if (span_length_m < 5.0 || span_length_m > 10.0)
            throw ConfigError("building: span_length out of range");
        if (aspect_ratio < 2.0 / 3.0 - 1e-9 || aspect_ratio > 1.0 + 1e-9)
            throw ConfigError("building: aspect_ratio out of range");
        if (wall_thickness_mm && (*wall_thickness_mm < 200 || *wall_thickness_mm > 400))
            throw ConfigError("building: wall_thickness out of range");
        if (rebar_strength_mpa < 355 || rebar_strength_mpa > 400)
            throw ConfigError("building: rebar_strength out of range");
        if (column_w_mm <= 0 || column_d_mm <= 0 || beam_w_mm <= 0 || beam_d_mm <= 0)
            throw ConfigError("building: member sizes must be positive");
    }
};

/// Lumped-mass shear-building idealization: one mass per floor, one lateral
/// spring per story.
struct LumpedMassModel {
    std::string id;
    Vec masses_kg;
    Vec story_stiffness_n_per_m;
    double damping_ratio = 0.05;
    std::vector<dyn::StorySpringLaw> spring_law;

    std::size_t n_stories() const { return masses_kg.size(); }

    void validate() const {
        if (masses_kg.empty() || masses_kg.size() != story_stiffness_n_per_m.size())
            throw ConfigError("model: masses/stiffness size mismatch");
        for (double m : masses_kg)
            if (!(m > 0.0)) throw ConfigError("model: masses must be > 0");
        for (double k : story_stiffness_n_per_m)
            if (!(k > 0.0)) throw ConfigError("model: stiffnesses must be > 0");
        if (!(damping_ratio > 0.0 && damping_ratio < 0.2))
            throw ConfigError("model: damping ratio must be in (0, 0.2)");
        if (!spring_law.empty() && spring_law.size() != masses_kg.size())
            throw ConfigError("model: spring law count mismatch");
        for (std::size_t i = 0; i < spring_law.size(); ++i) {
            spring_law[i].validate();
            // elastic stiffness of the law must agree with the spring array:
            // forces come from the laws, damping/modal analysis from the array
            if (spring_law[i].k != story_stiffness_n_per_m[i])
                throw ConfigError("model: spring law k differs from story stiffness at story " +
                                  std::to_string(i + 1));
        }
    }
};

struct ModalSummary {
    Vec omega; // natural circular frequencies, rad/s, ascending
    double T1 = 0.0;
};

// ---------------------------------------------------------------------------
// Sampling (design-table protocol)
// ---------------------------------------------------------------------------

namespace table {
// Discrete support sets: the enumerated table values intersected with the
// stated min/max ranges.
inline constexpr double kFloorHeight[] = {3.0, 3.1, 3.2, 3.3};
inline constexpr double kSlabThickness[] = {90, 100, 110, 120};
inline constexpr int kSpans[] = {4, 5, 6, 7, 8, 9};
inline constexpr double kWallThickness[] = {250, 300, 350};
inline constexpr ConcreteGrade kGrades[] = {ConcreteGrade::C30, ConcreteGrade::C35,
                                            ConcreteGrade::C40, ConcreteGrade::C45};
} // namespace table

namespace detail {

template <typename T, std::size_t N>
T pick(SplitMix64& rng, const T (&set)[N]) {
    return set[rng.below(N)];
}

inline double round_to_50mm(double v) { return 50.0 * std::round(v / 50.0); }

} // namespace detail

/// Story mass (kg) shared by the sampler's rejection test and reduce_to_mdof.
/// Formula (documented so tests can evaluate it by hand):
///   m = rho_c*(plan_area*slab_t + column_volume + beam_volume) + live_mass*plan_area
/// with rho_c = 2500 kg/m^3 and live mass equivalent to 0.5 kPa.
inline double story_mass_kg(const BuildingConfig& c) {
    constexpr double rho_c = 2500.0;      // kg/m^3
    constexpr double live_kpa = 0.5;      // kPa-equivalent live allowance
    const double h = c.floor_height_m;
    const double area = c.plan_area_m2();
    const double slab_vol = area * c.slab_thickness_mm * 1e-3;
    const double col_vol =
        c.n_columns() * (c.column_w_mm * 1e-3) * (c.column_d_mm * 1e-3) * h;
    const double beam_len = (c.n_spans_y + 1) * c.plan_length_x_m() +
                            (c.n_spans_x + 1) * c.plan_length_y_m();
    const double beam_vol = beam_len * (c.beam_w_mm * 1e-3) * (c.beam_d_mm * 1e-3);
    const double live_mass = live_kpa * 1e3 / 9.80665 * area;
    return rho_c * (slab_vol + col_vol + beam_vol) + live_mass;
}

inline double elastic_modulus_pa(ConcreteGrade g) {
    return 4700.0 * std::sqrt(fck_mpa(g)) * 1e6; // E_c = 4700*sqrt(f_ck) MPa
}

/// Story lateral stiffness (N/m) in the given sway direction:
///   k = sum_columns 12*E_c*I_col/h^3 + (walls) G_c*A_wall*kappa/h
/// with I_col taken about the axis normal to the sway direction,
/// G_c = E_c/2.4 (nu = 0.2), kappa = 5/6, and total wall length per
/// direction = 0.15 * plan length in that direction.
inline double story_stiffness_n_per_m(const BuildingConfig& c, Direction dir) {
    constexpr double kappa = 5.0 / 6.0;
    constexpr double wall_length_ratio = 0.15;
    const double E = elastic_modulus_pa(c.concrete_grade);
    const double h = c.floor_height_m;
    const double cw = c.column_w_mm * 1e-3, cd = c.column_d_mm * 1e-3;
    // dimension along the sway direction is cubed
    const double icol = dir == Direction::x ? cd * cw * cw * cw / 12.0
                                            : cw * cd * cd * cd / 12.0;
    double k = c.n_columns() * 12.0 * E * icol / (h * h * h);
    if (c.wall_thickness_mm) {
        const double g_c = E / 2.4;
        const double plan_len =
            dir == Direction::x ? c.plan_length_x_m() : c.plan_length_y_m();
        const double a_wall = (*c.wall_thickness_mm * 1e-3) * (wall_length_ratio * plan_len);
        k += g_c * a_wall * kappa / h;
    }
    return k;
}

/// Axial-load rejection proxy: tributary weight per bottom-story column over
/// (column area * f_ck); configurations above 0.9 are regenerated.
inline double axial_load_proxy(const BuildingConfig& c) {
    const double weight = c.n_stories * story_mass_kg(c) * 9.80665;
    const double per_column = weight / c.n_columns();
    const double area = (c.column_w_mm * 1e-3) * (c.column_d_mm * 1e-3);
    return per_column / (area * fck_mpa(c.concrete_grade) * 1e6);
}

/// Draw one building configuration for the given structural type.
/// Deterministic per seed. Configurations failing the axial-load proxy are
/// regenerated; more than 1000 attempts is a generation error.
inline BuildingConfig sample_building(StructureType type, std::uint64_t rng_seed,
                                      int max_stories = 33) {
    SplitMix64 rng = substream(rng_seed, static_cast<std::uint64_t>(type) + 11u);
    auto [lo, hi] = story_band(type);
    hi = std::min(hi, max_stories);
    if (hi < lo)
        throw GenerationError("sample_building: story cap " + std::to_string(max_stories) +
                              " below the band for " + to_string(type));
    for (int attempt = 0; attempt < 1000; ++attempt) {
        BuildingConfig c;
        c.structure_type = type;
        c.n_stories = static_cast<int>(rng.between(lo, hi));
        c.floor_height_m = detail::pick(rng, table::kFloorHeight);
        c.slab_thickness_mm = detail::pick(rng, table::kSlabThickness);
        c.n_spans_x = detail::pick(rng, table::kSpans);
        c.n_spans_y = detail::pick(rng, table::kSpans);
        c.span_length_m = rng.uniform(5.0, 10.0);
        c.aspect_ratio = rng.uniform(2.0 / 3.0, 1.0);
        c.concrete_grade = detail::pick(rng, table::kGrades);
        c.rebar_strength_mpa = rng.uniform(355.0, 400.0);
        if (type != StructureType::frame)
            c.wall_thickness_mm = detail::pick(rng, table::kWallThickness);
        // member sizes grow with the story count, then face the axial check
        const double c_lo = 300.0 + 15.0 * c.n_stories;
        const double c_side = detail::round_to_50mm(rng.uniform(c_lo, c_lo + 250.0));
        c.column_w_mm = c_side;
        c.column_d_mm = c_side;
        const double span_mm = c.span_length_m * 1e3;
        c.beam_d_mm = detail::round_to_50mm(rng.uniform(span_mm / 14.0, span_mm / 10.0));
        c.beam_w_mm = std::max(200.0, detail::round_to_50mm(c.beam_d_mm / 2.0));
        if (axial_load_proxy(c) <= 0.9) {
            c.validate();
            return c;
        }
    }
    throw GenerationError("sample_building: no acceptable configuration in 1000 attempts");
}

/// Collapse the building to its planar lumped-mass model for one direction.
inline LumpedMassModel reduce_to_mdof(const BuildingConfig& c,
                                      Direction dir = Direction::x) {
    c.validate();
    LumpedMassModel m;
    const double mass = story_mass_kg(c);
    const double k = story_stiffness_n_per_m(c, dir);
    m.masses_kg.assign(c.n_stories, mass);
    m.story_stiffness_n_per_m.assign(c.n_stories, k);
    m.spring_law.assign(c.n_stories, dyn::StorySpringLaw{.k = k});
    m.damping_ratio = 0.05;
    return m;
}

// ---------------------------------------------------------------------------
// Matrices and modal analysis
// ---------------------------------------------------------------------------

/// M = diag(masses); K is the shear-building tridiagonal
/// (K[i][i] = k_i + k_{i+1}, K[i][i+1] = -k_{i+1}).
inline std::pair<DiagMat, SymTriDiag> assemble_matrices(const LumpedMassModel& m) {
    m.validate();
    const std::size_t n = m.n_stories();
    DiagMat M{m.masses_kg};
    SymTriDiag K;
    K.diag.resize(n);
    K.off.resize(n > 1 ? n - 1 : 0);
    for (std::size_t i = 0; i < n; ++i) {
        K.diag[i] = m.story_stiffness_n_per_m[i] +
                    (i + 1 < n ? m.story_stiffness_n_per_m[i + 1] : 0.0);
        if (i + 1 < n) K.off[i] = -m.story_stiffness_n_per_m[i + 1];
    }
    return {std::move(M), std::move(K)};
}

/// Natural frequencies from K*phi = omega^2*M*phi. M diagonal makes
/// D^-1/2 K D^-1/2 symmetric tridiagonal, solved by the QL eigenvalue
/// routine; for n = 1 this is exactly T = 2*pi*sqrt(m/k).
inline ModalSummary fundamental_periods(const DiagMat& M, const SymTriDiag& K) {
    const std::size_t n = M.size();
    if (n == 0 || K.size() != n) throw ConfigError("fundamental_periods: empty or mismatched");
    Vec d(n), e(n > 1 ? n - 1 : 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(M.d[i] > 0.0)) throw ConfigError("fundamental_periods: non-positive mass");
        d[i] = K.diag[i] / M.d[i];
        if (i + 1 < n) e[i] = K.off[i] / std::sqrt(M.d[i] * M.d[i + 1]);
    }
    Vec lam = sym_tridiag_eigenvalues(std::move(d), std::move(e));
    ModalSummary s;
    s.omega.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(lam[i] > 0.0))
            throw NumericalError("fundamental_periods: non-positive eigenvalue " +
                                 std::to_string(lam[i]));
        s.omega[i] = std::sqrt(lam[i]);
    }
    s.T1 = 2.0 * std::numbers::pi / s.omega[0];
    return s;
}

inline ModalSummary fundamental_periods(const LumpedMassModel& m) {
    auto [M, K] = assemble_matrices(m);
    return fundamental_periods(M, K);
}

/// Rayleigh anchor frequencies: first two modes, with the single-story
/// fallback omega2 := 3*omega1.
inline std::pair<double, double> rayleigh_anchors(const ModalSummary& s) {
    if (s.omega.size() >= 2) return {s.omega[0], s.omega[1]};
    return {s.omega[0], 3.0 * s.omega[0]};
}

/// S = (T / T_hat)^2, the period-matching stiffness scale coefficient.
inline double stiffness_scale_factor(double t_target, double t_hat) {
    if (!(t_target > 0.0) || !(t_hat > 0.0))
        throw DomainError("stiffness_scale_factor: periods must be > 0");
    const double r = t_target / t_hat;
    return r * r;
}

/// Apply the period-matching scale: with S = (T_target/T_hat)^2 computed from
/// the current period T_hat, every story stiffness is multiplied by 1/S so
/// the scaled model's fundamental period equals T_target. S = 1 returns the
/// model unchanged.
inline LumpedMassModel apply_scale(const LumpedMassModel& m, double s) {
    if (!(s > 0.0)) throw DomainError("apply_scale: S must be > 0");
    if (s == 1.0) return m;
    LumpedMassModel out = m;
    const double f = 1.0 / s;
    for (auto& k : out.story_stiffness_n_per_m) k *= f;
    for (auto& law : out.spring_law) law.k *= f;
    return out;
}

// ---------------------------------------------------------------------------
// Serialization (unit-suffixed key-value documents)
// ---------------------------------------------------------------------------

inline Doc to_doc(const BuildingConfig& c) {
    Doc d;
    d["structure_type"] = to_string(c.structure_type);
    d["n_stories"] = c.n_stories;
    d["floor_height_m"] = c.floor_height_m;
    d["slab_thickness_mm"] = c.slab_thickness_mm;
    d["n_spans_x"] = c.n_spans_x;
    d["n_spans_y"] = c.n_spans_y;
    d["span_length_m"] = c.span_length_m;
    d["aspect_ratio"] = c.aspect_ratio;
    d["column_w_mm"] = c.column_w_mm;
    d["column_d_mm"] = c.column_d_mm;
    d["beam_w_mm"] = c.beam_w_mm;
    d["beam_d_mm"] = c.beam_d_mm;
    if (c.wall_thickness_mm) d["wall_thickness_mm"] = *c.wall_thickness_mm;
    d["concrete_grade"] = to_string(c.concrete_grade);
    d["rebar_strength_mpa"] = c.rebar_strength_mpa;
    return d;
}

inline BuildingConfig building_from_doc(const Doc& d) {
    reject_unknown_keys(d,
                        {"structure_type", "n_stories", "floor_height_m", "slab_thickness_mm",
                         "n_spans_x", "n_spans_y", "span_length_m", "aspect_ratio",
                         "column_w_mm", "column_d_mm", "beam_w_mm", "beam_d_mm",
                         "wall_thickness_mm", "concrete_grade", "rebar_strength_mpa"},
                        "building");
    BuildingConfig c;
    c.structure_type = structure_type_from_string(doc_require<std::string>(d, "structure_type", "building"));
    c.n_stories = doc_require<int>(d, "n_stories", "building");
    c.floor_height_m = doc_require<double>(d, "floor_height_m", "building");
    c.slab_thickness_mm = doc_require<double>(d, "slab_thickness_mm", "building");
    c.n_spans_x = doc_require<int>(d, "n_spans_x", "building");
    c.n_spans_y = doc_require<int>(d, "n_spans_y", "building");
    c.span_length_m = doc_require<double>(d, "span_length_m", "building");
    c.aspect_ratio = doc_require<double>(d, "aspect_ratio", "building");
    c.column_w_mm = doc_require<double>(d, "column_w_mm", "building");
    c.column_d_mm = doc_require<double>(d, "column_d_mm", "building");
    c.beam_w_mm = doc_require<double>(d, "beam_w_mm", "building");
    c.beam_d_mm = doc_require<double>(d, "beam_d_mm", "building");
    if (d.contains("wall_thickness_mm")) c.wall_thickness_mm = d.at("wall_thickness_mm").get<double>();
    c.concrete_grade = grade_from_string(doc_require<std::string>(d, "concrete_grade", "building"));
    c.rebar_strength_mpa = doc_require<double>(d, "rebar_strength_mpa", "building");
    c.validate();
    return c;
}

inline Doc to_doc(const LumpedMassModel& m) {
    Doc d;
    d["id"] = m.id;
    d["masses_kg"] = m.masses_kg;
    d["story_stiffness_n_per_m"] = m.story_stiffness_n_per_m;
    d["damping_ratio"] = m.damping_ratio;
    Doc laws = Doc::array();
    for (const auto& law : m.spring_law) {
        Doc l;
        l["kind"] = law.kind == dyn::StorySpringLaw::Kind::linear ? "linear" : "bilinear";
        l["k_n_per_m"] = law.k;
        if (law.kind == dyn::StorySpringLaw::Kind::bilinear) {
            l["post_yield_ratio"] = law.post_yield_ratio;
            l["u_yield_m"] = law.u_yield;
        }
        laws.push_back(std::move(l));
    }
    d["spring_law"] = std::move(laws);
    return d;
}

inline LumpedMassModel model_from_doc(const Doc& d) {
    reject_unknown_keys(d, {"id", "masses_kg", "story_stiffness_n_per_m", "damping_ratio",
                            "spring_law"},
                        "model");
    LumpedMassModel m;
    m.id = doc_get<std::string>(d, "id", "");
    m.masses_kg = doc_require<Vec>(d, "masses_kg", "model");
    m.story_stiffness_n_per_m = doc_require<Vec>(d, "story_stiffness_n_per_m", "model");
    m.damping_ratio = doc_require<double>(d, "damping_ratio", "model");
    if (d.contains("spring_law")) {
        for (const auto& l : d.at("spring_law")) {
            dyn::StorySpringLaw law;
            const std::string kind = doc_require<std::string>(l, "kind", "spring_law");
            law.k = doc_require<double>(l, "k_n_per_m", "spring_law");
            if (kind == "bilinear") {
                law.kind = dyn::StorySpringLaw::Kind::bilinear;
                law.post_yield_ratio = doc_require<double>(l, "post_yield_ratio", "spring_law");
                law.u_yield = doc_require<double>(l, "u_yield_m", "spring_law");
            } else if (kind != "linear") {
                throw ConfigError("spring_law: unknown kind '" + kind + "'");
            }
            m.spring_law.push_back(law);
        }
    }
    m.validate();
    return m;
}

} // namespace seisforge::model
