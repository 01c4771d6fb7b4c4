#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "seisforge/errors.hpp"
#include "seisforge/ground_motion.hpp"
#include "seisforge/linalg.hpp"
#include "seisforge/spring_law.hpp"
#include "seisforge/structure_model.hpp"

namespace seisforge::dyn {

using model::DomainError;

/// Newmark-beta constants, classical convention: the displacement update uses
/// (1/2 - beta)*a_n + beta*a_{n+1}. gamma = 1/2, beta = 1/4 is the
/// unconditionally stable average-acceleration preset.
struct IntegratorParams {
    double gamma = 0.5;
    double beta = 0.25;
    double dt = 0.02;

    void validate() const {
        if (!(dt > 0.0)) throw ConfigError("integrator: dt must be > 0");
        if (gamma < 0.5 || beta < 0.25 * (gamma + 0.5) * (gamma + 0.5))
            throw ConfigError("integrator: preset outside the unconditional-stability region");
    }
};

/// Per-story displacement/velocity/acceleration histories, story-major.
/// `a` stores total acceleration (relative + ground).
struct ResponseHistory {
    double dt = 0.0;
    std::size_t n_stories = 0;
    std::size_t n_steps = 0;
    Vec u, v, a;

    double& at(Vec& q, std::size_t story, std::size_t step) { return q[story * n_steps + step]; }
    double get_u(std::size_t s, std::size_t t) const { return u[s * n_steps + t]; }
    double get_v(std::size_t s, std::size_t t) const { return v[s * n_steps + t]; }
    double get_a(std::size_t s, std::size_t t) const { return a[s * n_steps + t]; }

    void resize(std::size_t stories, std::size_t steps) {
        n_stories = stories;
        n_steps = steps;
        u.assign(stories * steps, 0.0);
        v.assign(stories * steps, 0.0);
        a.assign(stories * steps, 0.0);
    }

    void validate() const {
        const std::size_t n = n_stories * n_steps;
        if (u.size() != n || v.size() != n || a.size() != n)
            throw DataError("response history: array shape mismatch");
        if (!(dt > 0.0)) throw DataError("response history: dt must be > 0");
        for (const Vec* q : {&u, &v, &a})
            for (double x : *q)
                if (!std::isfinite(x)) throw DataError("response history: non-finite value");
    }
};

/// Rayleigh coefficients (C = alpha*M + beta_r*K) anchored so the modal
/// damping ratio equals zeta at both omega1 and omega2.
inline std::pair<double, double> rayleigh_coeffs(double zeta, double omega1, double omega2) {
    if (!(zeta > 0.0 && zeta < 1.0))
        throw DomainError("rayleigh: zeta must be in (0, 1)");
    if (!(omega1 > 0.0 && omega2 > omega1))
        throw DomainError("rayleigh: need 0 < omega1 < omega2");
    const double alpha = 2.0 * zeta * omega1 * omega2 / (omega1 + omega2);
    const double beta_r = 2.0 * zeta / (omega1 + omega2);
    return {alpha, beta_r};
}

namespace detail {

struct SpringState {
    double plastic = 0.0; // plastic elongation, m
};

/// Trial force and tangent for a story spring at total elongation `delta`.
/// The kinematic-hardening bounds are two lines of slope r*k offset by
/// +-(1-r)*k*u_yield; elastic stiffness applies between them.
inline double spring_trial(const StorySpringLaw& law, const SpringState& st, double delta,
                           double& tangent, bool& yielded) {
    double f = law.k * (delta - st.plastic);
    tangent = law.k;
    yielded = false;
    if (law.kind == StorySpringLaw::Kind::bilinear) {
        const double kp = law.post_yield_ratio * law.k;
        const double fy = (1.0 - law.post_yield_ratio) * law.k * law.u_yield;
        const double hi = kp * delta + fy;
        const double lo = kp * delta - fy;
        if (f > hi) {
            f = hi;
            tangent = kp;
            yielded = true;
        } else if (f < lo) {
            f = lo;
            tangent = kp;
            yielded = true;
        }
    }
    return f;
}

} // namespace detail

/// Implicit Newmark-beta stepper over a lumped-mass shear model.
/// Solves the effective-mass system
///   (M + gamma*dt*C + beta*dt^2*K_t) * a_{n+1} =
///       G - C*(v_n + dt*(1-gamma)*a_n) - F_s(u_n + dt*v_n + dt^2*(1/2-beta)*a_n)
/// by Newton iteration on the acceleration; linear springs converge in one
/// solve through the identical code path.
class NewmarkSolver {
public:
    NewmarkSolver(DiagMat M, SymTriDiag C, std::vector<StorySpringLaw> laws,
                  IntegratorParams p)
        : M_(std::move(M)), C_(std::move(C)), laws_(std::move(laws)), p_(p) {
        p_.validate();
        n_ = M_.size();
        if (C_.size() != n_ || laws_.size() != n_)
            throw ConfigError("newmark: matrix/spring size mismatch");
        states_.resize(n_);
        u_.assign(n_, 0.0);
        v_.assign(n_, 0.0);
        a_.assign(n_, 0.0);
    }

    std::size_t size() const { return n_; }
    const Vec& u() const { return u_; }
    const Vec& v() const { return v_; }
    const Vec& a() const { return a_; }

    void set_state(Vec u, Vec v, Vec a) {
        u_ = std::move(u);
        v_ = std::move(v);
        a_ = std::move(a);
    }

    /// Consistent initial acceleration a0 = M^-1 (G0 - C*v0 - F_s(u0)).
    void initialize(const Vec& load0) {
        Vec fs(n_), cv = C_.mul(v_);
        story_forces(u_, fs, nullptr);
        for (std::size_t i = 0; i < n_; ++i) a_[i] = (load0[i] - cv[i] - fs[i]) / M_.d[i];
    }

    /// Advance one step under the load vector at t_{n+1}.
    void step(const Vec& load_next) {
        const double dt = p_.dt, g = p_.gamma, b = p_.beta;
        Vec u_pred(n_), v_pred(n_);
        for (std::size_t i = 0; i < n_; ++i) {
            u_pred[i] = u_[i] + dt * v_[i] + dt * dt * (0.5 - b) * a_[i];
            v_pred[i] = v_[i] + dt * (1.0 - g) * a_[i];
        }

        Vec a_new = a_;
        Vec u_new(n_), v_new(n_), fs(n_), tangents(n_), resid(n_);
        const double load_norm = inf_norm(load_next);
        double scale = 0.0;
        int it = 0;
        for (;; ++it) {
            if (it > 50)
                throw NumericalError("newmark: Newton failed to converge in 50 iterations");
            for (std::size_t i = 0; i < n_; ++i) {
                u_new[i] = u_pred[i] + b * dt * dt * a_new[i];
                v_new[i] = v_pred[i] + g * dt * a_new[i];
            }
            story_forces(u_new, fs, &tangents);
            Vec cv = C_.mul(v_new);
            scale = 0.0;
            for (std::size_t i = 0; i < n_; ++i) {
                const double ma = M_.d[i] * a_new[i];
                resid[i] = load_next[i] - ma - cv[i] - fs[i];
                // rounding floor from the magnitudes BEFORE cancellation: the
                // nodal force is a difference of story forces ~ k*|u| that can
                // dwarf the residual itself
                double row = std::abs(ma) + std::abs(load_next[i]);
                row += std::abs(C_.diag[i] * v_new[i]);
                if (i > 0) row += std::abs(C_.off[i - 1] * v_new[i - 1]);
                if (i + 1 < n_) row += std::abs(C_.off[i] * v_new[i + 1]);
                row += laws_[i].k * (std::abs(u_new[i]) + (i > 0 ? std::abs(u_new[i - 1]) : 0.0));
                if (i + 1 < n_)
                    row += laws_[i + 1].k * (std::abs(u_new[i + 1]) + std::abs(u_new[i]));
                scale = std::max(scale, row);
            }
            // the absolute 1e-12 floor is meaningful only when the force scale
            // allows it; below rounding level the iteration has converged
            const double tol = 1e-8 * load_norm + 1e-12 +
                               64.0 * std::numeric_limits<double>::epsilon() * scale;
            if (inf_norm(resid) <= tol) break;

            SymTriDiag J;
            J.diag.resize(n_);
            J.off.resize(n_ > 1 ? n_ - 1 : 0);
            for (std::size_t i = 0; i < n_; ++i) {
                J.diag[i] = M_.d[i] + g * dt * C_.diag[i] +
                            b * dt * dt * (tangents[i] + (i + 1 < n_ ? tangents[i + 1] : 0.0));
                if (i + 1 < n_)
                    J.off[i] = g * dt * C_.off[i] + b * dt * dt * (-tangents[i + 1]);
            }
            Vec da = solve_sym_tridiag(J, resid);
            for (std::size_t i = 0; i < n_; ++i) a_new[i] += da[i];
        }

        // commit hysteretic state using the converged displacements
        for (std::size_t i = 0; i < n_; ++i) {
            const double delta = u_new[i] - (i > 0 ? u_new[i - 1] : 0.0);
            double kt;
            bool yielded;
            const double f = detail::spring_trial(laws_[i], states_[i], delta, kt, yielded);
            if (yielded) states_[i].plastic = delta - f / laws_[i].k;
        }
        u_ = std::move(u_new);
        v_ = std::move(v_new);
        a_ = std::move(a_new);
    }

private:
    void story_forces(const Vec& u, Vec& fs, Vec* tangents) const {
        // story spring forces, then nodal assembly F_i = f_i - f_{i+1}
        Vec f(n_);
        for (std::size_t i = 0; i < n_; ++i) {
            const double delta = u[i] - (i > 0 ? u[i - 1] : 0.0);
            double kt;
            bool yielded;
            f[i] = detail::spring_trial(laws_[i], states_[i], delta, kt, yielded);
            if (tangents) (*tangents)[i] = kt;
        }
        for (std::size_t i = 0; i < n_; ++i)
            fs[i] = f[i] - (i + 1 < n_ ? f[i + 1] : 0.0);
    }

    DiagMat M_;
    SymTriDiag C_;
    std::vector<StorySpringLaw> laws_;
    IntegratorParams p_;
    std::size_t n_ = 0;
    std::vector<detail::SpringState> states_;
    Vec u_, v_, a_;
};

/// Time-history simulation under ground acceleration: load G_n = -M*iota*ag_n,
/// zero initial conditions, Rayleigh damping anchored at the first two modal
/// frequencies (single story: omega2 = 3*omega1). Stored accelerations are
/// totals (relative + ground).
inline ResponseHistory simulate(const model::LumpedMassModel& m, const gm::GroundMotion& g,
                                const IntegratorParams& p) {
    m.validate();
    g.validate();
    p.validate();
    if (g.dt != p.dt)
        throw ConfigError("simulate: ground motion dt " + gm::fmt_g17(g.dt) +
                          " differs from integrator dt " + gm::fmt_g17(p.dt) +
                          " (resample first)");
    const std::size_t n = m.n_stories();
    auto [M, K] = model::assemble_matrices(m);
    const auto modal = model::fundamental_periods(M, K);
    const auto [w1, w2] = model::rayleigh_anchors(modal);
    const auto [alpha, beta_r] = rayleigh_coeffs(m.damping_ratio, w1, w2);
    SymTriDiag C;
    C.diag.resize(n);
    C.off.resize(n > 1 ? n - 1 : 0);
    for (std::size_t i = 0; i < n; ++i) {
        C.diag[i] = alpha * M.d[i] + beta_r * K.diag[i];
        if (i + 1 < n) C.off[i] = beta_r * K.off[i];
    }

    std::vector<StorySpringLaw> laws = m.spring_law;
    if (laws.empty()) {
        laws.reserve(n);
        for (double k : m.story_stiffness_n_per_m) laws.push_back({.k = k});
    }

    NewmarkSolver solver(M, C, std::move(laws), p);
    const std::size_t steps = g.samples.size();
    ResponseHistory r;
    r.dt = p.dt;
    r.resize(n, steps);

    Vec load(n);
    auto fill_load = [&](double ag) {
        for (std::size_t i = 0; i < n; ++i) load[i] = -m.masses_kg[i] * ag;
    };
    fill_load(g.samples[0]);
    solver.initialize(load);
    for (std::size_t i = 0; i < n; ++i) {
        r.at(r.u, i, 0) = 0.0;
        r.at(r.v, i, 0) = 0.0;
        r.at(r.a, i, 0) = solver.a()[i] + g.samples[0];
    }
    for (std::size_t t = 1; t < steps; ++t) {
        fill_load(g.samples[t]);
        solver.step(load);
        for (std::size_t i = 0; i < n; ++i) {
            r.at(r.u, i, t) = solver.u()[i];
            r.at(r.v, i, t) = solver.v()[i];
            r.at(r.a, i, t) = solver.a()[i] + g.samples[t];
        }
    }
    return r;
}

/// Simplified-dynamic-response channel: the same integration with linear
/// springs after period matching against the oracle model's fundamental
/// period (identity when the model is already linear).
inline ResponseHistory sdr_response(const model::LumpedMassModel& m, const gm::GroundMotion& g,
                                    const IntegratorParams& p) {
    model::LumpedMassModel lin = m;
    lin.spring_law.clear();
    lin.spring_law.reserve(m.n_stories());
    for (double k : lin.story_stiffness_n_per_m) lin.spring_law.push_back({.k = k});
    const double t_ref = model::fundamental_periods(m).T1;
    const double t_hat = model::fundamental_periods(lin).T1;
    lin = model::apply_scale(lin, model::stiffness_scale_factor(t_ref, t_hat));
    return simulate(lin, g, p);
}

/// drift_i = (u_i - u_{i-1}) / floor_height, story-major like the input.
inline Vec interstory_drift(const ResponseHistory& r, double floor_height) {
    if (!(floor_height > 0.0)) throw ConfigError("interstory_drift: floor height must be > 0");
    Vec d(r.n_stories * r.n_steps);
    for (std::size_t s = 0; s < r.n_stories; ++s)
        for (std::size_t t = 0; t < r.n_steps; ++t) {
            const double below = s > 0 ? r.get_u(s - 1, t) : 0.0;
            d[s * r.n_steps + t] = (r.get_u(s, t) - below) / floor_height;
        }
    return d;
}

// ---------------------------------------------------------------------------
// SFRH binary format: magic 'SFRH', version, n_stories, n_steps, dt (f64),
// then u, v, a as little-endian f32 in story-major order.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& s, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& s, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(s, bits);
}

inline void put_f64(std::string& s, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(s, bits);
}

struct Reader {
    const std::string& s;
    std::size_t pos = 0;
    std::string ctx;

    void need(std::size_t n) const {
        if (pos + n > s.size()) throw ParseError(ctx + ": truncated file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(s[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(s[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    float f32() {
        const std::uint32_t b = u32();
        float v;
        std::memcpy(&v, &b, 4);
        return v;
    }
    double f64() {
        const std::uint64_t b = u64();
        double v;
        std::memcpy(&v, &b, 8);
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string out = s.substr(pos, n);
        pos += n;
        return out;
    }
};

} // namespace detail

inline std::string sfrh_encode(const ResponseHistory& r) {
    std::string out;
    out.reserve(24 + r.u.size() * 12);
    out += "SFRH";
    detail::put_u32(out, 1u);
    detail::put_u32(out, static_cast<std::uint32_t>(r.n_stories));
    detail::put_u32(out, static_cast<std::uint32_t>(r.n_steps));
    detail::put_f64(out, r.dt);
    for (const Vec* q : {&r.u, &r.v, &r.a})
        for (double v : *q) detail::put_f32(out, static_cast<float>(v));
    return out;
}

inline ResponseHistory sfrh_decode(const std::string& bytes, const std::string& context) {
    detail::Reader rd{bytes, 0, context};
    if (rd.bytes(4) != "SFRH") throw ParseError(context + ": bad magic (expected SFRH)");
    const std::uint32_t version = rd.u32();
    if (version != 1u)
        throw CompatibilityError(context + ": unsupported SFRH version " + std::to_string(version));
    ResponseHistory r;
    r.n_stories = rd.u32();
    r.n_steps = rd.u32();
    r.dt = rd.f64();
    const std::size_t n = r.n_stories * r.n_steps;
    for (Vec* q : {&r.u, &r.v, &r.a}) {
        q->resize(n);
        for (std::size_t i = 0; i < n; ++i) (*q)[i] = rd.f32();
    }
    if (rd.pos != bytes.size()) throw ParseError(context + ": trailing bytes");
    return r;
}

inline void save_response(const std::filesystem::path& path, const ResponseHistory& r) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    const std::string bytes = sfrh_encode(r);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline ResponseHistory load_response(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return sfrh_decode(bytes, path.string());
}

/// CSV export for plotting: time plus one column per story.
inline void export_csv(const std::filesystem::path& path, const ResponseHistory& r,
                       const Vec& quantity, const std::string& name) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << "time_s";
    for (std::size_t s = 0; s < r.n_stories; ++s) out << "," << name << (s + 1);
    out << "\n";
    for (std::size_t t = 0; t < r.n_steps; ++t) {
        out << gm::fmt_g17(t * r.dt);
        for (std::size_t s = 0; s < r.n_stories; ++s)
            out << "," << gm::fmt_g17(quantity[s * r.n_steps + t]);
        out << "\n";
    }
}

} // namespace seisforge::dyn
