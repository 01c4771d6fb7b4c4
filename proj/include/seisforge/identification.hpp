#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "seisforge/dynamics.hpp"
#include "seisforge/errors.hpp"
#include "seisforge/ground_motion.hpp"
#include "seisforge/jsondoc.hpp"
#include "seisforge/linalg.hpp"
#include "seisforge/rng.hpp"
#include "seisforge/structure_model.hpp"

namespace seisforge::ident {

/// Inverse problem: recover equivalent story stiffnesses of the linear
/// simplified model from a reference displacement history.
struct IdentificationProblem {
    Vec masses_kg;               // known from the MDOF reduction
    dyn::ResponseHistory reference;
    gm::GroundMotion excitation;
    Vec initial_guess_n_per_m;
    Vec bounds_lo_n_per_m;
    Vec bounds_hi_n_per_m;
    double damping_ratio = 0.05; // assumed known; damping is not identified
    double gamma = 0.5;
    double beta = 0.25;

    std::size_t n() const { return masses_kg.size(); }

    void validate() const {
        const std::size_t k = n();
        if (k == 0) throw ConfigError("identify: empty problem");
        if (reference.n_steps == 0 || reference.u.empty())
            throw ConfigError("identify: empty reference history");
        if (reference.n_stories != k)
            throw ConfigError("identify: reference story count differs from masses");
        if (reference.dt != excitation.dt)
            throw ConfigError("identify: reference and excitation dt differ");
        if (reference.n_steps != excitation.samples.size())
            throw ConfigError("identify: reference and excitation length differ");
        if (initial_guess_n_per_m.size() != k || bounds_lo_n_per_m.size() != k ||
            bounds_hi_n_per_m.size() != k)
            throw ConfigError("identify: parameter vector sizes differ from masses");
        for (std::size_t i = 0; i < k; ++i) {
            if (!(bounds_lo_n_per_m[i] > 0.0 && bounds_lo_n_per_m[i] < bounds_hi_n_per_m[i]))
                throw ConfigError("identify: bounds must satisfy 0 < lo < hi");
            if (initial_guess_n_per_m[i] < bounds_lo_n_per_m[i] ||
                initial_guess_n_per_m[i] > bounds_hi_n_per_m[i])
                throw ConfigError("identify: initial guess outside bounds");
        }
    }
};

struct IdentificationResult {
    Vec stiffness_n_per_m;
    double objective = 0.0; // normalized displacement MSE
    int iterations = 0;
    bool converged = false;
};

enum class IdentifyMethod { gauss_newton, evolutionary };

struct IdentifyOptions {
    int max_iterations = 200;
    double rel_tol = 1e-10;
    int es_generations = 40;
    int es_islands = 4; // independent restarts; stiffness landscapes are multimodal
    std::uint64_t seed = 0;
};

namespace detail {

inline dyn::ResponseHistory forward(const IdentificationProblem& p, const Vec& k) {
    model::LumpedMassModel m;
    m.masses_kg = p.masses_kg;
    m.story_stiffness_n_per_m = k;
    m.damping_ratio = p.damping_ratio;
    return dyn::simulate(m, p.excitation, dyn::IntegratorParams{p.gamma, p.beta, p.excitation.dt});
}

/// Residual of the displacement histories, flattened; `ref_ss` is the sum of
/// squares of the reference (objective normalizer).
inline Vec residual(const IdentificationProblem& p, const Vec& k) {
    const auto sim = forward(p, k);
    Vec r(p.reference.u.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = sim.u[i] - p.reference.u[i];
    return r;
}

inline double sum_sq(const Vec& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

inline Vec clamp(Vec x, const Vec& lo, const Vec& hi) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], lo[i], hi[i]);
    return x;
}

struct GnOutcome {
    Vec k;
    double obj;
    int iterations;
    bool converged;
};

inline GnOutcome gauss_newton(const IdentificationProblem& p, Vec k,
                              const IdentifyOptions& opt) {
    const std::size_t np = p.n();
    const double ref_ss = std::max(sum_sq(p.reference.u), 1e-300);
    Vec r = residual(p, k);
    double obj = sum_sq(r) / ref_ss;
    double lambda = 1e-3;
    int it = 0;
    bool converged = obj <= 1e-18;
    for (; it < opt.max_iterations && !converged; ++it) {
        // forward-difference Jacobian, 1e-4 relative step per parameter
        std::vector<Vec> jac(np);
        for (std::size_t j = 0; j < np; ++j) {
            const double h = 1e-4 * std::max(std::abs(k[j]), 1e-6);
            Vec kj = k;
            kj[j] += h;
            const Vec rj = residual(p, kj);
            jac[j].resize(r.size());
            for (std::size_t i = 0; i < r.size(); ++i) jac[j][i] = (rj[i] - r[i]) / h;
        }
        std::vector<double> jtj(np * np, 0.0);
        Vec jtr(np, 0.0);
        for (std::size_t a = 0; a < np; ++a) {
            for (std::size_t b = a; b < np; ++b) {
                double s = 0.0;
                for (std::size_t i = 0; i < r.size(); ++i) s += jac[a][i] * jac[b][i];
                jtj[a * np + b] = s;
                jtj[b * np + a] = s;
            }
            double s = 0.0;
            for (std::size_t i = 0; i < r.size(); ++i) s += jac[a][i] * r[i];
            jtr[a] = -s;
        }

        bool accepted = false;
        for (int inner = 0; inner < 30; ++inner) {
            std::vector<double> damped = jtj;
            for (std::size_t a = 0; a < np; ++a)
                damped[a * np + a] += lambda * std::max(jtj[a * np + a], 1e-12);
            Vec step;
            try {
                step = solve_spd_dense(damped, jtr);
            } catch (const NumericalError&) {
                lambda *= 3.0;
                continue;
            }
            Vec cand(np);
            for (std::size_t a = 0; a < np; ++a) cand[a] = k[a] + step[a];
            cand = clamp(std::move(cand), p.bounds_lo_n_per_m, p.bounds_hi_n_per_m);
            Vec rc = residual(p, cand);
            const double oc = sum_sq(rc) / ref_ss;
            if (oc < obj) { // Levenberg acceptance: objective never increases
                const double rel_drop = (obj - oc) / std::max(obj, 1e-300);
                k = std::move(cand);
                r = std::move(rc);
                obj = oc;
                lambda = std::max(lambda / 3.0, 1e-12);
                accepted = true;
                if (rel_drop < opt.rel_tol || obj <= 1e-18) converged = true;
                break;
            }
            lambda *= 3.0;
            if (lambda > 1e12) break;
        }
        if (!accepted) {
            converged = true; // no descent direction left at this scale
            break;
        }
    }
    return {std::move(k), obj, it, converged};
}

struct EsIndividual {
    Vec x;
    Vec sigma;
    double obj = 0.0;
};

/// One (mu + lambda) evolution-strategy island with per-coordinate log-normal
/// step adaptation; the stochastic global stage before the Gauss-Newton polish.
inline Vec evolution_strategy(const IdentificationProblem& p, const IdentifyOptions& opt,
                              std::uint64_t island = 0) {
    constexpr std::size_t mu = 8, lambda = 32;
    const std::size_t np = p.n();
    const double ref_ss = std::max(sum_sq(p.reference.u), 1e-300);
    const double tau = 1.0 / std::sqrt(2.0 * std::sqrt(static_cast<double>(np)));
    const double tau_prime = 1.0 / std::sqrt(2.0 * static_cast<double>(np));
    SplitMix64 rng = substream(opt.seed, 0xE5u + island);

    auto evaluate = [&](const Vec& x) { return sum_sq(residual(p, x)) / ref_ss; };

    std::vector<EsIndividual> pop;
    pop.reserve(mu + lambda);
    for (std::size_t i = 0; i < mu; ++i) {
        EsIndividual ind;
        ind.x.resize(np);
        ind.sigma.resize(np);
        for (std::size_t j = 0; j < np; ++j) {
            ind.x[j] = i == 0 ? p.initial_guess_n_per_m[j]
                              : rng.uniform(p.bounds_lo_n_per_m[j], p.bounds_hi_n_per_m[j]);
            ind.sigma[j] = 0.1 * (p.bounds_hi_n_per_m[j] - p.bounds_lo_n_per_m[j]);
        }
        ind.obj = evaluate(ind.x);
        pop.push_back(std::move(ind));
    }

    for (int gen = 0; gen < opt.es_generations; ++gen) {
        std::vector<EsIndividual> offspring;
        offspring.reserve(lambda);
        for (std::size_t c = 0; c < lambda; ++c) {
            const auto& pa = pop[rng.below(mu)];
            const auto& pb = pop[rng.below(mu)];
            EsIndividual kid;
            kid.x.resize(np);
            kid.sigma.resize(np);
            const double common = tau_prime * rng.normal();
            for (std::size_t j = 0; j < np; ++j) {
                kid.sigma[j] = std::sqrt(pa.sigma[j] * pb.sigma[j]) *
                               std::exp(common + tau * rng.normal());
                kid.x[j] = 0.5 * (pa.x[j] + pb.x[j]) + kid.sigma[j] * rng.normal();
                kid.x[j] = std::clamp(kid.x[j], p.bounds_lo_n_per_m[j], p.bounds_hi_n_per_m[j]);
            }
            kid.obj = evaluate(kid.x);
            offspring.push_back(std::move(kid));
        }
        for (auto& o : offspring) pop.push_back(std::move(o));
        std::stable_sort(pop.begin(), pop.end(),
                         [](const EsIndividual& a, const EsIndividual& b) { return a.obj < b.obj; });
        pop.resize(mu);
    }
    return pop.front().x;
}

} // namespace detail

inline IdentificationResult identify_stiffness(const IdentificationProblem& p,
                                               IdentifyMethod method,
                                               const IdentifyOptions& opt = {}) {
    p.validate();
    detail::GnOutcome gn;
    if (method == IdentifyMethod::evolutionary) {
        // every island's champion gets the polish; the islands explore
        // different basins of a multimodal landscape
        bool first = true;
        for (int island = 0; island < std::max(1, opt.es_islands); ++island) {
            Vec champ = detail::evolution_strategy(p, opt, static_cast<std::uint64_t>(island));
            auto cand = detail::gauss_newton(p, std::move(champ), opt);
            if (first || cand.obj < gn.obj) gn = std::move(cand);
            first = false;
        }
    } else {
        gn = detail::gauss_newton(p, p.initial_guess_n_per_m, opt);
    }

    // the contract: never worse than the initial guess
    const double ref_ss = std::max(detail::sum_sq(p.reference.u), 1e-300);
    const double obj0 = detail::sum_sq(detail::residual(p, p.initial_guess_n_per_m)) / ref_ss;
    IdentificationResult res;
    if (gn.obj <= obj0) {
        res.stiffness_n_per_m = std::move(gn.k);
        res.objective = gn.obj;
    } else {
        res.stiffness_n_per_m = p.initial_guess_n_per_m;
        res.objective = obj0;
    }
    res.iterations = gn.iterations;
    res.converged = gn.converged;
    return res;
}

/// Period validation loop: rescale the model stiffness if its fundamental
/// period deviates from T_ref by more than tol (relative); otherwise the
/// model is returned unchanged.
inline model::LumpedMassModel validate_period(const model::LumpedMassModel& m, double t_ref,
                                              double tol = 0.01) {
    if (!(t_ref > 0.0)) throw model::DomainError("validate_period: T_ref must be > 0");
    const double t_hat = model::fundamental_periods(m).T1;
    if (std::abs(t_hat - t_ref) / t_ref <= tol) return m;
    return model::apply_scale(m, model::stiffness_scale_factor(t_ref, t_hat));
}

inline Doc to_doc(const IdentificationResult& r) {
    Doc d;
    d["stiffness_n_per_m"] = r.stiffness_n_per_m;
    d["objective"] = r.objective;
    d["iterations"] = r.iterations;
    d["converged"] = r.converged;
    return d;
}

} // namespace seisforge::ident
