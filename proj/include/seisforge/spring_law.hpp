#pragma once

#include <limits>

#include "seisforge/errors.hpp"

namespace seisforge::dyn {

/// Inter-story spring constitutive law. The bilinear branch is kinematic
/// hardening with elastic unloading: the force path is clamped between two
/// lines of slope post_yield_ratio*k offset by +-(1-r)*k*u_yield.
struct StorySpringLaw {
    enum class Kind { linear, bilinear };

    Kind kind = Kind::linear;
    double k = 0.0;                // elastic stiffness, N/m
    double post_yield_ratio = 0.0; // bilinear only, in [0, 1)
    double u_yield = std::numeric_limits<double>::infinity(); // bilinear only, m

    void validate() const {
        if (!(k > 0.0)) throw ConfigError("spring law: k must be > 0");
        if (kind == Kind::bilinear) {
            if (!(post_yield_ratio >= 0.0 && post_yield_ratio < 1.0))
                throw ConfigError("spring law: post_yield_ratio must be in [0, 1)");
            if (!(u_yield > 0.0)) throw ConfigError("spring law: u_yield must be > 0");
        }
    }
};

} // namespace seisforge::dyn
