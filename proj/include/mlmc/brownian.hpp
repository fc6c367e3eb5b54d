#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlmc/random.hpp"
#include "mlmc/stats.hpp"

namespace mlmc {

/// Uniform time grid of level l: 2^l steps of size h = 2^-l T.
struct LevelGrid {
    int level = 0;
    double horizon = 1.0;
    std::uint64_t n_steps = 1;
    double h = 1.0;

    static LevelGrid make(int level, double horizon) {
        if (level < 0 || level > 30) {
            throw std::invalid_argument("LevelGrid: level must lie in [0, 30], got " + std::to_string(level));
        }
        if (!(horizon > 0.0) || !std::isfinite(horizon)) {
            throw std::invalid_argument("LevelGrid: horizon must be positive");
        }
        // ldexp is exact, so h * n_steps == horizon bit for bit.
        return LevelGrid{level, horizon, std::uint64_t{1} << level, std::ldexp(horizon, -level)};
    }

    bool has_coarse() const noexcept { return level > 0; }
    double time(std::uint64_t n) const noexcept { return static_cast<double>(n) * h; }
};

/// One Brownian draw seen on a fine grid and on the next coarser grid.
struct CoupledIncrements {
    std::vector<double> fine;              // dW_n ~ N(0, h), one per fine step
    std::vector<double> coarse;            // fine[2k] + fine[2k+1]; empty at level 0
    std::vector<double> uniforms;          // U_n in (0,1), one per fine step
    std::vector<double> bridge_integrals;  // I_n ~ N(0, h^3/12), one per fine step
};

/// Fills `out` from `stream`. The draw order is fixed: all fine increments,
/// then all uniforms, then all bridge integrals.
inline void sample_coupled_increments(SampleStream& stream, const LevelGrid& grid, CoupledIncrements& out) {
    const auto n = static_cast<std::size_t>(grid.n_steps);
    const double sqrt_h = std::sqrt(grid.h);
    const double bridge_sd = std::sqrt(grid.h * grid.h * grid.h / 12.0);

    out.fine.resize(n);
    out.uniforms.resize(n);
    out.bridge_integrals.resize(n);
    for (auto& dw : out.fine) {
        dw = sqrt_h * normal_inv_cdf(stream.next_uniform());
    }
    for (auto& u : out.uniforms) {
        u = stream.next_uniform();
    }
    for (auto& i : out.bridge_integrals) {
        i = bridge_sd * normal_inv_cdf(stream.next_uniform());
    }
    out.coarse.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
        out.coarse[k] = out.fine[2 * k] + out.fine[2 * k + 1];
    }
}

inline CoupledIncrements sample_coupled_increments(SampleStream& stream, const LevelGrid& grid) {
    CoupledIncrements out;
    sample_coupled_increments(stream, grid, out);
    return out;
}

namespace detail {
inline void check_bridge_args(double h, double u) {
    if (!(h > 0.0)) {
        throw std::domain_error("bridge sampler: h must be positive");
    }
    if (!(u > 0.0 && u < 1.0)) {
        throw std::domain_error("bridge sampler: uniform must lie in (0,1)");
    }
}
}  // namespace detail

/// Minimum of a Brownian bridge with volatility `vol` from s_left to s_right
/// over a step h, sampled by inverting its conditional law with uniform u.
inline double conditional_minimum(double s_left, double s_right, double vol, double h, double u) {
    detail::check_bridge_args(h, u);
    const double d = s_right - s_left;
    const double m = 0.5 * (s_left + s_right - std::sqrt(d * d - 2.0 * vol * vol * h * std::log(u)));
    return std::min({m, s_left, s_right});  // guards against rounding above an endpoint
}

/// Maximum counterpart of conditional_minimum.
inline double conditional_maximum(double s_left, double s_right, double vol, double h, double v) {
    detail::check_bridge_args(h, v);
    const double d = s_right - s_left;
    const double m = 0.5 * (s_left + s_right + std::sqrt(d * d - 2.0 * vol * vol * h * std::log(v)));
    return std::max({m, s_left, s_right});
}

/// Probability that the bridge from s_left to s_right dips below `barrier`.
inline double crossing_probability(double s_left, double s_right, double vol, double h, double barrier) {
    if (vol == 0.0) {
        throw std::domain_error("crossing_probability: zero volatility");
    }
    if (!(h > 0.0)) {
        throw std::domain_error("crossing_probability: h must be positive");
    }
    const double lo = std::max(s_left - barrier, 0.0);
    const double hi = std::max(s_right - barrier, 0.0);
    return std::exp(-2.0 * lo * hi / (vol * vol * h));
}

/// Probability that the bridge from s_left to s_right rises above `barrier`.
inline double crossing_probability_up(double s_left, double s_right, double vol, double h, double barrier) {
    if (vol == 0.0) {
        throw std::domain_error("crossing_probability_up: zero volatility");
    }
    if (!(h > 0.0)) {
        throw std::domain_error("crossing_probability_up: h must be positive");
    }
    const double lo = std::max(barrier - s_left, 0.0);
    const double hi = std::max(barrier - s_right, 0.0);
    return std::exp(-2.0 * lo * hi / (vol * vol * h));
}

/// Brownian interpolant of a coarse step at its midpoint, driven by the two
/// fine increments that make up the coarse increment.
inline double coarse_midpoint(double s_left, double s_right, double vol, double dw_first, double dw_second) noexcept {
    return 0.5 * (s_left + s_right) + 0.5 * vol * (dw_first - dw_second);
}

/// Bridge integral over a coarse step assembled from the two fine-step bridge
/// integrals and increments; h is the fine timestep.
inline double coarse_bridge_integral(double i_first, double i_second, double dw_first, double dw_second,
                                     double h) noexcept {
    return i_first + i_second - 0.5 * h * (dw_second - dw_first);
}

}  // namespace mlmc
