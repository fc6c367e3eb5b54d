#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "mlmc/brownian.hpp"
#include "mlmc/schemes.hpp"
#include "mlmc/stats.hpp"

namespace mlmc {

/// Lipschitz function of the path at a finite set of grid-aligned times.
struct European {
    std::function<double(std::span<const double>)> f;
    std::vector<double> times;  // sorted, in (0, T]
};

/// Continuous Asian option, average from the Brownian interpolant
/// (trapezoid plus bridge-integral correction). f(average, terminal).
struct AsianT1 {
    std::function<double(double, double)> f;
};

/// Continuous Asian option, average from the piecewise-linear interpolant.
struct AsianT2 {
    std::function<double(double, double)> f;
};

/// f(terminal, running minimum); the minimum is sampled from the bridge law.
struct Lookback {
    std::function<double(double, double)> f;
};

enum class BarrierKind { down_and_out, up_and_out };

/// f(terminal) times the conditional survival probability of the interpolant.
struct Barrier {
    std::function<double(double)> f;
    double level = 0.0;
    BarrierKind kind = BarrierKind::down_and_out;
};

/// 1{S(T) > K}, smoothed by conditional expectation over the last step.
struct Digital {
    double strike = 1.0;
};

using PayoffSpec = std::variant<European, AsianT1, AsianT2, Lookback, Barrier, Digital>;

/// Fine payoff at level l and coarse payoff at level l-1 for one sample.
/// coarse is 0 at level 0.
struct PayoffPair {
    double fine = 0.0;
    double coarse = 0.0;

    double difference() const noexcept { return fine - coarse; }
};

inline std::string payoff_name(const PayoffSpec& spec) {
    struct Visitor {
        std::string operator()(const European&) const { return "european"; }
        std::string operator()(const AsianT1&) const { return "asian_t1"; }
        std::string operator()(const AsianT2&) const { return "asian_t2"; }
        std::string operator()(const Lookback&) const { return "lookback"; }
        std::string operator()(const Barrier&) const { return "barrier"; }
        std::string operator()(const Digital&) const { return "digital"; }
    };
    return std::visit(Visitor{}, spec);
}

/// Fine-grid index of time t, or throws if t is not a node of `grid`.
inline std::size_t grid_index(double t, const LevelGrid& grid) {
    const double x = t / grid.h;
    const double n = std::round(x);
    if (!(t > 0.0) || t > grid.horizon * (1.0 + 1e-12) || std::abs(x - n) > 1e-9 * std::max(1.0, x)) {
        throw std::invalid_argument("observation time " + std::to_string(t) + " is not a node of the level-" +
                                    std::to_string(grid.level) + " grid");
    }
    return static_cast<std::size_t>(n);
}

/// Setup-time validation; `coarsest_level` is the lowest level whose fine
/// path will be evaluated.
inline void check_payoff(const PayoffSpec& spec, double horizon, int coarsest_level) {
    if (const auto* e = std::get_if<European>(&spec)) {
        if (!e->f) {
            throw std::invalid_argument("european payoff: missing function");
        }
        if (e->times.empty()) {
            throw std::invalid_argument("european payoff: no observation times");
        }
        if (!std::is_sorted(e->times.begin(), e->times.end())) {
            throw std::invalid_argument("european payoff: observation times must be sorted");
        }
        const auto grid = LevelGrid::make(coarsest_level, horizon);
        for (double t : e->times) {
            grid_index(t, grid);
        }
    } else if (const auto* b = std::get_if<Barrier>(&spec)) {
        if (!b->f) {
            throw std::invalid_argument("barrier payoff: missing function");
        }
        if (!std::isfinite(b->level)) {
            throw std::invalid_argument("barrier payoff: barrier must be finite");
        }
    } else if (const auto* d = std::get_if<Digital>(&spec)) {
        if (!std::isfinite(d->strike)) {
            throw std::invalid_argument("digital payoff: strike must be finite");
        }
    } else {
        const bool has_f = std::visit(
            [](const auto& p) {
                if constexpr (requires { p.f; }) {
                    return static_cast<bool>(p.f);
                } else {
                    return true;
                }
            },
            spec);
        if (!has_f) {
            throw std::invalid_argument(payoff_name(spec) + " payoff: missing function");
        }
    }
}

inline PayoffPair european_pair(const CoupledPathRecord& rec, const European& spec) {
    thread_local std::vector<double> values;
    values.resize(spec.times.size());
    for (std::size_t m = 0; m < spec.times.size(); ++m) {
        values[m] = rec.fine[grid_index(spec.times[m], rec.grid)];
    }
    PayoffPair out;
    out.fine = spec.f(values);
    if (rec.grid.has_coarse()) {
        for (std::size_t m = 0; m < spec.times.size(); ++m) {
            values[m] = rec.coarse_on_fine[grid_index(spec.times[m], rec.grid)];
        }
        out.coarse = spec.f(values);
    }
    return out;
}

namespace detail {

inline double trapezoid_sum(std::span<const double> path, double h) noexcept {
    double sum = 0.0;
    for (std::size_t n = 0; n + 1 < path.size(); ++n) {
        sum += 0.5 * h * (path[n] + path[n + 1]);
    }
    return sum;
}

inline PayoffPair asian_pair(const CoupledPathRecord& rec, const std::function<double(double, double)>& f,
                             bool bridge_terms) {
    const double h = rec.grid.h;
    const double inv_t = 1.0 / rec.grid.horizon;
    const auto& incs = rec.increments;

    double fine_int = trapezoid_sum(rec.fine, h);
    if (bridge_terms) {
        for (std::size_t n = 0; n < rec.fine_vols.size(); ++n) {
            fine_int += rec.fine_vols[n] * incs.bridge_integrals[n];
        }
    }
    PayoffPair out;
    out.fine = f(fine_int * inv_t, rec.fine.back());
    if (!rec.grid.has_coarse()) {
        return out;
    }
    double coarse_int = trapezoid_sum(rec.coarse, 2.0 * h);
    if (bridge_terms) {
        for (std::size_t k = 0; k + 1 < rec.coarse.size(); ++k) {
            const double ic = coarse_bridge_integral(incs.bridge_integrals[2 * k], incs.bridge_integrals[2 * k + 1],
                                                     incs.fine[2 * k], incs.fine[2 * k + 1], h);
            coarse_int += rec.coarse_vols[2 * k] * ic;
        }
    }
    out.coarse = f(coarse_int * inv_t, rec.coarse.back());
    return out;
}

}  // namespace detail

inline PayoffPair asian_t1_pair(const CoupledPathRecord& rec, const AsianT1& spec) {
    return detail::asian_pair(rec, spec.f, true);
}

inline PayoffPair asian_t2_pair(const CoupledPathRecord& rec, const AsianT2& spec) {
    return detail::asian_pair(rec, spec.f, false);
}

/// Fine and coarse minima reuse the same uniform U_n on each fine step; the
/// coarse bridge uses its frozen volatility and the fine timestep.
inline PayoffPair lookback_pair(const CoupledPathRecord& rec, const Lookback& spec) {
    const double h = rec.grid.h;
    const auto& u = rec.increments.uniforms;
    const std::size_t n = rec.fine_vols.size();

    double fine_min = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        fine_min = std::min(fine_min, conditional_minimum(rec.fine[i], rec.fine[i + 1], rec.fine_vols[i], h, u[i]));
    }
    PayoffPair out;
    out.fine = spec.f(rec.fine.back(), fine_min);
    if (!rec.grid.has_coarse()) {
        return out;
    }
    double coarse_min = std::numeric_limits<double>::infinity();
    const auto& c = rec.coarse_on_fine;
    for (std::size_t i = 0; i < n; ++i) {
        coarse_min = std::min(coarse_min, conditional_minimum(c[i], c[i + 1], rec.coarse_vols[i], h, u[i]));
    }
    out.coarse = spec.f(c.back(), coarse_min);
    return out;
}

namespace detail {

inline double survival(std::span<const double> path, std::span<const double> vols, double h, const Barrier& spec) {
    double prod = 1.0;
    for (std::size_t i = 0; i < vols.size(); ++i) {
        const double p = spec.kind == BarrierKind::down_and_out
                             ? crossing_probability(path[i], path[i + 1], vols[i], h, spec.level)
                             : crossing_probability_up(path[i], path[i + 1], vols[i], h, spec.level);
        prod *= 1.0 - p;
        if (prod == 0.0) {
            break;
        }
    }
    return prod;
}

}  // namespace detail

/// Terminal payoff weighted by the product of per-step survival
/// probabilities; the coarse product runs over fine sub-steps of the coarse
/// interpolant.
inline PayoffPair barrier_pair(const CoupledPathRecord& rec, const Barrier& spec) {
    const double h = rec.grid.h;
    PayoffPair out;
    out.fine = spec.f(rec.fine.back()) * detail::survival(rec.fine, rec.fine_vols, h, spec);
    if (rec.grid.has_coarse()) {
        out.coarse = spec.f(rec.coarse_on_fine.back()) * detail::survival(rec.coarse_on_fine, rec.coarse_vols, h, spec);
    }
    return out;
}

/// Conditional expectation of 1{S(T) > K} given everything up to the last
/// fine step (fine) or the first half of the last coarse step (coarse).
inline PayoffPair digital_pair(const CoupledPathRecord& rec, const Digital& spec) {
    const double h = rec.grid.h;
    const double sqrt_h = std::sqrt(h);
    const std::size_t n = rec.fine_vols.size();
    const double k = spec.strike;

    const double bf = rec.fine_vols[n - 1];
    if (bf == 0.0) {
        throw std::domain_error("digital payoff: zero volatility at the conditioning node");
    }
    PayoffPair out;
    out.fine = normal_cdf((rec.fine[n - 1] + rec.fine_drifts[n - 1] * h - k) / (std::abs(bf) * sqrt_h));
    if (!rec.grid.has_coarse()) {
        return out;
    }
    const double bc = rec.coarse_vols[n - 2];
    if (bc == 0.0) {
        throw std::domain_error("digital payoff: zero volatility at the coarse conditioning node");
    }
    const double sc = rec.coarse_on_fine[n - 2];
    const double dw = rec.increments.fine[n - 2];
    out.coarse = normal_cdf((sc + 2.0 * rec.coarse_drifts[n - 2] * h + bc * dw - k) / (std::abs(bc) * sqrt_h));
    return out;
}

inline PayoffPair evaluate_pair(const CoupledPathRecord& rec, const PayoffSpec& spec) {
    struct Visitor {
        const CoupledPathRecord& rec;
        PayoffPair operator()(const European& p) const { return european_pair(rec, p); }
        PayoffPair operator()(const AsianT1& p) const { return asian_t1_pair(rec, p); }
        PayoffPair operator()(const AsianT2& p) const { return asian_t2_pair(rec, p); }
        PayoffPair operator()(const Lookback& p) const { return lookback_pair(rec, p); }
        PayoffPair operator()(const Barrier& p) const { return barrier_pair(rec, p); }
        PayoffPair operator()(const Digital& p) const { return digital_pair(rec, p); }
    };
    return std::visit(Visitor{rec}, spec);
}

// Common payoff functions.

/// (S(T) - K)^+ observed at the horizon.
inline European european_call(double strike, double horizon) {
    return European{[strike](std::span<const double> s) { return std::max(s.back() - strike, 0.0); }, {horizon}};
}

}  // namespace mlmc
