#pragma once

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mlmc/brownian.hpp"
#include "mlmc/model.hpp"

namespace mlmc {

enum class Scheme { euler, milstein };

inline std::string_view to_string(Scheme s) noexcept { return s == Scheme::euler ? "euler" : "milstein"; }

inline Scheme parse_scheme(std::string_view name) {
    if (name == "euler") {
        return Scheme::euler;
    }
    if (name == "milstein") {
        return Scheme::milstein;
    }
    throw std::invalid_argument("unknown scheme '" + std::string(name) + "'");
}

/// Raised when a simulated state stops being finite.
class NumericalFailure : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

namespace detail {
inline double advance(Scheme scheme, double s, double a, double b, double bp, double h, double dw) noexcept {
    const double euler = s + a * h + b * dw;
    return scheme == Scheme::milstein ? euler + 0.5 * bp * b * (dw * dw - h) : euler;
}
}  // namespace detail

template <SdeModel Model>
double milstein_step(const Model& model, double s, double t, double h, double dw) {
    if (!(h > 0.0)) {
        throw std::domain_error("milstein_step: h must be positive");
    }
    const double next =
        detail::advance(Scheme::milstein, s, model.drift(s, t), model.vol(s, t), model.vol_deriv(s, t), h, dw);
    if (!std::isfinite(next)) {
        throw NumericalFailure("milstein_step: non-finite state");
    }
    return next;
}

template <SdeModel Model>
double euler_step(const Model& model, double s, double t, double h, double dw) {
    if (!(h > 0.0)) {
        throw std::domain_error("euler_step: h must be positive");
    }
    const double next = detail::advance(Scheme::euler, s, model.drift(s, t), model.vol(s, t), 0.0, h, dw);
    if (!std::isfinite(next)) {
        throw NumericalFailure("euler_step: non-finite state");
    }
    return next;
}

/// Fine and coarse discrete paths driven by one CoupledIncrements draw.
///
/// Coarse quantities are stored on the fine index: even entries of
/// coarse_on_fine are coarse nodes, odd entries are Brownian interpolants at
/// the coarse step midpoints. coarse_vols/coarse_drifts hold the coefficients
/// frozen at the left coarse node, so entry 2k+1 repeats entry 2k. All coarse
/// vectors are empty at level 0.
struct CoupledPathRecord {
    LevelGrid grid;
    CoupledIncrements increments;
    std::vector<double> fine;            // 2^l + 1
    std::vector<double> fine_vols;       // b at fine node n, n < 2^l
    std::vector<double> fine_drifts;     // a at fine node n, n < 2^l
    std::vector<double> coarse;          // 2^(l-1) + 1
    std::vector<double> coarse_on_fine;  // 2^l + 1
    std::vector<double> coarse_vols;     // 2^l
    std::vector<double> coarse_drifts;   // 2^l

    int level() const noexcept { return grid.level; }
};

/// Steps both paths of `rec` in place from rec.grid and rec.increments.
template <SdeModel Model>
void simulate_coupled_inplace(const Model& model, Scheme scheme, CoupledPathRecord& rec) {
    const LevelGrid& grid = rec.grid;
    const auto& incs = rec.increments;
    const auto n = static_cast<std::size_t>(grid.n_steps);
    if (incs.fine.size() != n || incs.uniforms.size() != n || incs.bridge_integrals.size() != n ||
        incs.coarse.size() != n / 2) {
        throw std::invalid_argument("simulate_coupled: increments do not match the level grid");
    }
    const double h = grid.h;
    const auto fail = [&](const char* which, std::size_t step, double value) {
        std::ostringstream os;
        os.precision(17);
        os << "non-finite " << which << " state " << value << " at level " << grid.level << ", step " << step;
        throw NumericalFailure(os.str());
    };

    rec.fine.resize(n + 1);
    rec.fine_vols.resize(n);
    rec.fine_drifts.resize(n);
    rec.fine[0] = model.s0();
    for (std::size_t i = 0; i < n; ++i) {
        const double s = rec.fine[i];
        const double t = grid.time(i);
        const double a = model.drift(s, t);
        const double b = model.vol(s, t);
        const double bp = scheme == Scheme::milstein ? model.vol_deriv(s, t) : 0.0;
        rec.fine_drifts[i] = a;
        rec.fine_vols[i] = b;
        const double next = detail::advance(scheme, s, a, b, bp, h, incs.fine[i]);
        if (!std::isfinite(next)) {
            fail("fine", i, next);
        }
        rec.fine[i + 1] = next;
    }

    if (!grid.has_coarse()) {
        rec.coarse.clear();
        rec.coarse_on_fine.clear();
        rec.coarse_vols.clear();
        rec.coarse_drifts.clear();
        return;
    }

    const std::size_t nc = n / 2;
    const double hc = 2.0 * h;
    rec.coarse.resize(nc + 1);
    rec.coarse_on_fine.resize(n + 1);
    rec.coarse_vols.resize(n);
    rec.coarse_drifts.resize(n);
    rec.coarse[0] = model.s0();
    rec.coarse_on_fine[0] = model.s0();
    for (std::size_t k = 0; k < nc; ++k) {
        const double s = rec.coarse[k];
        const double t = grid.time(2 * k);
        const double a = model.drift(s, t);
        const double b = model.vol(s, t);
        const double bp = scheme == Scheme::milstein ? model.vol_deriv(s, t) : 0.0;
        const double next = detail::advance(scheme, s, a, b, bp, hc, incs.coarse[k]);
        if (!std::isfinite(next)) {
            fail("coarse", k, next);
        }
        rec.coarse[k + 1] = next;
        rec.coarse_on_fine[2 * k + 1] = coarse_midpoint(s, next, b, incs.fine[2 * k], incs.fine[2 * k + 1]);
        rec.coarse_on_fine[2 * k + 2] = next;
        rec.coarse_vols[2 * k] = b;
        rec.coarse_vols[2 * k + 1] = b;
        rec.coarse_drifts[2 * k] = a;
        rec.coarse_drifts[2 * k + 1] = a;
    }
}

/// Simulates the fine path at grid.level and, for level > 0, the coarse path
/// at level - 1 from the same increments.
template <SdeModel Model>
CoupledPathRecord simulate_coupled(const Model& model, const LevelGrid& grid, const CoupledIncrements& incs,
                                   Scheme scheme) {
    CoupledPathRecord rec;
    rec.grid = grid;
    rec.increments = incs;
    simulate_coupled_inplace(model, scheme, rec);
    return rec;
}

}  // namespace mlmc
