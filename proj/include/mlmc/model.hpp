#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mlmc {

/// Anything that exposes the coefficients of dS = a(S,t) dt + b(S,t) dW.
template <class M>
concept SdeModel = requires(const M& m, double x, double t) {
    { m.drift(x, t) } -> std::convertible_to<double>;
    { m.vol(x, t) } -> std::convertible_to<double>;
    { m.vol_deriv(x, t) } -> std::convertible_to<double>;
    { m.s0() } -> std::convertible_to<double>;
    { m.horizon() } -> std::convertible_to<double>;
};

/// Tensor grid of (x, t) probe points used for coefficient spot checks.
struct ProbeGrid {
    std::vector<double> xs;
    std::vector<double> ts;

    static ProbeGrid tensor(double x_lo, double x_hi, int nx, double t_lo, double t_hi, int nt) {
        if (nx < 1 || nt < 1) {
            throw std::invalid_argument("ProbeGrid: need at least one point per axis");
        }
        ProbeGrid grid;
        for (int i = 0; i < nx; ++i) {
            grid.xs.push_back(nx == 1 ? x_lo : x_lo + (x_hi - x_lo) * i / (nx - 1));
        }
        for (int j = 0; j < nt; ++j) {
            grid.ts.push_back(nt == 1 ? t_lo : t_lo + (t_hi - t_lo) * j / (nt - 1));
        }
        return grid;
    }

    bool empty() const noexcept { return xs.empty() || ts.empty(); }
};

/// 64 x 16 grid over [s0/4, 4 s0] x [0, T]. Non-positive s0 uses [s0-4, s0+4].
inline ProbeGrid default_probe_grid(double s0, double horizon) {
    if (s0 > 0.0) {
        return ProbeGrid::tensor(s0 / 4.0, 4.0 * s0, 64, 0.0, horizon, 16);
    }
    return ProbeGrid::tensor(s0 - 4.0, s0 + 4.0, 64, 0.0, horizon, 16);
}

namespace detail {

inline std::string point_string(double x, double t) {
    std::ostringstream os;
    os.precision(17);
    os << "(x=" << x << ", t=" << t << ")";
    return os.str();
}

inline double checked(double v, const char* what, double x, double t) {
    if (!std::isfinite(v)) {
        throw std::domain_error(std::string("non-finite ") + what + " at " + point_string(x, t));
    }
    return v;
}

inline double fd_step(double x) { return 1e-5 * std::max(1.0, std::abs(x)); }

template <class F>
double d_dx(const F& f, double x, double t) {
    const double dx = fd_step(x);
    return (f(x + dx, t) - f(x - dx, t)) / (2.0 * dx);
}

// One-sided at t = 0 so that coefficients only need to be defined for t >= 0.
template <class F>
double d_dt(const F& f, double x, double t) {
    const double dt = fd_step(t);
    if (t - dt < 0.0) {
        return (f(x, t + dt) - f(x, t)) / dt;
    }
    return (f(x, t + dt) - f(x, t - dt)) / (2.0 * dt);
}

}  // namespace detail

/// Scalar SDE dS = a(S,t) dt + b(S,t) dW with S(0) = s0 on [0, T].
///
/// The three coefficient callables are supplied separately; vol_deriv must be
/// dB/dS. Construction rejects a non-positive horizon and a vol_deriv that
/// disagrees with a central difference of vol on the probe grid.
template <class Drift, class Vol, class VolDeriv>
class ScalarSdeModel {
  public:
    ScalarSdeModel(Drift drift, Vol vol, VolDeriv vol_deriv, double s0, double horizon)
        : ScalarSdeModel(std::move(drift), std::move(vol), std::move(vol_deriv), s0, horizon,
                         default_probe_grid(s0, horizon)) {}

    ScalarSdeModel(Drift drift, Vol vol, VolDeriv vol_deriv, double s0, double horizon, const ProbeGrid& probe)
        : drift_(std::move(drift)), vol_(std::move(vol)), vol_deriv_(std::move(vol_deriv)), s0_(s0), horizon_(horizon) {
        if (!(horizon_ > 0.0) || !std::isfinite(horizon_)) {
            throw std::invalid_argument("ScalarSdeModel: horizon must be positive and finite");
        }
        if (!std::isfinite(s0_)) {
            throw std::invalid_argument("ScalarSdeModel: s0 must be finite");
        }
        check_vol_derivative(probe);
    }

    double drift(double x, double t) const { return drift_(x, t); }
    double vol(double x, double t) const { return vol_(x, t); }
    double vol_deriv(double x, double t) const { return vol_deriv_(x, t); }
    double s0() const noexcept { return s0_; }
    double horizon() const noexcept { return horizon_; }

    /// Throws std::invalid_argument if vol_deriv deviates from a central
    /// difference of vol by more than relative tolerance 1e-5 on the probe.
    void check_vol_derivative(const ProbeGrid& probe) const {
        for (double t : probe.ts) {
            for (double x : probe.xs) {
                detail::checked(drift(x, t), "drift", x, t);
                const double b = detail::checked(vol(x, t), "vol", x, t);
                const double bp = detail::checked(vol_deriv(x, t), "vol derivative", x, t);
                const double fd = detail::d_dx([this](double y, double s) { return vol(y, s); }, x, t);
                const double tol = 1e-5 * std::abs(bp) + 1e-9 * (1.0 + std::abs(b));
                if (std::abs(fd - bp) > tol) {
                    std::ostringstream os;
                    os.precision(10);
                    os << "vol derivative " << bp << " disagrees with finite difference " << fd << " at "
                       << detail::point_string(x, t);
                    throw std::invalid_argument(os.str());
                }
            }
        }
    }

  private:
    Drift drift_;
    Vol vol_;
    VolDeriv vol_deriv_;
    double s0_;
    double horizon_;
};

using CoefficientFn = std::function<double(double, double)>;

/// Type-erased model for coefficients chosen at run time.
using DynamicSdeModel = ScalarSdeModel<CoefficientFn, CoefficientFn, CoefficientFn>;

template <class Drift, class Vol, class VolDeriv>
auto make_sde_model(Drift drift, Vol vol, VolDeriv vol_deriv, double s0, double horizon) {
    return ScalarSdeModel<Drift, Vol, VolDeriv>(std::move(drift), std::move(vol), std::move(vol_deriv), s0, horizon);
}

struct GbmParams {
    double mu = 0.05;
    double sigma = 0.2;
    double s0 = 1.0;
    double horizon = 1.0;

    void validate() const {
        if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
            throw std::invalid_argument("GbmParams: sigma must be >= 0");
        }
        if (!(horizon > 0.0) || !std::isfinite(horizon)) {
            throw std::invalid_argument("GbmParams: T must be > 0");
        }
        if (!(s0 > 0.0) || !std::isfinite(s0)) {
            throw std::invalid_argument("GbmParams: s0 must be > 0");
        }
        if (!std::isfinite(mu)) {
            throw std::invalid_argument("GbmParams: mu must be finite");
        }
    }
};

/// x -> k x
struct LinearCoefficient {
    double k;
    double operator()(double x, double /*t*/) const noexcept { return k * x; }
};

/// x -> k
struct ConstantCoefficient {
    double k;
    double operator()(double /*x*/, double /*t*/) const noexcept { return k; }
};

using GbmModel = ScalarSdeModel<LinearCoefficient, LinearCoefficient, ConstantCoefficient>;

/// Geometric Brownian motion a = mu x, b = sigma x.
inline GbmModel gbm_model(const GbmParams& p) {
    p.validate();
    return GbmModel(LinearCoefficient{p.mu}, LinearCoefficient{p.sigma}, ConstantCoefficient{p.sigma}, p.s0, p.horizon);
}

/// Exact GBM solution at T driven by Brownian endpoint w_T.
inline double gbm_exact_terminal(const GbmParams& p, double w_T) {
    return p.s0 * std::exp((p.mu - 0.5 * p.sigma * p.sigma) * p.horizon + p.sigma * w_T);
}

// Coefficient assumption spot checks (uniform Lipschitz, linear growth,
// time-Holder continuity of b). These are empirical quotients on a probe grid.

struct AssumptionCaps {
    double lipschitz = 10.0;
    double growth = 10.0;
    double time_holder = 10.0;
};

struct AssumptionReport {
    // Lipschitz: max |f(x,t) - f(y,t)| / |x - y| over probe pairs.
    double lipschitz_drift = 0.0;
    double lipschitz_vol = 0.0;
    double lipschitz_l1_vol = 0.0;
    double lipschitz_combined = 0.0;

    // Linear growth: max over the probe of term / (1 + |x|).
    double growth_drift = 0.0;
    double growth_vol = 0.0;
    double growth_combined = 0.0;  // all eight operator terms summed

    // max |b(x,t) - b(x,s)| / ((1 + |x|) sqrt|t - s|)
    double time_holder = 0.0;

    std::vector<std::string> flags;

    bool ok() const noexcept { return flags.empty(); }
};

template <SdeModel Model>
AssumptionReport check_assumptions(const Model& model, const ProbeGrid& probe, const AssumptionCaps& caps = {}) {
    if (probe.empty()) {
        throw std::invalid_argument("check_assumptions: empty probe grid");
    }
    const auto a = [&](double x, double t) { return detail::checked(model.drift(x, t), "drift", x, t); };
    const auto b = [&](double x, double t) { return detail::checked(model.vol(x, t), "vol", x, t); };
    const auto bp = [&](double x, double t) {
        return detail::checked(model.vol_deriv(x, t), "vol derivative", x, t);
    };
    const auto l1b = [&](double x, double t) { return b(x, t) * bp(x, t); };

    AssumptionReport rep;
    const auto& xs = probe.xs;
    const auto& ts = probe.ts;

    for (double t : ts) {
        std::vector<double> av, bv, lv;
        for (double x : xs) {
            av.push_back(a(x, t));
            bv.push_back(b(x, t));
            lv.push_back(l1b(x, t));
        }
        for (std::size_t i = 0; i < xs.size(); ++i) {
            for (std::size_t j = i + 1; j < xs.size(); ++j) {
                const double dx = std::abs(xs[j] - xs[i]);
                if (dx == 0.0) {
                    continue;
                }
                const double qa = std::abs(av[j] - av[i]) / dx;
                const double qb = std::abs(bv[j] - bv[i]) / dx;
                const double ql = std::abs(lv[j] - lv[i]) / dx;
                rep.lipschitz_drift = std::max(rep.lipschitz_drift, qa);
                rep.lipschitz_vol = std::max(rep.lipschitz_vol, qb);
                rep.lipschitz_l1_vol = std::max(rep.lipschitz_l1_vol, ql);
                rep.lipschitz_combined = std::max(rep.lipschitz_combined, qa + qb + ql);
            }
        }

        for (double x : xs) {
            const double ax = a(x, t);
            const double bx = b(x, t);
            const double scale = 1.0 + std::abs(x);
            const double l0a = detail::d_dt(a, x, t) + ax * detail::d_dx(a, x, t);
            const double l1a = bx * detail::d_dx(a, x, t);
            const double l0b = detail::d_dt(b, x, t) + ax * bp(x, t);
            const double l1bx = l1b(x, t);
            const double l0l1b = detail::d_dt(l1b, x, t) + ax * detail::d_dx(l1b, x, t);
            const double l1l1b = bx * detail::d_dx(l1b, x, t);
            const double sum = std::abs(ax) + std::abs(l0a) + std::abs(l1a) + std::abs(bx) + std::abs(l0b) +
                               std::abs(l1bx) + std::abs(l0l1b) + std::abs(l1l1b);
            rep.growth_drift = std::max(rep.growth_drift, std::abs(ax) / scale);
            rep.growth_vol = std::max(rep.growth_vol, std::abs(bx) / scale);
            rep.growth_combined = std::max(rep.growth_combined, sum / scale);
        }
    }

    for (double x : xs) {
        for (std::size_t i = 0; i < ts.size(); ++i) {
            for (std::size_t j = i + 1; j < ts.size(); ++j) {
                const double dt = std::abs(ts[j] - ts[i]);
                if (dt == 0.0) {
                    continue;
                }
                const double q = std::abs(b(x, ts[j]) - b(x, ts[i])) / ((1.0 + std::abs(x)) * std::sqrt(dt));
                rep.time_holder = std::max(rep.time_holder, q);
            }
        }
    }

    if (rep.lipschitz_combined > caps.lipschitz) {
        rep.flags.push_back("Lipschitz quotient " + std::to_string(rep.lipschitz_combined) + " exceeds cap " +
                            std::to_string(caps.lipschitz));
    }
    if (rep.growth_combined > caps.growth) {
        rep.flags.push_back("growth ratio " + std::to_string(rep.growth_combined) + " exceeds cap " +
                            std::to_string(caps.growth));
    }
    if (rep.time_holder > caps.time_holder) {
        rep.flags.push_back("time-Holder quotient " + std::to_string(rep.time_holder) + " exceeds cap " +
                            std::to_string(caps.time_holder));
    }
    return rep;
}

}  // namespace mlmc
