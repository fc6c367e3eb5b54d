#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "mlmc/brownian.hpp"
#include "mlmc/model.hpp"
#include "mlmc/parallel.hpp"
#include "mlmc/payoffs.hpp"
#include "mlmc/random.hpp"
#include "mlmc/schemes.hpp"
#include "mlmc/stats.hpp"

// Brute-force and distributional oracles for the bridge samplers, the normal
// CDF pair and the time-stepping schemes. None of them reuse the closed-form
// expressions they check.

namespace mlmc::validation {

struct OracleOutcome {
    std::string name;
    double statistic = 0.0;
    double threshold = 0.0;
    bool passed = false;
    std::string detail;
};

/// Two-sided Kolmogorov-Smirnov statistic of `samples` against `cdf`.
template <class Cdf>
double ks_statistic(std::vector<double> samples, const Cdf& cdf) {
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double d = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double f = cdf(samples[i]);
        d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
    }
    return d;
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
inline double ks_critical_1pct(std::size_t n) { return 1.6276 / std::sqrt(static_cast<double>(n)); }

/// Endpoints, volatility, step length and barrier of one bridge test case.
struct BridgeCase {
    double s_left;
    double s_right;
    double vol;
    double h;
    double barrier;
};

inline std::vector<BridgeCase> default_bridge_cases() {
    return {
        {1.0, 1.0, 0.2, 0.25, 0.9},
        {1.0, 1.1, 0.3, 0.1, 0.95},
        {1.0, 0.9, 0.2, 0.5, 0.8},
        {0.9, 0.95, 0.25, 0.2, 0.85},
        {1.2, 1.0, 0.4, 0.05, 0.95},
    };
}

/// Minimum over `substeps` equal sub-intervals of an exactly sampled
/// Brownian bridge path (endpoints included).
inline double discrete_bridge_minimum(SampleStream& stream, const BridgeCase& c, int substeps) {
    const double dt = c.h / substeps;
    const double sd = std::sqrt(dt);
    // Free Brownian path, then pinned: B(t) = W(t) - (t/h) W(h).
    thread_local std::vector<double> w;
    w.resize(static_cast<std::size_t>(substeps) + 1);
    w[0] = 0.0;
    for (int k = 1; k <= substeps; ++k) {
        w[k] = w[k - 1] + sd * normal_inv_cdf(stream.next_uniform());
    }
    double m = std::min(c.s_left, c.s_right);
    for (int k = 1; k < substeps; ++k) {
        const double lambda = static_cast<double>(k) / substeps;
        const double s = c.s_left + lambda * (c.s_right - c.s_left) + c.vol * (w[k] - lambda * w[substeps]);
        m = std::min(m, s);
    }
    return m;
}

// Discrete monitoring misses excursions between sub-steps; shifting the
// barrier by beta * vol * sqrt(dt) (Broadie-Glasserman-Kou, beta = 0.5826)
// removes the leading O(sqrt(dt)) bias of the crossing frequency.
inline constexpr double kDiscreteMonitoringShift = 0.5825971579390106;

using CrossingFn = std::function<double(double, double, double, double, double)>;
using MinimumFn = std::function<double(double, double, double, double, double)>;

/// Crossing probability from the closed form vs the frequency with which a
/// sub-stepped bridge dips below the barrier; passes within 3 binomial SE.
inline OracleOutcome crossing_frequency_check(const BridgeCase& c, std::uint64_t trials, int substeps,
                                              std::uint64_t seed, std::uint32_t stream_id,
                                              const CrossingFn& crossing = crossing_probability,
                                              unsigned threads = 1) {
    const double p = crossing(c.s_left, c.s_right, c.vol, c.h, c.barrier);
    const double shifted = c.barrier + kDiscreteMonitoringShift * c.vol * std::sqrt(c.h / substeps);
    constexpr std::uint64_t kChunk = 4096;
    const std::uint64_t n_chunks = (trials + kChunk - 1) / kChunk;
    std::vector<std::uint64_t> hits(n_chunks, 0);
    parallel_for(n_chunks, threads, [&](std::size_t chunk) {
        const std::uint64_t end = std::min(trials, (chunk + 1) * kChunk);
        for (std::uint64_t i = chunk * kChunk; i < end; ++i) {
            SampleStream stream(seed, stream_id, i);
            if (discrete_bridge_minimum(stream, c, substeps) < shifted) {
                ++hits[chunk];
            }
        }
    });
    std::uint64_t total = 0;
    for (auto h : hits) {
        total += h;
    }
    const double freq = static_cast<double>(total) / static_cast<double>(trials);
    const double p_ok = std::clamp(p, 0.0, 1.0);
    const double se = std::sqrt(p_ok * (1.0 - p_ok) / static_cast<double>(trials));
    OracleOutcome out;
    std::ostringstream name;
    name << "crossing_probability(" << c.s_left << "," << c.s_right << ",vol=" << c.vol << ",h=" << c.h
         << ",B=" << c.barrier << ")";
    out.name = name.str();
    out.statistic = se > 0.0 ? std::abs(freq - p) / se : std::numeric_limits<double>::infinity();
    out.threshold = 3.0;
    out.passed = std::isfinite(p) && p >= 0.0 && p <= 1.0 && out.statistic <= out.threshold;
    std::ostringstream d;
    d << "formula " << p << ", brute-force frequency " << freq << " (" << trials << " trials, " << substeps
      << " sub-steps), " << out.statistic << " SE";
    out.detail = d.str();
    return out;
}

/// KS test of conditional_minimum draws against the bridge-minimum law
/// P(min <= m) = exp(-2 (x - m)(y - m) / (vol^2 h)), m <= min(x, y).
inline OracleOutcome minimum_ks_check(const BridgeCase& c, std::size_t n, std::uint64_t seed, std::uint32_t stream_id,
                                      const MinimumFn& sampler = conditional_minimum) {
    std::vector<double> draws(n);
    SampleStream stream(seed, stream_id, 0);
    for (auto& d : draws) {
        d = sampler(c.s_left, c.s_right, c.vol, c.h, stream.next_uniform());
    }
    const double top = std::min(c.s_left, c.s_right);
    const auto cdf = [&](double m) {
        if (m >= top) {
            return 1.0;
        }
        return std::exp(-2.0 * (c.s_left - m) * (c.s_right - m) / (c.vol * c.vol * c.h));
    };
    OracleOutcome out;
    std::ostringstream name;
    name << "conditional_minimum KS(" << c.s_left << "," << c.s_right << ",vol=" << c.vol << ",h=" << c.h << ")";
    out.name = name.str();
    out.statistic = ks_statistic(std::move(draws), cdf);
    out.threshold = ks_critical_1pct(n);
    out.passed = out.statistic <= out.threshold;
    out.detail = "KS statistic vs 1% critical value, n=" + std::to_string(n);
    return out;
}

/// max |Phi(Phi^-1(p)) - p| over a log-spaced grid on [1e-12, 1 - 1e-12].
inline OracleOutcome normal_round_trip_check() {
    double worst = 0.0;
    for (int k = 0; k <= 2000; ++k) {
        const double e = -12.0 + 12.0 * k / 2000.0;
        const double lo = std::pow(10.0, e);
        for (double p : {lo, 1.0 - lo, 0.5 * (1.0 + e / 12.0)}) {
            if (p <= 0.0 || p >= 1.0) {
                continue;
            }
            worst = std::max(worst, std::abs(normal_cdf(normal_inv_cdf(p)) - p));
        }
    }
    OracleOutcome out;
    out.name = "normal_inv_cdf round trip";
    out.statistic = worst;
    out.threshold = 1e-9;
    out.passed = worst <= out.threshold;
    out.detail = "max |Phi(Phi^-1(p)) - p| on [1e-12, 1-1e-12]";
    return out;
}

/// Mean absolute terminal error against the exact GBM solution driven by the
/// same Brownian endpoint, one entry per level.
inline std::vector<double> gbm_strong_errors(const GbmParams& params, Scheme scheme, int first_level, int last_level,
                                             std::uint64_t n, std::uint64_t seed, unsigned threads = 1) {
    const auto model = gbm_model(params);
    std::vector<double> errors;
    for (int level = first_level; level <= last_level; ++level) {
        const auto grid = LevelGrid::make(level, params.horizon);
        constexpr std::uint64_t kChunk = 1024;
        const std::uint64_t n_chunks = (n + kChunk - 1) / kChunk;
        std::vector<RunningMoments> acc(n_chunks);
        parallel_for(n_chunks, threads, [&](std::size_t chunk) {
            CoupledPathRecord rec;
            rec.grid = grid;
            const std::uint64_t end = std::min(n, (chunk + 1) * kChunk);
            for (std::uint64_t i = chunk * kChunk; i < end; ++i) {
                SampleStream stream(seed, static_cast<std::uint32_t>(level), i);
                sample_coupled_increments(stream, grid, rec.increments);
                simulate_coupled_inplace(model, scheme, rec);
                double w_t = 0.0;
                for (double dw : rec.increments.fine) {
                    w_t += dw;
                }
                acc[chunk].push(std::abs(rec.fine.back() - gbm_exact_terminal(params, w_t)));
            }
        });
        RunningMoments total;
        for (const auto& a : acc) {
            total += a;
        }
        errors.push_back(total.mean());
    }
    return errors;
}

inline OracleOutcome strong_order_check(Scheme scheme, double lo, double hi, std::uint64_t n, std::uint64_t seed,
                                        unsigned threads = 1) {
    const GbmParams params{0.05, 0.2, 1.0, 1.0};
    const auto errors = gbm_strong_errors(params, scheme, 4, 9, n, seed, threads);
    const auto fit = fit_rate(errors, 4);
    OracleOutcome out;
    out.name = std::string(to_string(scheme)) + " strong order (levels 4..9)";
    out.statistic = fit.exponent;
    out.threshold = hi;
    out.passed = fit.exponent >= lo && fit.exponent <= hi;
    std::ostringstream d;
    d << "fitted order " << fit.exponent << ", accepted [" << lo << ", " << hi << "]";
    out.detail = d.str();
    return out;
}

/// Zero-volatility model: degenerate bridges collapse to their endpoints and
/// fine and coarse payoffs coincide.
inline OracleOutcome degenerate_model_check() {
    const auto model = gbm_model({0.0, 0.0, 1.0, 1.0});
    const auto grid = LevelGrid::make(3, 1.0);
    SampleStream stream(7, 3, 0);
    const auto rec = simulate_coupled(model, grid, sample_coupled_increments(stream, grid), Scheme::milstein);
    double worst = 0.0;
    const auto f2 = [](double a, double b) { return a + b; };
    const std::vector<PayoffSpec> payoffs{european_call(0.5, 1.0), AsianT1{f2}, AsianT2{f2}, Lookback{f2}};
    for (const auto& p : payoffs) {
        worst = std::max(worst, std::abs(evaluate_pair(rec, p).difference()));
    }
    worst = std::max(worst, std::abs(conditional_minimum(1.0, 2.0, 0.0, 0.5, 0.3) - 1.0));
    worst = std::max(worst, std::abs(conditional_maximum(1.0, 2.0, 0.0, 0.5, 0.3) - 2.0));
    OracleOutcome out;
    out.name = "zero-volatility smoke model";
    out.statistic = worst;
    out.threshold = 0.0;
    out.passed = worst == 0.0;
    out.detail = "max |fine - coarse| and |degenerate bridge - endpoint|";
    return out;
}

struct SuiteOptions {
    std::uint64_t seed = 20240611;
    std::size_t ks_draws = 100000;
    std::uint64_t crossing_trials = 100000;
    int crossing_substeps = 512;
    std::uint64_t strong_samples = 10000;
    unsigned threads = 1;
    CrossingFn crossing = crossing_probability;
    MinimumFn minimum = conditional_minimum;
};

inline std::vector<OracleOutcome> run_suite(const SuiteOptions& opt) {
    std::vector<OracleOutcome> out;
    out.push_back(normal_round_trip_check());
    const auto cases = default_bridge_cases();
    for (std::size_t i = 0; i < cases.size(); ++i) {
        out.push_back(minimum_ks_check(cases[i], opt.ks_draws, opt.seed, 100 + static_cast<std::uint32_t>(i),
                                       opt.minimum));
    }
    for (std::size_t i = 0; i < cases.size(); ++i) {
        out.push_back(crossing_frequency_check(cases[i], opt.crossing_trials, opt.crossing_substeps, opt.seed,
                                               200 + static_cast<std::uint32_t>(i), opt.crossing, opt.threads));
    }
    out.push_back(strong_order_check(Scheme::milstein, 0.75, 1.25, opt.strong_samples, opt.seed, opt.threads));
    out.push_back(strong_order_check(Scheme::euler, 0.4, 0.6, opt.strong_samples, opt.seed, opt.threads));
    out.push_back(degenerate_model_check());
    return out;
}

}  // namespace mlmc::validation
