#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlmc/brownian.hpp"
#include "mlmc/model.hpp"
#include "mlmc/parallel.hpp"
#include "mlmc/payoffs.hpp"
#include "mlmc/random.hpp"
#include "mlmc/schemes.hpp"
#include "mlmc/stats.hpp"

namespace mlmc {

struct SamplingOptions {
    Scheme scheme = Scheme::milstein;
    unsigned threads = 0;  // 0: hardware concurrency
};

/// Fine plus coarse timesteps executed by one coupled sample. A base level
/// (level 0, or the coarsest level of a run starting higher) simulates the
/// fine path only.
constexpr std::uint64_t steps_per_sample(int level, bool base = false) noexcept {
    if (level == 0 || base) {
        return std::uint64_t{1} << level;
    }
    return (std::uint64_t{1} << level) + (std::uint64_t{1} << (level - 1));
}

/// Running statistics of Y = P^f_l - P^c_{l-1} and of both payoff members
/// on one level.
struct LevelEstimate {
    int level = 0;
    bool base = false;  // Y is the fine payoff alone
    std::uint64_t n_samples = 0;
    RunningMoments y;
    RunningMoments fine;
    RunningMoments coarse;
    std::uint64_t cost = 0;  // timesteps executed, n_samples * steps_per_sample(level, base)

    double mean_y() const noexcept { return y.mean(); }
    double var_y() const noexcept { return y.variance(); }
    double mean_p() const noexcept { return fine.mean(); }
    double var_p() const noexcept { return fine.variance(); }
    double kurtosis_y() const noexcept { return y.kurtosis(); }
    double cost_per_sample() const noexcept { return static_cast<double>(steps_per_sample(level, base)); }
};

namespace detail {

inline constexpr std::uint64_t kChunkSize = 1024;

struct LevelMoments {
    RunningMoments y;
    RunningMoments fine;
    RunningMoments coarse;
};

// Samples [first, first + n) of `level` for every payoff. Chunk boundaries
// depend only on the sample indices, and chunk results are merged in index
// order, so the output does not depend on the worker count. On a base level
// above 0 the coarse member is ignored and Y is the fine payoff.
template <SdeModel Model>
std::vector<LevelMoments> sample_level(const Model& model, std::span<const PayoffSpec> payoffs, int level, bool base,
                                       std::uint64_t first, std::uint64_t n, std::uint64_t seed,
                                       const SamplingOptions& opts) {
    const auto grid = LevelGrid::make(level, model.horizon());
    const std::uint64_t n_chunks = (n + kChunkSize - 1) / kChunkSize;
    std::vector<std::vector<LevelMoments>> chunks(n_chunks, std::vector<LevelMoments>(payoffs.size()));

    parallel_for(n_chunks, opts.threads, [&](std::size_t c) {
        CoupledPathRecord rec;
        rec.grid = grid;
        auto& acc = chunks[c];
        const std::uint64_t begin = first + c * kChunkSize;
        const std::uint64_t end = std::min(first + n, begin + kChunkSize);
        for (std::uint64_t i = begin; i < end; ++i) {
            SampleStream stream(seed, static_cast<std::uint32_t>(level), i);
            sample_coupled_increments(stream, grid, rec.increments);
            simulate_coupled_inplace(model, opts.scheme, rec);
            for (std::size_t p = 0; p < payoffs.size(); ++p) {
                PayoffPair pair = evaluate_pair(rec, payoffs[p]);
                if (base) {
                    pair.coarse = 0.0;
                }
                if (!std::isfinite(pair.fine) || !std::isfinite(pair.coarse)) {
                    std::ostringstream os;
                    os << "non-finite " << payoff_name(payoffs[p]) << " payoff at level " << level << ", sample "
                       << i;
                    throw NumericalFailure(os.str());
                }
                acc[p].y.push(pair.fine - pair.coarse);
                acc[p].fine.push(pair.fine);
                acc[p].coarse.push(pair.coarse);
            }
        }
    });

    std::vector<LevelMoments> total(payoffs.size());
    for (const auto& chunk : chunks) {
        for (std::size_t p = 0; p < payoffs.size(); ++p) {
            total[p].y += chunk[p].y;
            total[p].fine += chunk[p].fine;
            total[p].coarse += chunk[p].coarse;
        }
    }
    return total;
}

inline void absorb(LevelEstimate& est, const LevelMoments& m, std::uint64_t n) {
    est.y += m.y;
    est.fine += m.fine;
    est.coarse += m.coarse;
    est.n_samples += n;
    est.cost += n * steps_per_sample(est.level, est.base);
}

}  // namespace detail

/// Appends samples [est.n_samples, est.n_samples + n_more) to `est`.
template <SdeModel Model>
void extend_level(LevelEstimate& est, const Model& model, const PayoffSpec& payoff, std::uint64_t n_more,
                  std::uint64_t seed, const SamplingOptions& opts = {}) {
    if (n_more == 0) {
        return;
    }
    const auto moments =
        detail::sample_level(model, std::span<const PayoffSpec>(&payoff, 1), est.level, est.base, est.n_samples, n_more,
                             seed, opts);
    detail::absorb(est, moments[0], n_more);
}

/// Estimates one level for several payoffs from the same coupled samples.
/// Each result equals what estimate_level returns for that payoff alone.
template <SdeModel Model>
std::vector<LevelEstimate> estimate_level_multi(const Model& model, std::span<const PayoffSpec> payoffs, int level,
                                                std::uint64_t n, std::uint64_t seed, const SamplingOptions& opts = {}) {
    if (n < 2) {
        throw std::invalid_argument("estimate_level: need at least 2 samples");
    }
    for (const auto& p : payoffs) {
        check_payoff(p, model.horizon(), level);
    }
    const auto moments = detail::sample_level(model, payoffs, level, level == 0, 0, n, seed, opts);
    std::vector<LevelEstimate> out(payoffs.size());
    for (std::size_t p = 0; p < payoffs.size(); ++p) {
        out[p].level = level;
        out[p].base = level == 0;
        detail::absorb(out[p], moments[p], n);
    }
    return out;
}

/// N independent coupled samples of level `level`; sample i is driven by
/// SampleStream(seed, level, i).
template <SdeModel Model>
LevelEstimate estimate_level(const Model& model, const PayoffSpec& payoff, int level, std::uint64_t n,
                             std::uint64_t seed, const SamplingOptions& opts = {}) {
    return estimate_level_multi(model, std::span<const PayoffSpec>(&payoff, 1), level, n, seed, opts)[0];
}

/// Independent estimates for each level in [first_level, last_level] with a
/// fixed sample count; the raw data behind variance/mean decay fits.
template <SdeModel Model>
std::vector<std::vector<LevelEstimate>> convergence_table_multi(const Model& model,
                                                                std::span<const PayoffSpec> payoffs, int first_level,
                                                                int last_level, std::uint64_t n, std::uint64_t seed,
                                                                const SamplingOptions& opts = {}) {
    if (n < 100) {
        throw std::invalid_argument("convergence_table: need at least 100 samples per level");
    }
    if (first_level < 0 || last_level < first_level) {
        throw std::invalid_argument("convergence_table: invalid level range");
    }
    std::vector<std::vector<LevelEstimate>> table(payoffs.size());
    for (int level = first_level; level <= last_level; ++level) {
        auto row = estimate_level_multi(model, payoffs, level, n, seed, opts);
        for (std::size_t p = 0; p < payoffs.size(); ++p) {
            table[p].push_back(std::move(row[p]));
        }
    }
    return table;
}

template <SdeModel Model>
std::vector<LevelEstimate> convergence_table(const Model& model, const PayoffSpec& payoff, int first_level,
                                             int last_level, std::uint64_t n, std::uint64_t seed,
                                             const SamplingOptions& opts = {}) {
    return convergence_table_multi(model, std::span<const PayoffSpec>(&payoff, 1), first_level, last_level, n, seed,
                                   opts)[0];
}

/// Sample counts minimising sum V_l / N_l at fixed cost sum N_l c_l, scaled
/// so that sum V_l / N_l <= eps^2 / 2:
///   N_l = ceil(2 eps^-2 sqrt(V_l / c_l) sum_k sqrt(V_k c_k)),
/// floored at min_count.
inline std::vector<std::uint64_t> optimal_allocation(std::span<const double> variances, std::span<const double> costs,
                                                     double eps, std::uint64_t min_count) {
    if (variances.size() != costs.size()) {
        throw std::invalid_argument("optimal_allocation: variance and cost sizes differ");
    }
    if (!(eps > 0.0)) {
        throw std::invalid_argument("optimal_allocation: eps must be positive");
    }
    double sum = 0.0;
    for (std::size_t l = 0; l < variances.size(); ++l) {
        if (!(variances[l] >= 0.0) || !(costs[l] > 0.0)) {
            throw std::invalid_argument("optimal_allocation: need V >= 0 and c > 0");
        }
        sum += std::sqrt(variances[l] * costs[l]);
    }
    std::vector<std::uint64_t> n(variances.size(), min_count);
    for (std::size_t l = 0; l < variances.size(); ++l) {
        const double target = 2.0 * std::sqrt(variances[l] / costs[l]) * sum / (eps * eps);
        // Absorb rounding noise so that exact integers are not bumped up.
        const double count = std::ceil(target * (1.0 - 1e-12));
        if (count > static_cast<double>(min_count)) {
            n[l] = static_cast<std::uint64_t>(count);
        }
    }
    return n;
}

struct MlmcConfig {
    int base_level = 0;   // coarsest level; its estimator is P_base alone
    int min_level = 2;    // levels base..min_level are warmed up
    int max_level = 14;
    std::uint64_t warmup = 10000;
    std::uint64_t min_samples = 100;  // allocation floor for every level
    double bias_safety = 1.0;         // multiplies the extrapolated bias
    std::uint64_t seed = 1;
    SamplingOptions sampling;
    int max_rounds = 1000;
    double variance_warning = 0.1;  // relative error of V_l that triggers a warning
};

enum class MlmcStatus { converged, max_level_exceeded };

struct MlmcResult {
    MlmcStatus status = MlmcStatus::converged;
    double estimate = 0.0;
    int finest_level = 0;
    std::vector<LevelEstimate> levels;
    std::uint64_t total_cost = 0;
    double epsilon = 0.0;
    double alpha = 1.0;
    double bias_estimate = 0.0;
    double statistical_error = 0.0;
    std::vector<std::string> warnings;

    std::vector<std::uint64_t> allocations() const {
        std::vector<std::uint64_t> n;
        for (const auto& l : levels) {
            n.push_back(l.n_samples);
        }
        return n;
    }
    bool converged() const noexcept { return status == MlmcStatus::converged; }
};

namespace detail {

// Least-squares decay exponent of v against level over positive entries with
// level > 0, clamped below at 0.5; 1 when fewer than two such points exist.
inline double variance_decay(const std::vector<double>& v, const std::vector<int>& levels) {
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (levels[i] > 0 && v[i] > 0.0) {
            xs.push_back(levels[i]);
            ys.push_back(std::log2(v[i]));
        }
    }
    if (xs.size() < 2) {
        return 1.0;
    }
    const double xbar = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    const double ybar = std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(ys.size());
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - xbar) * (xs[i] - xbar);
        sxy += (xs[i] - xbar) * (ys[i] - ybar);
    }
    return std::max(0.5, -sxy / sxx);
}

}  // namespace detail

/// Adaptive multilevel estimator of E[P] to root-mean-square accuracy eps.
///
/// Warm-up samples on levels base..min_level, then alternate between topping
/// up every level to the optimal allocation and adding a level while the
/// extrapolated bias |Y_L| / (2^alpha - 1) exceeds eps / sqrt(2). A new level
/// is allocated from a variance extrapolated with the fitted decay rate.
/// Stops with status max_level_exceeded if the bias test still fails at
/// max_level; the partial result is returned.
template <SdeModel Model>
MlmcResult mlmc_run(const Model& model, const PayoffSpec& payoff, double eps, double alpha, const MlmcConfig& cfg) {
    if (!(eps > 0.0)) {
        throw std::invalid_argument("mlmc_run: eps must be positive");
    }
    if (!(alpha >= 0.5)) {
        throw std::invalid_argument("mlmc_run: alpha must be >= 1/2");
    }
    if (cfg.base_level < 0 || cfg.min_level <= cfg.base_level || cfg.max_level < cfg.min_level) {
        throw std::invalid_argument("mlmc_run: need 0 <= base_level < min_level <= max_level");
    }
    if (cfg.warmup < 2) {
        throw std::invalid_argument("mlmc_run: warm-up needs at least 2 samples");
    }
    check_payoff(payoff, model.horizon(), cfg.base_level);

    MlmcResult res;
    res.epsilon = eps;
    res.alpha = alpha;

    int finest = cfg.min_level;
    std::vector<LevelEstimate> levels;
    std::vector<std::uint64_t> pending;
    for (int l = cfg.base_level; l <= finest; ++l) {
        LevelEstimate e;
        e.level = l;
        e.base = l == cfg.base_level;
        levels.push_back(e);
        pending.push_back(cfg.warmup);
    }

    const auto bias_of = [&](const LevelEstimate& top) {
        return cfg.bias_safety * std::abs(top.mean_y()) / (std::pow(2.0, alpha) - 1.0);
    };
    const double bias_target = eps / std::sqrt(2.0);

    for (int round = 0;; ++round) {
        if (round >= cfg.max_rounds) {
            throw NumericalFailure("mlmc_run: sample allocation did not settle within max_rounds");
        }
        for (std::size_t i = 0; i < levels.size(); ++i) {
            extend_level(levels[i], model, payoff, pending[i], cfg.seed, cfg.sampling);
            pending[i] = 0;
        }

        std::vector<double> v, c;
        std::vector<int> lv;
        for (const auto& e : levels) {
            v.push_back(e.var_y());
            c.push_back(e.cost_per_sample());
            lv.push_back(e.base ? -1 : e.level);  // base levels carry Var[P], not Var[Y]
        }
        // Levels without samples yet carry an extrapolated variance.
        const double beta = detail::variance_decay(v, lv);
        for (std::size_t i = 1; i < levels.size(); ++i) {
            if (levels[i].n_samples < 2) {
                v[i] = v[i - 1] / std::pow(2.0, beta);
            }
        }
        const auto target = optimal_allocation(v, c, eps, cfg.min_samples);
        bool settled = true;
        for (std::size_t i = 0; i < levels.size(); ++i) {
            if (target[i] > levels[i].n_samples) {
                pending[i] = target[i] - levels[i].n_samples;
                settled = false;
            }
        }
        if (!settled) {
            continue;
        }

        if (bias_of(levels.back()) <= bias_target) {
            res.status = MlmcStatus::converged;
            break;
        }
        if (finest >= cfg.max_level) {
            res.status = MlmcStatus::max_level_exceeded;
            break;
        }
        ++finest;
        LevelEstimate e;
        e.level = finest;
        levels.push_back(e);
        pending.push_back(0);
        // The next round allocates the new level from the extrapolated variance.
        v.push_back(v.back() / std::pow(2.0, beta));
        c.push_back(static_cast<double>(steps_per_sample(finest)));
        const auto grown = optimal_allocation(v, c, eps, cfg.min_samples);
        for (std::size_t i = 0; i < levels.size(); ++i) {
            pending[i] = grown[i] > levels[i].n_samples ? grown[i] - levels[i].n_samples : 0;
        }
    }

    double stat_var = 0.0;
    for (const auto& e : levels) {
        res.estimate += e.mean_y();
        res.total_cost += e.cost;
        stat_var += e.var_y() / static_cast<double>(e.n_samples);
        if (e.y.variance_relative_error() > cfg.variance_warning) {
            std::ostringstream os;
            os << "level " << e.level << ": variance estimate relative error " << e.y.variance_relative_error()
               << " (kurtosis " << e.kurtosis_y() << ")";
            res.warnings.push_back(os.str());
        }
    }
    res.finest_level = finest;
    res.statistical_error = std::sqrt(stat_var);
    res.bias_estimate = bias_of(levels.back());
    res.levels = std::move(levels);
    return res;
}

}  // namespace mlmc
