#pragma once

#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mlmc/cli/config.hpp"
#include "mlmc/estimator.hpp"
#include "mlmc/validation.hpp"

namespace mlmc::cli {

/// Shortest decimal string that parses back to the same double.
inline std::string format_number(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

inline std::string format_number(std::uint64_t x) { return std::to_string(x); }

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Writes `text` to the configured output path, or to `console` when none is set.
inline void emit(const RunConfig& cfg, const std::string& text, std::ostream& console) {
    if (cfg.out_path.empty()) {
        console << text;
        console.flush();
        return;
    }
    std::ofstream out(cfg.out_path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw ConfigError("cannot write output file '" + cfg.out_path + "'");
    }
    out << text;
    if (!out.flush()) {
        throw ConfigError("write to '" + cfg.out_path + "' failed");
    }
}

inline nlohmann::json document(const RunConfig& cfg, nlohmann::json results, nlohmann::json fits) {
    nlohmann::json doc;
    doc["config"] = to_json(cfg);
    doc["results"] = std::move(results);
    doc["fits"] = std::move(fits);
    doc["version"] = kVersion;
    if (cfg.timestamp) {
        doc["timestamp"] = utc_timestamp();
    }
    return doc;
}

/// Lowest level whose grid contains every European observation time.
inline int alignment_level(const PayoffSpec& spec, double horizon) {
    for (int level = 0; level <= 30; ++level) {
        try {
            check_payoff(spec, horizon, level);
            return level;
        } catch (const std::invalid_argument&) {
        }
    }
    throw ConfigError("observation times do not align with any grid up to level 30");
}

// ---------------------------------------------------------------- converge

struct ConvergeFits {
    std::optional<RateFit> alpha;  // decay of |mean_Y|
    std::optional<RateFit> beta;   // decay of var_Y
};

/// Rate fits over levels 3..8 of the table, or over all levels >= 1 when
/// fewer than three of those are present. A fit is absent when some value
/// in the range is zero.
inline ConvergeFits fit_table(const std::vector<LevelEstimate>& rows) {
    const auto collect = [&](int lo, int hi) {
        std::vector<const LevelEstimate*> out;
        for (const auto& r : rows) {
            if (r.level >= lo && r.level <= hi) {
                out.push_back(&r);
            }
        }
        return out;
    };
    auto sel = collect(3, 8);
    if (sel.size() < 3) {
        sel = collect(1, 30);
    }
    ConvergeFits fits;
    if (sel.size() < 3) {
        return fits;
    }
    std::vector<double> means, vars;
    for (const auto* r : sel) {
        means.push_back(std::abs(r->mean_y()));
        vars.push_back(r->var_y());
    }
    const int first = sel.front()->level;
    try {
        fits.alpha = fit_rate(means, first);
    } catch (const std::exception&) {
    }
    try {
        fits.beta = fit_rate(vars, first);
    } catch (const std::exception&) {
    }
    return fits;
}

/// |mean_P(l) - mean_P(l-1) - mean_Y(l)| in combined standard errors; absent
/// on the first row and when the combined error is zero.
inline std::optional<double> consistency_se(const LevelEstimate& prev, const LevelEstimate& cur) {
    const double n_prev = static_cast<double>(prev.n_samples);
    const double n_cur = static_cast<double>(cur.n_samples);
    const double se = std::sqrt(prev.var_p() / n_prev + cur.var_p() / n_cur + cur.var_y() / n_cur);
    const double gap = std::abs(cur.mean_p() - prev.mean_p() - cur.mean_y());
    if (!(se > 0.0)) {
        return gap == 0.0 ? std::optional<double>(0.0) : std::nullopt;
    }
    return gap / se;
}

inline std::string converge_csv(const std::vector<LevelEstimate>& rows, const ConvergeFits& fits, double horizon) {
    std::string s = "level,h,N,mean_Y,var_Y,mean_P,var_P,kurt_Y,cost,consistency_se,alpha_hat,beta_hat\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        s += std::to_string(r.level) + ',' + format_number(std::ldexp(horizon, -r.level)) + ',' +
             format_number(r.n_samples) + ',' + format_number(r.mean_y()) + ',' + format_number(r.var_y()) + ',' +
             format_number(r.mean_p()) + ',' + format_number(r.var_p()) + ',' + format_number(r.kurtosis_y()) + ',' +
             format_number(r.cost) + ',';
        if (i > 0) {
            if (const auto c = consistency_se(rows[i - 1], r)) {
                s += format_number(*c);
            }
        }
        s += ",,\n";
    }
    s += "-1,,,,,,,,,,";
    if (fits.alpha) {
        s += format_number(fits.alpha->exponent);
    }
    s += ',';
    if (fits.beta) {
        s += format_number(fits.beta->exponent);
    }
    s += '\n';
    return s;
}

inline nlohmann::json fit_json(const std::optional<RateFit>& f) {
    if (!f) {
        return nullptr;
    }
    return {{"exponent", f->exponent},
            {"intercept", f->intercept},
            {"residual_norm", f->residual_norm},
            {"first_level", f->first_level},
            {"last_level", f->last_level}};
}

inline nlohmann::json level_json(const LevelEstimate& r, double horizon) {
    return {{"level", r.level},
            {"h", std::ldexp(horizon, -r.level)},
            {"N", r.n_samples},
            {"mean_Y", r.mean_y()},
            {"var_Y", r.var_y()},
            {"mean_P", r.mean_p()},
            {"var_P", r.var_p()},
            {"kurt_Y", r.kurtosis_y()},
            {"cost", r.cost}};
}

inline std::string converge_json(const RunConfig& cfg, const std::vector<LevelEstimate>& rows,
                                 const ConvergeFits& fits) {
    nlohmann::json results = nlohmann::json::array();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto row = level_json(rows[i], cfg.model.horizon);
        std::optional<double> c;
        if (i > 0) {
            c = consistency_se(rows[i - 1], rows[i]);
        }
        row["consistency_se"] = c ? nlohmann::json(*c) : nlohmann::json(nullptr);
        results.push_back(std::move(row));
    }
    nlohmann::json f = {{"alpha_hat", fit_json(fits.alpha)}, {"beta_hat", fit_json(fits.beta)}};
    return document(cfg, std::move(results), std::move(f)).dump(2) + '\n';
}

/// Fixed-N estimates for every level of the configured range plus rate fits.
inline int run_converge(const RunConfig& cfg, std::ostream& console = std::cout, std::ostream& err = std::cerr) {
    cfg.validate();
    const auto model = gbm_model(cfg.model);
    const auto payoff = make_payoff(cfg);
    try {
        check_payoff(payoff, cfg.model.horizon, cfg.level_lo);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string(e.what()) + " (raise the first level)");
    }
    std::vector<LevelEstimate> rows;
    int status = kExitOk;
    try {
        for (int level = cfg.level_lo; level <= cfg.level_hi; ++level) {
            rows.push_back(estimate_level(model, payoff, level, cfg.samples, cfg.seed,
                                          SamplingOptions{cfg.scheme, cfg.threads}));
        }
    } catch (const NumericalFailure& e) {
        err << "numerical failure: " << e.what() << '\n';
        status = kExitNumerical;
    }
    const auto fits = fit_table(rows);
    emit(cfg, cfg.format == "json" ? converge_json(cfg, rows, fits) : converge_csv(rows, fits, cfg.model.horizon),
         console);
    return status;
}

// ------------------------------------------------------------------- price

struct PriceRun {
    int run = 0;
    std::uint64_t seed = 0;
    MlmcResult result;
};

/// Seed of repetition `run`; the first run uses the configured seed itself.
inline std::uint64_t run_seed(std::uint64_t seed, int run) {
    return run == 0 ? seed : mix_seed(seed, static_cast<std::uint64_t>(run));
}

inline std::string status_name(MlmcStatus s) {
    return s == MlmcStatus::converged ? "converged" : "max_level_exceeded";
}

inline std::string price_csv(const std::vector<PriceRun>& runs) {
    std::string s =
        "run,seed,status,estimate,finest_level,total_cost,bias_estimate,statistical_error,epsilon,allocations\n";
    for (const auto& r : runs) {
        const auto& m = r.result;
        std::string alloc;
        for (const auto& l : m.levels) {
            if (!alloc.empty()) {
                alloc += ';';
            }
            alloc += std::to_string(l.n_samples);
        }
        s += std::to_string(r.run) + ',' + std::to_string(r.seed) + ',' + status_name(m.status) + ',' +
             format_number(m.estimate) + ',' + std::to_string(m.finest_level) + ',' + format_number(m.total_cost) +
             ',' + format_number(m.bias_estimate) + ',' + format_number(m.statistical_error) + ',' +
             format_number(m.epsilon) + ',' + alloc + '\n';
    }
    return s;
}

inline std::string price_json(const RunConfig& cfg, const std::vector<PriceRun>& runs) {
    nlohmann::json results = nlohmann::json::array();
    for (const auto& r : runs) {
        const auto& m = r.result;
        nlohmann::json levels = nlohmann::json::array();
        for (const auto& l : m.levels) {
            levels.push_back(level_json(l, cfg.model.horizon));
        }
        results.push_back({{"run", r.run},
                           {"seed", r.seed},
                           {"status", status_name(m.status)},
                           {"estimate", m.estimate},
                           {"finest_level", m.finest_level},
                           {"allocations", m.allocations()},
                           {"total_cost", m.total_cost},
                           {"epsilon", m.epsilon},
                           {"alpha", m.alpha},
                           {"bias_estimate", m.bias_estimate},
                           {"statistical_error", m.statistical_error},
                           {"warnings", m.warnings},
                           {"levels", std::move(levels)}});
    }
    return document(cfg, std::move(results), nullptr).dump(2) + '\n';
}

/// Adaptive estimate to accuracy epsilon, repeated `repeat` times with
/// derived seeds. Runs that hit the maximum level are still reported.
inline int run_price(const RunConfig& cfg, std::ostream& console = std::cout, std::ostream& err = std::cerr) {
    cfg.validate();
    const auto model = gbm_model(cfg.model);
    const auto payoff = make_payoff(cfg);
    MlmcConfig mc = make_mlmc_config(cfg, cfg.seed);
    const int aligned = alignment_level(payoff, cfg.model.horizon);
    if (aligned > mc.base_level) {
        mc.base_level = aligned;
        mc.min_level = std::max(mc.min_level, aligned + 2);
        mc.max_level = std::max(mc.max_level, mc.min_level);
    }
    std::vector<PriceRun> runs;
    int status = kExitOk;
    try {
        for (int r = 0; r < cfg.repeat; ++r) {
            mc.seed = run_seed(cfg.seed, r);
            PriceRun pr{r, mc.seed, mlmc_run(model, payoff, cfg.epsilon, default_alpha(cfg), mc)};
            for (const auto& w : pr.result.warnings) {
                err << "run " << r << ": warning: " << w << '\n';
            }
            if (!pr.result.converged()) {
                err << "run " << r << ": maximum level " << mc.max_level << " reached before the bias test passed\n";
                status = kExitNumerical;
            }
            runs.push_back(std::move(pr));
        }
    } catch (const NumericalFailure& e) {
        err << "numerical failure: " << e.what() << '\n';
        status = kExitNumerical;
    }
    emit(cfg, cfg.format == "json" ? price_json(cfg, runs) : price_csv(runs), console);
    return status;
}

// ---------------------------------------------------------------- validate

inline std::string validate_csv(const std::vector<validation::OracleOutcome>& out) {
    std::string s = "oracle,passed,statistic,threshold,detail\n";
    for (const auto& o : out) {
        s += '"' + o.name + "\"," + (o.passed ? "1" : "0") + ',' + format_number(o.statistic) + ',' +
             format_number(o.threshold) + ",\"" + o.detail + "\"\n";
    }
    return s;
}

/// Runs the bridge, normal-CDF and strong-order oracles; one line per oracle
/// goes to the console and the table to --out when one is given.
inline int run_validate(const RunConfig& cfg, std::ostream& console = std::cout, std::ostream& err = std::cerr) {
    (void)err;
    validation::SuiteOptions opt;
    opt.seed = cfg.seed;
    opt.threads = cfg.threads;
    const auto out = validation::run_suite(opt);
    bool all = true;
    for (const auto& o : out) {
        all = all && o.passed;
        console << (o.passed ? "PASS " : "FAIL ") << o.name << "  statistic=" << format_number(o.statistic)
                << " threshold=" << format_number(o.threshold) << "  (" << o.detail << ")\n";
    }
    if (!cfg.out_path.empty()) {
        if (cfg.format == "json") {
            nlohmann::json results = nlohmann::json::array();
            for (const auto& o : out) {
                results.push_back({{"oracle", o.name},
                                   {"passed", o.passed},
                                   {"statistic", o.statistic},
                                   {"threshold", o.threshold},
                                   {"detail", o.detail}});
            }
            emit(cfg, document(cfg, std::move(results), nullptr).dump(2) + '\n', console);
        } else {
            emit(cfg, validate_csv(out), console);
        }
    }
    return all ? kExitOk : kExitFailed;
}

}  // namespace mlmc::cli
