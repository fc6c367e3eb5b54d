// Command-line front end: mlmc_cli {converge|price|validate} [options]

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mlmc/cli/commands.hpp"

namespace {

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    std::optional<std::string> out;
    std::optional<std::string> format;
    std::optional<std::string> levels;
    std::optional<std::uint64_t> samples;
    std::optional<double> eps;
    std::optional<int> repeat;
    std::optional<std::string> payoff;
    std::optional<std::string> scheme;
    bool no_timestamp = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "base random seed");
    cmd->add_option("--threads", o.threads, "worker threads (0: all cores)");
    cmd->add_option("--out", o.out, "output file (default: stdout)");
    cmd->add_option("--format", o.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
    cmd->add_flag("--no-timestamp", o.no_timestamp, "omit the timestamp from JSON output");
}

std::pair<int, int> parse_levels(const std::string& s) {
    const auto dots = s.find("..");
    try {
        std::size_t used = 0;
        if (dots == std::string::npos) {
            const int l = std::stoi(s, &used);
            if (used != s.size()) {
                throw std::invalid_argument(s);
            }
            return {l, l};
        }
        const int a = std::stoi(s.substr(0, dots), &used);
        if (used != dots) {
            throw std::invalid_argument(s);
        }
        const std::string rest = s.substr(dots + 2);
        const int b = std::stoi(rest, &used);
        if (used != rest.size()) {
            throw std::invalid_argument(s);
        }
        return {a, b};
    } catch (const std::exception&) {
        throw mlmc::cli::ConfigError("--levels expects A..B, got '" + s + "'");
    }
}

mlmc::cli::RunConfig build_config(const Overrides& o, mlmc::cli::Mode mode) {
    mlmc::cli::RunConfig cfg;
    if (!o.config.empty()) {
        cfg = mlmc::cli::load_config_file(o.config, cfg);
    }
    cfg.mode = mode;
    if (o.seed) cfg.seed = *o.seed;
    if (o.threads) cfg.threads = *o.threads;
    if (o.out) cfg.out_path = *o.out;
    if (o.format) cfg.format = *o.format;
    if (o.levels) std::tie(cfg.level_lo, cfg.level_hi) = parse_levels(*o.levels);
    if (o.samples) cfg.samples = *o.samples;
    if (o.eps) cfg.epsilon = *o.eps;
    if (o.repeat) cfg.repeat = *o.repeat;
    if (o.payoff) cfg.payoff.kind = *o.payoff;
    if (o.scheme) {
        try {
            cfg.scheme = mlmc::parse_scheme(*o.scheme);
        } catch (const std::invalid_argument& e) {
            throw mlmc::cli::ConfigError(e.what());
        }
    }
    if (o.no_timestamp) cfg.timestamp = false;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multilevel Monte Carlo pricing with Milstein paths and Brownian-bridge coupling"};
    app.require_subcommand(1);
    app.set_version_flag("--version", mlmc::cli::kVersion);

    Overrides conv, price, val;

    auto* c = app.add_subcommand("converge", "per-level table of mean/variance decay with rate fits");
    add_common(c, conv);
    c->add_option("--levels", conv.levels, "level range A..B");
    c->add_option("--samples", conv.samples, "samples per level");
    c->add_option("--payoff", conv.payoff, "payoff kind");
    c->add_option("--scheme", conv.scheme, "euler or milstein");

    auto* p = app.add_subcommand("price", "adaptive multilevel estimate to a target accuracy");
    add_common(p, price);
    p->add_option("--eps", price.eps, "target root-mean-square error");
    p->add_option("--repeat", price.repeat, "independent repetitions");
    p->add_option("--payoff", price.payoff, "payoff kind");
    p->add_option("--scheme", price.scheme, "euler or milstein");

    auto* v = app.add_subcommand("validate", "bridge-sampler, normal-CDF and strong-order oracles");
    add_common(v, val);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : mlmc::cli::kExitConfig;
    }

    try {
        if (c->parsed()) {
            return mlmc::cli::run_converge(build_config(conv, mlmc::cli::Mode::converge));
        }
        if (p->parsed()) {
            return mlmc::cli::run_price(build_config(price, mlmc::cli::Mode::price));
        }
        return mlmc::cli::run_validate(build_config(val, mlmc::cli::Mode::validate));
    } catch (const mlmc::cli::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return mlmc::cli::kExitConfig;
    } catch (const mlmc::NumericalFailure& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return mlmc::cli::kExitNumerical;
    } catch (const std::invalid_argument& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return mlmc::cli::kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return mlmc::cli::kExitNumerical;
    }
}
