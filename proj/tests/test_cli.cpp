#include <sys/wait.h>

#include <catch_amalgamated.hpp>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mlmc/cli/commands.hpp"
#include "mlmc/validation.hpp"
#include "support/gbm_oracles.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code = -1;
    std::string out;
};

Outcome run(const std::string& args) {
    const std::string cmd = std::string(MLMC_CLI_PATH) + " " + args + " 2>/dev/null";
    Outcome o;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[4096];
    std::size_t n = 0;
    while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) {
        o.out.append(buf, n);
    }
    const int status = pclose(pipe);
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return o;
}

class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = fs::temp_directory_path() / ("mlmc_cli_test_" + std::to_string(::getpid()) + "_" +
                                             std::to_string(counter++));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    std::string file(const std::string& name, const std::string& content) const {
        const auto p = path_ / name;
        std::ofstream(p) << content;
        return p.string();
    }
    std::string path(const std::string& name) const { return (path_ / name).string(); }

private:
    fs::path path_;
};

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

// Double-quoted fields may contain commas; no escaped quotes occur.
std::vector<std::string> csv_fields(const std::string& line) {
    std::vector<std::string> out(1);
    bool quoted = false;
    for (char c : line) {
        if (c == '"') {
            quoted = !quoted;
        } else if (c == ',' && !quoted) {
            out.emplace_back();
        } else {
            out.back() += c;
        }
    }
    return out;
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& line : split(text, '\n')) {
        if (!line.empty()) {
            rows.push_back(csv_fields(line));
        }
    }
    return rows;
}

double number(const std::string& s) {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    REQUIRE(ec == std::errc{});
    REQUIRE(p == s.data() + s.size());
    return v;
}

const std::string kHeader = "level,h,N,mean_Y,var_Y,mean_P,var_P,kurt_Y,cost,consistency_se,alpha_hat,beta_hat";

}  // namespace

TEST_CASE("help and usage errors") {
    CHECK(run("--help").code == 0);
    CHECK(run("converge --help").code == 0);
    CHECK(run("--version").out.find(mlmc::cli::kVersion) != std::string::npos);
    CHECK(run("").code == mlmc::cli::kExitConfig);
    CHECK(run("converge --bogus").code == mlmc::cli::kExitConfig);
    CHECK(run("converge --levels 3-5").code == mlmc::cli::kExitConfig);
    CHECK(run("converge --levels 3..5x").code == mlmc::cli::kExitConfig);
    CHECK(run("converge --levels 5..3").code == mlmc::cli::kExitConfig);
    CHECK(run("converge --format xml").code == mlmc::cli::kExitConfig);
    CHECK(run("price --eps 0").code == mlmc::cli::kExitConfig);
    CHECK(run("price --eps -1e-3").code == mlmc::cli::kExitConfig);
    CHECK(run("converge --scheme rk4").code == mlmc::cli::kExitConfig);
    CHECK(run("converge --config /nonexistent/run.json").code == mlmc::cli::kExitConfig);
}

TEST_CASE("configuration file errors exit with the configuration code") {
    TempDir tmp;
    const auto bad = [&](const std::string& name, const std::string& json) {
        INFO(json);
        CHECK(run("converge --levels 0..2 --samples 200 --config " + tmp.file(name, json)).code ==
              mlmc::cli::kExitConfig);
    };
    bad("unknown.json", R"({"samples": 1000, "sampels": 10})");
    bad("nested.json", R"({"model": {"mu": 0.05, "vol": 0.2}})");
    bad("type.json", R"({"samples": "many"})");
    bad("syntax.json", R"({"samples": 1000,)");
    bad("barrier.json", R"({"payoff": {"kind": "barrier", "barrier": 1.2}})");
    bad("upbarrier.json", R"({"payoff": {"kind": "barrier", "barrier": 0.9, "barrier_type": "up_and_out"}})");
    bad("kind.json", R"({"payoff": {"kind": "rainbow"}})");
    bad("sigma.json", R"({"model": {"sigma": -0.1}})");
    bad("levels.json", R"({"levels": [1, 2, 3]})");
    bad("misaligned.json", R"({"payoff": {"kind": "european", "observation_times": [0.3, 1.0]}})");
    CHECK(run("converge --levels 0..2 --samples 200 --out /nonexistent/dir/table.csv").code ==
          mlmc::cli::kExitConfig);
}

TEST_CASE("converge CSV schema and shortest round-trip numbers") {
    const auto o = run("converge --levels 0..4 --samples 2000 --seed 5 --threads 2");
    REQUIRE(o.code == 0);
    const auto rows = csv_rows(o.out);
    REQUIRE(rows.size() == 7);
    CHECK(o.out.substr(0, o.out.find('\n')) == kHeader);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        REQUIRE(rows[i].size() == 12);
    }
    for (int l = 0; l <= 4; ++l) {
        const auto& r = rows[static_cast<std::size_t>(l) + 1];
        CHECK(r[0] == std::to_string(l));
        CHECK(number(r[1]) == std::ldexp(1.0, -l));
        CHECK(r[2] == "2000");
        CHECK(number(r[8]) == 2000.0 * static_cast<double>(mlmc::steps_per_sample(l)));
        CHECK(r[10].empty());
        CHECK(r[11].empty());
        CHECK(r[9].empty() == (l == 0));
        for (int c = 3; c <= 9; ++c) {
            if (r[static_cast<std::size_t>(c)].empty()) {
                continue;
            }
            const double v = number(r[static_cast<std::size_t>(c)]);
            CHECK(mlmc::cli::format_number(v) == r[static_cast<std::size_t>(c)]);
        }
    }
    const auto& fit = rows.back();
    CHECK(fit[0] == "-1");
    for (int c = 1; c <= 9; ++c) {
        CHECK(fit[static_cast<std::size_t>(c)].empty());
    }
    CHECK(number(fit[10]) > 0.5);
    CHECK(number(fit[11]) > 1.0);
    // Level 0 carries the whole price: mean_Y equals mean_P.
    CHECK(rows[1][3] == rows[1][5]);
    CHECK(std::abs(number(rows[1][3]) - oracle::call({0.05, 0.2, 1.0, 1.0}, 1.0)) < 0.02);
}

TEST_CASE("zero volatility gives zero level variances") {
    TempDir tmp;
    const auto cfg = tmp.file("flat.json", R"({"model": {"mu": 0.05, "sigma": 0.0, "s0": 1.0, "T": 1.0},
                                              "levels": [0, 5], "samples": 500})");
    for (const char* kind : {"european", "asian_t1", "asian_t2", "lookback"}) {
        const auto o = run("converge --config " + cfg + " --payoff " + kind);
        INFO(kind);
        REQUIRE(o.code == 0);
        const auto rows = csv_rows(o.out);
        REQUIRE(rows.size() == 8);
        for (std::size_t i = 1; i + 1 < rows.size(); ++i) {
            CHECK(number(rows[i][4]) == 0.0);
            CHECK(number(rows[i][6]) == 0.0);
        }
        // Zero variances leave the beta fit undefined.
        CHECK(rows.back()[11].empty());
    }
}

TEST_CASE("flags override the configuration file") {
    TempDir tmp;
    const auto cfg = tmp.file("base.json", R"({"levels": [0, 6], "samples": 4000, "seed": 1,
                                              "payoff": {"kind": "asian_t1", "strike": 1.0},
                                              "output": {"format": "json"}})");
    const auto o = run("converge --config " + cfg + " --levels 1..2 --samples 300 --seed 9 --format csv");
    REQUIRE(o.code == 0);
    const auto rows = csv_rows(o.out);
    REQUIRE(rows.size() == 4);
    CHECK(rows[1][0] == "1");
    CHECK(rows[2][0] == "2");
    CHECK(rows[1][2] == "300");
    const auto direct = run("converge --levels 1..2 --samples 300 --seed 9 --payoff asian_t1");
    CHECK(direct.out == o.out);
    const auto other_seed = run("converge --config " + cfg + " --levels 1..2 --samples 300 --format csv");
    CHECK(other_seed.out != o.out);
}

TEST_CASE("JSON document carries the config echo, results, fits and version") {
    TempDir tmp;
    const auto cfg = tmp.file("run.json", R"({"model": {"mu": 0.03, "sigma": 0.25, "s0": 1.0, "T": 1.0},
                                             "payoff": {"kind": "barrier", "strike": 1.0, "barrier": 0.85},
                                             "scheme": "euler", "levels": [2, 5], "samples": 1000, "seed": 3})");
    const auto out = tmp.path("table.json");
    REQUIRE(run("converge --config " + cfg + " --format json --out " + out).code == 0);
    const auto doc = nlohmann::json::parse(slurp(out));
    CHECK(doc.contains("timestamp"));
    for (const char* key : {"config", "results", "fits", "version"}) {
        CHECK(doc.contains(key));
    }
    CHECK(doc["version"] == mlmc::cli::kVersion);
    const auto& c = doc["config"];
    CHECK(c["model"]["mu"] == 0.03);
    CHECK(c["model"]["sigma"] == 0.25);
    CHECK(c["payoff"]["kind"] == "barrier");
    CHECK(c["payoff"]["barrier"] == 0.85);
    CHECK(c["scheme"] == "euler");
    CHECK(c["levels"] == nlohmann::json::array({2, 5}));
    CHECK(c["seed"] == 3);
    REQUIRE(doc["results"].size() == 4);
    CHECK(doc["results"][0]["level"] == 2);
    CHECK(doc["results"][0]["consistency_se"].is_null());
    CHECK(doc["results"][1]["consistency_se"].is_number());
    CHECK(doc["fits"]["beta_hat"]["exponent"].is_number());
    CHECK(doc["fits"]["beta_hat"]["first_level"] == 3);

    // The echoed config reproduces the run.
    const auto echo = tmp.file("echo.json", c.dump());
    const auto again = tmp.path("again.json");
    REQUIRE(run("converge --config " + echo + " --format json --out " + again).code == 0);
    CHECK(nlohmann::json::parse(slurp(again))["results"] == doc["results"]);

    const auto plain = run("converge --config " + cfg + " --format json --no-timestamp");
    REQUIRE(plain.code == 0);
    CHECK_FALSE(nlohmann::json::parse(plain.out).contains("timestamp"));
}

TEST_CASE("output is byte-identical across worker counts") {
    const std::string conv = "converge --levels 0..5 --samples 5000 --seed 42 --payoff lookback";
    const auto a = run(conv + " --threads 1");
    const auto b = run(conv + " --threads 4");
    REQUIRE(a.code == 0);
    CHECK(a.out == b.out);
    const std::string json = "converge --levels 2..4 --samples 3000 --format json --no-timestamp --payoff digital";
    CHECK(run(json + " --threads 1").out == run(json + " --threads 3").out);
    const std::string price = "price --eps 2e-3 --seed 11 --repeat 2 --payoff barrier";
    const auto p1 = run(price + " --threads 1");
    const auto p2 = run(price + " --threads 5");
    REQUIRE(p1.code == 0);
    CHECK(p1.out == p2.out);
}

TEST_CASE("price rows per repetition") {
    const auto o = run("price --eps 1e-3 --seed 77 --repeat 3");
    REQUIRE(o.code == 0);
    const auto rows = csv_rows(o.out);
    REQUIRE(rows.size() == 4);
    CHECK(o.out.substr(0, o.out.find('\n')) ==
          "run,seed,status,estimate,finest_level,total_cost,bias_estimate,statistical_error,epsilon,allocations");
    CHECK(rows[1][1] == "77");
    CHECK(rows[2][1] != rows[3][1]);
    const double exact = oracle::call({0.05, 0.2, 1.0, 1.0}, 1.0);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& r = rows[i];
        REQUIRE(r.size() == 10);
        CHECK(r[0] == std::to_string(i - 1));
        CHECK(r[2] == "converged");
        CHECK(std::abs(number(r[3]) - exact) < 4e-3);
        const int finest = std::stoi(r[4]);
        const auto alloc = split(r[9], ';');
        CHECK(alloc.size() == static_cast<std::size_t>(finest) + 1);
        double cost = 0.0;
        for (std::size_t l = 0; l < alloc.size(); ++l) {
            cost += std::stod(alloc[l]) * static_cast<double>(mlmc::steps_per_sample(static_cast<int>(l)));
        }
        CHECK(number(r[5]) == cost);
        const double bias = number(r[6]);
        const double stat = number(r[7]);
        CHECK(bias * bias + stat * stat <= 1e-6 * (1.0 + 1e-9));
    }
}

TEST_CASE("constant payoff is priced exactly at minimal cost") {
    TempDir tmp;
    const auto cfg = tmp.file("const.json", R"({"payoff": {"kind": "constant", "value": 2.5},
                                               "mlmc": {"warmup": 100, "min_samples": 100}})");
    for (const char* eps : {"1e-1", "1e-4"}) {
        const auto o = run("price --config " + cfg + " --eps " + eps + " --format json --no-timestamp");
        REQUIRE(o.code == 0);
        const auto r = nlohmann::json::parse(o.out)["results"][0];
        CHECK(r["estimate"] == 2.5);
        CHECK(r["status"] == "converged");
        CHECK(r["finest_level"] == 2);
        CHECK(r["allocations"] == nlohmann::json::array({100, 100, 100}));
    }
}

TEST_CASE("reaching the maximum level exits with the numerical code and keeps results") {
    TempDir tmp;
    const auto cfg = tmp.file("capped.json", R"({"mlmc": {"min_level": 2, "max_level": 2, "warmup": 2000}})");
    const auto out = tmp.path("capped.csv");
    const auto o = run("price --config " + cfg + " --eps 2e-4 --out " + out);
    CHECK(o.code == mlmc::cli::kExitNumerical);
    CHECK(o.code != mlmc::cli::kExitConfig);
    const auto rows = csv_rows(slurp(out));
    REQUIRE(rows.size() == 2);
    CHECK(rows[1][2] == "max_level_exceeded");
    CHECK(rows[1][4] == "2");
    CHECK(number(rows[1][3]) > 0.0);
}

TEST_CASE("observation times off the coarsest grid raise the base level") {
    TempDir tmp;
    const auto cfg = tmp.file("quarter.json", R"({"model": {"T": 1.0},
                                                 "payoff": {"kind": "european", "observation_times": [0.25]}})");
    const auto o = run("price --config " + cfg + " --eps 1e-3 --seed 4 --format json --no-timestamp");
    REQUIRE(o.code == 0);
    const auto r = nlohmann::json::parse(o.out)["results"][0];
    CHECK(r["levels"][0]["level"] == 2);
    CHECK(std::abs(r["estimate"].get<double>() - oracle::call({0.05, 0.2, 1.0, 0.25}, 1.0)) < 4e-3);
}

TEST_CASE("validate passes with the default seed") {
    TempDir tmp;
    const auto out = tmp.path("oracles.csv");
    const auto o = run("validate --out " + out);
    CHECK(o.code == 0);
    CHECK(o.out.find("FAIL") == std::string::npos);
    const auto rows = csv_rows(slurp(out));
    REQUIRE(rows.size() == 15);
    CHECK(rows[0][0] == "oracle");
    for (std::size_t i = 1; i < rows.size(); ++i) {
        CHECK(rows[i][1] == "1");
    }
    CHECK(o.out.find("PASS zero-volatility smoke model") != std::string::npos);
}

TEST_CASE("a tampered crossing formula fails the frequency oracle") {
    using namespace mlmc::validation;
    const auto flipped = [](double x, double y, double vol, double h, double b) {
        const double bx = x - b;
        const double by = y - b;
        return std::exp(+2.0 * bx * by / (vol * vol * h));
    };
    const auto halved = [](double x, double y, double vol, double h, double b) {
        return 0.5 * mlmc::crossing_probability(x, y, vol, h, b);
    };
    for (const auto& c : default_bridge_cases()) {
        INFO(c.s_left << " " << c.s_right);
        CHECK(crossing_frequency_check(c, 20000, 128, 3, 9, mlmc::crossing_probability, 2).passed);
        CHECK_FALSE(crossing_frequency_check(c, 20000, 128, 3, 9, flipped, 2).passed);
        CHECK_FALSE(crossing_frequency_check(c, 20000, 128, 3, 9, halved, 2).passed);
    }
    SuiteOptions opt;
    opt.crossing = flipped;
    opt.crossing_trials = 20000;
    opt.crossing_substeps = 128;
    opt.strong_samples = 2000;
    opt.ks_draws = 20000;
    std::size_t failed = 0;
    for (const auto& o : run_suite(opt)) {
        failed += o.passed ? 0 : 1;
    }
    CHECK(failed == default_bridge_cases().size());
}

TEST_CASE("a tampered minimum sampler fails the KS oracle") {
    using namespace mlmc::validation;
    const auto shifted = [](double x, double y, double vol, double h, double u) {
        return mlmc::conditional_minimum(x, y, vol, h, u) - 0.01;
    };
    for (const auto& c : default_bridge_cases()) {
        CHECK(minimum_ks_check(c, 20000, 5, 1).passed);
        CHECK_FALSE(minimum_ks_check(c, 20000, 5, 1, shifted).passed);
    }
}

TEST_CASE("sample configurations load and validate") {
    std::size_t count = 0;
    for (const auto& entry : fs::directory_iterator(MLMC_SAMPLES_DIR)) {
        if (entry.path().extension() != ".json") {
            continue;
        }
        INFO(entry.path().string());
        const auto cfg = mlmc::cli::load_config_file(entry.path().string());
        CHECK_NOTHROW(cfg.validate());
        const auto payoff = mlmc::cli::make_payoff(cfg);
        CHECK(mlmc::cli::alignment_level(payoff, cfg.model.horizon) >= 0);
        ++count;
    }
    CHECK(count >= 5);
}
