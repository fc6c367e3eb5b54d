#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "mlmc/brownian.hpp"
#include "mlmc/random.hpp"
#include "mlmc/stats.hpp"

using Catch::Approx;
using namespace mlmc;

namespace {

// Law of the bridge minimum: P(min <= m) = exp(-2 (a - m)(b - m) / (vol^2 h)).
double bridge_min_cdf(double a, double b, double vol, double h, double m) {
    if (m >= std::min(a, b)) return 1.0;
    return std::exp(-2.0 * (a - m) * (b - m) / (vol * vol * h));
}

struct Endpoints {
    double a, b, vol, h, barrier;
};

const std::vector<Endpoints> kCases{
    {1.0, 1.0, 0.2, 0.25, 0.85},
    {1.0, 0.9, 0.3, 0.5, 0.8},
    {0.95, 1.05, 0.2, 1.0, 0.9},
    {1.2, 1.1, 0.5, 0.1, 1.0},
    {2.0, 2.0, 1.0, 0.05, 1.9},
};

// Bridge path with `m` sub-steps drawn from an independent generator family.
template <class Visit>
void bridge_path(SampleStream& s, const Endpoints& c, int m, Visit&& visit) {
    const double sd = std::sqrt(c.h / m);
    std::vector<double> w(m + 1, 0.0);
    for (int k = 1; k <= m; ++k) w[k] = w[k - 1] + sd * normal_inv_cdf(s.next_uniform());
    for (int k = 0; k <= m; ++k) {
        const double lam = static_cast<double>(k) / m;
        visit(c.a + lam * (c.b - c.a) + c.vol * (w[k] - lam * w[m]));
    }
}

}  // namespace

TEST_CASE("LevelGrid layout") {
    const auto g0 = LevelGrid::make(0, 1.0);
    CHECK(g0.n_steps == 1);
    CHECK(g0.h == 1.0);
    CHECK_FALSE(g0.has_coarse());
    for (int l = 0; l <= 30; ++l) {
        for (double T : {1.0, 0.3, 7.0 / 3.0}) {
            const auto g = LevelGrid::make(l, T);
            CHECK(g.h * static_cast<double>(g.n_steps) == T);
            CHECK(g.time(g.n_steps) == T);
        }
    }
    CHECK_THROWS_AS(LevelGrid::make(-1, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(LevelGrid::make(31, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(LevelGrid::make(2, 0.0), std::invalid_argument);
}

TEST_CASE("coupled increments structure") {
    SampleStream s(1, 0, 0);
    const auto i0 = sample_coupled_increments(s, LevelGrid::make(0, 1.0));
    CHECK(i0.fine.size() == 1);
    CHECK(i0.coarse.empty());
    CHECK(i0.uniforms.size() == 1);
    CHECK(i0.bridge_integrals.size() == 1);

    SampleStream s2(1, 2, 5);
    const auto i2 = sample_coupled_increments(s2, LevelGrid::make(2, 1.0));
    REQUIRE(i2.coarse.size() == 2);
    CHECK(i2.coarse[0] == i2.fine[0] + i2.fine[1]);
    CHECK(i2.coarse[1] == i2.fine[2] + i2.fine[3]);
    // Three draws per fine step.
    CHECK(s2.position() == 12);
}

TEST_CASE("stream layout: increments, then uniforms, then bridge integrals") {
    const auto grid = LevelGrid::make(3, 2.0);
    SampleStream s(77, 3, 9);
    const auto inc = sample_coupled_increments(s, grid);
    SampleStream r(77, 3, 9);
    const double sd = std::sqrt(grid.h * grid.h * grid.h / 12.0);
    for (double dw : inc.fine) CHECK(dw == std::sqrt(grid.h) * normal_inv_cdf(r.next_uniform()));
    for (double u : inc.uniforms) CHECK(u == r.next_uniform());
    for (double i : inc.bridge_integrals) CHECK(i == sd * normal_inv_cdf(r.next_uniform()));
}

TEST_CASE("coarsening preserves the total increment") {
    for (int l = 1; l <= 10; ++l) {
        const auto grid = LevelGrid::make(l, 1.0);
        for (std::uint64_t i = 0; i < 20; ++i) {
            SampleStream s(3, static_cast<std::uint32_t>(l), i);
            const auto inc = sample_coupled_increments(s, grid);
            double sf = 0.0, sc = 0.0, mag = 0.0;
            for (double x : inc.fine) {
                sf += x;
                mag += std::abs(x);
            }
            for (double x : inc.coarse) sc += x;
            const double ulp = std::numeric_limits<double>::epsilon() * std::max(mag, 1e-300);
            CHECK(std::abs(sf - sc) <= 4.0 * static_cast<double>(inc.fine.size()) * ulp);
            for (double u : inc.uniforms) CHECK((u > 0.0 && u < 1.0));
        }
    }
}

TEST_CASE("fine increments and bridge integrals have the right variances") {
    const auto grid = LevelGrid::make(3, 1.0);
    std::vector<RunningMoments> dw(8), bi(8);
    RunningMoments cross;
    for (std::uint64_t i = 0; i < 100000; ++i) {
        SampleStream s(11, 3, i);
        const auto inc = sample_coupled_increments(s, grid);
        for (int n = 0; n < 8; ++n) {
            dw[n].push(inc.fine[n]);
            bi[n].push(inc.bridge_integrals[n]);
        }
        cross.push(inc.fine[0] * inc.bridge_integrals[0]);
    }
    const double h = grid.h;
    for (int n = 0; n < 8; ++n) {
        CHECK(std::abs(dw[n].variance() / h - 1.0) < 0.05);
        CHECK(std::abs(bi[n].variance() / (h * h * h / 12.0) - 1.0) < 0.05);
        CHECK(std::abs(dw[n].mean()) < 4.0 * dw[n].standard_error());
    }
    CHECK(std::abs(cross.mean()) < 4.0 * cross.standard_error());
}

TEST_CASE("conditional minimum and maximum closed-form values") {
    const double u1 = std::nextafter(1.0, 0.0);
    CHECK(conditional_minimum(1.2, 0.7, 0.3, 0.5, u1) == Approx(0.7).margin(1e-7));
    CHECK(conditional_maximum(1.2, 0.7, 0.3, 0.5, u1) == Approx(1.2).margin(1e-7));
    // vol^2 h = 2, u = e^-1: radicand 4.
    CHECK(conditional_minimum(1.0, 1.0, 1.0, 2.0, std::exp(-1.0)) == Approx(0.0).margin(1e-15));
    CHECK(conditional_maximum(1.0, 1.0, 1.0, 2.0, std::exp(-1.0)) == Approx(2.0).epsilon(1e-15));
    for (double u : {1e-300, 0.01, 0.5, 0.99}) {
        CHECK(conditional_minimum(1.3, 0.4, 0.0, 0.1, u) == 0.4);
        CHECK(conditional_maximum(1.3, 0.4, 0.0, 0.1, u) == 1.3);
    }
}

TEST_CASE("conditional extremes bound the endpoints") {
    SampleStream s(5, 0, 0);
    for (int i = 0; i < 20000; ++i) {
        const double a = 4.0 * s.next_uniform() - 2.0;
        const double b = 4.0 * s.next_uniform() - 2.0;
        const double vol = 2.0 * s.next_uniform() - 1.0;
        const double h = s.next_uniform();
        const double u = s.next_uniform();
        REQUIRE(conditional_minimum(a, b, vol, h, u) <= std::min(a, b));
        REQUIRE(conditional_maximum(a, b, vol, h, u) >= std::max(a, b));
    }
}

TEST_CASE("bridge samplers reject invalid arguments") {
    CHECK_THROWS_AS(conditional_minimum(1, 1, 1, 1, 0.0), std::domain_error);
    CHECK_THROWS_AS(conditional_minimum(1, 1, 1, 1, 1.0), std::domain_error);
    CHECK_THROWS_AS(conditional_minimum(1, 1, 1, 0.0, 0.5), std::domain_error);
    CHECK_THROWS_AS(conditional_maximum(1, 1, 1, 1, 1.5), std::domain_error);
    CHECK_THROWS_AS(crossing_probability(1, 1, 0.0, 1, 0.5), std::domain_error);
    CHECK_THROWS_AS(crossing_probability(1, 1, 0.2, 0.0, 0.5), std::domain_error);
    CHECK_THROWS_AS(crossing_probability_up(1, 1, 0.0, 1, 1.5), std::domain_error);
}

TEST_CASE("conditional minimum follows the bridge minimum law (KS at 1%)") {
    for (std::size_t c = 0; c < kCases.size(); ++c) {
        const auto& e = kCases[c];
        SampleStream s(2718, 900 + static_cast<std::uint32_t>(c), 0);
        std::vector<double> mins(100000);
        for (auto& m : mins) m = conditional_minimum(e.a, e.b, e.vol, e.h, s.next_uniform());
        std::sort(mins.begin(), mins.end());
        const double n = static_cast<double>(mins.size());
        double d = 0.0;
        for (std::size_t i = 0; i < mins.size(); ++i) {
            const double f = bridge_min_cdf(e.a, e.b, e.vol, e.h, mins[i]);
            d = std::max({d, (i + 1) / n - f, f - i / n});
        }
        CHECK(d < 1.6276 / std::sqrt(n));
    }
}

TEST_CASE("conditional minimum agrees with a finely sub-stepped bridge") {
    const Endpoints e{1.0, 1.05, 0.3, 0.25, 0.0};
    const int m = 4096;
    RunningMoments brute, exact;
    for (std::uint64_t i = 0; i < 5000; ++i) {
        SampleStream s(31, 950, i);
        double lo = 1e300;
        bridge_path(s, e, m, [&](double x) { lo = std::min(lo, x); });
        brute.push(lo);
        exact.push(conditional_minimum(e.a, e.b, e.vol, e.h, s.next_uniform()));
    }
    // A discrete minimum over m points sits about 0.5826 vol sqrt(h/m) above the continuous one.
    const double allowance = 0.5826 * e.vol * std::sqrt(e.h / m);
    const double se = std::sqrt(brute.variance() / 5000 + exact.variance() / 5000);
    CHECK(exact.mean() < brute.mean());
    CHECK(std::abs(brute.mean() - exact.mean()) <= 3.0 * se + allowance);
}

TEST_CASE("crossing probability closed-form values") {
    CHECK(crossing_probability(0.8, 1.2, 0.2, 0.1, 0.85) == 1.0);
    CHECK(crossing_probability(1.2, 0.8, 0.2, 0.1, 0.85) == 1.0);
    const double vol = 0.3, h = 0.2;
    const double d = std::sqrt(vol * vol * h / 2.0);
    CHECK(crossing_probability(1.0 + d, 1.0 + d, vol, h, 1.0) == Approx(std::exp(-1.0)).epsilon(1e-14));
    CHECK(crossing_probability(1.0, 1.0, 0.2, 0.1, -1e6) == 0.0);
    CHECK(crossing_probability_up(1.0 - d, 1.0 - d, vol, h, 1.0) == Approx(std::exp(-1.0)).epsilon(1e-14));
    CHECK(crossing_probability_up(1.3, 0.9, vol, h, 1.2) == 1.0);
    // Negative volatility gives the same probability.
    CHECK(crossing_probability(1.1, 1.0, -0.2, 0.1, 0.95) == crossing_probability(1.1, 1.0, 0.2, 0.1, 0.95));
}

TEST_CASE("crossing probability matches sub-stepped crossing frequencies") {
    // Discretely monitored crossings of a barrier shifted by 0.5826 vol sqrt(h/m)
    // approximate continuous crossings of the original barrier.
    const int m = 512;
    const std::uint64_t trials = 20000;
    for (std::size_t c = 0; c < kCases.size(); ++c) {
        const auto& e = kCases[c];
        const double shifted = e.barrier + 0.5826 * std::abs(e.vol) * std::sqrt(e.h / m);
        std::uint64_t hits = 0;
        for (std::uint64_t i = 0; i < trials; ++i) {
            SampleStream s(4242, 700 + static_cast<std::uint32_t>(c), i);
            bool crossed = false;
            bridge_path(s, e, m, [&](double x) { crossed = crossed || x <= shifted; });
            hits += crossed;
        }
        const double p = crossing_probability(e.a, e.b, e.vol, e.h, e.barrier);
        const double freq = static_cast<double>(hits) / trials;
        const double se = std::sqrt(p * (1.0 - p) / trials);
        INFO("case " << c << ": p=" << p << " freq=" << freq);
        CHECK(std::abs(freq - p) <= 3.0 * se);
    }
}

TEST_CASE("coarse midpoint") {
    CHECK(coarse_midpoint(0.7, 1.3, 0.4, 0.25, 0.25) == 1.0);
    CHECK(coarse_midpoint(0.7, 1.3, 0.0, 0.9, -0.1) == 1.0);
    CHECK(coarse_midpoint(0.0, 2.0, 1.0, 0.3, 0.1) == Approx(1.1).epsilon(1e-15));
}

TEST_CASE("coarse midpoint deviation has the bridge variance vol^2 h / 2") {
    const auto grid = LevelGrid::make(4, 1.0);
    const double vol = 0.35;
    RunningMoments dev;
    for (std::uint64_t i = 0; i < 50000; ++i) {
        SampleStream s(8, 4, i);
        const auto inc = sample_coupled_increments(s, grid);
        for (std::size_t k = 0; k < inc.coarse.size(); ++k) {
            dev.push(coarse_midpoint(1.0, 1.0 + vol * inc.coarse[k], vol, inc.fine[2 * k], inc.fine[2 * k + 1]) -
                     (1.0 + 0.5 * vol * inc.coarse[k]));
        }
    }
    CHECK(std::abs(dev.mean()) < 4.0 * dev.standard_error());
    CHECK(std::abs(dev.variance() / (vol * vol * grid.h / 2.0) - 1.0) < 0.05);
}

TEST_CASE("coarse bridge integral identity") {
    CHECK(coarse_bridge_integral(0, 0, 0, 0, 0.25) == 0.0);
    CHECK(coarse_bridge_integral(0, 0, 0.3, 0.3, 0.25) == 0.0);
    CHECK(coarse_bridge_integral(0.1, -0.2, 0.5, 0.1, 0.25) == Approx(-0.05).epsilon(1e-14));
}

TEST_CASE("coarse bridge integral has the coarse-step variance (2h)^3 / 12") {
    const auto grid = LevelGrid::make(2, 1.0);
    RunningMoments ic;
    RunningMoments cross;
    for (std::uint64_t i = 0; i < 100000; ++i) {
        SampleStream s(19, 2, i);
        const auto inc = sample_coupled_increments(s, grid);
        const double v = coarse_bridge_integral(inc.bridge_integrals[0], inc.bridge_integrals[1], inc.fine[0],
                                                inc.fine[1], grid.h);
        ic.push(v);
        cross.push(v * inc.coarse[0]);
    }
    const double hc = 2.0 * grid.h;
    CHECK(std::abs(ic.variance() / (hc * hc * hc / 12.0) - 1.0) < 0.03);
    // Independent of the coarse increment.
    CHECK(std::abs(cross.mean()) < 4.0 * cross.standard_error());
}
