#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>

namespace mlmc {

/// Streaming mean and central moment sums up to fourth order.
///
/// Updates follow Terriberry's one-pass recurrences and merges follow Pébay's
/// pairwise formulas, so partial accumulators from different workers combine
/// into the same result as one pass over the concatenated stream (up to
/// rounding). The second-moment sum carries a compensation term, which keeps
/// the variance insensitive to the order in which partial results merge.
class RunningMoments {
  public:
    void push(double x) noexcept {
        const double n1 = static_cast<double>(n_);
        ++n_;
        const double n = static_cast<double>(n_);
        const double delta = x - mean_;
        const double delta_n = delta / n;
        const double delta_n2 = delta_n * delta_n;
        const double term1 = delta * delta_n * n1;
        mean_ += delta_n;
        m4_ += term1 * delta_n2 * (n * n - 3 * n + 3) + 6 * delta_n2 * m2_ - 4 * delta_n * m3_;
        m3_ += term1 * delta_n * (n - 2) - 3 * delta_n * m2_;
        add_m2(term1);
    }

    friend RunningMoments merge(const RunningMoments& a, const RunningMoments& b) noexcept {
        if (b.n_ == 0) {
            return a;
        }
        if (a.n_ == 0) {
            return b;
        }
        const double na = static_cast<double>(a.n_);
        const double nb = static_cast<double>(b.n_);
        const double n = na + nb;
        const double delta = b.mean_ - a.mean_;
        const double delta2 = delta * delta;
        const double delta3 = delta2 * delta;
        const double delta4 = delta2 * delta2;

        RunningMoments out;
        out.n_ = a.n_ + b.n_;
        out.mean_ = a.mean_ + delta * nb / n;
        out.m2_ = a.m2_;
        out.m2_lo_ = a.m2_lo_;
        out.add_m2(b.m2_);
        out.add_m2(b.m2_lo_ + delta2 * na * nb / n);
        out.m3_ = a.m3_ + b.m3_ + delta3 * na * nb * (na - nb) / (n * n) +
                  3.0 * delta * (na * b.m2_ - nb * a.m2_) / n;
        out.m4_ = a.m4_ + b.m4_ + delta4 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n) +
                  6.0 * delta2 * (na * na * b.m2_ + nb * nb * a.m2_) / (n * n) +
                  4.0 * delta * (na * b.m3_ - nb * a.m3_) / n;
        return out;
    }

    RunningMoments& operator+=(const RunningMoments& other) noexcept { return *this = merge(*this, other); }

    std::uint64_t count() const noexcept { return n_; }
    double mean() const noexcept { return n_ > 0 ? mean_ : 0.0; }

    /// Unbiased sample variance; zero with fewer than two observations.
    double variance() const noexcept { return n_ > 1 ? clamp0(m2() / static_cast<double>(n_ - 1)) : 0.0; }

    double population_variance() const noexcept { return n_ > 0 ? clamp0(m2() / static_cast<double>(n_)) : 0.0; }

    /// Standard error of the mean.
    double standard_error() const noexcept { return n_ > 0 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0; }

    double third_central_moment() const noexcept { return n_ > 0 ? m3_ / static_cast<double>(n_) : 0.0; }
    double fourth_central_moment() const noexcept { return n_ > 0 ? m4_ / static_cast<double>(n_) : 0.0; }

    /// Non-excess kurtosis n*M4/M2^2; zero when the variance vanishes.
    double kurtosis() const noexcept {
        const double m = m2();
        return m > 0.0 ? static_cast<double>(n_) * m4_ / (m * m) : 0.0;
    }

    /// Approximate relative standard error of variance(): sqrt((kurtosis - 1) / n).
    double variance_relative_error() const noexcept {
        if (n_ < 2 || m2() <= 0.0) {
            return 0.0;
        }
        return std::sqrt(std::max(kurtosis() - 1.0, 0.0) / static_cast<double>(n_));
    }

    friend bool operator==(const RunningMoments&, const RunningMoments&) = default;

  private:
    static double clamp0(double v) noexcept { return v < 0.0 ? 0.0 : v; }

    double m2() const noexcept { return m2_ + m2_lo_; }

    // Neumaier summation into (m2_, m2_lo_).
    void add_m2(double x) noexcept {
        const double t = m2_ + x;
        m2_lo_ += std::abs(m2_) >= std::abs(x) ? (m2_ - t) + x : (x - t) + m2_;
        m2_ = t;
    }

    std::uint64_t n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
    double m2_lo_ = 0.0;
    double m3_ = 0.0;
    double m4_ = 0.0;
};

/// Decay-rate fit of per-level values v_l ~ c * 2^(-exponent * l).
struct RateFit {
    double exponent = 0.0;
    double intercept = 0.0;  // log2 c
    double residual_norm = 0.0;
    int first_level = 0;
    int last_level = 0;
};

/// Least-squares slope of log2(values[i]) against level first_level + i.
/// The returned exponent is the negated slope.
inline RateFit fit_rate(std::span<const double> values, int first_level) {
    if (values.size() < 3) {
        throw std::invalid_argument("fit_rate: need at least 3 levels, got " + std::to_string(values.size()));
    }
    double sx = 0.0;
    double sy = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!(values[i] > 0.0) || !std::isfinite(values[i])) {
            throw std::domain_error("fit_rate: non-positive value at level " +
                                    std::to_string(first_level + static_cast<int>(i)));
        }
        sx += static_cast<double>(first_level) + static_cast<double>(i);
        sy += std::log2(values[i]);
    }
    const double m = static_cast<double>(values.size());
    const double xbar = sx / m;
    const double ybar = sy / m;
    double sxx = 0.0;
    double sxy = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double dx = static_cast<double>(first_level) + static_cast<double>(i) - xbar;
        sxx += dx * dx;
        sxy += dx * (std::log2(values[i]) - ybar);
    }
    const double slope = sxy / sxx;
    RateFit fit;
    fit.exponent = -slope;
    fit.intercept = ybar - slope * xbar;
    double rss = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double x = static_cast<double>(first_level) + static_cast<double>(i);
        const double r = std::log2(values[i]) - (fit.intercept + slope * x);
        rss += r * r;
    }
    fit.residual_norm = std::sqrt(rss);
    fit.first_level = first_level;
    fit.last_level = first_level + static_cast<int>(values.size()) - 1;
    return fit;
}

/// Standard normal CDF.
inline double normal_cdf(double x) noexcept { return 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0); }

/// Inverse standard normal CDF (Wichura's AS241, PPND16).
///
/// Relative accuracy is about 1e-16 over the whole open interval; throws for
/// p outside (0,1).
inline double normal_inv_cdf(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw std::domain_error("normal_inv_cdf: p must lie in (0,1)");
    }
    const double q = p - 0.5;
    if (std::abs(q) <= 0.425) {
        const double r = 0.180625 - q * q;
        const double num =
            ((((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r + 6.7265770927008700853e+4) * r +
                  4.5921953931549871457e+4) *
                     r +
                 1.3731693765509461125e+4) *
                    r +
                1.9715909503065514427e+3) *
                   r +
               1.3314166789178437745e+2) *
                  r +
              3.3871328727963666080e0));
        const double den =
            ((((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r + 3.9307895800092710610e+4) * r +
                  2.1213794301586595867e+4) *
                     r +
                 5.3941960214247511077e+3) *
                    r +
                6.8718700749205790830e+2) *
                   r +
               4.2313330701600911252e+1) *
                  r +
              1.0));
        return q * num / den;
    }
    double r = q < 0.0 ? p : 1.0 - p;
    r = std::sqrt(-std::log(r));
    double value;
    if (r <= 5.0) {
        r -= 1.6;
        const double num =
            (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r + 2.41780725177450611770e-1) * r +
                 1.27045825245236838258e0) *
                    r +
                3.64784832476320460504e0) *
                   r +
               5.76949722146069140550e0) *
                  r +
              4.63033784615654529590e0) *
                 r +
             1.42343711074968357734e0);
        const double den =
            (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r + 1.51986665636164571966e-2) * r +
                 1.48103976427480074590e-1) *
                    r +
                6.89767334985100004550e-1) *
                   r +
               1.67638483018380384940e0) *
                  r +
              2.05319162663775882187e0) *
                 r +
             1.0);
        value = num / den;
    } else {
        r -= 5.0;
        const double num =
            (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 1.24266094738807843860e-3) * r +
                 2.65321895265761230930e-2) *
                    r +
                2.96560571828504891230e-1) *
                   r +
               1.78482653991729133580e0) *
                  r +
              5.46378491116411436990e0) *
                 r +
             6.65790464350110377720e0);
        const double den =
            (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r + 1.84631831751005468180e-5) * r +
                 7.86869131145613259100e-4) *
                    r +
                1.48753612908506148525e-2) *
                   r +
               1.36929880922735805310e-1) *
                  r +
              5.99832206555887937690e-1) *
                 r +
             1.0);
        value = num / den;
    }
    return q < 0.0 ? -value : value;
}

}  // namespace mlmc
