#include "ivr/extrema.hpp"

#include "ivr/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ivr {

namespace {

void check_samples(std::span<const double> samples) {
    if (samples.empty()) throw InvalidArgument("sample set is empty");
    for (double x : samples)
        if (!std::isfinite(x)) throw InvalidArgument("sample set contains a non-finite value");
}

void check_alpha(double alpha) {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InvalidArgument("alpha must be positive");
}

double sql_lhs(std::span<const double> samples, double alpha, double m) {
    double total = 0.0;
    for (double x : samples) total += std::max(1.0 + (x - m) / (2.0 * alpha), 0.0);
    return total / static_cast<double>(samples.size());
}

/// Bisection for the root of a decreasing function on [lo, hi].
template <typename F>
double bisect_decreasing(F&& fn, double lo, double hi) {
    for (int it = 0; it < 400; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        if (fn(mid) > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

}  // namespace

double fit_m_sql(std::span<const double> samples, double alpha) {
    check_samples(samples);
    check_alpha(alpha);
    const auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
    return bisect_decreasing([&](double m) { return sql_lhs(samples, alpha, m) - 1.0; }, *lo - 2.0 * alpha,
                             *hi + 2.0 * alpha);
}

double fit_m_sql_gd(std::span<const double> samples, double alpha, int max_iter) {
    check_samples(samples);
    check_alpha(alpha);
    double m = *std::max_element(samples.begin(), samples.end()) + 2.0 * alpha;
    for (int it = 0; it < max_iter; ++it) {
        // Gradient (1 - lhs) / alpha scaled by the inverse curvature bound 2 alpha^2.
        const double step = 2.0 * alpha * (1.0 - sql_lhs(samples, alpha, m));
        m -= step;
        if (std::abs(step) <= 1e-13 * (1.0 + std::abs(m))) return m;
    }
    throw ConvergenceError("fit_m_sql_gd did not converge", std::abs(1.0 - sql_lhs(samples, alpha, m)));
}

double fit_m_eql(std::span<const double> samples, double alpha) {
    check_samples(samples);
    check_alpha(alpha);
    const double top = *std::max_element(samples.begin(), samples.end());
    double total = 0.0;
    for (double x : samples) total += std::exp((x - top) / alpha);
    return top + alpha * std::log(total / static_cast<double>(samples.size()));
}

double fit_m_eql_gd(std::span<const double> samples, double alpha, int max_iter) {
    check_samples(samples);
    check_alpha(alpha);
    double m = *std::max_element(samples.begin(), samples.end());
    auto mean_exp = [&](double at) {
        double total = 0.0;
        for (double x : samples) total += std::exp((x - at) / alpha);
        return total / static_cast<double>(samples.size());
    };
    for (int it = 0; it < max_iter; ++it) {
        const double step = alpha * (1.0 - mean_exp(m));
        m -= step;
        if (std::abs(step) <= 1e-13 * (1.0 + std::abs(m))) return m;
    }
    throw ConvergenceError("fit_m_eql_gd did not converge", std::abs(1.0 - mean_exp(m)));
}

double fit_m_expectile(std::span<const double> samples, double tau) {
    check_samples(samples);
    if (!(tau > 0.0 && tau < 1.0)) throw InvalidArgument("tau must lie in (0, 1)");
    const auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
    if (*lo == *hi) return *lo;
    auto balance = [&](double m) {
        double up = 0.0, down = 0.0;
        for (double x : samples) {
            if (x > m) up += x - m;
            else down += m - x;
        }
        return tau * up - (1.0 - tau) * down;
    };
    return bisect_decreasing(balance, *lo, *hi);
}

std::vector<ToyRow> sine_demo(const SineDemoConfig& config) {
    if (config.n_points <= 0 || config.bins <= 0) throw InvalidArgument("sine demo needs points and bins");
    if (config.noise_sigma < 0.0) throw InvalidArgument("noise sigma must be nonnegative");
    for (double a : config.alphas) check_alpha(a);
    for (double t : config.taus)
        if (!(t > 0.0 && t < 1.0)) throw InvalidArgument("tau must lie in (0, 1)");
    Rng rng = make_rng(config.seed, "toy");
    const double span = 2.0 * std::numbers::pi;
    std::vector<std::vector<double>> buckets(static_cast<std::size_t>(config.bins));
    for (int i = 0; i < config.n_points; ++i) {
        const double x = span * uniform01(rng);
        const double y = std::sin(x) + config.noise_sigma * standard_normal(rng);
        const auto b = std::min(static_cast<std::size_t>(x / span * config.bins), buckets.size() - 1);
        buckets[b].push_back(y);
    }
    std::vector<ToyRow> rows;
    const double width = span / config.bins;
    for (std::size_t b = 0; b < buckets.size(); ++b) {
        if (buckets[b].empty()) continue;
        const double center = (static_cast<double>(b) + 0.5) * width;
        for (double a : config.alphas) rows.push_back({center, a, "sql", fit_m_sql(buckets[b], a)});
        for (double a : config.alphas) rows.push_back({center, a, "eql", fit_m_eql(buckets[b], a)});
        for (double t : config.taus) rows.push_back({center, t, "expectile", fit_m_expectile(buckets[b], t)});
    }
    return rows;
}

}  // namespace ivr
