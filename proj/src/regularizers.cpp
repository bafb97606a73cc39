#include "ivr/regularizers.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <string_view>

namespace ivr {

namespace {

constexpr double kInversionTolerance = 1e-12;
constexpr int kInversionIterations = 200;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Bisection for the root of an increasing function. The bracket is grown
// geometrically from x = 1 in the direction of the root.
double bisect_increasing(const ScalarFn& fn, double y) {
    double lo = 1.0;
    double hi = 1.0;
    const double at_one = fn(1.0);
    if (at_one == y) return 1.0;
    int grow = 0;
    if (at_one < y) {
        while (fn(hi) < y) {
            lo = hi;
            hi *= 2.0;
            if (++grow > 2000 || !std::isfinite(hi))
                throw ConvergenceError(fmt::format("cannot bracket h_f'^-1({})", y), kInf);
        }
    } else {
        while (fn(lo) > y) {
            hi = lo;
            lo *= 0.5;
            if (++grow > 2000 || lo == 0.0)
                throw ConvergenceError(fmt::format("cannot bracket h_f'^-1({})", y), kInf);
        }
    }
    double best = lo;
    double best_residual = std::abs(fn(lo) - y);
    for (int it = 0; it < kInversionIterations; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double value = fn(mid);
        const double residual = std::abs(value - y);
        if (residual < best_residual) {
            best = mid;
            best_residual = residual;
        }
        if (residual <= kInversionTolerance) return mid;
        if (mid <= lo || mid >= hi) return best;  // bracket exhausted at double precision
        if (value < y) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    throw ConvergenceError(fmt::format("h_f'^-1({}) did not converge", y), best_residual);
}

// Range limits of an increasing hf_prime, probed on a wide geometric grid.
std::pair<double, double> probe_range(const ScalarFn& hf_prime) {
    const double lo = hf_prime(1e-300);
    const double hi = hf_prime(1e300);
    auto snap = [](double v, double sign) {
        if (!std::isfinite(v) || std::abs(v) > 1e12) return sign * kInf;
        return v;
    };
    return {snap(lo, -1.0), snap(hi, 1.0)};
}

}  // namespace

double Regularizer::ratio(double y) const {
    if (y <= hf_prime_at_zero) return 0.0;
    if (y >= hf_prime_at_infinity) return kInf;
    return std::max(g_f(y), 0.0);
}

Regularizer make_chi_square() {
    Regularizer reg;
    reg.name = "chi_square";
    reg.f = [](double x) { return x - 1.0; };
    reg.f_prime = [](double) { return 1.0; };
    reg.hf_prime = [](double x) { return 2.0 * x - 1.0; };
    reg.g_f = [](double y) { return 0.5 * y + 0.5; };
    reg.hf_prime_at_zero = -1.0;
    reg.hf_prime_at_infinity = kInf;
    reg.supports_sparsity = true;
    return reg;
}

Regularizer make_reverse_kl() {
    Regularizer reg;
    reg.name = "reverse_kl";
    reg.f = [](double x) { return std::log(x); };
    reg.f_prime = [](double x) { return 1.0 / x; };
    reg.hf_prime = [](double x) { return std::log(x) + 1.0; };
    reg.g_f = [](double y) { return std::exp(y - 1.0); };
    reg.hf_prime_at_zero = -kInf;
    reg.hf_prime_at_infinity = kInf;
    reg.supports_sparsity = false;
    reg.unit_value_term = true;
    return reg;
}

Regularizer make_alpha_divergence(double a) {
    if (!std::isfinite(a) || a == 0.0 || a == 1.0)
        throw InvalidArgument(fmt::format("alpha-divergence order must be finite and not 0 or 1, got {}", a));
    Regularizer reg;
    reg.name = fmt::format("alpha:{}", a);
    const double scale = 1.0 / (a * (a - 1.0));
    reg.f = [a, scale](double x) { return (std::pow(x, -a) - 1.0) * scale; };
    reg.f_prime = [a](double x) { return -std::pow(x, -a - 1.0) / (a - 1.0); };
    // h_f'(x) = ((1 - a) x^{-a} - 1) / (a (a - 1)) = -x^{-a}/a - 1/(a(a-1))
    reg.hf_prime = [a, scale](double x) { return -std::pow(x, -a) / a - scale; };
    if (a < 0.0) {
        reg.hf_prime_at_zero = -scale;
        reg.hf_prime_at_infinity = kInf;
    } else {
        // x^{-a}/a blows up at 0 and vanishes at infinity for a > 0.
        reg.hf_prime_at_zero = -kInf;
        reg.hf_prime_at_infinity = -scale;
    }
    reg.supports_sparsity = std::isfinite(reg.hf_prime_at_zero);
    reg.g_f = [hf = reg.hf_prime](double y) { return bisect_increasing(hf, y); };
    return reg;
}

Regularizer make_custom(std::string name, ScalarFn f, ScalarFn f_prime) {
    Regularizer reg;
    reg.name = std::move(name);
    reg.f = f;
    reg.f_prime = f_prime;
    reg.hf_prime = [f, f_prime](double x) { return f(x) + x * f_prime(x); };
    const auto [lo, hi] = probe_range(reg.hf_prime);
    reg.hf_prime_at_zero = lo;
    reg.hf_prime_at_infinity = hi;
    reg.supports_sparsity = std::isfinite(lo);
    reg.g_f = [hf = reg.hf_prime](double y) { return bisect_increasing(hf, y); };
    return reg;
}

Regularizer regularizer_from_name(const std::string& name) {
    if (name == "chi_square") return make_chi_square();
    if (name == "reverse_kl") return make_reverse_kl();
    constexpr std::string_view prefix = "alpha:";
    if (name.rfind(prefix, 0) == 0) {
        const std::string_view rest = std::string_view(name).substr(prefix.size());
        double a = 0.0;
        const auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), a);
        if (ec != std::errc() || ptr != rest.data() + rest.size() || rest.empty())
            throw InvalidArgument(fmt::format("bad alpha-divergence order in '{}'", name));
        return make_alpha_divergence(a);
    }
    throw InvalidArgument(fmt::format("unknown regularizer '{}'", name));
}

double invert_hf_prime(const Regularizer& reg, double y, bool clamp) {
    if (std::isnan(y)) throw OutOfRange("h_f' inverse of NaN");
    if (y < reg.hf_prime_at_zero) {
        if (!clamp)
            throw OutOfRange(fmt::format("{} is below the range of h_f' for {} (limit {})", y,
                                         reg.name, reg.hf_prime_at_zero));
        return 0.0;
    }
    if (y > reg.hf_prime_at_infinity) {
        if (!clamp)
            throw OutOfRange(fmt::format("{} is above the range of h_f' for {} (limit {})", y,
                                         reg.name, reg.hf_prime_at_infinity));
        return kInf;
    }
    if (y == reg.hf_prime_at_zero) return 0.0;
    if (y == reg.hf_prime_at_infinity) return kInf;
    return bisect_increasing(reg.hf_prime, y);
}

ValidationReport validate_assumption2(const Regularizer& reg, std::span<const double> grid) {
    ValidationReport report;
    std::vector<double> xs(grid.begin(), grid.end());
    if (xs.empty()) {
        report.failures.emplace_back("empty grid");
        return report;
    }
    if (std::any_of(xs.begin(), xs.end(), [](double x) { return !(x > 0.0); })) {
        report.failures.emplace_back("grid must contain only positive points");
        return report;
    }
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());

    report.f_at_one = reg.f(1.0);
    report.f_one_is_zero = std::abs(report.f_at_one) <= 1e-12;
    if (!report.f_one_is_zero)
        report.failures.push_back(fmt::format("f(1) = {} is not zero", report.f_at_one));

    // Strict convexity of h_f: slopes of consecutive chords strictly increase.
    auto h = [&](double x) { return x * reg.f(x); };
    report.min_second_difference = kInf;
    if (xs.size() < 3) {
        report.failures.emplace_back("convexity probe needs at least 3 distinct grid points");
    } else {
        for (std::size_t i = 1; i + 1 < xs.size(); ++i) {
            const double left = (h(xs[i]) - h(xs[i - 1])) / (xs[i] - xs[i - 1]);
            const double right = (h(xs[i + 1]) - h(xs[i])) / (xs[i + 1] - xs[i]);
            const double second = (right - left) / (0.5 * (xs[i + 1] - xs[i - 1]));
            report.min_second_difference = std::min(report.min_second_difference, second);
        }
        report.strictly_convex = report.min_second_difference > 0.0;
        if (!report.strictly_convex)
            report.failures.push_back(fmt::format("h_f not strictly convex: second difference {}",
                                                  report.min_second_difference));
    }

    // Differentiability: f' agrees with a central difference of f and both are finite.
    bool finite = true;
    double worst = 0.0;
    for (double x : xs) {
        const double step = 1e-6 * x;
        const double fd = (reg.f(x + step) - reg.f(x - step)) / (2.0 * step);
        const double analytic = reg.f_prime(x);
        if (!std::isfinite(fd) || !std::isfinite(analytic)) {
            finite = false;
            continue;
        }
        worst = std::max(worst, std::abs(fd - analytic) / std::max(1.0, std::abs(analytic)));
    }
    report.max_derivative_mismatch = worst;
    report.differentiable = finite && worst <= 1e-4;
    if (!report.differentiable)
        report.failures.push_back(fmt::format("f' mismatch {} against central differences", worst));
    return report;
}

std::vector<double> geometric_grid(double lo, double hi, int n) {
    if (!(lo > 0.0) || !(hi > lo) || n < 2)
        throw InvalidArgument("geometric_grid needs 0 < lo < hi and n >= 2");
    std::vector<double> out(static_cast<std::size_t>(n));
    const double ratio = std::log(hi / lo) / (n - 1);
    for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = lo * std::exp(ratio * i);
    out.back() = hi;
    return out;
}

}  // namespace ivr
