#pragma once

#include "ivr/types.hpp"

#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace ivr {

using ScalarFn = std::function<double(double)>;

/// A behavior regularization function f together with the derived quantities
/// the optimality conditions need: h_f(x) = x f(x), its derivative, and the
/// inverse g_f of that derivative.
///
/// All callables are only evaluated on x > 0. The limit h_f'(0+) is stored in
/// `hf_prime_at_zero`; the supremum of h_f' in `hf_prime_at_infinity`.
struct Regularizer {
    std::string name;
    ScalarFn f;
    ScalarFn f_prime;
    ScalarFn hf_prime;
    ScalarFn g_f;
    double hf_prime_at_zero = -std::numeric_limits<double>::infinity();
    double hf_prime_at_infinity = std::numeric_limits<double>::infinity();
    bool supports_sparsity = false;
    // True when E_mu[(pi/mu)^2 f'(pi/mu)] is identically one at the optimum
    // (reverse KL), so the optimal value is exactly U + alpha.
    bool unit_value_term = false;

    /// Policy-to-behavior ratio max{g_f(y), 0}, with the range limits mapped
    /// to 0 and +inf.
    double ratio(double y) const;
};

Regularizer make_chi_square();
Regularizer make_reverse_kl();
/// Alpha-divergence family member of order `a`. Throws InvalidArgument for
/// a in {0, 1} or non-finite a.
Regularizer make_alpha_divergence(double a);

/// Builds a regularizer from f and f' alone: h_f' is formed analytically from
/// them and g_f is obtained numerically. Its range limits are estimated by
/// probing; intended for validation experiments.
Regularizer make_custom(std::string name, ScalarFn f, ScalarFn f_prime);

/// Parses "chi_square", "reverse_kl" or "alpha:<a>".
Regularizer regularizer_from_name(const std::string& name);

/// Numeric inverse of reg.hf_prime at y by bisection on a geometrically grown
/// bracket around x = 1. Values at the range limits map to 0 or +inf.
/// Throws OutOfRange when y is outside the closure of the range and `clamp`
/// is false (with `clamp` the nearest limit is returned instead), and
/// ConvergenceError after the iteration cap.
double invert_hf_prime(const Regularizer& reg, double y, bool clamp = false);

struct ValidationReport {
    bool f_one_is_zero = false;
    bool strictly_convex = false;
    bool differentiable = false;
    double f_at_one = 0.0;
    double min_second_difference = 0.0;
    double max_derivative_mismatch = 0.0;
    std::vector<std::string> failures;

    bool passed() const { return f_one_is_zero && strictly_convex && differentiable; }
};

/// Numeric probe of the three conditions on f over a grid of positive points.
ValidationReport validate_assumption2(const Regularizer& reg, std::span<const double> grid);

/// Geometric grid of n points on [lo, hi].
std::vector<double> geometric_grid(double lo, double hi, int n);

}  // namespace ivr
