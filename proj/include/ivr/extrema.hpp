#pragma once

#include "ivr/types.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ivr {

/// Root of E[max(1 + (x - m) / (2 alpha), 0)] = 1 by bisection on
/// [min - 2 alpha, max + 2 alpha].
double fit_m_sql(std::span<const double> samples, double alpha);

/// Preconditioned gradient descent on the SQL objective, the update the
/// tabular learner takes. Starts above every sample and descends monotonically.
double fit_m_sql_gd(std::span<const double> samples, double alpha, int max_iter = 1000000);

/// alpha log mean exp(x / alpha), computed with the maximum factored out.
double fit_m_eql(std::span<const double> samples, double alpha);

/// Preconditioned gradient descent on E[exp((x - m) / alpha) + m / alpha]
/// started at the maximum.
double fit_m_eql_gd(std::span<const double> samples, double alpha, int max_iter = 1000000);

/// Expectile at level tau: root of tau E[(x - m)+] = (1 - tau) E[(m - x)+].
double fit_m_expectile(std::span<const double> samples, double tau);

struct SineDemoConfig {
    int n_points = 5000;
    double noise_sigma = 0.25;
    int bins = 50;
    std::vector<double> alphas{10.0, 2.0, 1.0, 0.5, 0.1};
    std::vector<double> taus{0.5, 0.7, 0.9, 0.95, 0.99};
    std::uint64_t seed = 0;
};

struct ToyRow {
    double bin_center = 0.0;
    double alpha_or_tau = 0.0;
    std::string method;  // sql, eql or expectile
    double m = 0.0;
};

/// x uniform on [0, 2 pi], y = sin(x) + N(0, sigma^2), bucketed into equal
/// width bins; every nonempty bin gets the three fits for every temperature.
std::vector<ToyRow> sine_demo(const SineDemoConfig& config);

}  // namespace ivr
