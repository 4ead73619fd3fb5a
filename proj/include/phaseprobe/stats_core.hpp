#pragma once
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace phaseprobe::stats {

double normal_cdf(double x);
double normal_quantile(double p); // inverse of normal_cdf, p in (0, 1)

// Quantile by linear interpolation of order statistics: the quantile of
// level p sits at fractional position (n-1)*p of the sorted sample.
double quantile_sorted(std::span<const double> sorted, double p);
double quantile(std::span<const double> samples, double p); // copies + sorts
double median(std::span<const double> samples);

// -------------------------------------------------------------------
// Boxplot summary
// -------------------------------------------------------------------
struct BoxStats {
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
    double whisker_low = 0.0;  // farthest datum >= q1 - 1.5*IQR
    double whisker_high = 0.0; // farthest datum <= q3 + 1.5*IQR
    std::vector<double> outliers; // ascending
};

BoxStats boxplot_stats(std::span<const double> samples);

// -------------------------------------------------------------------
// Gaussian kernel density estimate
// -------------------------------------------------------------------
struct Kde {
    std::vector<double> centers;
    double bandwidth = 0.0;
    bool bandwidth_fallback = false; // AUTO hit a zero-spread sample

    double operator()(double x) const;
    std::vector<double> evaluate(std::span<const double> grid) const;
    // evaluation grid spanning the data padded by pad_bandwidths*h
    std::vector<double> default_grid(std::size_t points = 256,
                                     double pad_bandwidths = 10.0) const;
};

// bandwidth: explicit > 0, or nullopt for Silverman's rule
// 0.9 * min(sigma, IQR/1.34) * n^(-1/5). A zero-spread sample falls back
// to 1e-3*|mean| + 1e-12 and sets bandwidth_fallback.
Kde kde(std::span<const double> samples, std::optional<double> bandwidth = std::nullopt);

// -------------------------------------------------------------------
// Mann-Whitney U
// -------------------------------------------------------------------
enum class UMethod { Exact, NormalApprox };

struct UTestResult {
    double u = 0.0; // statistic of the first sample (midranks make it half-integral)
    double z = 0.0; // standardized score; negative when `a` tends smaller than `b`
    double p = 1.0; // two-sided
    UMethod method = UMethod::NormalApprox;
};

// Exact p by the count recurrence when n_a+n_b <= 12 and the pooled sample
// is tie-free; otherwise normal approximation with tie-corrected variance
// and continuity correction.
UTestResult mann_whitney_u(std::span<const double> a, std::span<const double> b);

// -------------------------------------------------------------------
// Binomial proportion interval (Wilson score)
// -------------------------------------------------------------------
struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

Interval binomial_ci(std::int64_t k, std::int64_t n, double level);

// -------------------------------------------------------------------
// Rank correlation
// -------------------------------------------------------------------
struct SpearmanResult {
    double rho = 0.0;
    bool degenerate = false; // one side entirely tied; rho reported as 0
};

SpearmanResult spearman_rho(std::span<const double> x, std::span<const double> y);

// Midranks of a sample (average rank across ties), 1-based.
std::vector<double> midranks(std::span<const double> values);

} // namespace phaseprobe::stats
