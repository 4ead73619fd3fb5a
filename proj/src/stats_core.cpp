#include "phaseprobe/stats_core.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <utility>

#include "phaseprobe/errors.hpp"

namespace phaseprobe::stats {

double normal_cdf(double x) {
    return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

namespace {

// Acklam's rational approximation for the probit function, polished with
// one Halley step against erfc. Good to ~1e-15 over (0, 1).
double probit_estimate(double p) {
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                   -2.759285104469687e+02, 1.383577518672690e+02,
                                   -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                   -1.556989798598866e+02, 6.680131188771972e+01,
                                   -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                   -2.400758277161838e+00, -2.549732539343734e+00,
                                   4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                   2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double p_low = 0.02425;

    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    if (p > 1.0 - p_low) {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double q = p - 0.5;
    const double r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

} // namespace

double normal_quantile(double p) {
    if (!(p > 0.0) || !(p < 1.0))
        throw AnalysisError("normal_quantile: p must lie strictly inside (0, 1)");
    double x = probit_estimate(p);
    // Halley refinement
    const double e = normal_cdf(x) - p;
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(x * x / 2.0);
    x -= u / (1.0 + x * u / 2.0);
    return x;
}

double quantile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw AnalysisError("quantile of empty sample");
    if (sorted.size() == 1) return sorted[0];
    p = std::clamp(p, 0.0, 1.0);
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double quantile(std::span<const double> samples, double p) {
    std::vector<double> v(samples.begin(), samples.end());
    std::sort(v.begin(), v.end());
    return quantile_sorted(v, p);
}

double median(std::span<const double> samples) {
    return quantile(samples, 0.5);
}

BoxStats boxplot_stats(std::span<const double> samples) {
    if (samples.empty()) throw AnalysisError("boxplot_stats: empty sample");
    std::vector<double> v(samples.begin(), samples.end());
    std::sort(v.begin(), v.end());

    BoxStats s;
    s.median = quantile_sorted(v, 0.5);
    s.q1 = quantile_sorted(v, 0.25);
    s.q3 = quantile_sorted(v, 0.75);
    const double iqr = s.q3 - s.q1;
    const double fence_lo = s.q1 - 1.5 * iqr;
    const double fence_hi = s.q3 + 1.5 * iqr;

    s.whisker_low = v.back();
    s.whisker_high = v.front();
    for (double x : v) {
        if (x >= fence_lo && x <= fence_hi) {
            s.whisker_low = std::min(s.whisker_low, x);
            s.whisker_high = std::max(s.whisker_high, x);
        } else {
            s.outliers.push_back(x);
        }
    }
    return s;
}

// ---------------------------------------------------------------------
// KDE
// ---------------------------------------------------------------------

namespace {
double gauss(double t) {
    return std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi);
}
} // namespace

double Kde::operator()(double x) const {
    double acc = 0.0;
    for (double c : centers) acc += gauss((x - c) / bandwidth);
    return acc / (static_cast<double>(centers.size()) * bandwidth);
}

std::vector<double> Kde::evaluate(std::span<const double> grid) const {
    std::vector<double> out;
    out.reserve(grid.size());
    for (double x : grid) out.push_back((*this)(x));
    return out;
}

std::vector<double> Kde::default_grid(std::size_t points, double pad_bandwidths) const {
    const auto [lo_it, hi_it] = std::minmax_element(centers.begin(), centers.end());
    const double lo = *lo_it - pad_bandwidths * bandwidth;
    const double hi = *hi_it + pad_bandwidths * bandwidth;
    std::vector<double> grid(points);
    for (std::size_t i = 0; i < points; ++i)
        grid[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
    return grid;
}

Kde kde(std::span<const double> samples, std::optional<double> bandwidth) {
    if (samples.empty()) throw AnalysisError("kde: empty sample");
    if (bandwidth && !(*bandwidth > 0.0))
        throw AnalysisError("kde: bandwidth must be positive");

    Kde k;
    k.centers.assign(samples.begin(), samples.end());

    if (bandwidth) {
        k.bandwidth = *bandwidth;
        return k;
    }

    const auto n = static_cast<double>(samples.size());
    const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
    double sigma = 0.0;
    if (samples.size() > 1) {
        double ss = 0.0;
        for (double x : samples) ss += (x - mean) * (x - mean);
        sigma = std::sqrt(ss / (n - 1.0));
    }
    const double iqr = quantile(samples, 0.75) - quantile(samples, 0.25);
    const double spread = std::min(sigma, iqr / 1.34);
    const double h = 0.9 * spread * std::pow(n, -0.2);

    if (h > 0.0) {
        k.bandwidth = h;
    } else {
        k.bandwidth = 1e-3 * std::abs(mean) + 1e-12;
        k.bandwidth_fallback = true;
    }
    return k;
}

// ---------------------------------------------------------------------
// Mann-Whitney U
// ---------------------------------------------------------------------

std::vector<double> midranks(std::span<const double> values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });

    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
        i = j + 1;
    }
    return ranks;
}

namespace {

// Count of label arrangements with statistic value u, for tie-free samples
// of sizes m and n: N(m,n,u) = N(m-1,n,u-n) + N(m,n-1,u).
class UCountTable {
public:
    const std::vector<double>& counts(std::size_t m, std::size_t n) {
        const auto key = std::make_pair(m, n);
        auto it = memo_.find(key);
        if (it != memo_.end()) return it->second;

        std::vector<double> c;
        if (m == 0 || n == 0) {
            c = {1.0};
        } else {
            const auto& a = counts(m - 1, n); // last a-value ranks above all of b: u gains n
            const auto& b = counts(m, n - 1);
            c.assign(m * n + 1, 0.0);
            for (std::size_t u = 0; u < c.size(); ++u) {
                if (u >= n && u - n < a.size()) c[u] += a[u - n];
                if (u < b.size()) c[u] += b[u];
            }
        }
        return memo_.emplace(key, std::move(c)).first->second;
    }

private:
    std::map<std::pair<std::size_t, std::size_t>, std::vector<double>> memo_;
};

double exact_two_sided_p(std::size_t m, std::size_t n, double u) {
    UCountTable table;
    const auto& c = table.counts(m, n);
    const double total = std::accumulate(c.begin(), c.end(), 0.0);
    const auto ui = static_cast<std::size_t>(std::llround(u));
    double le = 0.0, ge = 0.0;
    for (std::size_t v = 0; v < c.size(); ++v) {
        if (v <= ui) le += c[v];
        if (v >= ui) ge += c[v];
    }
    return std::min(1.0, 2.0 * std::min(le, ge) / total);
}

} // namespace

UTestResult mann_whitney_u(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty())
        throw AnalysisError("mann_whitney_u: both samples must be non-empty");

    const std::size_t na = a.size(), nb = b.size();
    std::vector<double> pooled;
    pooled.reserve(na + nb);
    pooled.insert(pooled.end(), a.begin(), a.end());
    pooled.insert(pooled.end(), b.begin(), b.end());
    const std::vector<double> ranks = midranks(pooled);

    double rank_sum_a = 0.0;
    for (std::size_t i = 0; i < na; ++i) rank_sum_a += ranks[i];
    const double u = rank_sum_a - static_cast<double>(na) * (static_cast<double>(na) + 1.0) / 2.0;

    // tie bookkeeping over the pooled sample
    std::vector<double> sorted = pooled;
    std::sort(sorted.begin(), sorted.end());
    bool ties = false;
    double tie_sum = 0.0; // sum of t^3 - t over tie groups
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
        const auto t = static_cast<double>(j - i + 1);
        if (t > 1.0) {
            ties = true;
            tie_sum += t * t * t - t;
        }
        i = j + 1;
    }

    const double n = static_cast<double>(na + nb);
    const double mu = static_cast<double>(na) * static_cast<double>(nb) / 2.0;
    const double var = static_cast<double>(na) * static_cast<double>(nb) / 12.0 *
                       ((n + 1.0) - tie_sum / (n * (n - 1.0)));

    UTestResult r;
    r.u = u;
    if (var > 0.0) {
        const double d = u - mu;
        const double dc = (d > 0.0 ? 1.0 : -1.0) * std::max(0.0, std::abs(d) - 0.5);
        r.z = dc / std::sqrt(var);
    }

    if (!ties && na + nb <= 12) {
        r.method = UMethod::Exact;
        r.p = exact_two_sided_p(na, nb, u);
    } else {
        r.method = UMethod::NormalApprox;
        r.p = var > 0.0 ? std::clamp(2.0 * normal_cdf(-std::abs(r.z)), 0.0, 1.0) : 1.0;
    }
    return r;
}

// ---------------------------------------------------------------------
// Wilson score interval
// ---------------------------------------------------------------------

Interval binomial_ci(std::int64_t k, std::int64_t n, double level) {
    if (n < 1 || k < 0 || k > n)
        throw AnalysisError("binomial_ci: need 0 <= k <= n, n >= 1");
    const double z = normal_quantile(0.5 + level / 2.0);
    const double nn = static_cast<double>(n);
    const double phat = static_cast<double>(k) / nn;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / nn;
    const double center = (phat + z2 / (2.0 * nn)) / denom;
    const double half =
        z / denom * std::sqrt(phat * (1.0 - phat) / nn + z2 / (4.0 * nn * nn));
    Interval ci;
    ci.lo = std::max(0.0, center - half);
    ci.hi = std::min(1.0, center + half);
    if (k == 0) ci.lo = 0.0;
    if (k == n) ci.hi = 1.0;
    return ci;
}

// ---------------------------------------------------------------------
// Spearman
// ---------------------------------------------------------------------

SpearmanResult spearman_rho(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2)
        throw AnalysisError("spearman_rho: need two equal-length samples of size >= 2");
    const std::vector<double> rx = midranks(x);
    const std::vector<double> ry = midranks(y);
    const auto n = static_cast<double>(x.size());

    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;

    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }

    SpearmanResult r;
    if (sxx <= 0.0 || syy <= 0.0) {
        r.degenerate = true;
        return r;
    }
    r.rho = sxy / std::sqrt(sxx * syy);
    return r;
}

} // namespace phaseprobe::stats
