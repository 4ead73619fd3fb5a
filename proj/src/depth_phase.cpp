#include "phaseprobe/depth_phase.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "phaseprobe/errors.hpp"

namespace phaseprobe::depth {

std::size_t PhaseDepthBins::occupied_count() const {
    std::size_t n = 0;
    for (const PhaseBin& b : bins)
        if (b.occupied) ++n;
    return n;
}

namespace {

std::vector<double> make_edges(std::span<const pairs::DoubleHitPair> delta_pairs,
                               std::span<const pairs::DoubleHitPair> epsilon_pairs,
                               const ZSegmentOptions& options) {
    if (options.edges) {
        const auto& e = *options.edges;
        if (e.size() < 2 || !std::is_sorted(e.begin(), e.end()))
            throw AnalysisError("z_segment: explicit edges must be ascending, size >= 2");
        return e;
    }
    if (options.n_bins < 1) throw AnalysisError("z_segment: n_bins must be >= 1");

    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    auto scan = [&](std::span<const pairs::DoubleHitPair> pairs) {
        for (const auto& p : pairs) {
            lo = std::min(lo, p.mid_z);
            hi = std::max(hi, p.mid_z);
        }
    };
    scan(delta_pairs);
    scan(epsilon_pairs);
    if (!(lo <= hi)) throw AnalysisError("z_segment: no pairs to bin");
    if (hi == lo) hi = lo + 1e-9; // all pairs share one depth

    std::vector<double> edges(options.n_bins + 1);
    for (std::size_t i = 0; i <= options.n_bins; ++i)
        edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(options.n_bins);
    return edges;
}

} // namespace

PhaseDepthBins z_segment(std::span<const pairs::DoubleHitPair> delta_pairs,
                         std::span<const pairs::DoubleHitPair> epsilon_pairs,
                         const ZSegmentOptions& options) {
    const std::vector<double> edges = make_edges(delta_pairs, epsilon_pairs, options);
    const std::size_t n_bins = edges.size() - 1;

    PhaseDepthBins out;
    out.substrate_at_high_z = options.substrate_at_high_z;
    out.bins.resize(n_bins);
    for (std::size_t b = 0; b < n_bins; ++b) {
        out.bins[b].z_lo = edges[b];
        out.bins[b].z_hi = edges[b + 1];
    }

    auto locate = [&](double z) -> std::ptrdiff_t {
        if (z < edges.front() || z > edges.back()) return -1;
        auto it = std::upper_bound(edges.begin(), edges.end(), z);
        std::size_t idx = static_cast<std::size_t>(it - edges.begin());
        if (idx == 0) return 0;
        return static_cast<std::ptrdiff_t>(std::min(idx - 1, n_bins - 1));
    };

    for (const auto& p : delta_pairs) {
        const std::ptrdiff_t b = locate(p.mid_z);
        if (b >= 0) ++out.bins[static_cast<std::size_t>(b)].n_delta;
    }
    for (const auto& p : epsilon_pairs) {
        const std::ptrdiff_t b = locate(p.mid_z);
        if (b >= 0) ++out.bins[static_cast<std::size_t>(b)].n_epsilon;
    }

    for (PhaseBin& b : out.bins) {
        const std::uint64_t total = b.n_delta + b.n_epsilon;
        if (total == 0) {
            b.frac_epsilon = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        b.occupied = true;
        b.frac_epsilon = static_cast<double>(b.n_epsilon) / static_cast<double>(total);
        b.ci = stats::binomial_ci(static_cast<std::int64_t>(b.n_epsilon),
                                  static_cast<std::int64_t>(total), options.ci_level);
    }
    return out;
}

TrendSummary trend_summary(const PhaseDepthBins& bins) {
    std::vector<double> frac_delta;
    for (const PhaseBin& b : bins.bins)
        if (b.occupied) frac_delta.push_back(b.frac_delta());
    if (frac_delta.size() < 3)
        throw AnalysisError("trend_summary: need at least 3 occupied bins");

    // index occupied bins from substrate toward surface
    if (bins.substrate_at_high_z)
        std::reverse(frac_delta.begin(), frac_delta.end());

    std::vector<double> index(frac_delta.size());
    for (std::size_t i = 0; i < index.size(); ++i) index[i] = static_cast<double>(i);

    TrendSummary t;
    t.occupied_bins = frac_delta.size();
    const stats::SpearmanResult r = stats::spearman_rho(index, frac_delta);
    t.rank_ties_degenerate = r.degenerate;
    t.spearman_rho = r.degenerate ? 0.0 : r.rho;
    if (t.spearman_rho > 0.0)
        t.direction = TrendDirection::Increasing;
    else if (t.spearman_rho < 0.0)
        t.direction = TrendDirection::Decreasing;
    return t;
}

} // namespace phaseprobe::depth
