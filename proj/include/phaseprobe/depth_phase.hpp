#pragma once
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "phaseprobe/pair_analysis.hpp"
#include "phaseprobe/stats_core.hpp"

namespace phaseprobe::depth {

struct PhaseBin {
    double z_lo = 0.0, z_hi = 0.0; // nm
    std::uint64_t n_delta = 0;
    std::uint64_t n_epsilon = 0;
    bool occupied = false;
    double frac_epsilon = 0.0;  // NaN when unoccupied
    stats::Interval ci{};       // Wilson interval; undefined when unoccupied

    double center() const { return (z_lo + z_hi) / 2.0; }
    double frac_delta() const { return 1.0 - frac_epsilon; }
};

struct PhaseDepthBins {
    std::vector<PhaseBin> bins;      // ascending z
    bool substrate_at_high_z = true; // depth orientation of the reconstruction
    std::size_t occupied_count() const;
};

struct ZSegmentOptions {
    std::size_t n_bins = 20;
    std::optional<std::vector<double>> edges; // explicit ascending edges override n_bins
    bool substrate_at_high_z = true;
    double ci_level = 0.95;
};

// Homopair populations binned by midpoint depth; per-bin epsilon fraction
// with a Wilson interval. Empty bins stay masked.
PhaseDepthBins z_segment(std::span<const pairs::DoubleHitPair> delta_pairs,
                         std::span<const pairs::DoubleHitPair> epsilon_pairs,
                         const ZSegmentOptions& options = {});

enum class TrendDirection { Increasing, Decreasing, Flat };

struct TrendSummary {
    double spearman_rho = 0.0; // delta fraction vs substrate->surface bin index
    TrendDirection direction = TrendDirection::Flat;
    bool rank_ties_degenerate = false;
    std::size_t occupied_bins = 0;
};

// Requires >= 3 occupied bins. Constant fractions degenerate to rho 0
// with the tie flag set.
TrendSummary trend_summary(const PhaseDepthBins& bins);

} // namespace phaseprobe::depth
