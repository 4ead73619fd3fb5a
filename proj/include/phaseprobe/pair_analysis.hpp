#pragma once
#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "phaseprobe/apt_ingest.hpp"
#include "phaseprobe/matrix.hpp"

namespace phaseprobe::pairs {

// -------------------------------------------------------------------
// Double-hit extraction
// -------------------------------------------------------------------
struct PairIndices {
    std::uint32_t a = 0, b = 0; // indices into the event sequence, a < b
};

struct ExtractOptions {
    // emit all unordered pairs of groups larger than two instead of
    // dropping them
    bool pairs_from_higher_multiplicity = false;
};

struct ExtractResult {
    std::vector<PairIndices> pairs;
    std::uint64_t groups_total = 0;
    std::uint64_t single_groups = 0;
    std::uint64_t higher_order_groups = 0;
    std::uint64_t inconsistent_groups = 0; // multiplicity field disagreed with group size
};

// Events sharing a pulse are consecutive runs where followers carry
// pulse_delta == 0. Groups whose size and multiplicity both equal 2 yield
// one pair; inconsistent groups are counted and skipped.
ExtractResult extract_double_hits(std::span<const apt::IonEvent> events,
                                  const ExtractOptions& options = {});

// -------------------------------------------------------------------
// Region of interest
// -------------------------------------------------------------------
struct DetectorDisc {
    double cx = 0.0, cy = 0.0; // mm
    double radius = 0.0;       // mm, > 0
};

struct DetectorRect {
    double x_lo = 0.0, x_hi = 0.0; // mm
    double y_lo = 0.0, y_hi = 0.0;
};

struct Roi {
    std::variant<DetectorDisc, DetectorRect> region;
    double z_lo = 0.0, z_hi = 0.0; // nm, z_lo < z_hi

    bool contains(const apt::IonEvent& e) const;
};

// A pair survives iff both members pass the detector region and the z range.
std::vector<PairIndices> apply_roi(std::span<const PairIndices> pairs,
                                   std::span<const apt::IonEvent> events, const Roi& roi);

// -------------------------------------------------------------------
// Separations and pair records
// -------------------------------------------------------------------
double pair_separation(const apt::IonEvent& a, const apt::IonEvent& b); // mm

struct DoubleHitPair {
    std::uint64_t pulse_index = 0; // cumulative pulse count at the pair
    int species_a = apt::kUnranged;
    int species_b = apt::kUnranged;
    double det_sep = 0.0;  // mm
    double real_sep = 0.0; // Angstrom, det_sep * scale
    double mid_x = 0.0, mid_y = 0.0, mid_z = 0.0; // nm
};

std::vector<DoubleHitPair> make_double_hit_pairs(std::span<const apt::IonEvent> events,
                                                 std::span<const int> species,
                                                 std::span<const PairIndices> pairs,
                                                 double scale_A_per_mm = 1.0);

void apply_scale(std::span<DoubleHitPair> pairs, double scale_A_per_mm);

// scale = reference_median / median(det_sep); anchors the reference
// population's real-space median to the given value.
double calibrate_scale(std::span<const DoubleHitPair> reference_pairs,
                       double reference_median_A);

// Pairs whose two species both carry the given tag; mixed pairs drop out.
std::vector<DoubleHitPair> filter_homopairs(std::span<const DoubleHitPair> pairs,
                                            const apt::RangeTable& table,
                                            std::string_view tag);

// -------------------------------------------------------------------
// Clustering feature matrix
// -------------------------------------------------------------------
// Rows: delta pairs then epsilon pairs. Columns: real_sep (A),
// stoichiometry flag (0 = delta, 1 = epsilon), mid_x, mid_y, mid_z (nm).
// Non-flag columns are z-scored; the statistics are retained so raw
// values can be recovered.
inline constexpr std::size_t kFeatureCols = 5;
inline constexpr std::size_t kFlagColumn = 1;

struct FeatureMatrix {
    Matrix standardized; // rows x 5
    std::array<double, kFeatureCols> mean{};
    std::array<double, kFeatureCols> stddev{}; // population std; divisor 1 where 0

    double destandardized(std::size_t row, std::size_t col) const;
    Matrix destandardize() const;
};

FeatureMatrix build_feature_matrix(std::span<const DoubleHitPair> delta_pairs,
                                   std::span<const DoubleHitPair> epsilon_pairs);

} // namespace phaseprobe::pairs
