#include "phaseprobe/pair_analysis.hpp"

#include <cmath>

#include "phaseprobe/errors.hpp"
#include "phaseprobe/stats_core.hpp"

namespace phaseprobe::pairs {

ExtractResult extract_double_hits(std::span<const apt::IonEvent> events,
                                  const ExtractOptions& options) {
    ExtractResult r;
    std::size_t i = 0;
    while (i < events.size()) {
        std::size_t j = i + 1;
        while (j < events.size() && events[j].pulse_delta == 0) ++j;
        const std::size_t size = j - i;
        ++r.groups_total;

        bool consistent = true;
        for (std::size_t t = i; t < j; ++t)
            consistent = consistent && events[t].multiplicity == size;

        if (!consistent) {
            ++r.inconsistent_groups;
        } else if (size == 1) {
            ++r.single_groups;
        } else if (size == 2) {
            r.pairs.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i + 1)});
        } else {
            ++r.higher_order_groups;
            if (options.pairs_from_higher_multiplicity) {
                for (std::size_t p = i; p < j; ++p)
                    for (std::size_t q = p + 1; q < j; ++q)
                        r.pairs.push_back(
                            {static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(q)});
            }
        }
        i = j;
    }
    return r;
}

bool Roi::contains(const apt::IonEvent& e) const {
    if (e.z < z_lo || e.z > z_hi) return false;
    if (const auto* disc = std::get_if<DetectorDisc>(&region)) {
        const double dx = e.det_x - disc->cx;
        const double dy = e.det_y - disc->cy;
        return dx * dx + dy * dy <= disc->radius * disc->radius;
    }
    const auto& rect = std::get<DetectorRect>(region);
    return e.det_x >= rect.x_lo && e.det_x <= rect.x_hi && e.det_y >= rect.y_lo &&
           e.det_y <= rect.y_hi;
}

std::vector<PairIndices> apply_roi(std::span<const PairIndices> pairs,
                                   std::span<const apt::IonEvent> events, const Roi& roi) {
    std::vector<PairIndices> kept;
    kept.reserve(pairs.size());
    for (const PairIndices& p : pairs)
        if (roi.contains(events[p.a]) && roi.contains(events[p.b])) kept.push_back(p);
    return kept;
}

double pair_separation(const apt::IonEvent& a, const apt::IonEvent& b) {
    const double dx = static_cast<double>(a.det_x) - static_cast<double>(b.det_x);
    const double dy = static_cast<double>(a.det_y) - static_cast<double>(b.det_y);
    return std::sqrt(dx * dx + dy * dy);
}

std::vector<DoubleHitPair> make_double_hit_pairs(std::span<const apt::IonEvent> events,
                                                 std::span<const int> species,
                                                 std::span<const PairIndices> pairs,
                                                 double scale_A_per_mm) {
    // cumulative pulse count per event
    std::vector<std::uint64_t> pulse(events.size());
    std::uint64_t acc = 0;
    for (std::size_t i = 0; i < events.size(); ++i) {
        acc += events[i].pulse_delta;
        pulse[i] = acc;
    }

    std::vector<DoubleHitPair> out;
    out.reserve(pairs.size());
    for (const PairIndices& p : pairs) {
        const apt::IonEvent& a = events[p.a];
        const apt::IonEvent& b = events[p.b];
        DoubleHitPair d;
        d.pulse_index = pulse[p.a];
        d.species_a = species.empty() ? apt::kUnranged : species[p.a];
        d.species_b = species.empty() ? apt::kUnranged : species[p.b];
        d.det_sep = pair_separation(a, b);
        d.real_sep = d.det_sep * scale_A_per_mm;
        d.mid_x = (static_cast<double>(a.x) + static_cast<double>(b.x)) / 2.0;
        d.mid_y = (static_cast<double>(a.y) + static_cast<double>(b.y)) / 2.0;
        d.mid_z = (static_cast<double>(a.z) + static_cast<double>(b.z)) / 2.0;
        out.push_back(d);
    }
    return out;
}

void apply_scale(std::span<DoubleHitPair> pairs, double scale_A_per_mm) {
    for (DoubleHitPair& p : pairs) p.real_sep = p.det_sep * scale_A_per_mm;
}

double calibrate_scale(std::span<const DoubleHitPair> reference_pairs,
                       double reference_median_A) {
    if (reference_pairs.empty())
        throw AnalysisError("calibrate_scale: empty reference population");
    std::vector<double> seps;
    seps.reserve(reference_pairs.size());
    for (const DoubleHitPair& p : reference_pairs) seps.push_back(p.det_sep);
    const double med = stats::median(seps);
    if (!(med > 0.0))
        throw AnalysisError("calibrate_scale: reference median detector separation is zero");
    return reference_median_A / med;
}

std::vector<DoubleHitPair> filter_homopairs(std::span<const DoubleHitPair> pairs,
                                            const apt::RangeTable& table,
                                            std::string_view tag) {
    auto has_tag = [&](int species) {
        return species != apt::kUnranged &&
               table.ranges[static_cast<std::size_t>(species)].pair_tag == tag;
    };
    std::vector<DoubleHitPair> out;
    for (const DoubleHitPair& p : pairs)
        if (has_tag(p.species_a) && has_tag(p.species_b)) out.push_back(p);
    return out;
}

double FeatureMatrix::destandardized(std::size_t row, std::size_t col) const {
    const double divisor = stddev[col] > 0.0 ? stddev[col] : 1.0;
    return standardized(row, col) * divisor + mean[col];
}

Matrix FeatureMatrix::destandardize() const {
    Matrix out(standardized.rows(), standardized.cols());
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) = destandardized(i, j);
    return out;
}

FeatureMatrix build_feature_matrix(std::span<const DoubleHitPair> delta_pairs,
                                   std::span<const DoubleHitPair> epsilon_pairs) {
    const std::size_t n = delta_pairs.size() + epsilon_pairs.size();
    if (n < 2) throw AnalysisError("build_feature_matrix: need at least 2 pairs");

    FeatureMatrix fm;
    fm.standardized = Matrix(n, kFeatureCols);
    std::size_t row = 0;
    auto fill = [&](const DoubleHitPair& p, double flag) {
        if (!std::isfinite(p.real_sep) || !std::isfinite(p.mid_x) ||
            !std::isfinite(p.mid_y) || !std::isfinite(p.mid_z))
            throw ValidationError("build_feature_matrix: non-finite pair fields");
        fm.standardized(row, 0) = p.real_sep;
        fm.standardized(row, 1) = flag;
        fm.standardized(row, 2) = p.mid_x;
        fm.standardized(row, 3) = p.mid_y;
        fm.standardized(row, 4) = p.mid_z;
        ++row;
    };
    for (const DoubleHitPair& p : delta_pairs) fill(p, 0.0);
    for (const DoubleHitPair& p : epsilon_pairs) fill(p, 1.0);

    for (std::size_t col = 0; col < kFeatureCols; ++col) {
        if (col == kFlagColumn) {
            fm.mean[col] = 0.0;
            fm.stddev[col] = 1.0;
            continue;
        }
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) m += fm.standardized(i, col);
        m /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = fm.standardized(i, col) - m;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double sd = std::sqrt(var);
        fm.mean[col] = m;
        fm.stddev[col] = sd;
        const double divisor = sd > 0.0 ? sd : 1.0;
        for (std::size_t i = 0; i < n; ++i)
            fm.standardized(i, col) = (fm.standardized(i, col) - m) / divisor;
    }
    return fm;
}

} // namespace phaseprobe::pairs
