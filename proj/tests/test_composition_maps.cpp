#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "phaseprobe/composition_maps.hpp"
#include "phaseprobe/errors.hpp"
#include "phaseprobe/rng.hpp"

using namespace phaseprobe;

namespace {

const char* kTable =
    "[Ions]\nIon1=Nb\nIon2=N\nIon3=O\n[Ranges]\n"
    "Range1=13.5 14.5 N:1\n"
    "Range2=15.5 16.5 O:1\n"
    "Range3=92.4 93.4 Nb:1\n"
    "Range4=106.4 107.4 Nb:1 N:1 tag=R3\n";

apt::IonEvent ion(float x, float y, float z, float mz) {
    apt::IonEvent e;
    e.x = x;
    e.y = y;
    e.z = z;
    e.mz = mz;
    return e;
}

constexpr float kMzN = 14.0f;
constexpr float kMzO = 16.0f;
constexpr float kMzNb = 92.9f;
constexpr float kMzNbN = 106.9f;

} // namespace

TEST_CASE("voxelize: one ion lands in one voxel") {
    const auto table = apt::parse_range_file(kTable);
    std::vector<apt::IonEvent> events = {ion(0, 0, 0, kMzNbN)};
    const auto species = apt::assign_species(events, table);
    const auto grid = maps::voxelize(events, species, table.ranges.size(), 1.0);
    CHECK(grid.total_in_bounds == 1);
    std::uint64_t total = 0;
    for (auto c : grid.counts) total += c;
    CHECK(total == 1);
}

TEST_CASE("voxelize conserves ranged counts and drops the unranged") {
    const auto table = apt::parse_range_file(kTable);
    Rng rng(15);
    std::vector<apt::IonEvent> events;
    std::size_t ranged = 0;
    for (int i = 0; i < 5000; ++i) {
        const bool keep_ranged = rng.uniform() < 0.8;
        const float mz = keep_ranged ? kMzNb : 55.0f;
        if (keep_ranged) ++ranged;
        events.push_back(ion(static_cast<float>(rng.uniform(0, 10)),
                             static_cast<float>(rng.uniform(0, 10)),
                             static_cast<float>(rng.uniform(0, 10)), mz));
    }
    const auto species = apt::assign_species(events, table);
    const auto grid = maps::voxelize(events, species, table.ranges.size(), 1.0);
    CHECK(grid.total_in_bounds == ranged);
    CHECK(grid.dropped_unranged == events.size() - ranged);
    std::uint64_t total = 0;
    for (auto c : grid.counts) total += c;
    CHECK(total == ranged);
}

TEST_CASE("voxelize: uniform box fills voxels at Poisson-like dispersion") {
    const auto table = apt::parse_range_file(kTable);
    Rng rng(99);
    std::vector<apt::IonEvent> events;
    const std::size_t n = 20000;
    for (std::size_t i = 0; i < n; ++i)
        events.push_back(ion(static_cast<float>(rng.uniform(0, 10)),
                             static_cast<float>(rng.uniform(0, 10)),
                             static_cast<float>(rng.uniform(0, 10)), kMzNb));
    const auto species = apt::assign_species(events, table);
    maps::GridBounds bounds;
    bounds.lo = {0, 0, 0};
    bounds.hi = {10, 10, 10};
    const auto grid = maps::voxelize(events, species, table.ranges.size(), 1.0, bounds);

    std::vector<double> occupancy;
    for (std::size_t ix = 0; ix < grid.dims[0]; ++ix)
        for (std::size_t iy = 0; iy < grid.dims[1]; ++iy)
            for (std::size_t iz = 0; iz < grid.dims[2]; ++iz) {
                double c = 0.0;
                for (std::size_t s = 0; s < grid.n_species; ++s)
                    c += grid.count(ix, iy, iz, s);
                occupancy.push_back(c);
            }
    double mean = 0.0;
    for (double c : occupancy) mean += c;
    mean /= static_cast<double>(occupancy.size());
    double var = 0.0;
    for (double c : occupancy) var += (c - mean) * (c - mean);
    var /= static_cast<double>(occupancy.size());
    const double ratio = var / mean;
    CHECK(ratio > 0.8);
    CHECK(ratio < 1.2);
}

TEST_CASE("ratio map: planted 1:1 slab reads stoichiometric") {
    const auto table = apt::parse_range_file(kTable);
    Rng rng(7);
    std::vector<apt::IonEvent> events;
    // half the ions arrive as molecular NbN, the rest split between Nb and N;
    // a deep projection keeps per-cell counting noise well under the tolerance
    for (int i = 0; i < 500000; ++i) {
        const double u = rng.uniform();
        const float mz = u < 0.5 ? kMzNbN : (u < 0.75 ? kMzNb : kMzN);
        events.push_back(ion(static_cast<float>(rng.uniform(0, 5)),
                             static_cast<float>(rng.uniform(0, 5)),
                             static_cast<float>(rng.uniform(0, 30)), mz));
    }
    const auto species = apt::assign_species(events, table);
    const auto grid = maps::voxelize(events, species, table.ranges.size(), 1.0);
    const auto map = maps::ratio_map_2d(grid, maps::element_weights(table, "Nb"),
                                        maps::element_weights(table, "N"), 2, 10.0);
    std::size_t checked = 0;
    double mean_ratio = 0.0;
    for (std::size_t u = 0; u < map.nu; ++u)
        for (std::size_t v = 0; v < map.nv; ++v) {
            if (!map.mask[u * map.nv + v]) continue;
            CHECK(map.ratio(u, v) == doctest::Approx(1.0).epsilon(0.05));
            mean_ratio += map.ratio(u, v);
            ++checked;
        }
    REQUIRE(checked == 25);
    CHECK(mean_ratio / static_cast<double>(checked) ==
          doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("ratio map: denominator-free cells are masked, not infinite") {
    const auto table = apt::parse_range_file(kTable);
    std::vector<apt::IonEvent> events;
    for (int i = 0; i < 50; ++i)
        events.push_back(ion(0.5f, 0.5f, static_cast<float>(i) * 0.1f, kMzNb)); // Nb only
    const auto species = apt::assign_species(events, table);
    const auto grid = maps::voxelize(events, species, table.ranges.size(), 1.0);
    const auto map = maps::ratio_map_2d(grid, maps::element_weights(table, "Nb"),
                                        maps::element_weights(table, "N"), 2, 10.0);
    for (std::size_t u = 0; u < map.nu; ++u)
        for (std::size_t v = 0; v < map.nv; ++v) {
            CHECK(map.mask[u * map.nv + v] == 0);
            CHECK(std::isnan(map.ratio(u, v)));
        }
}

TEST_CASE("ratio map: planted Nb-rich stripe is recovered") {
    const auto table = apt::parse_range_file(kTable);
    Rng rng(23);
    std::vector<apt::IonEvent> events;
    for (int i = 0; i < 120000; ++i) {
        const float x = static_cast<float>(rng.uniform(0, 30));
        const bool stripe = x >= 10.0f && x < 20.0f;
        // stripe at Nb:N = 1.5, elsewhere 1.0
        const double p_nb = stripe ? 0.6 : 0.5;
        const float mz = rng.uniform() < p_nb ? kMzNb : kMzN;
        events.push_back(ion(x, static_cast<float>(rng.uniform(0, 10)),
                             static_cast<float>(rng.uniform(0, 10)), mz));
    }
    const auto species = apt::assign_species(events, table);
    const auto grid = maps::voxelize(events, species, table.ranges.size(), 1.0);
    const auto map = maps::ratio_map_2d(grid, maps::element_weights(table, "Nb"),
                                        maps::element_weights(table, "N"), 2, 10.0);
    // rows of the map follow x; compare stripe rows against the anchor value
    for (std::size_t u = 0; u < map.nu; ++u) {
        double acc = 0.0;
        std::size_t cells = 0;
        for (std::size_t v = 0; v < map.nv; ++v) {
            if (!map.mask[u * map.nv + v]) continue;
            acc += map.ratio(u, v);
            ++cells;
        }
        REQUIRE(cells > 0);
        const double x = map.origin[0] + (static_cast<double>(u) + 0.5) * map.voxel_size;
        const bool stripe = x >= 10.5 && x < 19.5; // skip boundary rows
        const bool plain = x < 9.5 || x >= 20.5;
        if (stripe)
            CHECK(acc / static_cast<double>(cells) == doctest::Approx(1.5).epsilon(0.067));
        else if (plain)
            CHECK(acc / static_cast<double>(cells) == doctest::Approx(1.0).epsilon(0.1));
    }
}

TEST_CASE("depth profile: planted oxygen band peaks inside the band") {
    const auto table = apt::parse_range_file(kTable);
    Rng rng(3);
    std::vector<apt::IonEvent> events;
    for (int i = 0; i < 200000; ++i) {
        const float z = static_cast<float>(rng.uniform(0, 100));
        const bool in_band = z >= 48.0f && z <= 52.0f;
        const double p_o = in_band ? 0.08 : 0.01;
        float mz;
        if (rng.uniform() < p_o)
            mz = kMzO;
        else
            mz = rng.uniform() < 0.5 ? kMzNb : kMzN;
        events.push_back(
            ion(static_cast<float>(rng.uniform(0, 10)), 0.0f, z, mz));
    }
    const auto species = apt::assign_species(events, table);
    const auto prof = maps::depth_profile(events, species, table, 1.0);

    const auto o_col = static_cast<std::size_t>(
        std::find(prof.elements.begin(), prof.elements.end(), "O") -
        prof.elements.begin());
    REQUIRE(o_col < prof.elements.size());

    double peak = -1.0;
    double peak_z = 0.0;
    for (std::size_t b = 0; b < prof.bin_centers.size(); ++b) {
        const double f = prof.fractions(b, o_col);
        if (!std::isnan(f) && f > peak) {
            peak = f;
            peak_z = prof.bin_centers[b];
        }
    }
    CHECK(peak_z >= 48.0);
    CHECK(peak_z <= 52.0);
    CHECK(peak > 0.06);
    CHECK(peak < 0.10);
}

TEST_CASE("depth profile: a single-species dataset sits at fraction one") {
    const auto table = apt::parse_range_file(kTable);
    std::vector<apt::IonEvent> events;
    for (int i = 0; i < 500; ++i)
        events.push_back(ion(0, 0, static_cast<float>(i) * 0.2f, kMzO));
    const auto species = apt::assign_species(events, table);
    const auto prof = maps::depth_profile(events, species, table, 5.0);
    const auto o_col = static_cast<std::size_t>(
        std::find(prof.elements.begin(), prof.elements.end(), "O") -
        prof.elements.begin());
    for (std::size_t b = 0; b < prof.bin_centers.size(); ++b) {
        if (prof.bin_ion_counts[b] == 0) continue;
        CHECK(prof.fractions(b, o_col) == doctest::Approx(1.0));
    }
}

TEST_CASE("depth profile: halving the bin width conserves species totals") {
    const auto table = apt::parse_range_file(kTable);
    Rng rng(41);
    std::vector<apt::IonEvent> events;
    for (int i = 0; i < 3000; ++i)
        events.push_back(ion(0, 0, static_cast<float>(rng.uniform(0, 60)),
                             rng.uniform() < 0.5 ? kMzNb : kMzNbN));
    const auto species = apt::assign_species(events, table);
    const auto coarse = maps::depth_profile(events, species, table, 2.0);
    const auto fine = maps::depth_profile(events, species, table, 1.0);
    auto total_atoms = [](const maps::DepthProfile& p) {
        double acc = 0.0;
        for (double c : p.bin_atom_counts) acc += c;
        return acc;
    };
    auto total_ions = [](const maps::DepthProfile& p) {
        std::uint64_t acc = 0;
        for (auto c : p.bin_ion_counts) acc += c;
        return acc;
    };
    CHECK(total_atoms(coarse) == doctest::Approx(total_atoms(fine)));
    CHECK(total_ions(coarse) == total_ions(fine));
}

TEST_CASE("depth profile fractions are translation invariant") {
    const auto table = apt::parse_range_file(kTable);
    Rng rng(4);
    std::vector<apt::IonEvent> events;
    // z on a 1/256 grid stays exactly representable after adding 512
    for (int i = 0; i < 2000; ++i)
        events.push_back(ion(0, 0, static_cast<float>(rng.below(40 * 256)) / 256.0f,
                             rng.uniform() < 0.3 ? kMzN : kMzNb));
    const auto species = apt::assign_species(events, table);
    const auto base = maps::depth_profile(events, species, table, 1.0);

    auto shifted_events = events;
    for (auto& e : shifted_events) e.z += 512.0f;
    const auto shifted = maps::depth_profile(shifted_events, species, table, 1.0);

    REQUIRE(base.bin_centers.size() == shifted.bin_centers.size());
    for (std::size_t b = 0; b < base.bin_centers.size(); ++b) {
        CHECK(shifted.bin_centers[b] ==
              doctest::Approx(base.bin_centers[b] + 512.0).epsilon(1e-9));
        for (std::size_t e = 0; e < base.elements.size(); ++e) {
            const double f0 = base.fractions(b, e);
            const double f1 = shifted.fractions(b, e);
            if (std::isnan(f0))
                CHECK(std::isnan(f1));
            else
                CHECK(f1 == doctest::Approx(f0));
        }
    }
}

TEST_CASE("ratio maps survive uniform thinning within counting noise") {
    const auto table = apt::parse_range_file(kTable);
    Rng rng(63);
    std::vector<apt::IonEvent> events;
    for (int i = 0; i < 400000; ++i) {
        const double u = rng.uniform();
        const float mz = u < 0.5 ? kMzNbN : (u < 0.75 ? kMzNb : kMzN);
        events.push_back(ion(static_cast<float>(rng.uniform(0, 5)),
                             static_cast<float>(rng.uniform(0, 5)),
                             static_cast<float>(rng.uniform(0, 30)), mz));
    }
    std::vector<apt::IonEvent> thinned;
    for (const auto& e : events)
        if (rng.uniform() < 0.5) thinned.push_back(e);

    maps::GridBounds bounds;
    bounds.lo = {0, 0, 0};
    bounds.hi = {5, 5, 30};
    auto map_of = [&](const std::vector<apt::IonEvent>& ev) {
        const auto species = apt::assign_species(ev, table);
        const auto grid = maps::voxelize(ev, species, table.ranges.size(), 1.0, bounds);
        return maps::ratio_map_2d(grid, maps::element_weights(table, "Nb"),
                                  maps::element_weights(table, "N"), 2, 10.0);
    };
    const auto full = map_of(events);
    const auto half = map_of(thinned);
    REQUIRE(full.nu == half.nu);
    REQUIRE(full.nv == half.nv);
    for (std::size_t u = 0; u < full.nu; ++u)
        for (std::size_t v = 0; v < full.nv; ++v) {
            if (!full.mask[u * full.nv + v] || !half.mask[u * half.nv + v]) continue;
            // 2 sigma of the thinned cell's counting noise on the ratio
            const double n_num = half.num_counts(u, v);
            const double n_den = half.den_counts(u, v);
            const double sigma =
                half.ratio(u, v) * std::sqrt(1.0 / n_num + 1.0 / n_den);
            CHECK(std::abs(half.ratio(u, v) - full.ratio(u, v)) < 2.5 * sigma);
        }
}

TEST_CASE("voxelize validates its inputs") {
    const auto table = apt::parse_range_file(kTable);
    std::vector<apt::IonEvent> events = {ion(0, 0, 0, kMzNb)};
    const auto species = apt::assign_species(events, table);
    CHECK_THROWS_AS((void)maps::voxelize(events, species, table.ranges.size(), 0.0),
                    AnalysisError);
    CHECK_THROWS_AS((void)maps::voxelize(events, {}, table.ranges.size(), 1.0),
                    AnalysisError);
}
