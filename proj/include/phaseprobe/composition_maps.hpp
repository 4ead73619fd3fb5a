#pragma once
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "phaseprobe/apt_ingest.hpp"
#include "phaseprobe/matrix.hpp"

namespace phaseprobe::maps {

struct GridBounds {
    std::array<double, 3> lo{};
    std::array<double, 3> hi{};
};

struct VoxelGrid {
    std::array<double, 3> origin{};  // nm
    double voxel_size = 1.0;         // nm
    std::array<std::size_t, 3> dims{};
    std::size_t n_species = 0;
    std::vector<std::uint32_t> counts; // indexed (ix, iy, iz, species)
    std::uint64_t dropped_out_of_bounds = 0;
    std::uint64_t dropped_unranged = 0;
    std::uint64_t total_in_bounds = 0; // ranged ions inside the grid

    std::uint32_t count(std::size_t ix, std::size_t iy, std::size_t iz,
                        std::size_t species) const;
    std::size_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }
};

// Each ranged ion increments its voxel's species counter; unranged ions
// and ions outside explicit bounds are dropped with counters. Default
// bounds snap to the ranged-ion bounding box.
VoxelGrid voxelize(std::span<const apt::IonEvent> events, std::span<const int> species,
                   std::size_t n_species, double voxel_size,
                   std::optional<GridBounds> bounds = std::nullopt);

// Per-species weight vector for one element, from the range compositions
// (a Nb2N2 window contributes weight 2 to both Nb and N).
std::vector<double> element_weights(const apt::RangeTable& table, std::string_view element);

struct RatioMap2d {
    int projection_axis = 2;          // collapsed world axis
    std::array<int, 2> plane_axes{};  // remaining world axes, ascending
    std::size_t nu = 0, nv = 0;       // map dimensions along plane_axes
    std::array<double, 2> origin{};   // nm along plane_axes
    double voxel_size = 1.0;
    double min_den_count = 10.0;
    Matrix ratio;                 // nu x nv; masked cells hold NaN
    Matrix num_counts, den_counts;
    std::vector<std::uint8_t> mask; // row-major nu x nv, 1 = valid
};

// Weighted counts summed along the projection axis; cells whose summed
// denominator falls below min_den_count are masked rather than divided.
RatioMap2d ratio_map_2d(const VoxelGrid& grid, std::span<const double> num_weights,
                        std::span<const double> den_weights, int projection_axis,
                        double min_den_count = 10.0);

struct DepthProfile {
    std::vector<double> bin_centers;    // nm
    std::vector<std::string> elements;  // declared elements, table order
    Matrix fractions;                   // bins x elements; empty bins hold NaN
    std::vector<double> bin_atom_counts;       // decomposed atoms per bin
    std::vector<std::uint64_t> bin_ion_counts; // ranged ions per bin
};

// Atomic fractions among ranged ions per z bin, with molecular species
// decomposed into their constituent atoms.
DepthProfile depth_profile(std::span<const apt::IonEvent> events,
                           std::span<const int> species, const apt::RangeTable& table,
                           double bin_width_nm);

} // namespace phaseprobe::maps
