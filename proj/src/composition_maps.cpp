#include "phaseprobe/composition_maps.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "phaseprobe/errors.hpp"

namespace phaseprobe::maps {

namespace {

std::size_t grid_index(const VoxelGrid& g, std::size_t ix, std::size_t iy, std::size_t iz,
                       std::size_t species) {
    return ((ix * g.dims[1] + iy) * g.dims[2] + iz) * g.n_species + species;
}

} // namespace

std::uint32_t VoxelGrid::count(std::size_t ix, std::size_t iy, std::size_t iz,
                               std::size_t species) const {
    return counts[grid_index(*this, ix, iy, iz, species)];
}

VoxelGrid voxelize(std::span<const apt::IonEvent> events, std::span<const int> species,
                   std::size_t n_species, double voxel_size,
                   std::optional<GridBounds> bounds) {
    if (!(voxel_size > 0.0)) throw AnalysisError("voxelize: voxel_size must be positive");
    if (events.size() != species.size())
        throw AnalysisError("voxelize: species assignment size mismatch");

    GridBounds b;
    if (bounds) {
        b = *bounds;
    } else {
        bool any = false;
        b.lo = {0, 0, 0};
        b.hi = {0, 0, 0};
        for (std::size_t i = 0; i < events.size(); ++i) {
            if (species[i] == apt::kUnranged) continue;
            const std::array<double, 3> p = {events[i].x, events[i].y, events[i].z};
            if (!any) {
                b.lo = p;
                b.hi = p;
                any = true;
            } else {
                for (int a = 0; a < 3; ++a) {
                    b.lo[a] = std::min(b.lo[a], p[a]);
                    b.hi[a] = std::max(b.hi[a], p[a]);
                }
            }
        }
    }

    VoxelGrid g;
    g.voxel_size = voxel_size;
    g.n_species = n_species;
    g.origin = b.lo;
    for (int a = 0; a < 3; ++a) {
        const double extent = std::max(0.0, b.hi[a] - b.lo[a]);
        // points exactly on the top face clamp into the last voxel
        g.dims[a] = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::ceil(extent / voxel_size)));
    }
    g.counts.assign(g.voxel_count() * std::max<std::size_t>(1, n_species), 0);

    for (std::size_t i = 0; i < events.size(); ++i) {
        const int sp = species[i];
        if (sp == apt::kUnranged) {
            ++g.dropped_unranged;
            continue;
        }
        const std::array<double, 3> p = {events[i].x, events[i].y, events[i].z};
        bool inside = true;
        std::array<std::size_t, 3> idx{};
        for (int a = 0; a < 3; ++a) {
            const double rel = (p[a] - g.origin[a]) / voxel_size;
            if (rel < 0.0 || p[a] > b.hi[a]) {
                inside = false;
                break;
            }
            idx[a] = std::min(static_cast<std::size_t>(rel), g.dims[a] - 1);
        }
        if (!inside) {
            ++g.dropped_out_of_bounds;
            continue;
        }
        ++g.counts[grid_index(g, idx[0], idx[1], idx[2], static_cast<std::size_t>(sp))];
        ++g.total_in_bounds;
    }
    return g;
}

std::vector<double> element_weights(const apt::RangeTable& table, std::string_view element) {
    std::vector<double> w;
    w.reserve(table.ranges.size());
    for (const apt::SpeciesRange& r : table.ranges)
        w.push_back(static_cast<double>(r.atoms_of(element)));
    return w;
}

RatioMap2d ratio_map_2d(const VoxelGrid& grid, std::span<const double> num_weights,
                        std::span<const double> den_weights, int projection_axis,
                        double min_den_count) {
    if (projection_axis < 0 || projection_axis > 2)
        throw AnalysisError("ratio_map_2d: projection axis must be 0, 1 or 2");
    if (num_weights.size() != grid.n_species || den_weights.size() != grid.n_species)
        throw AnalysisError("ratio_map_2d: weight vector size mismatch");

    RatioMap2d m;
    m.projection_axis = projection_axis;
    int k = 0;
    for (int a = 0; a < 3; ++a)
        if (a != projection_axis) m.plane_axes[k++] = a;
    m.nu = grid.dims[static_cast<std::size_t>(m.plane_axes[0])];
    m.nv = grid.dims[static_cast<std::size_t>(m.plane_axes[1])];
    m.origin = {grid.origin[static_cast<std::size_t>(m.plane_axes[0])],
                grid.origin[static_cast<std::size_t>(m.plane_axes[1])]};
    m.voxel_size = grid.voxel_size;
    m.min_den_count = min_den_count;
    m.ratio = Matrix(m.nu, m.nv, std::numeric_limits<double>::quiet_NaN());
    m.num_counts = Matrix(m.nu, m.nv, 0.0);
    m.den_counts = Matrix(m.nu, m.nv, 0.0);
    m.mask.assign(m.nu * m.nv, 0);

    std::array<std::size_t, 3> idx{};
    for (std::size_t u = 0; u < m.nu; ++u) {
        for (std::size_t v = 0; v < m.nv; ++v) {
            idx[static_cast<std::size_t>(m.plane_axes[0])] = u;
            idx[static_cast<std::size_t>(m.plane_axes[1])] = v;
            double num = 0.0, den = 0.0;
            for (std::size_t w = 0; w < grid.dims[static_cast<std::size_t>(projection_axis)];
                 ++w) {
                idx[static_cast<std::size_t>(projection_axis)] = w;
                for (std::size_t s = 0; s < grid.n_species; ++s) {
                    const double c = grid.count(idx[0], idx[1], idx[2], s);
                    num += c * num_weights[s];
                    den += c * den_weights[s];
                }
            }
            m.num_counts(u, v) = num;
            m.den_counts(u, v) = den;
            if (den >= min_den_count) {
                m.ratio(u, v) = num / den;
                m.mask[u * m.nv + v] = 1;
            }
        }
    }
    return m;
}

DepthProfile depth_profile(std::span<const apt::IonEvent> events,
                           std::span<const int> species, const apt::RangeTable& table,
                           double bin_width_nm) {
    if (!(bin_width_nm > 0.0))
        throw AnalysisError("depth_profile: bin width must be positive");
    if (events.size() != species.size())
        throw AnalysisError("depth_profile: species assignment size mismatch");

    DepthProfile p;
    p.elements = table.elements;

    double z_lo = std::numeric_limits<double>::infinity();
    double z_hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < events.size(); ++i) {
        if (species[i] == apt::kUnranged) continue;
        z_lo = std::min(z_lo, static_cast<double>(events[i].z));
        z_hi = std::max(z_hi, static_cast<double>(events[i].z));
    }
    if (!(z_lo <= z_hi)) return p; // no ranged ions

    const auto n_bins = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil((z_hi - z_lo) / bin_width_nm)));
    const std::size_t n_el = p.elements.size();

    Matrix atom_counts(n_bins, n_el, 0.0);
    p.bin_atom_counts.assign(n_bins, 0.0);
    p.bin_ion_counts.assign(n_bins, 0);
    p.bin_centers.resize(n_bins);
    for (std::size_t b = 0; b < n_bins; ++b)
        p.bin_centers[b] = z_lo + (static_cast<double>(b) + 0.5) * bin_width_nm;

    for (std::size_t i = 0; i < events.size(); ++i) {
        const int sp = species[i];
        if (sp == apt::kUnranged) continue;
        const double rel = (static_cast<double>(events[i].z) - z_lo) / bin_width_nm;
        const std::size_t b = std::min(static_cast<std::size_t>(rel), n_bins - 1);
        ++p.bin_ion_counts[b];
        const apt::SpeciesRange& r = table.ranges[static_cast<std::size_t>(sp)];
        for (std::size_t e = 0; e < n_el; ++e) {
            const double atoms = r.atoms_of(p.elements[e]);
            atom_counts(b, e) += atoms;
            p.bin_atom_counts[b] += atoms;
        }
    }

    p.fractions = Matrix(n_bins, n_el, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t b = 0; b < n_bins; ++b) {
        if (p.bin_atom_counts[b] <= 0.0) continue;
        for (std::size_t e = 0; e < n_el; ++e)
            p.fractions(b, e) = atom_counts(b, e) / p.bin_atom_counts[b];
    }
    return p;
}

} // namespace phaseprobe::maps
