#include "phaseprobe/synth_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <json.hpp>

#include "phaseprobe/errors.hpp"

namespace phaseprobe::synth {

using json = nlohmann::json;

std::string default_range_file_text() {
    return "# phaseprobe default ranging table\n"
           "[Ions]\n"
           "Ion1=Nb\n"
           "Ion2=N\n"
           "Ion3=Al\n"
           "Ion4=O\n"
           "[Ranges]\n"
           "Range1=13.50 14.50 N:1\n"
           "Range2=15.50 16.50 O:1\n"
           "Range3=26.50 27.50 Al:1\n"
           "Range4=92.40 93.40 Nb:1\n"
           "Range5=106.40 107.40 Nb:1 N:1 tag=R3\n"
           "Range6=213.30 214.30 Nb:2 N:2 tag=R18\n";
}

apt::RangeTable default_range_table() {
    return apt::parse_range_file(default_range_file_text());
}

std::vector<LayerSpec> default_trilayer(double bottom_nm, double barrier_nm, double top_nm) {
    std::vector<LayerSpec> layers;
    const double z0 = 0.0;
    const double z1 = top_nm;
    const double z2 = z1 + barrier_nm;
    const double z3 = z2 + bottom_nm;
    // depth increases from the top electrode toward the substrate
    layers.push_back({z0, z1, {{"NbN", 0.55}, {"Nb", 0.22}, {"N", 0.22}, {"O", 0.01}}});
    layers.push_back({z1, z2, {{"Al", 0.45}, {"N", 0.42}, {"O", 0.10}, {"Nb", 0.03}}});
    layers.push_back({z2, z3, {{"NbN", 0.55}, {"Nb", 0.22}, {"N", 0.22}, {"O", 0.01}}});
    return layers;
}

namespace {

struct Emission {
    std::vector<apt::IonEvent> events;       // 1 or 2
    std::vector<int> species;                // parallel to events
    bool is_pair = false;
    std::string tag;
    double true_sep_A = 0.0;
    double mid_z_nm = 0.0;
};

double sample_mz(const apt::SpeciesRange& range, Rng& rng) {
    // stay off the window edges so float32 storage cannot spill out
    const double w = range.mz_high - range.mz_low;
    return range.mz_low + w * (0.05 + 0.90 * rng.uniform());
}

void sample_disc(double radius, Rng& rng, double& x, double& y) {
    const double r = radius * std::sqrt(rng.uniform());
    const double a = 2.0 * std::numbers::pi * rng.uniform();
    x = r * std::cos(a);
    y = r * std::sin(a);
}

apt::IonEvent make_event(double x, double y, double z, double mz, double det_x,
                         double det_y) {
    apt::IonEvent e;
    e.x = static_cast<float>(x);
    e.y = static_cast<float>(y);
    e.z = static_cast<float>(z);
    e.mz = static_cast<float>(mz);
    e.tof = static_cast<float>(80.0 * std::sqrt(mz));
    e.v_dc = 5.0f;
    e.det_x = static_cast<float>(det_x);
    e.det_y = static_cast<float>(det_y);
    return e;
}

int species_index_or_throw(const apt::RangeTable& table, const std::string& name) {
    const int idx = table.index_of_name(name);
    if (idx == apt::kUnranged)
        throw ValidationError("specimen spec: species '" + name + "' is not in the range table");
    return idx;
}

int tag_index_or_throw(const apt::RangeTable& table, const std::string& tag) {
    const int idx = table.index_of_tag(tag);
    if (idx == apt::kUnranged)
        throw ValidationError("specimen spec: no range carries tag '" + tag + "'");
    return idx;
}

Emission make_single(const SpecimenSpec& spec, const apt::RangeTable& table,
                     const std::vector<double>& layer_cdf, Rng& rng) {
    // layer by thickness, then depth and species within it
    const double u = rng.uniform() * layer_cdf.back();
    std::size_t li = 0;
    while (li + 1 < layer_cdf.size() && u >= layer_cdf[li]) ++li;
    const LayerSpec& layer = spec.layers[li];

    const double z = rng.uniform(layer.z_lo, layer.z_hi);
    double total = 0.0;
    for (const auto& [name, w] : layer.species_mix) total += w;
    double pick = rng.uniform() * total;
    std::size_t si = 0;
    for (; si + 1 < layer.species_mix.size(); ++si) {
        pick -= layer.species_mix[si].second;
        if (pick < 0.0) break;
    }
    const int species = species_index_or_throw(table, layer.species_mix[si].first);

    double x, y, dx, dy;
    sample_disc(spec.needle_radius_nm, rng, x, y);
    sample_disc(spec.detector_radius_mm * 0.9, rng, dx, dy);

    Emission em;
    em.events.push_back(make_event(
        x, y, z, sample_mz(table.ranges[static_cast<std::size_t>(species)], rng), dx, dy));
    em.species.push_back(species);
    return em;
}

Emission make_pair(const SpecimenSpec& spec, const apt::RangeTable& table,
                   const std::string& tag, double median_A, double sigma_log, double mid_z,
                   Rng& rng) {
    const int species = tag_index_or_throw(table, tag);
    const apt::SpeciesRange& range = table.ranges[static_cast<std::size_t>(species)];

    const double sep_A = rng.lognormal_median(median_A, sigma_log);
    const double det_sep_mm = sep_A / spec.magnification_A_per_mm;

    double mx, my, cx, cy;
    sample_disc(spec.needle_radius_nm * 0.9, rng, mx, my);
    sample_disc(spec.detector_radius_mm * 0.8, rng, cx, cy);
    const double real_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double det_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);

    const double half_real_nm = sep_A * 0.1 / 2.0; // 1 A = 0.1 nm
    const double rx = half_real_nm * std::cos(real_angle);
    const double ry = half_real_nm * std::sin(real_angle);
    const double hx = det_sep_mm / 2.0 * std::cos(det_angle);
    const double hy = det_sep_mm / 2.0 * std::sin(det_angle);

    Emission em;
    em.is_pair = true;
    em.tag = tag;
    em.true_sep_A = sep_A;
    em.mid_z_nm = mid_z;
    em.events.push_back(
        make_event(mx - rx, my - ry, mid_z, sample_mz(range, rng), cx - hx, cy - hy));
    em.events.push_back(
        make_event(mx + rx, my + ry, mid_z, sample_mz(range, rng), cx + hx, cy + hy));
    em.species.assign(2, species);
    return em;
}

} // namespace

Specimen gen_apt_specimen(const SpecimenSpec& spec, const apt::RangeTable& table) {
    if (!(spec.magnification_A_per_mm > 0.0))
        throw ValidationError("specimen spec: magnification must be positive");
    if (spec.layers.empty() && spec.background_singles > 0)
        throw ValidationError("specimen spec: background singles need at least one layer");

    std::vector<LayerSpec> sorted_layers = spec.layers;
    std::sort(sorted_layers.begin(), sorted_layers.end(),
              [](const LayerSpec& a, const LayerSpec& b) { return a.z_lo < b.z_lo; });
    for (std::size_t i = 0; i < sorted_layers.size(); ++i) {
        if (!(sorted_layers[i].z_lo < sorted_layers[i].z_hi))
            throw ValidationError("specimen spec: layer depth range must be ordered");
        if (i > 0 && sorted_layers[i].z_lo < sorted_layers[i - 1].z_hi)
            throw ValidationError("specimen spec: layers overlap in z");
    }

    Rng rng(spec.seed);

    std::vector<double> layer_cdf;
    double acc = 0.0;
    for (const LayerSpec& l : sorted_layers) {
        acc += l.z_hi - l.z_lo;
        layer_cdf.push_back(acc);
    }

    std::vector<Emission> emissions;
    emissions.reserve(spec.background_singles + 16);
    for (std::size_t i = 0; i < spec.background_singles; ++i)
        emissions.push_back(make_single(spec, table, layer_cdf, rng));

    for (const PairPlant& plant : spec.pair_plants) {
        if (!(plant.median_A > 0.0))
            throw ValidationError("specimen spec: pair median must be positive");
        for (std::size_t i = 0; i < plant.count; ++i) {
            const double mid_z = rng.uniform(plant.z_lo, plant.z_hi);
            emissions.push_back(make_pair(spec, table, plant.tag, plant.median_A,
                                          plant.sigma_log, mid_z, rng));
        }
    }

    for (const ProfilePlant& plant : spec.profile_plants) {
        for (std::size_t i = 0; i < plant.count; ++i) {
            const double mid_z = rng.uniform(plant.z_lo, plant.z_hi);
            const double t = (mid_z - plant.z_lo) / (plant.z_hi - plant.z_lo);
            const double frac =
                plant.eps_frac_at_lo + t * (plant.eps_frac_at_hi - plant.eps_frac_at_lo);
            const bool is_eps = rng.uniform() < frac;
            emissions.push_back(make_pair(
                spec, table, is_eps ? plant.eps_tag : plant.delta_tag,
                is_eps ? plant.eps_median_A : plant.delta_median_A, plant.sigma_log, mid_z,
                rng));
        }
    }

    // Fisher-Yates interleave
    for (std::size_t i = emissions.size(); i > 1; --i) {
        const std::size_t j = rng.below(i);
        std::swap(emissions[i - 1], emissions[j]);
    }

    Specimen out;
    out.truth.magnification_A_per_mm = spec.magnification_A_per_mm;
    for (Emission& em : emissions) {
        const auto first_index = out.events.size();
        const auto size = static_cast<std::uint32_t>(em.events.size());
        for (std::size_t k = 0; k < em.events.size(); ++k) {
            apt::IonEvent e = em.events[k];
            e.pulse_delta = k == 0 ? 1 + static_cast<std::uint32_t>(rng.below(3)) : 0;
            e.multiplicity = size;
            out.events.push_back(e);
            out.truth.species.push_back(em.species[k]);
        }
        if (em.is_pair) {
            PlantedPair p;
            p.index_a = first_index;
            p.index_b = first_index + 1;
            p.tag = em.tag;
            p.true_sep_A = em.true_sep_A;
            p.mid_z_nm = em.mid_z_nm;
            out.truth.pairs.push_back(p);
        }
    }
    return out;
}

std::string SpecimenTruth::to_json_text() const {
    json j;
    j["magnification_A_per_mm"] = magnification_A_per_mm;
    j["species"] = species;
    json jp = json::array();
    for (const PlantedPair& p : pairs) {
        jp.push_back({{"index_a", p.index_a},
                      {"index_b", p.index_b},
                      {"tag", p.tag},
                      {"true_sep_A", p.true_sep_A},
                      {"mid_z_nm", p.mid_z_nm}});
    }
    j["pairs"] = std::move(jp);
    return j.dump(2);
}

// ---------------------------------------------------------------------
// Lattice images
// ---------------------------------------------------------------------

fringe::GrayImage gen_lattice_image(const LatticeImageSpec& spec) {
    if (spec.size < 2) throw ValidationError("lattice spec: size must be >= 2");
    if (!(spec.pixel_scale > 0.0))
        throw ValidationError("lattice spec: pixel scale must be positive");
    for (const LatticeComponent& c : spec.components) {
        if (!(c.d_nm > 2.0 * spec.pixel_scale))
            throw ValidationError("lattice spec: period " + std::to_string(c.d_nm) +
                                  " nm violates the Nyquist limit at pixel scale " +
                                  std::to_string(spec.pixel_scale) + " nm/px");
    }

    Rng rng(spec.seed);
    fringe::GrayImage img;
    img.width = img.height = spec.size;
    img.pixel_scale = spec.pixel_scale;
    img.pixels.assign(spec.size * spec.size, 0.0);

    for (std::size_t y = 0; y < spec.size; ++y) {
        for (std::size_t x = 0; x < spec.size; ++x) {
            const double px = static_cast<double>(x) * spec.pixel_scale;
            const double py = static_cast<double>(y) * spec.pixel_scale;
            double v = 0.0;
            for (const LatticeComponent& c : spec.components) {
                const double proj = px * std::cos(c.angle_rad) + py * std::sin(c.angle_rad);
                v += c.amplitude *
                     std::cos(2.0 * std::numbers::pi * proj / c.d_nm + c.phase_rad);
            }
            if (spec.noise_sigma > 0.0) v += rng.normal(0.0, spec.noise_sigma);
            img.at(x, y) = v;
        }
    }
    return img;
}

// ---------------------------------------------------------------------
// Transport
// ---------------------------------------------------------------------

transport::IVTrace gen_iv(const IVSpec& spec) {
    if (!(spec.gap_mV > 0.0) || !(spec.rn_MOhm > 0.0) || !(spec.smear_mV > 0.0))
        throw ValidationError("iv spec: gap, Rn and smear must be positive");
    if (!(spec.v_step_mV > 0.0) || !(spec.v_min_mV < spec.v_max_mV))
        throw ValidationError("iv spec: sweep range must be ordered with positive step");

    Rng rng(spec.seed);
    transport::IVTrace t;
    // integer grid around zero keeps the sweep exactly antisymmetric
    const auto k_min = static_cast<long>(std::ceil(spec.v_min_mV / spec.v_step_mV - 1e-9));
    const auto k_max = static_cast<long>(std::floor(spec.v_max_mV / spec.v_step_mV + 1e-9));
    for (long k = k_min; k <= k_max; ++k) {
        const double v = static_cast<double>(k) * spec.v_step_mV;
        const double g_leak = 1000.0 / spec.leakage_MOhm; // pA per mV
        const double g_n = 1000.0 / spec.rn_MOhm;
        const double u = (std::abs(v) - spec.gap_mV) * 4.0 / spec.smear_mV;
        const double step = 1.0 / (1.0 + std::exp(-u));
        double i = v * g_leak + (v * g_n - v * g_leak) * step;
        if (spec.supercurrent_step_pA != 0.0)
            i += spec.supercurrent_step_pA * 0.5 * std::tanh(v / 0.005);
        if (spec.noise_pA > 0.0) i += rng.normal(0.0, spec.noise_pA);
        t.bias_mV.push_back(v);
        t.current_pA.push_back(i);
    }
    t.validate();
    return t;
}

transport::RAVector gen_ra(const RASpec& spec) {
    if (!(spec.ra_MOhm_um2 > 0.0))
        throw ValidationError("ra spec: the R*A constant must be positive");
    Rng rng(spec.seed);
    transport::RAVector v;
    for (double a : spec.areas_um2) {
        if (!(a > 0.0)) throw ValidationError("ra spec: areas must be positive");
        double factor = 1.0;
        if (spec.noise_frac > 0.0)
            factor = std::max(1e-6, 1.0 + rng.normal(0.0, spec.noise_frac));
        v.push_back({a, spec.ra_MOhm_um2 / a * factor});
    }
    return v;
}

} // namespace phaseprobe::synth
