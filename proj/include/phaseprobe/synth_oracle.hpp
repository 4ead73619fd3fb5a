#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "phaseprobe/apt_ingest.hpp"
#include "phaseprobe/fringe_tem.hpp"
#include "phaseprobe/transport.hpp"

namespace phaseprobe::synth {

// Ranging table used by the generators and shipped with the CLI:
// elemental windows for Nb/N/Al/O plus tagged molecular windows
// NbN (R3) and Nb2N2 (R18).
apt::RangeTable default_range_table();
std::string default_range_file_text();

// -------------------------------------------------------------------
// APT specimen generator
// -------------------------------------------------------------------
struct LayerSpec {
    double z_lo = 0.0, z_hi = 0.0; // nm
    // species name -> sampling weight
    std::vector<std::pair<std::string, double>> species_mix;
};

// A fixed-count double-hit population with lognormal separations.
struct PairPlant {
    std::size_t count = 0;
    std::string tag;          // pair species looked up by tag
    double median_A = 0.0;    // true separation median
    double sigma_log = 0.05;  // lognormal shape
    double z_lo = 0.0, z_hi = 0.0; // midpoint depth range
};

// Pairs whose tag is Bernoulli-drawn with an epsilon fraction linear in
// depth; backs the depth-segmentation oracle.
struct ProfilePlant {
    std::size_t count = 0;
    double z_lo = 0.0, z_hi = 0.0;
    double eps_frac_at_lo = 0.0, eps_frac_at_hi = 0.0;
    std::string delta_tag = "R3";
    std::string eps_tag = "R18";
    double delta_median_A = 2.77, eps_median_A = 2.35;
    double sigma_log = 0.05;
};

struct SpecimenSpec {
    std::vector<LayerSpec> layers;             // non-overlapping in z
    std::vector<PairPlant> pair_plants;
    std::vector<ProfilePlant> profile_plants;
    double magnification_A_per_mm = 277.0;     // real separation per detector mm
    std::size_t background_singles = 0;
    double needle_radius_nm = 30.0;
    double detector_radius_mm = 18.0;
    std::uint64_t seed = 0;
};

struct PlantedPair {
    std::size_t index_a = 0, index_b = 0; // event indices after interleaving
    std::string tag;
    double true_sep_A = 0.0;
    double mid_z_nm = 0.0;
};

struct SpecimenTruth {
    std::vector<int> species; // per event, index into the range table
    std::vector<PlantedPair> pairs;
    double magnification_A_per_mm = 0.0;

    std::string to_json_text() const;
};

struct Specimen {
    std::vector<apt::IonEvent> events;
    SpecimenTruth truth;
};

// Deterministic in (spec, table): trilayer point cloud with planted
// double hits, single-hit background, instrument-style pulse bookkeeping.
Specimen gen_apt_specimen(const SpecimenSpec& spec, const apt::RangeTable& table);

// stack used across the oracle datasets: NbN electrodes around an AlN
// barrier with trace O/Al contamination
std::vector<LayerSpec> default_trilayer(double bottom_nm = 90.0, double barrier_nm = 2.0,
                                        double top_nm = 40.0);

// -------------------------------------------------------------------
// Lattice image generator
// -------------------------------------------------------------------
struct LatticeComponent {
    double d_nm = 0.0;       // fringe period; must exceed 2*pixel_scale
    double angle_rad = 0.0;  // wave-vector direction
    double amplitude = 1.0;
    double phase_rad = 0.0;
};

struct LatticeImageSpec {
    std::vector<LatticeComponent> components;
    double noise_sigma = 0.0;
    double pixel_scale = 0.02; // nm/px
    std::size_t size = 256;
    std::uint64_t seed = 0;
};

fringe::GrayImage gen_lattice_image(const LatticeImageSpec& spec);

// -------------------------------------------------------------------
// Transport generators
// -------------------------------------------------------------------
struct IVSpec {
    double gap_mV = 4.5;
    double rn_MOhm = 9.0;
    double smear_mV = 0.3;        // width of the gap-edge step
    double leakage_MOhm = 1e4;    // subgap resistance
    double noise_pA = 0.0;
    double v_min_mV = -10.0, v_max_mV = 10.0, v_step_mV = 0.025;
    double supercurrent_step_pA = 0.0; // current jump across V = 0
    std::uint64_t seed = 0;
};

// I(V) = V/leak + (V/Rn - V/leak) * step((|V| - gap)/smear) plus the
// optional zero-bias step; antisymmetric at zero noise by construction.
transport::IVTrace gen_iv(const IVSpec& spec);

struct RASpec {
    double ra_MOhm_um2 = 558.5;
    std::vector<double> areas_um2;
    double noise_frac = 0.0;
    std::uint64_t seed = 0;
};

transport::RAVector gen_ra(const RASpec& spec);

} // namespace phaseprobe::synth
