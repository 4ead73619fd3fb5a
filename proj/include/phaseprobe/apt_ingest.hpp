#pragma once
#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace phaseprobe::apt {

// One reconstructed detection event. Float-backed fields mirror the
// on-disk 32-bit encoding so a write/parse round trip is bit exact.
struct IonEvent {
    float x = 0.0f, y = 0.0f, z = 0.0f; // reconstructed position, nm
    float mz = 0.0f;                    // mass-to-charge, Da
    float tof = 0.0f;                   // time of flight, ns
    float v_dc = 0.0f;                  // standing voltage, kV
    float det_x = 0.0f, det_y = 0.0f;   // detector hit, mm
    std::uint32_t pulse_delta = 0;      // pulses since previous event
    std::uint32_t multiplicity = 1;     // ions recorded on this pulse
};

// Record layout: 9 big-endian float32 (x y z mz tof v_dc det_x det_y
// reserved) followed by 2 big-endian uint32 (pulse_delta multiplicity).
// The reserved float carries pulse_delta recast to float.
inline constexpr std::size_t kEposRecordBytes = 44;

std::vector<IonEvent> parse_epos(std::span<const std::byte> bytes);
std::vector<std::byte> write_epos(std::span<const IonEvent> events);

std::vector<IonEvent> read_epos_file(const std::string& path);
void write_epos_file(std::span<const IonEvent> events, const std::string& path);

// -------------------------------------------------------------------
// Mass-spectrum ranging
// -------------------------------------------------------------------

struct SpeciesRange {
    std::string name;    // built from the composition, e.g. "NbN", "Nb2N2"
    double mz_low = 0.0; // window is half-open: [mz_low, mz_high)
    double mz_high = 0.0;
    std::vector<std::pair<std::string, int>> composition; // element -> atom count
    std::string pair_tag; // empty when untagged

    int atoms_of(std::string_view element) const;
    int total_atoms() const;
};

inline constexpr int kUnranged = -1;

struct RangeTable {
    std::vector<SpeciesRange> ranges;  // sorted by mz_low, pairwise disjoint
    std::vector<std::string> elements; // declared in the [Ions] section
    std::vector<std::string> warnings; // ignored keys and similar

    // index of the window containing mz, or kUnranged
    int find(double mz) const;
    int index_of_name(std::string_view name) const;  // kUnranged if absent
    int index_of_tag(std::string_view tag) const;    // first match, kUnranged if absent
};

// Line-oriented ranging document:
//   [Ions]    section with Ion<i>=<Symbol>
//   [Ranges]  section with Range<i>=<low> <high> <El>:<n> ... [tag=<TAG>]
//   '#' starts a comment. Unknown keys are kept as warnings.
RangeTable parse_range_file(std::string_view text);
RangeTable read_range_file(const std::string& path);

int assign_species(const IonEvent& event, const RangeTable& table);
std::vector<int> assign_species(std::span<const IonEvent> events, const RangeTable& table);

// Built-in monoisotopic masses (Da) for composition arithmetic; unknown
// symbols yield nullopt.
std::optional<double> isotope_mass(std::string_view element);
std::optional<double> nominal_mass(const SpeciesRange& range);

} // namespace phaseprobe::apt
