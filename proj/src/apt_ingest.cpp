#include "phaseprobe/apt_ingest.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "phaseprobe/errors.hpp"

namespace phaseprobe::apt {

namespace {

std::uint32_t load_be_u32(const std::byte* p) {
    return (std::uint32_t(std::to_integer<std::uint8_t>(p[0])) << 24) |
           (std::uint32_t(std::to_integer<std::uint8_t>(p[1])) << 16) |
           (std::uint32_t(std::to_integer<std::uint8_t>(p[2])) << 8) |
           std::uint32_t(std::to_integer<std::uint8_t>(p[3]));
}

float load_be_f32(const std::byte* p) {
    return std::bit_cast<float>(load_be_u32(p));
}

void store_be_u32(std::uint32_t v, std::byte* p) {
    p[0] = std::byte(v >> 24);
    p[1] = std::byte(v >> 16);
    p[2] = std::byte(v >> 8);
    p[3] = std::byte(v);
}

void store_be_f32(float v, std::byte* p) {
    store_be_u32(std::bit_cast<std::uint32_t>(v), p);
}

} // namespace

std::vector<IonEvent> parse_epos(std::span<const std::byte> bytes) {
    if (bytes.size() % kEposRecordBytes != 0) {
        const std::size_t offset = bytes.size() - bytes.size() % kEposRecordBytes;
        throw ParseError("truncated record at byte offset " + std::to_string(offset) +
                         " (stream length " + std::to_string(bytes.size()) +
                         " is not a multiple of " + std::to_string(kEposRecordBytes) + ")");
    }

    const std::size_t count = bytes.size() / kEposRecordBytes;
    std::vector<IonEvent> events;
    events.reserve(count);

    for (std::size_t i = 0; i < count; ++i) {
        const std::byte* rec = bytes.data() + i * kEposRecordBytes;
        std::array<float, 9> f{};
        for (std::size_t j = 0; j < f.size(); ++j) f[j] = load_be_f32(rec + 4 * j);
        for (float v : f) {
            if (!std::isfinite(v))
                throw ParseError("non-finite float in record " + std::to_string(i));
        }
        IonEvent e;
        e.x = f[0];
        e.y = f[1];
        e.z = f[2];
        e.mz = f[3];
        e.tof = f[4];
        e.v_dc = f[5];
        e.det_x = f[6];
        e.det_y = f[7];
        // f[8] is the reserved float; the authoritative pulse_delta follows as uint32
        e.pulse_delta = load_be_u32(rec + 36);
        e.multiplicity = load_be_u32(rec + 40);
        events.push_back(e);
    }
    return events;
}

std::vector<std::byte> write_epos(std::span<const IonEvent> events) {
    std::vector<std::byte> out(events.size() * kEposRecordBytes);
    for (std::size_t i = 0; i < events.size(); ++i) {
        const IonEvent& e = events[i];
        std::byte* rec = out.data() + i * kEposRecordBytes;
        const std::array<float, 9> f = {e.x,     e.y,     e.z,     e.mz,   e.tof,
                                        e.v_dc,  e.det_x, e.det_y,
                                        static_cast<float>(e.pulse_delta)};
        for (std::size_t j = 0; j < f.size(); ++j) store_be_f32(f[j], rec + 4 * j);
        store_be_u32(e.pulse_delta, rec + 36);
        store_be_u32(e.multiplicity, rec + 40);
    }
    return out;
}

std::vector<IonEvent> read_epos_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open EPOS file: " + path);
    std::vector<char> raw((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
    return parse_epos(std::as_bytes(std::span<const char>(raw)));
}

void write_epos_file(std::span<const IonEvent> events, const std::string& path) {
    const std::vector<std::byte> bytes = write_epos(events);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write EPOS file: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------------
// Ranging
// ---------------------------------------------------------------------

int SpeciesRange::atoms_of(std::string_view element) const {
    for (const auto& [el, n] : composition)
        if (el == element) return n;
    return 0;
}

int SpeciesRange::total_atoms() const {
    int total = 0;
    for (const auto& [el, n] : composition) total += n;
    return total;
}

int RangeTable::find(double mz) const {
    // ranges sorted by mz_low; candidate is the last window starting at or below mz
    auto it = std::upper_bound(ranges.begin(), ranges.end(), mz,
                               [](double v, const SpeciesRange& r) { return v < r.mz_low; });
    if (it == ranges.begin()) return kUnranged;
    --it;
    if (mz >= it->mz_low && mz < it->mz_high)
        return static_cast<int>(it - ranges.begin());
    return kUnranged;
}

int RangeTable::index_of_name(std::string_view name) const {
    for (std::size_t i = 0; i < ranges.size(); ++i)
        if (ranges[i].name == name) return static_cast<int>(i);
    return kUnranged;
}

int RangeTable::index_of_tag(std::string_view tag) const {
    for (std::size_t i = 0; i < ranges.size(); ++i)
        if (ranges[i].pair_tag == tag) return static_cast<int>(i);
    return kUnranged;
}

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

bool starts_with_key(const std::string& key, std::string_view prefix) {
    if (key.size() <= prefix.size()) return false;
    for (std::size_t i = 0; i < prefix.size(); ++i)
        if (std::tolower(static_cast<unsigned char>(key[i])) !=
            std::tolower(static_cast<unsigned char>(prefix[i])))
            return false;
    // remainder must be a number
    for (std::size_t i = prefix.size(); i < key.size(); ++i)
        if (!std::isdigit(static_cast<unsigned char>(key[i]))) return false;
    return true;
}

std::string species_name(const std::vector<std::pair<std::string, int>>& composition) {
    std::string name;
    for (const auto& [el, n] : composition) {
        name += el;
        if (n > 1) name += std::to_string(n);
    }
    return name;
}

SpeciesRange parse_range_value(const std::string& value, const std::string& key,
                               const std::vector<std::string>& declared) {
    std::istringstream iss(value);
    SpeciesRange r;
    if (!(iss >> r.mz_low >> r.mz_high))
        throw ValidationError(key + ": expected '<low> <high> <El>:<n> ...'");
    if (!(r.mz_low < r.mz_high))
        throw ValidationError(key + ": mz_low " + std::to_string(r.mz_low) +
                              " must be below mz_high " + std::to_string(r.mz_high));

    std::string tok;
    while (iss >> tok) {
        if (tok.rfind("tag=", 0) == 0) {
            r.pair_tag = tok.substr(4);
            continue;
        }
        const std::size_t colon = tok.find(':');
        if (colon == std::string::npos || colon == 0 || colon + 1 >= tok.size())
            throw ValidationError(key + ": malformed composition token '" + tok + "'");
        const std::string el = tok.substr(0, colon);
        int count = 0;
        try {
            count = std::stoi(tok.substr(colon + 1));
        } catch (const std::exception&) {
            throw ValidationError(key + ": malformed atom count in '" + tok + "'");
        }
        if (count < 1)
            throw ValidationError(key + ": atom count must be >= 1 in '" + tok + "'");
        if (std::find(declared.begin(), declared.end(), el) == declared.end())
            throw ValidationError(key + ": unknown element symbol '" + el +
                                  "' (not declared in [Ions])");
        bool merged = false;
        for (auto& [name, n] : r.composition) {
            if (name == el) {
                n += count;
                merged = true;
                break;
            }
        }
        if (!merged) r.composition.emplace_back(el, count);
    }
    if (r.composition.empty())
        throw ValidationError(key + ": range declares no composition");
    r.name = species_name(r.composition);
    return r;
}

} // namespace

RangeTable parse_range_file(std::string_view text) {
    RangeTable table;
    enum class Section { None, Ions, Ranges } section = Section::None;

    std::istringstream lines{std::string(text)};
    std::string raw;
    while (std::getline(lines, raw)) {
        const std::size_t hash = raw.find('#');
        if (hash != std::string::npos) raw.erase(hash);
        const std::string line = trim(raw);
        if (line.empty()) continue;

        if (line.front() == '[' && line.back() == ']') {
            const std::string name = lower(trim(line.substr(1, line.size() - 2)));
            if (name == "ions") {
                section = Section::Ions;
            } else if (name == "ranges") {
                section = Section::Ranges;
            } else {
                section = Section::None;
                table.warnings.push_back("ignored section [" + name + "]");
            }
            continue;
        }

        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            table.warnings.push_back("ignored line: " + line);
            continue;
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));

        if (section == Section::Ions && starts_with_key(key, "Ion")) {
            if (value.empty()) throw ValidationError(key + ": empty element symbol");
            if (std::find(table.elements.begin(), table.elements.end(), value) ==
                table.elements.end())
                table.elements.push_back(value);
        } else if (section == Section::Ranges && starts_with_key(key, "Range")) {
            table.ranges.push_back(parse_range_value(value, key, table.elements));
        } else {
            table.warnings.push_back("ignored key: " + key);
        }
    }

    std::stable_sort(table.ranges.begin(), table.ranges.end(),
                     [](const SpeciesRange& a, const SpeciesRange& b) {
                         return a.mz_low < b.mz_low;
                     });
    for (std::size_t i = 1; i < table.ranges.size(); ++i) {
        const SpeciesRange& prev = table.ranges[i - 1];
        const SpeciesRange& cur = table.ranges[i];
        if (cur.mz_low < prev.mz_high) {
            std::ostringstream msg;
            msg << "overlapping ranges: " << prev.name << " [" << prev.mz_low << ", "
                << prev.mz_high << ") and " << cur.name << " [" << cur.mz_low << ", "
                << cur.mz_high << ")";
            throw ValidationError(msg.str());
        }
    }
    return table;
}

RangeTable read_range_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open range file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_range_file(buf.str());
}

int assign_species(const IonEvent& event, const RangeTable& table) {
    return table.find(event.mz);
}

std::vector<int> assign_species(std::span<const IonEvent> events, const RangeTable& table) {
    std::vector<int> out;
    out.reserve(events.size());
    for (const IonEvent& e : events) out.push_back(table.find(e.mz));
    return out;
}

std::optional<double> isotope_mass(std::string_view element) {
    if (element == "Nb") return 92.906;
    if (element == "N") return 14.003;
    if (element == "Al") return 26.982;
    if (element == "O") return 15.999;
    return std::nullopt;
}

std::optional<double> nominal_mass(const SpeciesRange& range) {
    double total = 0.0;
    for (const auto& [el, n] : range.composition) {
        const auto m = isotope_mass(el);
        if (!m) return std::nullopt;
        total += *m * n;
    }
    return total;
}

} // namespace phaseprobe::apt
