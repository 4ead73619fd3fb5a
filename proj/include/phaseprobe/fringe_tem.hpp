#pragma once
#include <complex>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "phaseprobe/rng.hpp"
#include "phaseprobe/stats_core.hpp"

namespace phaseprobe::fringe {

struct GrayImage {
    std::size_t width = 0, height = 0;
    double pixel_scale = 1.0; // nm per pixel
    std::vector<double> pixels; // row-major

    double at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
    double& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
    double sample_bilinear(double x, double y) const;
};

// raw little-endian float32 pixels with a JSON sidecar
// (<path>.json: width, height, pixel_scale_nm)
GrayImage read_raw_image(const std::string& raw_path);
void write_raw_image(const GrayImage& image, const std::string& raw_path);

// -------------------------------------------------------------------
// Window selection
// -------------------------------------------------------------------
struct FringeWindow {
    std::size_t x0 = 0, y0 = 0; // px
    std::size_t side = 0;       // px, power of two
};

// smallest power of two covering window_nm at this pixel scale
std::size_t window_side_px(double pixel_scale, double window_nm = 4.5);

std::vector<FringeWindow> random_windows(const GrayImage& image, std::size_t count,
                                         Rng& rng, double window_nm = 4.5);

GrayImage crop(const GrayImage& image, const FringeWindow& window);

// -------------------------------------------------------------------
// Spectra
// -------------------------------------------------------------------
struct Spectrum2d {
    std::size_t n = 0;        // square side
    double pixel_scale = 1.0; // nm/px of the source window
    std::vector<std::complex<double>> coeff; // DC-centered, row-major

    std::complex<double> at(std::size_t kx, std::size_t ky) const { return coeff[ky * n + kx]; }
    // spatial frequency of a shifted bin, cycles/nm
    double freq_of(std::size_t k) const {
        return (static_cast<double>(k) - static_cast<double>(n) / 2.0) /
               (static_cast<double>(n) * pixel_scale);
    }
};

// 2D DFT of a square window, zero-padded to a power of two, DC centered.
Spectrum2d fft2(const GrayImage& window);

struct Spot {
    double fx = 0.0, fy = 0.0; // cycles/nm
    double radius = 0.0;       // cycles/nm
};
struct SpotMask {
    std::vector<Spot> spots;
};

// Inverse transform of the spectrum restricted to the given spots. The
// mask must be symmetric under frequency negation so that the output is
// real.
GrayImage spot_filter_ifft(const Spectrum2d& spectrum, const SpotMask& mask);

// Largest non-DC coefficient when it clears 3x the non-DC spectral
// median; frequencies are parabolically refined per axis.
struct DominantSpot {
    double fx = 0.0, fy = 0.0;
    double magnitude = 0.0;
};
std::optional<DominantSpot> dominant_spot(const Spectrum2d& spectrum);

// -------------------------------------------------------------------
// Profiles and envelopes
// -------------------------------------------------------------------
struct LineProfile {
    std::vector<double> position_nm; // centered on the window midpoint
    std::vector<double> intensity;
    double step_nm = 0.0;
};

// Bilinear samples along the central line in the given direction, one
// pixel apart.
LineProfile line_profile(const GrayImage& window, double dir_x, double dir_y);

// Moving-average smoothing, upper envelope by linear interpolation
// between local maxima, resampled to feature_len points.
std::vector<double> envelope(const LineProfile& profile, std::size_t smooth_window,
                             std::size_t feature_len = 64);

double envelope_energy(std::span<const double> env); // mean square

// -------------------------------------------------------------------
// d-spacing
// -------------------------------------------------------------------
// 1/f* of the dominant profile-spectrum peak (parabola-refined); throws
// NoFringeError when no peak clears 3x the spectral median.
double estimate_d(const LineProfile& profile);
double estimate_d(const Spectrum2d& spectrum);

double profile_peak_amplitude(const LineProfile& profile); // of the dominant component

// -------------------------------------------------------------------
// Window clustering
// -------------------------------------------------------------------
struct DSpacingSample {
    std::size_t window_id = 0;
    std::size_t x0_px = 0, y0_px = 0;
    double d_nm = 0.0;
    double peak_amplitude = 0.0;
    std::vector<double> envelope;
    double envelope_energy = 0.0;
    int cluster = -1; // -1 = rejected / unassigned
};

struct ClusterWindowsResult {
    std::vector<DSpacingSample> samples; // labels filled in; rejected stay -1
    std::vector<std::size_t> rejected_ids;
    std::vector<stats::BoxStats> cluster_d_stats; // one per cluster
};

// Rejects samples below the envelope-energy percentile or with d outside
// [clip_lo, clip_hi], then k-means on z-scored [d, envelope] features.
ClusterWindowsResult cluster_windows(std::vector<DSpacingSample> samples, std::size_t k,
                                     double energy_percentile, double clip_lo_nm,
                                     double clip_hi_nm, std::uint64_t seed);

} // namespace phaseprobe::fringe
