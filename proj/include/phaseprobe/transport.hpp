#pragma once
#include <istream>
#include <string>
#include <vector>

namespace phaseprobe::transport {

// Units throughout: bias mV, current pA, area um^2, resistance MOhm
// (1 mV / 1 pA = 1000 MOhm).

struct IVTrace {
    std::vector<double> bias_mV;    // strictly increasing
    std::vector<double> current_pA;

    void validate() const; // throws ValidationError on contract breaks
};

IVTrace load_iv_csv(std::istream& in);
IVTrace read_iv_csv_file(const std::string& path);

struct RAPoint {
    double area_um2 = 0.0;
    double resistance_MOhm = 0.0;
};
using RAVector = std::vector<RAPoint>;

RAVector load_ra_csv(std::istream& in);
RAVector read_ra_csv_file(const std::string& path);

// -------------------------------------------------------------------
// R*A product
// -------------------------------------------------------------------
struct RaFit {
    double ra_MOhm_um2 = 0.0;
    double stderr_MOhm_um2 = 0.0;
    std::size_t n_points = 0;
};

// Zero-intercept least squares of R against 1/A:
// C = sum(R_i/A_i) / sum(1/A_i^2), standard error from residuals.
RaFit fit_ra(const RAVector& points);

// -------------------------------------------------------------------
// I-V characterization
// -------------------------------------------------------------------
struct IVConfig {
    double high_bias_mV = 6.0;   // |V| >= this defines the normal-state band
    double subgap_band_mV = 1.0; // |V| <= this defines the subgap band
    // samples with |V| below this stay out of the subgap fits, so a
    // zero-bias step shows up in the branch intercepts, not the slope
    double zero_exclusion_mV = 0.1;
    int smooth_points = 7;             // local quadratic window for dI/dV
    double noise_floor_pA = -1.0;      // < 0: estimate from subgap residuals
    double supercurrent_sigma = 5.0;   // detection threshold in noise floors
};

struct IVSummary {
    bool gap_detected = false;
    double gap_voltage_mV = 0.0; // bias of max smoothed dI/dV, positive branch
    double onset_lo_mV = 0.0;    // 5% of the gap-edge current rise
    double onset_hi_mV = 0.0;    // 95%
    double rn_MOhm = 0.0;
    double subgap_r_MOhm = 0.0;
    bool supercurrent_detected = false;
    double zero_bias_step_pA = 0.0;    // background-corrected current jump across V=0
    double jc_pA_per_um2 = 0.0;        // measured when detected, else the detection bound
    bool jc_is_bound = true;
    double noise_floor_pA = 0.0;
};

IVSummary analyze_iv(const IVTrace& trace, double area_um2, const IVConfig& config = {});

} // namespace phaseprobe::transport
