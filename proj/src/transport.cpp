#include "phaseprobe/transport.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "phaseprobe/errors.hpp"
#include "phaseprobe/stats_core.hpp"

namespace phaseprobe::transport {

namespace {

// two-column numeric CSV; '#' comments and an alphabetic header line are
// tolerated, separators are commas or whitespace
std::vector<std::pair<double, double>> load_two_column(std::istream& in,
                                                       const char* what) {
    std::vector<std::pair<double, double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream iss(line);
        double a = 0.0, b = 0.0;
        if (!(iss >> a)) {
            std::string word;
            std::istringstream probe(line);
            if (probe >> word && std::isalpha(static_cast<unsigned char>(word[0])))
                continue; // header
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            throw ParseError(std::string(what) + ": malformed line: " + line);
        }
        if (!(iss >> b)) throw ParseError(std::string(what) + ": missing second column: " + line);
        rows.emplace_back(a, b);
    }
    return rows;
}

struct LineFit {
    double intercept = 0.0;
    double slope = 0.0;
};

LineFit fit_line(std::span<const double> x, std::span<const double> y) {
    const auto n = static_cast<double>(x.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    const double denom = n * sxx - sx * sx;
    LineFit f;
    if (std::abs(denom) < 1e-300) {
        f.slope = 0.0;
        f.intercept = sy / n;
        return f;
    }
    f.slope = (n * sxy - sx * sy) / denom;
    f.intercept = (sy - f.slope * sx) / n;
    return f;
}

} // namespace

void IVTrace::validate() const {
    if (bias_mV.size() != current_pA.size())
        throw ValidationError("iv trace: bias/current column length mismatch");
    if (bias_mV.size() < 2) throw ValidationError("iv trace: need at least 2 points");
    for (std::size_t i = 0; i < bias_mV.size(); ++i) {
        if (!std::isfinite(bias_mV[i]) || !std::isfinite(current_pA[i]))
            throw ValidationError("iv trace: non-finite value at row " + std::to_string(i));
        if (i > 0 && !(bias_mV[i] > bias_mV[i - 1]))
            throw ValidationError("iv trace: bias must be strictly increasing (row " +
                                  std::to_string(i) + ")");
    }
}

IVTrace load_iv_csv(std::istream& in) {
    IVTrace t;
    for (const auto& [v, i] : load_two_column(in, "iv csv")) {
        t.bias_mV.push_back(v);
        t.current_pA.push_back(i);
    }
    t.validate();
    return t;
}

IVTrace read_iv_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open IV trace: " + path);
    return load_iv_csv(in);
}

RAVector load_ra_csv(std::istream& in) {
    RAVector v;
    for (const auto& [a, r] : load_two_column(in, "ra csv")) {
        if (!(a > 0.0) || !(r > 0.0))
            throw ValidationError("ra csv: areas and resistances must be positive");
        v.push_back({a, r});
    }
    return v;
}

RAVector read_ra_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open RA table: " + path);
    return load_ra_csv(in);
}

RaFit fit_ra(const RAVector& points) {
    if (points.size() < 2) throw AnalysisError("fit_ra: need at least 2 points");
    double num = 0.0, den = 0.0;
    for (const RAPoint& p : points) {
        const double x = 1.0 / p.area_um2;
        num += p.resistance_MOhm * x;
        den += x * x;
    }
    RaFit f;
    f.n_points = points.size();
    f.ra_MOhm_um2 = num / den;

    // Heteroscedasticity-robust residual variance with leverage correction
    // (HC3): multiplicative device noise concentrates residuals at small
    // areas, and the smallest area can carry most of the fit weight, which
    // shrinks its fitted residual by (1 - h).
    double weighted_ss = 0.0;
    for (const RAPoint& p : points) {
        const double x = 1.0 / p.area_um2;
        const double r = p.resistance_MOhm - f.ra_MOhm_um2 / p.area_um2;
        const double leverage = x * x / den;
        const double shrink = std::max(1e-12, 1.0 - leverage);
        weighted_ss += x * x * (r / shrink) * (r / shrink);
    }
    f.stderr_MOhm_um2 = std::sqrt(weighted_ss) / den;
    return f;
}

// ---------------------------------------------------------------------
// I-V analysis
// ---------------------------------------------------------------------

namespace {

constexpr double kGapContrastMin = 0.2; // dI/dV spread below this reads as ohmic

// dI/dV by local quadratic least squares over `window` points centered at i.
double local_derivative(const IVTrace& t, std::size_t i, int window) {
    const int half = window / 2;
    const auto lo = static_cast<std::size_t>(static_cast<int>(i) - half);
    const double vc = t.bias_mV[i];

    // normal equations for c0 + c1*dv + c2*dv^2
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0;
    double t0 = 0, t1 = 0, t2 = 0;
    for (int k = 0; k < window; ++k) {
        const std::size_t idx = lo + static_cast<std::size_t>(k);
        const double dv = t.bias_mV[idx] - vc;
        const double y = t.current_pA[idx];
        const double dv2 = dv * dv;
        s0 += 1.0;
        s1 += dv;
        s2 += dv2;
        s3 += dv2 * dv;
        s4 += dv2 * dv2;
        t0 += y;
        t1 += y * dv;
        t2 += y * dv2;
    }
    // Cramer's rule on the 3x3 system
    const double d = s0 * (s2 * s4 - s3 * s3) - s1 * (s1 * s4 - s3 * s2) +
                     s2 * (s1 * s3 - s2 * s2);
    if (std::abs(d) < 1e-300) return 0.0;
    const double d1 = s0 * (t1 * s4 - t2 * s3) - t0 * (s1 * s4 - s3 * s2) +
                      s2 * (s1 * t2 - s2 * t1);
    return d1 / d;
}

} // namespace

IVSummary analyze_iv(const IVTrace& trace, double area_um2, const IVConfig& config) {
    trace.validate();
    if (!(area_um2 > 0.0)) throw AnalysisError("analyze_iv: area must be positive");
    if (config.smooth_points < 3 || config.smooth_points % 2 == 0)
        throw AnalysisError("analyze_iv: smooth_points must be odd and >= 3");

    const std::size_t n = trace.bias_mV.size();
    const double v_lo = trace.bias_mV.front();
    const double v_hi = trace.bias_mV.back();
    if (v_lo > -config.high_bias_mV || v_hi < config.high_bias_mV)
        throw AnalysisError("analyze_iv: sweep does not span the high-bias fit band");

    IVSummary s;

    // normal-state resistance from the high-bias band, both branches pooled
    {
        std::vector<double> x, y;
        std::size_t n_neg = 0, n_pos = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (std::abs(trace.bias_mV[i]) < config.high_bias_mV) continue;
            x.push_back(trace.bias_mV[i]);
            y.push_back(trace.current_pA[i]);
            (trace.bias_mV[i] < 0 ? n_neg : n_pos) += 1;
        }
        if (n_neg == 0 || n_pos == 0 || x.size() < 2)
            throw AnalysisError("analyze_iv: high-bias fit band is empty on one side");
        const LineFit f = fit_line(x, y);
        if (!(f.slope > 0.0))
            throw AnalysisError("analyze_iv: non-positive high-bias conductance");
        s.rn_MOhm = 1000.0 / f.slope;
    }

    // Subgap band, fitted per branch with a small exclusion zone around
    // zero: a zero-bias current step then lands in the intercepts instead
    // of corrupting the slope.
    LineFit subgap_pos, subgap_neg;
    double subgap_slope = 0.0;
    std::vector<double> subgap_resid;
    {
        std::vector<double> xp, yp, xn, yn;
        for (std::size_t i = 0; i < n; ++i) {
            const double v = trace.bias_mV[i];
            if (std::abs(v) > config.subgap_band_mV ||
                std::abs(v) < config.zero_exclusion_mV)
                continue;
            if (v > 0.0) {
                xp.push_back(v);
                yp.push_back(trace.current_pA[i]);
            } else {
                xn.push_back(v);
                yn.push_back(trace.current_pA[i]);
            }
        }
        if (xp.size() < 2 || xn.size() < 2)
            throw AnalysisError("analyze_iv: subgap fit band is empty on one side");
        subgap_pos = fit_line(xp, yp);
        subgap_neg = fit_line(xn, yn);
        subgap_slope = (subgap_pos.slope + subgap_neg.slope) / 2.0;
        s.subgap_r_MOhm = subgap_slope > 1e-300
                              ? 1000.0 / subgap_slope
                              : std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < xp.size(); ++i)
            subgap_resid.push_back(
                std::abs(yp[i] - subgap_pos.intercept - subgap_pos.slope * xp[i]));
        for (std::size_t i = 0; i < xn.size(); ++i)
            subgap_resid.push_back(
                std::abs(yn[i] - subgap_neg.intercept - subgap_neg.slope * xn[i]));
    }

    // noise floor from subgap residuals (MAD), unless configured
    {
        if (config.noise_floor_pA >= 0.0) {
            s.noise_floor_pA = config.noise_floor_pA;
        } else {
            double max_i = 0.0;
            for (double c : trace.current_pA) max_i = std::max(max_i, std::abs(c));
            s.noise_floor_pA =
                std::max({stats::median(subgap_resid) * 1.4826, 1e-9 * max_i, 1e-12});
        }
    }

    // smoothed dI/dV; full windows only
    const int half = config.smooth_points / 2;
    std::vector<std::size_t> didv_idx;
    std::vector<double> didv;
    for (std::size_t i = static_cast<std::size_t>(half); i + static_cast<std::size_t>(half) < n;
         ++i) {
        didv_idx.push_back(i);
        didv.push_back(local_derivative(trace, i, config.smooth_points));
    }
    if (didv.empty()) throw AnalysisError("analyze_iv: trace shorter than smoothing window");

    // gap = bias of the conductance peak on the positive branch
    {
        double best = -std::numeric_limits<double>::infinity();
        double worst = std::numeric_limits<double>::infinity();
        std::size_t best_k = 0;
        bool any = false;
        for (std::size_t k = 0; k < didv.size(); ++k) {
            if (trace.bias_mV[didv_idx[k]] <= 0.0) continue;
            any = true;
            worst = std::min(worst, didv[k]);
            if (didv[k] > best) {
                best = didv[k];
                best_k = k;
            }
        }
        if (any && best > 0.0 && (best - worst) / best > kGapContrastMin) {
            s.gap_detected = true;
            double v = trace.bias_mV[didv_idx[best_k]];
            // parabolic vertex through the neighboring conductance samples
            if (best_k > 0 && best_k + 1 < didv.size()) {
                const double x0 = trace.bias_mV[didv_idx[best_k - 1]];
                const double x1 = trace.bias_mV[didv_idx[best_k]];
                const double x2 = trace.bias_mV[didv_idx[best_k + 1]];
                const double y0 = didv[best_k - 1], y1 = didv[best_k], y2 = didv[best_k + 1];
                const double d0 = (y1 - y0) / (x1 - x0);
                const double d1 = (y2 - y1) / (x2 - x1);
                const double curv = (d1 - d0) / (x2 - x0);
                if (curv < 0.0) {
                    const double vertex = (x0 + x1) / 2.0 - d0 / (2.0 * curv);
                    if (vertex >= x0 && vertex <= x2) v = vertex;
                }
            }
            s.gap_voltage_mV = v;
        } else {
            s.gap_voltage_mV = std::numeric_limits<double>::quiet_NaN();
        }
    }

    // onset: positive-branch rise of the quasiparticle step between the
    // subgap line and the normal-state line
    {
        s.onset_lo_mV = std::numeric_limits<double>::quiet_NaN();
        s.onset_hi_mV = std::numeric_limits<double>::quiet_NaN();
        if (s.gap_detected) {
            // normal-state line recomputed here for the interpolation
            std::vector<double> x, y;
            for (std::size_t i = 0; i < n; ++i) {
                if (std::abs(trace.bias_mV[i]) < config.high_bias_mV) continue;
                x.push_back(trace.bias_mV[i]);
                y.push_back(trace.current_pA[i]);
            }
            const LineFit fn = fit_line(x, y);
            double prev_r = 0.0, prev_v = 0.0;
            bool have_prev = false;
            for (std::size_t i = 0; i < n; ++i) {
                const double v = trace.bias_mV[i];
                if (v <= 0.0) continue;
                const double base = subgap_pos.intercept + subgap_slope * v;
                const double top = fn.intercept + fn.slope * v;
                if (top - base <= 0.0) continue;
                const double r = (trace.current_pA[i] - base) / (top - base);
                if (have_prev) {
                    auto cross = [&](double level) {
                        const double f = (level - prev_r) / (r - prev_r);
                        return prev_v + f * (v - prev_v);
                    };
                    if (std::isnan(s.onset_lo_mV) && prev_r < 0.05 && r >= 0.05)
                        s.onset_lo_mV = cross(0.05);
                    if (std::isnan(s.onset_hi_mV) && prev_r < 0.95 && r >= 0.95)
                        s.onset_hi_mV = cross(0.95);
                } else if (r >= 0.05) {
                    s.onset_lo_mV = v;
                }
                prev_r = r;
                prev_v = v;
                have_prev = true;
            }
        }
    }

    // zero-bias step = intercept discontinuity between the subgap branches
    {
        s.zero_bias_step_pA = subgap_pos.intercept - subgap_neg.intercept;
        const double amplitude = std::abs(s.zero_bias_step_pA) / 2.0;
        s.supercurrent_detected = amplitude > config.supercurrent_sigma * s.noise_floor_pA;
        if (s.supercurrent_detected) {
            s.jc_pA_per_um2 = std::abs(s.zero_bias_step_pA) / area_um2;
            s.jc_is_bound = false;
        } else {
            s.jc_pA_per_um2 =
                2.0 * config.supercurrent_sigma * s.noise_floor_pA / area_um2;
            s.jc_is_bound = true;
        }
    }

    return s;
}

} // namespace phaseprobe::transport
