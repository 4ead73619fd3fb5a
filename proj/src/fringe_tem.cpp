#include "phaseprobe/fringe_tem.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "phaseprobe/errors.hpp"
#include "phaseprobe/matrix.hpp"
#include "phaseprobe/ml_cluster.hpp"

namespace phaseprobe::fringe {

using json = nlohmann::json;

double GrayImage::sample_bilinear(double x, double y) const {
    const double cx = std::clamp(x, 0.0, static_cast<double>(width - 1));
    const double cy = std::clamp(y, 0.0, static_cast<double>(height - 1));
    const auto x0 = static_cast<std::size_t>(cx);
    const auto y0 = static_cast<std::size_t>(cy);
    const std::size_t x1 = std::min(x0 + 1, width - 1);
    const std::size_t y1 = std::min(y0 + 1, height - 1);
    const double fx = cx - static_cast<double>(x0);
    const double fy = cy - static_cast<double>(y0);
    const double top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    const double bot = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    return top * (1.0 - fy) + bot * fy;
}

GrayImage read_raw_image(const std::string& raw_path) {
    std::ifstream meta_in(raw_path + ".json");
    if (!meta_in) throw IoError("cannot open image sidecar: " + raw_path + ".json");
    json meta;
    try {
        meta = json::parse(meta_in);
    } catch (const json::exception& e) {
        throw ParseError("image sidecar: " + std::string(e.what()));
    }

    GrayImage img;
    img.width = meta.at("width").get<std::size_t>();
    img.height = meta.at("height").get<std::size_t>();
    img.pixel_scale = meta.at("pixel_scale_nm").get<double>();
    if (img.width == 0 || img.height == 0 || !(img.pixel_scale > 0.0))
        throw ValidationError("image sidecar: invalid dimensions or pixel scale");

    std::ifstream in(raw_path, std::ios::binary);
    if (!in) throw IoError("cannot open raw image: " + raw_path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    const std::size_t expected = img.width * img.height * sizeof(float);
    if (bytes.size() != expected)
        throw ParseError("raw image size mismatch: expected " + std::to_string(expected) +
                         " bytes, found " + std::to_string(bytes.size()));

    img.pixels.resize(img.width * img.height);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        float f;
        std::memcpy(&f, bytes.data() + i * sizeof(float), sizeof(float));
        if (!std::isfinite(f))
            throw ParseError("raw image: non-finite pixel at index " + std::to_string(i));
        img.pixels[i] = f;
    }
    return img;
}

void write_raw_image(const GrayImage& image, const std::string& raw_path) {
    {
        std::ofstream out(raw_path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write raw image: " + raw_path);
        for (double p : image.pixels) {
            const auto f = static_cast<float>(p);
            out.write(reinterpret_cast<const char*>(&f), sizeof(float));
        }
    }
    json meta = {{"width", image.width},
                 {"height", image.height},
                 {"pixel_scale_nm", image.pixel_scale}};
    std::ofstream meta_out(raw_path + ".json", std::ios::trunc);
    if (!meta_out) throw IoError("cannot write image sidecar: " + raw_path + ".json");
    meta_out << meta.dump(2) << "\n";
}

// ---------------------------------------------------------------------
// Windows
// ---------------------------------------------------------------------

std::size_t window_side_px(double pixel_scale, double window_nm) {
    if (!(pixel_scale > 0.0)) throw AnalysisError("window_side_px: pixel scale must be positive");
    const auto needed = static_cast<std::size_t>(std::ceil(window_nm / pixel_scale));
    return std::bit_ceil(std::max<std::size_t>(needed, 2));
}

std::vector<FringeWindow> random_windows(const GrayImage& image, std::size_t count,
                                         Rng& rng, double window_nm) {
    const std::size_t side = window_side_px(image.pixel_scale, window_nm);
    if (side > image.width || side > image.height)
        throw AnalysisError("random_windows: window side exceeds the image");
    std::vector<FringeWindow> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        FringeWindow w;
        w.side = side;
        w.x0 = rng.below(image.width - side + 1);
        w.y0 = rng.below(image.height - side + 1);
        out.push_back(w);
    }
    return out;
}

GrayImage crop(const GrayImage& image, const FringeWindow& window) {
    if (window.x0 + window.side > image.width || window.y0 + window.side > image.height)
        throw AnalysisError("crop: window extends past the image");
    GrayImage out;
    out.width = out.height = window.side;
    out.pixel_scale = image.pixel_scale;
    out.pixels.resize(window.side * window.side);
    for (std::size_t y = 0; y < window.side; ++y)
        for (std::size_t x = 0; x < window.side; ++x)
            out.at(x, y) = image.at(window.x0 + x, window.y0 + y);
    return out;
}

// ---------------------------------------------------------------------
// FFT
// ---------------------------------------------------------------------

namespace {

// iterative radix-2 Cooley-Tukey; size must be a power of two
void fft_inplace(std::span<std::complex<double>> a, bool inverse) {
    const std::size_t n = a.size();
    if (n < 2) return;

    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }

    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double angle = (inverse ? 2.0 : -2.0) * std::numbers::pi /
                             static_cast<double>(len);
        const std::complex<double> wlen(std::cos(angle), std::sin(angle));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                const std::complex<double> u = a[i + j];
                const std::complex<double> v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
    if (inverse) {
        for (auto& c : a) c /= static_cast<double>(n);
    }
}

void fft2_inplace(std::vector<std::complex<double>>& data, std::size_t n, bool inverse) {
    std::vector<std::complex<double>> col(n);
    for (std::size_t y = 0; y < n; ++y)
        fft_inplace({data.data() + y * n, n}, inverse);
    for (std::size_t x = 0; x < n; ++x) {
        for (std::size_t y = 0; y < n; ++y) col[y] = data[y * n + x];
        fft_inplace(col, inverse);
        for (std::size_t y = 0; y < n; ++y) data[y * n + x] = col[y];
    }
}

// swap quadrants so DC sits at (n/2, n/2); self-inverse for even n
void fftshift2(std::vector<std::complex<double>>& data, std::size_t n) {
    const std::size_t h = n / 2;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < n; ++x)
            std::swap(data[y * n + x], data[((y + h) % n) * n + (x + h) % n]);
}

std::size_t bit_ceil_sz(std::size_t v) { return std::bit_ceil(std::max<std::size_t>(v, 1)); }

} // namespace

Spectrum2d fft2(const GrayImage& window) {
    if (window.width != window.height)
        throw AnalysisError("fft2: window must be square");
    const std::size_t n = bit_ceil_sz(window.width);

    Spectrum2d s;
    s.n = n;
    s.pixel_scale = window.pixel_scale;
    s.coeff.assign(n * n, {0.0, 0.0});
    for (std::size_t y = 0; y < window.height; ++y)
        for (std::size_t x = 0; x < window.width; ++x)
            s.coeff[y * n + x] = {window.at(x, y), 0.0};

    fft2_inplace(s.coeff, n, false);
    fftshift2(s.coeff, n);
    return s;
}

GrayImage spot_filter_ifft(const Spectrum2d& spectrum, const SpotMask& mask) {
    const std::size_t n = spectrum.n;
    const double f_tol = 0.5 / (static_cast<double>(n) * spectrum.pixel_scale);

    // every spot needs its negated twin
    for (const Spot& a : mask.spots) {
        bool matched = false;
        for (const Spot& b : mask.spots) {
            if (std::abs(a.fx + b.fx) <= f_tol && std::abs(a.fy + b.fy) <= f_tol &&
                std::abs(a.radius - b.radius) <= f_tol) {
                matched = true;
                break;
            }
        }
        if (!matched)
            throw ValidationError("spot_filter_ifft: spot mask is not symmetric under negation");
    }

    std::vector<std::complex<double>> kept(n * n, {0.0, 0.0});
    for (std::size_t ky = 0; ky < n; ++ky) {
        const double fy = spectrum.freq_of(ky);
        for (std::size_t kx = 0; kx < n; ++kx) {
            const double fx = spectrum.freq_of(kx);
            for (const Spot& spot : mask.spots) {
                const double dx = fx - spot.fx;
                const double dy = fy - spot.fy;
                if (dx * dx + dy * dy <= spot.radius * spot.radius) {
                    kept[ky * n + kx] = spectrum.at(kx, ky);
                    break;
                }
            }
        }
    }

    fftshift2(kept, n);
    fft2_inplace(kept, n, true);

    double norm = 0.0, imag = 0.0;
    for (const auto& c : kept) {
        norm += std::norm(c);
        imag += c.imag() * c.imag();
    }
    if (norm > 0.0 && std::sqrt(imag) > 1e-8 * std::sqrt(norm))
        throw AnalysisError("spot_filter_ifft: imaginary residue exceeds tolerance");

    GrayImage out;
    out.width = out.height = n;
    out.pixel_scale = spectrum.pixel_scale;
    out.pixels.resize(n * n);
    for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = kept[i].real();
    return out;
}

std::optional<DominantSpot> dominant_spot(const Spectrum2d& spectrum) {
    const std::size_t n = spectrum.n;
    const std::size_t c = n / 2;
    constexpr double kDcExclusionBins = 2.0;

    std::vector<double> mags;
    mags.reserve(n * n);
    double best = 0.0;
    std::size_t bx = 0, by = 0;
    for (std::size_t ky = 0; ky < n; ++ky) {
        for (std::size_t kx = 0; kx < n; ++kx) {
            const double du = static_cast<double>(kx) - static_cast<double>(c);
            const double dv = static_cast<double>(ky) - static_cast<double>(c);
            if (du * du + dv * dv <= kDcExclusionBins * kDcExclusionBins) continue;
            const double m = std::abs(spectrum.at(kx, ky));
            mags.push_back(m);
            if (m > best) {
                best = m;
                bx = kx;
                by = ky;
            }
        }
    }
    if (mags.empty()) return std::nullopt;
    const double med = stats::median(mags);
    if (!(best >= 3.0 * med) || best <= 0.0) return std::nullopt;

    auto mag_at = [&](std::size_t kx, std::size_t ky) {
        return std::abs(spectrum.at(kx, ky));
    };
    auto refine = [&](double m0, double m1, double m2) {
        const double denom = m0 - 2.0 * m1 + m2;
        if (std::abs(denom) < 1e-300) return 0.0;
        return std::clamp(0.5 * (m0 - m2) / denom, -0.5, 0.5);
    };

    double kx_ref = static_cast<double>(bx);
    double ky_ref = static_cast<double>(by);
    if (bx > 0 && bx + 1 < n)
        kx_ref += refine(mag_at(bx - 1, by), best, mag_at(bx + 1, by));
    if (by > 0 && by + 1 < n)
        ky_ref += refine(mag_at(bx, by - 1), best, mag_at(bx, by + 1));

    DominantSpot spot;
    const double scale = static_cast<double>(n) * spectrum.pixel_scale;
    spot.fx = (kx_ref - static_cast<double>(c)) / scale;
    spot.fy = (ky_ref - static_cast<double>(c)) / scale;
    spot.magnitude = best;
    return spot;
}

// ---------------------------------------------------------------------
// Line profiles
// ---------------------------------------------------------------------

LineProfile line_profile(const GrayImage& window, double dir_x, double dir_y) {
    const double len = std::hypot(dir_x, dir_y);
    if (!(len > 0.0)) throw AnalysisError("line_profile: zero direction");
    const double ux = dir_x / len, uy = dir_y / len;

    // integer center: axis-aligned profiles then sample exact pixels
    // instead of bilinear blends, which would low-pass the noise floor
    const double cx = std::floor((static_cast<double>(window.width) - 1.0) / 2.0);
    const double cy = std::floor((static_cast<double>(window.height) - 1.0) / 2.0);

    // largest |t| keeping both coordinates inside the window
    double t_max = std::numeric_limits<double>::infinity();
    if (std::abs(ux) > 1e-12)
        t_max = std::min(t_max, std::min(cx / std::abs(ux),
                                         (static_cast<double>(window.width) - 1.0 - cx) /
                                             std::abs(ux)));
    if (std::abs(uy) > 1e-12)
        t_max = std::min(t_max, std::min(cy / std::abs(uy),
                                         (static_cast<double>(window.height) - 1.0 - cy) /
                                             std::abs(uy)));

    const auto steps = static_cast<std::size_t>(std::floor(t_max));
    LineProfile p;
    p.step_nm = window.pixel_scale;
    p.position_nm.reserve(2 * steps + 1);
    p.intensity.reserve(2 * steps + 1);
    for (std::ptrdiff_t t = -static_cast<std::ptrdiff_t>(steps);
         t <= static_cast<std::ptrdiff_t>(steps); ++t) {
        const auto td = static_cast<double>(t);
        p.position_nm.push_back(td * window.pixel_scale);
        p.intensity.push_back(window.sample_bilinear(cx + td * ux, cy + td * uy));
    }
    return p;
}

// ---------------------------------------------------------------------
// Envelope
// ---------------------------------------------------------------------

namespace {

std::vector<double> moving_average(std::span<const double> v, std::size_t window) {
    const auto half = static_cast<std::ptrdiff_t>(window / 2);
    std::vector<double> out(v.size());
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(v.size()); ++i) {
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, i - half);
        const std::ptrdiff_t hi =
            std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(v.size()) - 1, i + half);
        double acc = 0.0;
        for (std::ptrdiff_t j = lo; j <= hi; ++j) acc += v[static_cast<std::size_t>(j)];
        out[static_cast<std::size_t>(i)] = acc / static_cast<double>(hi - lo + 1);
    }
    return out;
}

} // namespace

std::vector<double> envelope(const LineProfile& profile, std::size_t smooth_window,
                             std::size_t feature_len) {
    if (smooth_window < 1 || smooth_window % 2 == 0)
        throw AnalysisError("envelope: smoothing window must be odd and >= 1");
    if (profile.intensity.size() < smooth_window)
        throw AnalysisError("envelope: profile shorter than the smoothing window");
    if (feature_len < 2) throw AnalysisError("envelope: feature length must be >= 2");

    const std::vector<double> smooth = moving_average(profile.intensity, smooth_window);
    const std::size_t n = smooth.size();

    // anchors: endpoints plus strict local maxima (first sample of a plateau)
    std::vector<std::size_t> anchors;
    anchors.push_back(0);
    for (std::size_t i = 1; i + 1 < n; ++i) {
        if (smooth[i] > smooth[i - 1] && smooth[i] >= smooth[i + 1]) anchors.push_back(i);
    }
    if (anchors.back() != n - 1) anchors.push_back(n - 1);

    std::vector<double> env(n);
    for (std::size_t a = 0; a + 1 < anchors.size(); ++a) {
        const std::size_t i0 = anchors[a], i1 = anchors[a + 1];
        for (std::size_t i = i0; i <= i1; ++i) {
            const double f = i1 == i0 ? 0.0
                                      : static_cast<double>(i - i0) /
                                            static_cast<double>(i1 - i0);
            env[i] = smooth[i0] + f * (smooth[i1] - smooth[i0]);
        }
    }
    // an upper envelope never dips below the profile it wraps
    for (std::size_t i = 0; i < n; ++i) env[i] = std::max(env[i], smooth[i]);

    std::vector<double> out(feature_len);
    for (std::size_t i = 0; i < feature_len; ++i) {
        const double pos = static_cast<double>(i) * static_cast<double>(n - 1) /
                           static_cast<double>(feature_len - 1);
        const auto lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, n - 1);
        const double f = pos - static_cast<double>(lo);
        out[i] = env[lo] + f * (env[hi] - env[lo]);
    }
    return out;
}

double envelope_energy(std::span<const double> env) {
    if (env.empty()) return 0.0;
    double acc = 0.0;
    for (double v : env) acc += v * v;
    return acc / static_cast<double>(env.size());
}

// ---------------------------------------------------------------------
// d-spacing estimation
// ---------------------------------------------------------------------

namespace {

struct ProfilePeak {
    double freq = 0.0;      // cycles/nm
    double magnitude = 0.0; // Hann-corrected amplitude estimate
};

std::vector<double> half_spectrum(std::span<const double> windowed, std::size_t nfft) {
    std::vector<std::complex<double>> spec(nfft, {0.0, 0.0});
    for (std::size_t i = 0; i < windowed.size(); ++i) spec[i] = {windowed[i], 0.0};
    fft_inplace(spec, false);
    std::vector<double> mags(nfft / 2);
    for (std::size_t k = 1; k <= nfft / 2; ++k) mags[k - 1] = std::abs(spec[k]);
    return mags;
}

std::optional<ProfilePeak> dominant_profile_peak(const LineProfile& profile) {
    const std::size_t m = profile.intensity.size();
    if (m < 8) return std::nullopt;

    double mean = 0.0;
    for (double v : profile.intensity) mean += v;
    mean /= static_cast<double>(m);

    std::vector<double> windowed(m);
    double wsum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double w =
            0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                  static_cast<double>(m - 1)));
        windowed[i] = (profile.intensity[i] - mean) * w;
        wsum += w;
    }

    // qualify the peak against the unpadded spectrum
    const std::vector<double> coarse = half_spectrum(windowed, bit_ceil_sz(m));
    double best = -1.0;
    for (double v : coarse) best = std::max(best, v);
    const double med = stats::median(coarse);
    if (!(best >= 3.0 * med) || best <= 0.0) return std::nullopt;

    // refine the frequency on a 4x zero-padded grid
    const std::size_t nfft = bit_ceil_sz(m) * 4;
    const std::vector<double> mags = half_spectrum(windowed, nfft);
    std::size_t best_k = 1;
    double fine_best = -1.0;
    for (std::size_t k = 1; k <= mags.size(); ++k) {
        if (mags[k - 1] > fine_best) {
            fine_best = mags[k - 1];
            best_k = k;
        }
    }
    double k_ref = static_cast<double>(best_k);
    if (best_k > 1 && best_k < mags.size()) {
        const double m0 = mags[best_k - 2], m1 = fine_best, m2 = mags[best_k];
        const double denom = m0 - 2.0 * m1 + m2;
        if (std::abs(denom) > 1e-300)
            k_ref += std::clamp(0.5 * (m0 - m2) / denom, -0.5, 0.5);
    }

    ProfilePeak p;
    p.freq = k_ref / (static_cast<double>(nfft) * profile.step_nm);
    p.magnitude = 2.0 * fine_best / wsum;
    return p;
}

} // namespace

double estimate_d(const LineProfile& profile) {
    const auto peak = dominant_profile_peak(profile);
    if (!peak) throw NoFringeError("estimate_d: no dominant spectral peak in profile");
    return 1.0 / peak->freq;
}

double estimate_d(const Spectrum2d& spectrum) {
    const auto spot = dominant_spot(spectrum);
    if (!spot) throw NoFringeError("estimate_d: no dominant spot in spectrum");
    const double f = std::hypot(spot->fx, spot->fy);
    if (!(f > 0.0)) throw NoFringeError("estimate_d: dominant spot at DC");
    return 1.0 / f;
}

double profile_peak_amplitude(const LineProfile& profile) {
    const auto peak = dominant_profile_peak(profile);
    return peak ? peak->magnitude : 0.0;
}

// ---------------------------------------------------------------------
// Window clustering
// ---------------------------------------------------------------------

ClusterWindowsResult cluster_windows(std::vector<DSpacingSample> samples, std::size_t k,
                                     double energy_percentile, double clip_lo_nm,
                                     double clip_hi_nm, std::uint64_t seed) {
    if (samples.empty()) throw AnalysisError("cluster_windows: no samples");
    if (!(clip_lo_nm < clip_hi_nm))
        throw AnalysisError("cluster_windows: clip range must be ordered");

    std::vector<double> energies;
    energies.reserve(samples.size());
    for (const auto& s : samples) energies.push_back(s.envelope_energy);
    const double energy_cut = stats::quantile(energies, energy_percentile / 100.0);

    ClusterWindowsResult r;
    std::vector<std::size_t> survivors;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        DSpacingSample& s = samples[i];
        s.cluster = -1;
        const bool pass = s.envelope_energy >= energy_cut && s.d_nm >= clip_lo_nm &&
                          s.d_nm <= clip_hi_nm;
        if (pass)
            survivors.push_back(i);
        else
            r.rejected_ids.push_back(s.window_id);
    }
    if (survivors.size() < k)
        throw AnalysisError("cluster_windows: only " + std::to_string(survivors.size()) +
                            " samples survive filtering; need >= k = " + std::to_string(k));

    const std::size_t feat_len = samples[survivors[0]].envelope.size();
    Matrix features(survivors.size(), 1 + feat_len);
    for (std::size_t row = 0; row < survivors.size(); ++row) {
        const DSpacingSample& s = samples[survivors[row]];
        if (s.envelope.size() != feat_len)
            throw AnalysisError("cluster_windows: inconsistent envelope feature lengths");
        features(row, 0) = s.d_nm;
        for (std::size_t j = 0; j < feat_len; ++j) features(row, 1 + j) = s.envelope[j];
    }
    ml::standardize_columns(features);

    const ml::KMeansResult km = ml::kmeans(features, k, seed);
    std::vector<std::vector<double>> cluster_d(k);
    for (std::size_t row = 0; row < survivors.size(); ++row) {
        samples[survivors[row]].cluster = km.labels[row];
        cluster_d[static_cast<std::size_t>(km.labels[row])].push_back(
            samples[survivors[row]].d_nm);
    }
    for (std::size_t c = 0; c < k; ++c) {
        if (cluster_d[c].empty())
            throw AnalysisError("cluster_windows: empty cluster in k-means result");
        r.cluster_d_stats.push_back(stats::boxplot_stats(cluster_d[c]));
    }
    r.samples = std::move(samples);
    return r;
}

} // namespace phaseprobe::fringe
