#include "phaseprobe/commands.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "phaseprobe/apt_ingest.hpp"
#include "phaseprobe/composition_maps.hpp"
#include "phaseprobe/depth_phase.hpp"
#include "phaseprobe/errors.hpp"
#include "phaseprobe/fringe_tem.hpp"
#include "phaseprobe/ml_cluster.hpp"
#include "phaseprobe/pair_analysis.hpp"
#include "phaseprobe/rng.hpp"
#include "phaseprobe/stats_core.hpp"
#include "phaseprobe/synth_oracle.hpp"
#include "phaseprobe/transport.hpp"

namespace phaseprobe::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

json json_or_null(double v) {
    if (std::isnan(v) || std::isinf(v)) return nullptr;
    return v;
}

// Prefix stage names onto diagnostics while keeping the error category.
template <typename F>
auto stage(const std::string& name, F&& f) {
    try {
        return f();
    } catch (const ParseError& e) {
        throw ParseError(name + ": " + e.what());
    } catch (const ValidationError& e) {
        throw ValidationError(name + ": " + e.what());
    } catch (const AnalysisError& e) {
        throw AnalysisError(name + ": " + e.what());
    } catch (const IoError& e) {
        throw IoError(name + ": " + e.what());
    }
}

json load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("config: cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError("config: " + path + ": " + e.what());
    }
}

std::uint64_t require_seed(const json& cfg) {
    if (!cfg.contains("seed"))
        throw ValidationError("config: a seed is required for stochastic commands");
    return cfg.at("seed").get<std::uint64_t>();
}

// Collects outputs, writes each atomically, and finishes with a manifest
// carrying the effective config and its hash.
class Workspace {
public:
    Workspace(std::string command, const CommandArgs& args)
        : command_(std::move(command)), dir_(args.out_dir) {
        cfg_ = load_config(args.config_path);
        if (args.seed) cfg_["seed"] = *args.seed;
        fs::create_directories(dir_);
    }

    const json& config() const { return cfg_; }
    json& config() { return cfg_; }

    void add_input(const std::string& path) { inputs_.push_back(path); }

    std::string path_of(const std::string& name) const { return (dir_ / name).string(); }

    void write_text(const std::string& name, const std::string& content) {
        const fs::path target = dir_ / name;
        const fs::path tmp = dir_ / (".tmp." + name);
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw IoError("cannot write " + tmp.string());
            out << content;
        }
        fs::rename(tmp, target);
        outputs_.push_back(name);
    }

    void write_json(const std::string& name, const json& j) {
        write_text(name, j.dump(2) + "\n");
    }

    // binary artifacts write through a temp path as well
    void write_with(const std::string& name,
                    const std::function<void(const std::string&)>& writer) {
        const fs::path target = dir_ / name;
        const fs::path tmp = dir_ / (".tmp." + name);
        writer(tmp.string());
        fs::rename(tmp, target);
        outputs_.push_back(name);
    }

    // for companion files a writer produced alongside the named artifact
    void note_output(const std::string& name) { outputs_.push_back(name); }

    void finish() {
        json manifest;
        manifest["command"] = command_;
        manifest["tool"] = "phaseprobe";
        manifest["version"] = kToolVersion;
        manifest["inputs"] = inputs_;
        manifest["outputs"] = outputs_;
        manifest["config"] = cfg_;
        char hex[32];
        std::snprintf(hex, sizeof(hex), "%016llx",
                      static_cast<unsigned long long>(fnv1a64(cfg_.dump())));
        manifest["config_hash"] = hex;
        write_json("manifest.json", manifest);
    }

private:
    std::string command_;
    fs::path dir_;
    json cfg_;
    std::vector<std::string> inputs_;
    std::vector<std::string> outputs_;
};

// -------------------------------------------------------------------
// Shared pair-pipeline front end (ingest .. scaled homopairs)
// -------------------------------------------------------------------

struct PairPipeline {
    std::vector<apt::IonEvent> events;
    apt::RangeTable table;
    std::vector<int> species;
    pairs::ExtractResult extracted;
    std::vector<pairs::DoubleHitPair> all_pairs; // scaled
    std::vector<pairs::DoubleHitPair> delta_pairs;
    std::vector<pairs::DoubleHitPair> epsilon_pairs;
    std::uint64_t mixed_pairs = 0;
    double scale_A_per_mm = 1.0;
    std::string delta_tag = "R3";
    std::string epsilon_tag = "R18";
};

pairs::Roi parse_roi(const json& j) {
    pairs::Roi roi;
    const auto& z = j.at("z");
    roi.z_lo = z.at(0).get<double>();
    roi.z_hi = z.at(1).get<double>();
    if (!(roi.z_lo < roi.z_hi)) throw ValidationError("roi: z range must be ordered");
    if (j.contains("disc")) {
        pairs::DetectorDisc d;
        d.cx = j.at("disc").at("cx").get<double>();
        d.cy = j.at("disc").at("cy").get<double>();
        d.radius = j.at("disc").at("radius").get<double>();
        if (!(d.radius > 0.0)) throw ValidationError("roi: disc radius must be positive");
        roi.region = d;
    } else if (j.contains("rect")) {
        pairs::DetectorRect r;
        r.x_lo = j.at("rect").at("x_lo").get<double>();
        r.x_hi = j.at("rect").at("x_hi").get<double>();
        r.y_lo = j.at("rect").at("y_lo").get<double>();
        r.y_hi = j.at("rect").at("y_hi").get<double>();
        if (!(r.x_lo < r.x_hi) || !(r.y_lo < r.y_hi))
            throw ValidationError("roi: rectangle bounds must be ordered");
        roi.region = r;
    } else {
        throw ValidationError("roi: need either 'disc' or 'rect'");
    }
    return roi;
}

PairPipeline run_pair_pipeline(Workspace& ws) {
    const json& cfg = ws.config();
    PairPipeline p;
    p.delta_tag = cfg.value("delta_tag", "R3");
    p.epsilon_tag = cfg.value("epsilon_tag", "R18");

    const std::string epos_path = cfg.at("epos").get<std::string>();
    const std::string range_path = cfg.at("ranges").get<std::string>();
    ws.add_input(epos_path);
    ws.add_input(range_path);

    stage("ingest", [&] { p.events = apt::read_epos_file(epos_path); });
    stage("ranging", [&] {
        p.table = apt::read_range_file(range_path);
        p.species = apt::assign_species(p.events, p.table);
    });

    stage("pairing", [&] {
        pairs::ExtractOptions opt;
        opt.pairs_from_higher_multiplicity =
            cfg.value("pairs_from_higher_multiplicity", false);
        p.extracted = pairs::extract_double_hits(p.events, opt);
    });

    std::vector<pairs::PairIndices> indices = p.extracted.pairs;
    if (cfg.contains("roi")) {
        stage("roi", [&] {
            const pairs::Roi roi = parse_roi(cfg.at("roi"));
            indices = pairs::apply_roi(indices, p.events, roi);
        });
    }

    p.all_pairs = pairs::make_double_hit_pairs(p.events, p.species, indices, 1.0);
    p.delta_pairs = pairs::filter_homopairs(p.all_pairs, p.table, p.delta_tag);
    p.epsilon_pairs = pairs::filter_homopairs(p.all_pairs, p.table, p.epsilon_tag);

    auto tag_of = [&](int sp) -> std::string {
        if (sp == apt::kUnranged) return "";
        return p.table.ranges[static_cast<std::size_t>(sp)].pair_tag;
    };
    for (const auto& pr : p.all_pairs) {
        const std::string ta = tag_of(pr.species_a), tb = tag_of(pr.species_b);
        if (!ta.empty() && !tb.empty() && ta != tb) ++p.mixed_pairs;
    }

    stage("calibration", [&] {
        if (cfg.contains("scale_A_per_mm")) {
            p.scale_A_per_mm = cfg.at("scale_A_per_mm").get<double>();
            if (!(p.scale_A_per_mm > 0.0))
                throw ValidationError("scale_A_per_mm must be positive");
        } else if (cfg.contains("calibration")) {
            const json& cal = cfg.at("calibration");
            const std::string tag = cal.value("tag", p.delta_tag);
            const double reference = cal.at("reference_median_A").get<double>();
            const auto& ref_pairs = tag == p.epsilon_tag ? p.epsilon_pairs : p.delta_pairs;
            p.scale_A_per_mm = pairs::calibrate_scale(ref_pairs, reference);
        }
    });

    pairs::apply_scale(p.all_pairs, p.scale_A_per_mm);
    pairs::apply_scale(p.delta_pairs, p.scale_A_per_mm);
    pairs::apply_scale(p.epsilon_pairs, p.scale_A_per_mm);
    return p;
}

std::string pairs_csv(const PairPipeline& p) {
    std::ostringstream out;
    out << "pulse_index,tag_a,tag_b,det_sep_mm,real_sep_A,mid_x_nm,mid_y_nm,mid_z_nm\n";
    auto label = [&](int sp) -> std::string {
        if (sp == apt::kUnranged) return "UNRANGED";
        const auto& r = p.table.ranges[static_cast<std::size_t>(sp)];
        return r.pair_tag.empty() ? r.name : r.pair_tag;
    };
    for (const auto& pr : p.all_pairs) {
        out << pr.pulse_index << ',' << label(pr.species_a) << ',' << label(pr.species_b)
            << ',' << fmt(pr.det_sep) << ',' << fmt(pr.real_sep) << ',' << fmt(pr.mid_x)
            << ',' << fmt(pr.mid_y) << ',' << fmt(pr.mid_z) << '\n';
    }
    return out.str();
}

json box_to_json(const stats::BoxStats& b) {
    return {{"median", b.median},          {"q1", b.q1},
            {"q3", b.q3},                  {"whisker_low", b.whisker_low},
            {"whisker_high", b.whisker_high}, {"outliers", b.outliers}};
}

std::vector<double> seps_of(const std::vector<pairs::DoubleHitPair>& v) {
    std::vector<double> s;
    s.reserve(v.size());
    for (const auto& p : v) s.push_back(p.real_sep);
    return s;
}

std::string kde_csv(const std::vector<double>& samples, std::size_t points) {
    const stats::Kde k = stats::kde(samples);
    const std::vector<double> grid = k.default_grid(points);
    const std::vector<double> density = k.evaluate(grid);
    std::ostringstream out;
    out << "x,density\n";
    for (std::size_t i = 0; i < grid.size(); ++i)
        out << fmt(grid[i]) << ',' << fmt(density[i]) << '\n';
    return out.str();
}

} // namespace

// -------------------------------------------------------------------
// pairs
// -------------------------------------------------------------------

void cmd_pairs(const CommandArgs& args) {
    Workspace ws("pairs", args);
    PairPipeline p = run_pair_pipeline(ws);

    ws.write_text("pairs.csv", pairs_csv(p));

    json boxes;
    boxes["scale_A_per_mm"] = p.scale_A_per_mm;
    boxes["n_pairs_total"] = p.all_pairs.size();
    boxes["n_delta"] = p.delta_pairs.size();
    boxes["n_epsilon"] = p.epsilon_pairs.size();
    boxes["n_mixed"] = p.mixed_pairs;
    boxes["groups_inconsistent"] = p.extracted.inconsistent_groups;
    const std::vector<double> delta_seps = seps_of(p.delta_pairs);
    const std::vector<double> eps_seps = seps_of(p.epsilon_pairs);
    stage("boxplots", [&] {
        if (!delta_seps.empty()) boxes["delta"] = box_to_json(stats::boxplot_stats(delta_seps));
        if (!eps_seps.empty()) boxes["epsilon"] = box_to_json(stats::boxplot_stats(eps_seps));
    });
    ws.write_json("boxplots.json", boxes);

    stage("utest", [&] {
        // epsilon first: shorter separations drive z negative
        const stats::UTestResult u = stats::mann_whitney_u(eps_seps, delta_seps);
        json uj;
        uj["u"] = u.u;
        uj["z"] = u.z;
        uj["p"] = u.p;
        uj["method"] = u.method == stats::UMethod::Exact ? "exact" : "normal-approximation";
        uj["n_epsilon"] = eps_seps.size();
        uj["n_delta"] = delta_seps.size();
        ws.write_json("utest.json", uj);
    });

    stage("kde", [&] {
        const auto points = ws.config().value<std::size_t>("kde_points", 256);
        if (!delta_seps.empty()) ws.write_text("kde_delta.csv", kde_csv(delta_seps, points));
        if (!eps_seps.empty()) ws.write_text("kde_epsilon.csv", kde_csv(eps_seps, points));
    });

    ws.finish();
}

// -------------------------------------------------------------------
// cluster
// -------------------------------------------------------------------

void cmd_cluster(const CommandArgs& args) {
    Workspace ws("cluster", args);
    PairPipeline p = run_pair_pipeline(ws);
    const json& cfg = ws.config();

    pairs::FeatureMatrix fm;
    stage("features", [&] {
        fm = pairs::build_feature_matrix(p.delta_pairs, p.epsilon_pairs);
    });

    const auto n_components = cfg.value<std::size_t>("pca_components", 2);
    ml::PcaResult pca_result;
    stage("pca", [&] { pca_result = ml::pca(fm.standardized, n_components); });

    std::vector<int> labels;
    double eps = 0.0;
    std::size_t min_pts = cfg.value<std::size_t>("min_pts", 5);
    stage("dbscan", [&] {
        eps = cfg.contains("eps") && !cfg.at("eps").is_null()
                  ? cfg.at("eps").get<double>()
                  : ml::suggest_eps(pca_result.scores);
        labels = ml::dbscan(pca_result.scores, eps, min_pts);
    });

    json pj;
    pj["mean"] = pca_result.mean;
    pj["eigenvalues"] = pca_result.eigenvalues;
    json comps = json::array();
    for (std::size_t k = 0; k < pca_result.components.rows(); ++k) {
        json row = json::array();
        for (std::size_t j = 0; j < pca_result.components.cols(); ++j)
            row.push_back(pca_result.components(k, j));
        comps.push_back(std::move(row));
    }
    pj["components"] = std::move(comps);
    pj["feature_mean"] = fm.mean;
    pj["feature_std"] = fm.stddev;
    ws.write_json("pca.json", pj);

    std::ostringstream lcsv;
    lcsv << "row_index,label\n";
    for (std::size_t i = 0; i < labels.size(); ++i) lcsv << i << ',' << labels[i] << '\n';
    ws.write_text("dbscan_labels.csv", lcsv.str());

    int n_clusters = 0;
    std::size_t n_noise = 0;
    for (int l : labels) {
        n_clusters = std::max(n_clusters, l + 1);
        if (l == ml::kNoise) ++n_noise;
    }
    json summary;
    summary["eps"] = eps;
    summary["min_pts"] = min_pts;
    summary["n_clusters"] = n_clusters;
    summary["n_noise"] = n_noise;
    summary["n_rows"] = labels.size();
    ws.write_json("cluster_summary.json", summary);

    ws.finish();
}

// -------------------------------------------------------------------
// zseg
// -------------------------------------------------------------------

void cmd_zseg(const CommandArgs& args) {
    Workspace ws("zseg", args);
    PairPipeline p = run_pair_pipeline(ws);
    const json& cfg = ws.config();

    depth::ZSegmentOptions opt;
    opt.n_bins = cfg.value<std::size_t>("n_bins", 20);
    opt.substrate_at_high_z = cfg.value("substrate_at_high_z", true);
    if (cfg.contains("edges")) opt.edges = cfg.at("edges").get<std::vector<double>>();

    depth::PhaseDepthBins bins;
    stage("zseg", [&] { bins = depth::z_segment(p.delta_pairs, p.epsilon_pairs, opt); });

    std::ostringstream csv;
    csv << "bin_center_nm,n_delta,n_epsilon,frac_epsilon,ci_lo,ci_hi\n";
    for (const auto& b : bins.bins) {
        csv << fmt(b.center()) << ',' << b.n_delta << ',' << b.n_epsilon << ',';
        if (b.occupied)
            csv << fmt(b.frac_epsilon) << ',' << fmt(b.ci.lo) << ',' << fmt(b.ci.hi);
        else
            csv << "nan,nan,nan";
        csv << '\n';
    }
    ws.write_text("zseg.csv", csv.str());

    stage("trend", [&] {
        const depth::TrendSummary t = depth::trend_summary(bins);
        json tj;
        tj["spearman_rho"] = t.spearman_rho;
        tj["direction"] = t.direction == depth::TrendDirection::Increasing   ? "increasing"
                          : t.direction == depth::TrendDirection::Decreasing ? "decreasing"
                                                                             : "flat";
        tj["rank_ties_degenerate"] = t.rank_ties_degenerate;
        tj["occupied_bins"] = t.occupied_bins;
        ws.write_json("trend.json", tj);
    });

    ws.finish();
}

// -------------------------------------------------------------------
// concmap
// -------------------------------------------------------------------

namespace {

int axis_from_name(const std::string& name) {
    if (name == "x") return 0;
    if (name == "y") return 1;
    if (name == "z") return 2;
    throw ValidationError("projection axis must be one of x, y, z");
}

} // namespace

void cmd_concmap(const CommandArgs& args) {
    Workspace ws("concmap", args);
    const json& cfg = ws.config();

    const std::string epos_path = cfg.at("epos").get<std::string>();
    const std::string range_path = cfg.at("ranges").get<std::string>();
    ws.add_input(epos_path);
    ws.add_input(range_path);

    std::vector<apt::IonEvent> events;
    apt::RangeTable table;
    std::vector<int> species;
    stage("ingest", [&] { events = apt::read_epos_file(epos_path); });
    stage("ranging", [&] {
        table = apt::read_range_file(range_path);
        species = apt::assign_species(events, table);
    });

    const double voxel = cfg.value("voxel_size_nm", 1.0);
    maps::VoxelGrid grid;
    stage("voxelize", [&] {
        grid = maps::voxelize(events, species, table.ranges.size(), voxel);
    });

    {
        std::ostringstream vox;
        vox << "ix,iy,iz,species,count\n";
        for (std::size_t ix = 0; ix < grid.dims[0]; ++ix)
            for (std::size_t iy = 0; iy < grid.dims[1]; ++iy)
                for (std::size_t iz = 0; iz < grid.dims[2]; ++iz)
                    for (std::size_t s = 0; s < grid.n_species; ++s) {
                        const auto c = grid.count(ix, iy, iz, s);
                        if (c == 0) continue;
                        vox << ix << ',' << iy << ',' << iz << ',' << table.ranges[s].name
                            << ',' << c << '\n';
                    }
        ws.write_text("voxels.csv", vox.str());
    }

    stage("ratio_map", [&] {
        const json rcfg = cfg.value("ratio", json::object());
        const std::string num_el = rcfg.value("numerator_element", "Nb");
        const std::string den_el = rcfg.value("denominator_element", "N");
        const int axis = axis_from_name(rcfg.value("projection_axis", "y"));
        const double min_den = rcfg.value("min_den_count", 10.0);
        const maps::RatioMap2d map =
            maps::ratio_map_2d(grid, maps::element_weights(table, num_el),
                               maps::element_weights(table, den_el), axis, min_den);

        std::ostringstream csv;
        for (std::size_t u = 0; u < map.nu; ++u) {
            for (std::size_t v = 0; v < map.nv; ++v) {
                if (v) csv << ',';
                csv << fmt(map.ratio(u, v));
            }
            csv << '\n';
        }
        ws.write_text("ratio_map.csv", csv.str());

        json hdr;
        hdr["numerator_element"] = num_el;
        hdr["denominator_element"] = den_el;
        hdr["projection_axis"] = rcfg.value("projection_axis", "y");
        hdr["plane_axes"] = {map.plane_axes[0], map.plane_axes[1]};
        hdr["origin_nm"] = {map.origin[0], map.origin[1]};
        hdr["voxel_size_nm"] = map.voxel_size;
        hdr["min_den_count"] = map.min_den_count;
        hdr["masked_cells"] =
            std::count(map.mask.begin(), map.mask.end(), std::uint8_t{0});
        json mask_rows = json::array();
        for (std::size_t u = 0; u < map.nu; ++u) {
            json row = json::array();
            for (std::size_t v = 0; v < map.nv; ++v)
                row.push_back(static_cast<int>(map.mask[u * map.nv + v]));
            mask_rows.push_back(std::move(row));
        }
        hdr["mask"] = std::move(mask_rows);
        ws.write_json("ratio_map.json", hdr);
    });

    stage("depth_profile", [&] {
        const double bin_width = cfg.value("profile_bin_width_nm", 1.0);
        const maps::DepthProfile prof = maps::depth_profile(events, species, table, bin_width);
        std::ostringstream csv;
        csv << "bin_center_nm";
        for (const std::string& el : prof.elements) csv << ',' << el;
        csv << ",total_atoms,total_ions\n";
        for (std::size_t b = 0; b < prof.bin_centers.size(); ++b) {
            csv << fmt(prof.bin_centers[b]);
            for (std::size_t e = 0; e < prof.elements.size(); ++e)
                csv << ',' << fmt(prof.fractions(b, e));
            csv << ',' << fmt(prof.bin_atom_counts[b]) << ',' << prof.bin_ion_counts[b]
                << '\n';
        }
        ws.write_text("depth_profile.csv", csv.str());
    });

    ws.finish();
}

// -------------------------------------------------------------------
// fringe
// -------------------------------------------------------------------

void cmd_fringe(const CommandArgs& args) {
    Workspace ws("fringe", args);
    const json& cfg = ws.config();
    const std::uint64_t seed = require_seed(cfg);

    const auto image_paths = cfg.at("images").get<std::vector<std::string>>();
    const double window_nm = cfg.value("window_nm", 4.5);
    const auto windows_per_image = cfg.value<std::size_t>("windows_per_image", 0);
    const auto smooth_window = cfg.value<std::size_t>("smooth_window", 3);
    const auto feature_len = cfg.value<std::size_t>("feature_len", 64);
    const double percentile = cfg.value("energy_percentile", 20.0);
    double clip_lo = 0.10, clip_hi = 0.30;
    if (cfg.contains("clip_nm")) {
        clip_lo = cfg.at("clip_nm").at(0).get<double>();
        clip_hi = cfg.at("clip_nm").at(1).get<double>();
    }
    const auto k = cfg.value<std::size_t>("k", 3);
    const bool profile_from_spectrum = cfg.value("profile_source", "realspace") == "spectrum";

    std::optional<fringe::SpotMask> manual_mask;
    if (cfg.contains("spots")) {
        fringe::SpotMask m;
        for (const json& js : cfg.at("spots")) {
            fringe::Spot s;
            s.fx = js.at("fx").get<double>();
            s.fy = js.at("fy").get<double>();
            s.radius = js.at("radius").get<double>();
            m.spots.push_back(s);
        }
        manual_mask = std::move(m);
    }

    std::vector<fringe::DSpacingSample> samples;
    std::size_t no_fringe_count = 0;

    for (std::size_t img_idx = 0; img_idx < image_paths.size(); ++img_idx) {
        ws.add_input(image_paths[img_idx]);
        fringe::GrayImage image;
        stage("images", [&] { image = fringe::read_raw_image(image_paths[img_idx]); });

        std::vector<fringe::FringeWindow> windows;
        if (windows_per_image == 0) {
            fringe::FringeWindow whole;
            whole.side = std::min(image.width, image.height);
            if ((whole.side & (whole.side - 1)) != 0)
                throw ValidationError("fringe: whole-image windows need power-of-two sides");
            windows.push_back(whole);
        } else {
            Rng wrng(derive_seed(seed, "windows:" + std::to_string(img_idx)));
            windows = fringe::random_windows(image, windows_per_image, wrng, window_nm);
        }

        for (const fringe::FringeWindow& w : windows) {
            fringe::DSpacingSample s;
            s.window_id = samples.size();
            s.x0_px = w.x0;
            s.y0_px = w.y0;

            const fringe::GrayImage win = fringe::crop(image, w);
            const fringe::Spectrum2d spec = fringe::fft2(win);
            const auto spot = fringe::dominant_spot(spec);

            if (!spot) {
                ++no_fringe_count;
                s.d_nm = std::numeric_limits<double>::quiet_NaN();
                s.envelope.assign(feature_len, 0.0);
                samples.push_back(std::move(s));
                continue;
            }

            fringe::SpotMask mask;
            if (manual_mask) {
                mask = *manual_mask;
            } else {
                const double radius =
                    3.0 / (static_cast<double>(spec.n) * spec.pixel_scale);
                mask.spots.push_back({spot->fx, spot->fy, radius});
                mask.spots.push_back({-spot->fx, -spot->fy, radius});
            }

            const fringe::GrayImage filtered = fringe::spot_filter_ifft(spec, mask);
            const fringe::LineProfile profile =
                fringe::line_profile(filtered, spot->fx, spot->fy);

            try {
                s.d_nm = profile_from_spectrum ? fringe::estimate_d(spec)
                                               : fringe::estimate_d(profile);
                s.peak_amplitude = fringe::profile_peak_amplitude(profile);
            } catch (const NoFringeError&) {
                ++no_fringe_count;
                s.d_nm = std::numeric_limits<double>::quiet_NaN();
            }
            s.envelope = fringe::envelope(profile, smooth_window, feature_len);
            s.envelope_energy = fringe::envelope_energy(s.envelope);
            samples.push_back(std::move(s));
        }
    }

    fringe::ClusterWindowsResult clustered;
    stage("clustering", [&] {
        clustered = fringe::cluster_windows(std::move(samples), k, percentile, clip_lo,
                                            clip_hi, derive_seed(seed, "kmeans"));
    });

    std::ostringstream csv;
    csv << "window_id,x0_px,y0_px,d_nm,envelope_energy,cluster\n";
    for (const auto& s : clustered.samples) {
        csv << s.window_id << ',' << s.x0_px << ',' << s.y0_px << ',' << fmt(s.d_nm) << ','
            << fmt(s.envelope_energy) << ',' << s.cluster << '\n';
    }
    ws.write_text("windows.csv", csv.str());

    json cj;
    cj["k"] = k;
    cj["n_windows"] = clustered.samples.size();
    cj["n_rejected"] = clustered.rejected_ids.size();
    cj["n_no_fringe"] = no_fringe_count;
    json per_cluster = json::array();
    for (std::size_t c = 0; c < clustered.cluster_d_stats.size(); ++c) {
        json e = box_to_json(clustered.cluster_d_stats[c]);
        e["cluster"] = c;
        std::size_t count = 0;
        for (const auto& s : clustered.samples)
            if (s.cluster == static_cast<int>(c)) ++count;
        e["count"] = count;
        per_cluster.push_back(std::move(e));
    }
    cj["clusters"] = std::move(per_cluster);
    ws.write_json("clusters.json", cj);

    ws.finish();
}

// -------------------------------------------------------------------
// iv / ra
// -------------------------------------------------------------------

void cmd_iv(const CommandArgs& args) {
    Workspace ws("iv", args);
    const json& cfg = ws.config();
    const std::string trace_path = cfg.at("trace").get<std::string>();
    ws.add_input(trace_path);

    transport::IVTrace trace;
    stage("ingest", [&] { trace = transport::read_iv_csv_file(trace_path); });

    transport::IVConfig ivc;
    ivc.high_bias_mV = cfg.value("high_bias_mV", ivc.high_bias_mV);
    ivc.subgap_band_mV = cfg.value("subgap_band_mV", ivc.subgap_band_mV);
    ivc.zero_exclusion_mV = cfg.value("zero_exclusion_mV", ivc.zero_exclusion_mV);
    ivc.smooth_points = cfg.value("smooth_points", ivc.smooth_points);
    if (cfg.contains("noise_floor_pA") && !cfg.at("noise_floor_pA").is_null())
        ivc.noise_floor_pA = cfg.at("noise_floor_pA").get<double>();

    const double area = cfg.at("area_um2").get<double>();
    transport::IVSummary s;
    stage("analyze", [&] { s = transport::analyze_iv(trace, area, ivc); });

    json j;
    j["gap_detected"] = s.gap_detected;
    j["gap_voltage_mV"] = json_or_null(s.gap_voltage_mV);
    j["onset_lo_mV"] = json_or_null(s.onset_lo_mV);
    j["onset_hi_mV"] = json_or_null(s.onset_hi_mV);
    j["rn_MOhm"] = s.rn_MOhm;
    j["subgap_r_MOhm"] = json_or_null(s.subgap_r_MOhm);
    j["supercurrent_detected"] = s.supercurrent_detected;
    j["zero_bias_step_pA"] = s.zero_bias_step_pA;
    j["jc_pA_per_um2"] = s.jc_pA_per_um2;
    j["jc_is_bound"] = s.jc_is_bound;
    j["noise_floor_pA"] = s.noise_floor_pA;
    j["area_um2"] = area;
    ws.write_json("iv.json", j);

    ws.finish();
}

void cmd_ra(const CommandArgs& args) {
    Workspace ws("ra", args);
    const json& cfg = ws.config();
    const std::string points_path = cfg.at("points").get<std::string>();
    ws.add_input(points_path);

    transport::RAVector points;
    stage("ingest", [&] { points = transport::read_ra_csv_file(points_path); });

    transport::RaFit fit;
    stage("fit", [&] { fit = transport::fit_ra(points); });

    json j;
    j["ra_MOhm_um2"] = fit.ra_MOhm_um2;
    j["stderr_MOhm_um2"] = fit.stderr_MOhm_um2;
    j["n_points"] = fit.n_points;
    ws.write_json("ra.json", j);

    ws.finish();
}

// -------------------------------------------------------------------
// synth
// -------------------------------------------------------------------

namespace {

synth::SpecimenSpec parse_specimen_spec(const json& cfg, std::uint64_t seed) {
    synth::SpecimenSpec spec;
    spec.seed = seed;
    const json& js = cfg.value("spec", json::object());

    if (js.contains("layers")) {
        for (const json& jl : js.at("layers")) {
            synth::LayerSpec layer;
            layer.z_lo = jl.at("z_lo").get<double>();
            layer.z_hi = jl.at("z_hi").get<double>();
            for (const auto& [name, weight] : jl.at("mix").items())
                layer.species_mix.emplace_back(name, weight.get<double>());
            spec.layers.push_back(std::move(layer));
        }
    } else {
        spec.layers = synth::default_trilayer();
    }

    spec.background_singles = js.value<std::size_t>("background_singles", 10000);
    spec.magnification_A_per_mm = js.value("magnification_A_per_mm", 277.0);
    spec.needle_radius_nm = js.value("needle_radius_nm", 30.0);
    spec.detector_radius_mm = js.value("detector_radius_mm", 18.0);

    if (js.contains("pair_plants")) {
        for (const json& jp : js.at("pair_plants")) {
            synth::PairPlant p;
            p.count = jp.at("count").get<std::size_t>();
            p.tag = jp.at("tag").get<std::string>();
            p.median_A = jp.at("median_A").get<double>();
            p.sigma_log = jp.value("sigma_log", 0.05);
            p.z_lo = jp.at("z_lo").get<double>();
            p.z_hi = jp.at("z_hi").get<double>();
            spec.pair_plants.push_back(std::move(p));
        }
    }
    if (js.contains("profile_plants")) {
        for (const json& jp : js.at("profile_plants")) {
            synth::ProfilePlant p;
            p.count = jp.at("count").get<std::size_t>();
            p.z_lo = jp.at("z_lo").get<double>();
            p.z_hi = jp.at("z_hi").get<double>();
            p.eps_frac_at_lo = jp.at("eps_frac_at_lo").get<double>();
            p.eps_frac_at_hi = jp.at("eps_frac_at_hi").get<double>();
            p.delta_median_A = jp.value("delta_median_A", 2.77);
            p.eps_median_A = jp.value("eps_median_A", 2.35);
            p.sigma_log = jp.value("sigma_log", 0.05);
            spec.profile_plants.push_back(std::move(p));
        }
    }
    return spec;
}

} // namespace

void cmd_synth(const CommandArgs& args) {
    Workspace ws("synth", args);
    const json& cfg = ws.config();
    const std::uint64_t seed = require_seed(cfg);
    const std::string kind = cfg.at("kind").get<std::string>();

    if (kind == "specimen") {
        const synth::SpecimenSpec spec = parse_specimen_spec(cfg, seed);
        const apt::RangeTable table = synth::default_range_table();
        synth::Specimen specimen;
        stage("generate", [&] { specimen = synth::gen_apt_specimen(spec, table); });
        ws.write_with("specimen.epos", [&](const std::string& path) {
            apt::write_epos_file(specimen.events, path);
        });
        ws.write_text("ranges.rrng", synth::default_range_file_text());
        ws.write_text("truth.json", specimen.truth.to_json_text() + "\n");
    } else if (kind == "lattice") {
        const json& jimgs = cfg.at("images");
        json truth = json::array();
        std::size_t idx = 0;
        for (const json& ji : jimgs) {
            synth::LatticeImageSpec spec;
            spec.seed = derive_seed(seed, "lattice:" + std::to_string(idx));
            spec.pixel_scale = ji.value("pixel_scale_nm", 0.02);
            spec.size = ji.value<std::size_t>("size", 256);
            spec.noise_sigma = ji.value("noise_sigma", 0.0);
            for (const json& jc : ji.at("components")) {
                synth::LatticeComponent c;
                c.d_nm = jc.at("d_nm").get<double>();
                c.angle_rad = jc.value("angle_deg", 0.0) * std::numbers::pi / 180.0;
                c.amplitude = jc.value("amplitude", 1.0);
                c.phase_rad = jc.value("phase_deg", 0.0) * std::numbers::pi / 180.0;
                spec.components.push_back(c);
            }
            fringe::GrayImage img;
            stage("generate", [&] { img = synth::gen_lattice_image(spec); });
            char name[64];
            std::snprintf(name, sizeof(name), "window_%03zu.raw", idx);
            ws.write_with(name, [&](const std::string& path) {
                fringe::write_raw_image(img, path);
                // sidecar travels with the temp path; move it alongside
                fs::rename(path + ".json", fs::path(path).parent_path() /
                                               (std::string(name) + ".json"));
            });
            ws.note_output(std::string(name) + ".json");
            json t = ji;
            t["file"] = name;
            truth.push_back(std::move(t));
            ++idx;
        }
        ws.write_json("truth.json", truth);
    } else if (kind == "iv") {
        synth::IVSpec spec;
        spec.seed = seed;
        spec.gap_mV = cfg.value("gap_mV", spec.gap_mV);
        spec.rn_MOhm = cfg.value("rn_MOhm", spec.rn_MOhm);
        spec.smear_mV = cfg.value("smear_mV", spec.smear_mV);
        spec.leakage_MOhm = cfg.value("leakage_MOhm", spec.leakage_MOhm);
        spec.noise_pA = cfg.value("noise_pA", spec.noise_pA);
        spec.v_min_mV = cfg.value("v_min_mV", spec.v_min_mV);
        spec.v_max_mV = cfg.value("v_max_mV", spec.v_max_mV);
        spec.v_step_mV = cfg.value("v_step_mV", spec.v_step_mV);
        spec.supercurrent_step_pA = cfg.value("supercurrent_step_pA", 0.0);
        transport::IVTrace trace;
        stage("generate", [&] { trace = synth::gen_iv(spec); });
        std::ostringstream csv;
        csv << "bias_mV,current_pA\n";
        for (std::size_t i = 0; i < trace.bias_mV.size(); ++i)
            csv << fmt(trace.bias_mV[i]) << ',' << fmt(trace.current_pA[i]) << '\n';
        ws.write_text("iv.csv", csv.str());
    } else if (kind == "ra") {
        synth::RASpec spec;
        spec.seed = seed;
        spec.ra_MOhm_um2 = cfg.value("ra_MOhm_um2", spec.ra_MOhm_um2);
        spec.noise_frac = cfg.value("noise_frac", 0.0);
        spec.areas_um2 = cfg.contains("areas_um2")
                             ? cfg.at("areas_um2").get<std::vector<double>>()
                             : std::vector<double>{1.8, 4, 9, 16, 25, 36, 49, 64};
        transport::RAVector points;
        stage("generate", [&] { points = synth::gen_ra(spec); });
        std::ostringstream csv;
        csv << "area_um2,resistance_MOhm\n";
        for (const auto& p : points)
            csv << fmt(p.area_um2) << ',' << fmt(p.resistance_MOhm) << '\n';
        ws.write_text("ra.csv", csv.str());
    } else {
        throw ValidationError("synth: unknown kind '" + kind + "'");
    }

    ws.finish();
}

// -------------------------------------------------------------------
// dispatch
// -------------------------------------------------------------------

int dispatch(const std::string& command, const CommandArgs& args) {
    try {
        if (command == "pairs")
            cmd_pairs(args);
        else if (command == "cluster")
            cmd_cluster(args);
        else if (command == "zseg")
            cmd_zseg(args);
        else if (command == "concmap")
            cmd_concmap(args);
        else if (command == "fringe")
            cmd_fringe(args);
        else if (command == "iv")
            cmd_iv(args);
        else if (command == "ra")
            cmd_ra(args);
        else if (command == "synth")
            cmd_synth(args);
        else {
            std::cerr << "phaseprobe: unknown command '" << command << "'\n";
            return 2;
        }
        return 0;
    } catch (const AnalysisError& e) {
        std::cerr << "phaseprobe " << command << ": " << e.what() << "\n";
        return 1;
    } catch (const ParseError& e) {
        std::cerr << "phaseprobe " << command << ": " << e.what() << "\n";
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "phaseprobe " << command << ": " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "phaseprobe " << command << ": " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "phaseprobe " << command << ": config: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "phaseprobe " << command << ": " << e.what() << "\n";
        return 1;
    }
}

} // namespace phaseprobe::cli
