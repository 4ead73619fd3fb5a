#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "phaseprobe/commands.hpp"
#include "phaseprobe/errors.hpp"

using namespace phaseprobe;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str(const std::string& sub = "") const {
        return sub.empty() ? path.string() : (path / sub).string();
    }
};

std::string write_config(const TempDir& dir, const std::string& name, const json& j) {
    const std::string path = dir.str(name);
    std::ofstream out(path);
    out << j.dump(2);
    return path;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json slurp_json(const std::string& path) { return json::parse(slurp(path)); }

// one specimen shared by the pipeline tests
void make_specimen(const TempDir& dir, std::uint64_t seed, json extra_spec = {}) {
    json spec = {{"background_singles", 3000},
                 {"pair_plants",
                  json::array({{{"count", 400}, {"tag", "R3"}, {"median_A", 2.77},
                                {"z_lo", 42.0}, {"z_hi", 132.0}},
                               {{"count", 100}, {"tag", "R18"}, {"median_A", 2.35},
                                {"z_lo", 42.0}, {"z_hi", 132.0}}})}};
    if (!extra_spec.is_null() && !extra_spec.empty())
        for (auto& [k, v] : extra_spec.items()) spec[k] = v;
    const json cfg = {{"kind", "specimen"}, {"seed", seed}, {"spec", spec}};
    cli::CommandArgs args;
    args.config_path = write_config(dir, "synth.json", cfg);
    args.out_dir = dir.str();
    cli::cmd_synth(args);
}

} // namespace

TEST_CASE("synth + pairs pipeline produces the full artifact set") {
    TempDir dir("pp_cmd_pairs");
    make_specimen(dir, 11);
    REQUIRE(fs::exists(dir.str("specimen.epos")));
    REQUIRE(fs::exists(dir.str("ranges.rrng")));
    REQUIRE(fs::exists(dir.str("truth.json")));

    const json cfg = {{"epos", dir.str("specimen.epos")},
                      {"ranges", dir.str("ranges.rrng")},
                      {"calibration", {{"tag", "R3"}, {"reference_median_A", 2.77}}}};
    cli::CommandArgs args;
    args.config_path = write_config(dir, "pairs.json", cfg);
    args.out_dir = dir.str("out");
    cli::cmd_pairs(args);

    for (const char* name : {"pairs.csv", "boxplots.json", "utest.json", "kde_delta.csv",
                             "kde_epsilon.csv", "manifest.json"})
        CHECK(fs::exists(fs::path(args.out_dir) / name));

    const json boxes = slurp_json(dir.str("out/boxplots.json"));
    CHECK(boxes.at("n_delta").get<int>() == 400);
    CHECK(boxes.at("n_epsilon").get<int>() == 100);
    CHECK(boxes.at("delta").at("median").get<double>() == doctest::Approx(2.77).epsilon(0.05));

    const json utest = slurp_json(dir.str("out/utest.json"));
    CHECK(utest.at("p").get<double>() < 0.05);
    CHECK(utest.at("z").get<double>() < 0.0);

    const json manifest = slurp_json(dir.str("out/manifest.json"));
    CHECK(manifest.at("command") == "pairs");
    CHECK(manifest.at("config_hash").get<std::string>().size() == 16);
}

TEST_CASE("cluster pipeline separates two well-separated environments") {
    TempDir dir("pp_cmd_cluster");
    // two populations far apart in depth: feature-space gap >> in-population spread
    json spec = {{"background_singles", 1000},
                 {"pair_plants",
                  json::array({{{"count", 150}, {"tag", "R3"}, {"median_A", 2.77},
                                {"sigma_log", 0.01}, {"z_lo", 0.0}, {"z_hi", 5.0}},
                               {{"count", 150}, {"tag", "R18"}, {"median_A", 1.0},
                                {"sigma_log", 0.01}, {"z_lo", 500.0}, {"z_hi", 505.0}}})}};
    const json synth_cfg = {{"kind", "specimen"}, {"seed", 3}, {"spec", spec}};
    cli::CommandArgs synth_args;
    synth_args.config_path = write_config(dir, "synth.json", synth_cfg);
    synth_args.out_dir = dir.str();
    cli::cmd_synth(synth_args);

    // the blob gap in PCA score space is ~3.4 with within-blob spread well
    // under 0.1 along the discriminating direction
    const json cfg = {{"epos", dir.str("specimen.epos")},
                      {"ranges", dir.str("ranges.rrng")},
                      {"scale_A_per_mm", 277.0},
                      {"pca_components", 2},
                      {"eps", 0.5},
                      {"min_pts", 5},
                      {"seed", 4}};
    cli::CommandArgs args;
    args.config_path = write_config(dir, "cluster.json", cfg);
    args.out_dir = dir.str("out");
    cli::cmd_cluster(args);

    const json summary = slurp_json(dir.str("out/cluster_summary.json"));
    CHECK(summary.at("n_clusters").get<int>() == 2);
    CHECK(summary.at("n_noise").get<int>() == 0);
    CHECK(fs::exists(dir.str("out/pca.json")));
    CHECK(fs::exists(dir.str("out/dbscan_labels.csv")));

    // single environment: same pipeline with only one planted population
    json one_spec = {{"background_singles", 500},
                     {"pair_plants",
                      json::array({{{"count", 200}, {"tag", "R3"}, {"median_A", 2.77},
                                    {"z_lo", 42.0}, {"z_hi", 132.0}},
                                   {{"count", 3}, {"tag", "R18"}, {"median_A", 2.77},
                                    {"z_lo", 42.0}, {"z_hi", 132.0}}})}};
    const json one_synth = {{"kind", "specimen"}, {"seed", 6}, {"spec", one_spec}};
    cli::CommandArgs one_synth_args;
    one_synth_args.config_path = write_config(dir, "synth_one.json", one_synth);
    one_synth_args.out_dir = dir.str("one");
    cli::cmd_synth(one_synth_args);

    json one_cfg = cfg;
    one_cfg["epos"] = dir.str("one/specimen.epos");
    one_cfg["ranges"] = dir.str("one/ranges.rrng");
    one_cfg["eps"] = 2.0;
    cli::CommandArgs one_args;
    one_args.config_path = write_config(dir, "cluster_one.json", one_cfg);
    one_args.out_dir = dir.str("one_out");
    cli::cmd_cluster(one_args);
    const json one_summary = slurp_json(dir.str("one_out/cluster_summary.json"));
    CHECK(one_summary.at("n_clusters").get<int>() == 1);

    // reruns with the same seed are byte-identical
    cli::CommandArgs again = one_args;
    again.out_dir = dir.str("one_out_again");
    cli::cmd_cluster(again);
    for (const char* name : {"pca.json", "dbscan_labels.csv", "cluster_summary.json"})
        CHECK(slurp(dir.str(std::string("one_out/") + name)) ==
              slurp(dir.str(std::string("one_out_again/") + name)));
}

TEST_CASE("zseg pipeline recovers a planted increasing delta trend") {
    TempDir dir("pp_cmd_zseg");
    json spec = {{"background_singles", 500},
                 {"profile_plants",
                  json::array({{{"count", 20000},
                                {"z_lo", 42.0},
                                {"z_hi", 132.0},
                                {"eps_frac_at_lo", 0.005},
                                {"eps_frac_at_hi", 0.038}}})}};
    const json synth_cfg = {{"kind", "specimen"}, {"seed", 8}, {"spec", spec}};
    cli::CommandArgs synth_args;
    synth_args.config_path = write_config(dir, "synth.json", synth_cfg);
    synth_args.out_dir = dir.str();
    cli::cmd_synth(synth_args);

    const json cfg = {{"epos", dir.str("specimen.epos")},
                      {"ranges", dir.str("ranges.rrng")},
                      {"scale_A_per_mm", 277.0},
                      {"n_bins", 20}};
    cli::CommandArgs args;
    args.config_path = write_config(dir, "zseg.json", cfg);
    args.out_dir = dir.str("out");
    cli::cmd_zseg(args);

    const json trend = slurp_json(dir.str("out/trend.json"));
    CHECK(trend.at("direction") == "increasing");
    CHECK(trend.at("spearman_rho").get<double>() > 0.6);

    const std::string csv = slurp(dir.str("out/zseg.csv"));
    CHECK(csv.rfind("bin_center_nm,", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 21); // header + 20 bins
}

TEST_CASE("concmap pipeline emits maps and profiles") {
    TempDir dir("pp_cmd_concmap");
    make_specimen(dir, 17, {{"background_singles", 20000}});

    const json cfg = {{"epos", dir.str("specimen.epos")},
                      {"ranges", dir.str("ranges.rrng")},
                      {"voxel_size_nm", 2.0},
                      {"ratio",
                       {{"numerator_element", "Nb"},
                        {"denominator_element", "N"},
                        {"projection_axis", "y"},
                        {"min_den_count", 10.0}}},
                      {"profile_bin_width_nm", 2.0}};
    cli::CommandArgs args;
    args.config_path = write_config(dir, "concmap.json", cfg);
    args.out_dir = dir.str("out");
    cli::cmd_concmap(args);

    for (const char* name :
         {"voxels.csv", "ratio_map.csv", "ratio_map.json", "depth_profile.csv"})
        CHECK(fs::exists(fs::path(args.out_dir) / name));

    const std::string prof = slurp(dir.str("out/depth_profile.csv"));
    CHECK(prof.find("bin_center_nm,Nb,N,Al,O") == 0);
}

TEST_CASE("fringe pipeline clusters planted windows") {
    TempDir dir("pp_cmd_fringe");
    json images = json::array();
    auto window = [](double d, double angle_deg) {
        return json{{"components", json::array({{{"d_nm", d},
                                                 {"angle_deg", angle_deg},
                                                 {"amplitude", 1.0}}})},
                    {"noise_sigma", 0.1},
                    {"pixel_scale_nm", 0.02},
                    {"size", 256}};
    };
    for (int i = 0; i < 6; ++i) images.push_back(window(0.159, 20.0));
    for (int i = 0; i < 6; ++i) images.push_back(window(0.144, 70.0));
    const json synth_cfg = {{"kind", "lattice"}, {"seed", 5}, {"images", images}};
    cli::CommandArgs synth_args;
    synth_args.config_path = write_config(dir, "synth.json", synth_cfg);
    synth_args.out_dir = dir.str();
    cli::cmd_synth(synth_args);

    std::vector<std::string> paths;
    for (int i = 0; i < 12; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "window_%03d.raw", i);
        REQUIRE(fs::exists(dir.str(name)));
        paths.push_back(dir.str(name));
    }

    const json cfg = {{"images", paths}, {"k", 2}, {"seed", 6}};
    cli::CommandArgs args;
    args.config_path = write_config(dir, "fringe.json", cfg);
    args.out_dir = dir.str("out");
    cli::cmd_fringe(args);

    const json clusters = slurp_json(dir.str("out/clusters.json"));
    REQUIRE(clusters.at("clusters").size() == 2);
    std::vector<double> medians;
    for (const auto& c : clusters.at("clusters"))
        medians.push_back(c.at("median").get<double>());
    std::sort(medians.begin(), medians.end());
    CHECK(medians[0] == doctest::Approx(0.144).epsilon(0.02));
    CHECK(medians[1] == doctest::Approx(0.159).epsilon(0.02));
}

TEST_CASE("fringe samples random windows from a large image") {
    TempDir dir("pp_cmd_fringe_windows");
    // one large two-region image is approximated by a single-period field;
    // the point here is the window sampling path, not the mixture
    json images = json::array();
    images.push_back({{"components", json::array({{{"d_nm", 0.159},
                                                   {"angle_deg", 25.0},
                                                   {"amplitude", 1.0}}})},
                      {"noise_sigma", 0.1},
                      {"pixel_scale_nm", 0.02},
                      {"size", 512}});
    const json synth_cfg = {{"kind", "lattice"}, {"seed", 21}, {"images", images}};
    cli::CommandArgs synth_args;
    synth_args.config_path = write_config(dir, "synth.json", synth_cfg);
    synth_args.out_dir = dir.str();
    cli::cmd_synth(synth_args);

    const json cfg = {{"images", json::array({dir.str("window_000.raw")})},
                      {"windows_per_image", 12},
                      {"window_nm", 4.5},
                      {"k", 1},
                      {"seed", 3}};
    cli::CommandArgs args;
    args.config_path = write_config(dir, "fringe.json", cfg);
    args.out_dir = dir.str("out");
    cli::cmd_fringe(args);

    const std::string csv = slurp(dir.str("out/windows.csv"));
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 13); // header + 12 windows
    const json clusters = slurp_json(dir.str("out/clusters.json"));
    CHECK(clusters.at("n_windows").get<int>() == 12);
    CHECK(clusters.at("clusters").at(0).at("median").get<double>() ==
          doctest::Approx(0.159).epsilon(0.02));
}

TEST_CASE("iv and ra commands round-trip through files") {
    TempDir dir("pp_cmd_ivra");
    {
        const json cfg = {{"kind", "iv"}, {"seed", 1}, {"gap_mV", 4.5}, {"rn_MOhm", 9.0}};
        cli::CommandArgs args;
        args.config_path = write_config(dir, "synth_iv.json", cfg);
        args.out_dir = dir.str();
        cli::cmd_synth(args);
        const json iv_cfg = {{"trace", dir.str("iv.csv")}, {"area_um2", 8.0}};
        cli::CommandArgs iv_args;
        iv_args.config_path = write_config(dir, "iv.json", iv_cfg);
        iv_args.out_dir = dir.str("out_iv");
        cli::cmd_iv(iv_args);
        const json iv = slurp_json(dir.str("out_iv/iv.json"));
        CHECK(iv.at("gap_voltage_mV").get<double>() == doctest::Approx(4.5).epsilon(0.03));
        CHECK(iv.at("rn_MOhm").get<double>() == doctest::Approx(9.0).epsilon(0.01));
        CHECK(!iv.at("supercurrent_detected").get<bool>());
    }
    {
        const json cfg = {{"kind", "ra"}, {"seed", 2}, {"ra_MOhm_um2", 558.5}};
        cli::CommandArgs args;
        args.config_path = write_config(dir, "synth_ra.json", cfg);
        args.out_dir = dir.str();
        cli::cmd_synth(args);
        const json ra_cfg = {{"points", dir.str("ra.csv")}};
        cli::CommandArgs ra_args;
        ra_args.config_path = write_config(dir, "ra.json", ra_cfg);
        ra_args.out_dir = dir.str("out_ra");
        cli::cmd_ra(ra_args);
        const json ra = slurp_json(dir.str("out_ra/ra.json"));
        CHECK(ra.at("ra_MOhm_um2").get<double>() == doctest::Approx(558.5).epsilon(1e-9));
    }
}

TEST_CASE("dispatch maps error categories to exit codes") {
    TempDir dir("pp_cmd_exit");
    // missing range file -> I/O error -> 2 with the path in the diagnostic
    make_specimen(dir, 11);
    const json cfg = {{"epos", dir.str("specimen.epos")},
                      {"ranges", dir.str("missing.rrng")}};
    cli::CommandArgs args;
    args.config_path = write_config(dir, "pairs.json", cfg);
    args.out_dir = dir.str("out");
    {
        std::stringstream captured;
        std::streambuf* old = std::cerr.rdbuf(captured.rdbuf());
        const int code = cli::dispatch("pairs", args);
        std::cerr.rdbuf(old);
        CHECK(code == 2);
        CHECK(captured.str().find(dir.str("missing.rrng")) != std::string::npos);
    }

    // missing config file -> 2
    cli::CommandArgs noconf;
    noconf.config_path = dir.str("nope.json");
    noconf.out_dir = dir.str("out");
    CHECK(cli::dispatch("iv", noconf) == 2);

    // unknown command -> 2
    CHECK(cli::dispatch("frobnicate", args) == 2);

    // analysis failure -> 1 (k-means cannot make 3 clusters from 1 window)
    json images = json::array();
    images.push_back({{"components", json::array({{{"d_nm", 0.159},
                                                   {"angle_deg", 0.0},
                                                   {"amplitude", 1.0}}})},
                      {"noise_sigma", 0.05},
                      {"pixel_scale_nm", 0.02},
                      {"size", 128}});
    const json synth_cfg = {{"kind", "lattice"}, {"seed", 5}, {"images", images}};
    cli::CommandArgs synth_args;
    synth_args.config_path = write_config(dir, "synth.json", synth_cfg);
    synth_args.out_dir = dir.str();
    REQUIRE(cli::dispatch("synth", synth_args) == 0);
    const json fringe_cfg = {{"images", json::array({dir.str("window_000.raw")})},
                             {"k", 3},
                             {"seed", 2}};
    cli::CommandArgs fringe_args;
    fringe_args.config_path = write_config(dir, "fringe.json", fringe_cfg);
    fringe_args.out_dir = dir.str("out2");
    CHECK(cli::dispatch("fringe", fringe_args) == 1);

    // stochastic command without a seed -> 2
    const json no_seed = {{"images", json::array({dir.str("window_000.raw")})}, {"k", 1}};
    cli::CommandArgs ns_args;
    ns_args.config_path = write_config(dir, "fringe_noseed.json", no_seed);
    ns_args.out_dir = dir.str("out3");
    CHECK(cli::dispatch("fringe", ns_args) == 2);
}

TEST_CASE("identical config and seed give byte-identical outputs") {
    TempDir dir("pp_cmd_determinism");
    make_specimen(dir, 29);

    const json cfg = {{"epos", dir.str("specimen.epos")},
                      {"ranges", dir.str("ranges.rrng")},
                      {"calibration", {{"tag", "R3"}, {"reference_median_A", 2.77}}},
                      {"seed", 1}};
    const std::string cfg_path = write_config(dir, "pairs.json", cfg);

    for (const char* out : {"out_a", "out_b"}) {
        cli::CommandArgs args;
        args.config_path = cfg_path;
        args.out_dir = dir.str(out);
        cli::cmd_pairs(args);
    }
    for (const char* name : {"pairs.csv", "boxplots.json", "utest.json", "kde_delta.csv",
                             "manifest.json"}) {
        CHECK(slurp(dir.str(std::string("out_a/") + name)) ==
              slurp(dir.str(std::string("out_b/") + name)));
    }
}

TEST_CASE("a seed override replaces the config seed everywhere") {
    TempDir dir("pp_cmd_seed_override");
    const json cfg = {{"kind", "ra"}, {"seed", 1}, {"ra_MOhm_um2", 500.0},
                      {"noise_frac", 0.05}};
    const std::string cfg_path = write_config(dir, "synth.json", cfg);

    auto run = [&](const char* out, std::optional<std::uint64_t> seed) {
        cli::CommandArgs args;
        args.config_path = cfg_path;
        args.out_dir = dir.str(out);
        args.seed = seed;
        cli::cmd_synth(args);
        return slurp(dir.str(std::string(out) + "/ra.csv"));
    };

    const std::string from_config = run("a", std::nullopt);
    const std::string overridden = run("b", 99);
    const std::string overridden_again = run("c", 99);
    CHECK(from_config != overridden);
    CHECK(overridden == overridden_again);

    const json manifest = slurp_json(dir.str("b/manifest.json"));
    CHECK(manifest.at("config").at("seed").get<std::uint64_t>() == 99);
}

TEST_CASE("fringe spectrum profile source and manual spot masks") {
    TempDir dir("pp_cmd_fringe_paths");
    json images = json::array();
    for (int i = 0; i < 3; ++i)
        images.push_back({{"components", json::array({{{"d_nm", 0.159},
                                                       {"angle_deg", 20.0},
                                                       {"amplitude", 1.0}}})},
                          {"noise_sigma", 0.05},
                          {"pixel_scale_nm", 0.02},
                          {"size", 256}});
    const json synth_cfg = {{"kind", "lattice"}, {"seed", 77}, {"images", images}};
    cli::CommandArgs synth_args;
    synth_args.config_path = write_config(dir, "synth.json", synth_cfg);
    synth_args.out_dir = dir.str();
    cli::cmd_synth(synth_args);

    const json paths = json::array(
        {dir.str("window_000.raw"), dir.str("window_001.raw"), dir.str("window_002.raw")});

    // spectrum-based estimate
    {
        const json cfg = {{"images", paths},
                          {"k", 1},
                          {"seed", 2},
                          {"profile_source", "spectrum"}};
        cli::CommandArgs args;
        args.config_path = write_config(dir, "fringe_spec.json", cfg);
        args.out_dir = dir.str("out_spec");
        cli::cmd_fringe(args);
        const json clusters = slurp_json(dir.str("out_spec/clusters.json"));
        CHECK(clusters.at("clusters").at(0).at("median").get<double>() ==
              doctest::Approx(0.159).epsilon(0.02));
    }

    // manual spot mask at the planted frequency pair
    {
        const double fx = std::cos(20.0 * M_PI / 180.0) / 0.159;
        const double fy = std::sin(20.0 * M_PI / 180.0) / 0.159;
        const json cfg = {{"images", paths},
                          {"k", 1},
                          {"seed", 2},
                          {"spots", json::array({{{"fx", fx}, {"fy", fy}, {"radius", 0.6}},
                                                 {{"fx", -fx}, {"fy", -fy}, {"radius", 0.6}}})}};
        cli::CommandArgs args;
        args.config_path = write_config(dir, "fringe_mask.json", cfg);
        args.out_dir = dir.str("out_mask");
        cli::cmd_fringe(args);
        const json clusters = slurp_json(dir.str("out_mask/clusters.json"));
        CHECK(clusters.at("clusters").at(0).at("median").get<double>() ==
              doctest::Approx(0.159).epsilon(0.02));
    }
}

TEST_CASE("cluster command falls back to the neighbor-distance eps heuristic") {
    TempDir dir("pp_cmd_cluster_auto");
    json spec = {{"background_singles", 300},
                 {"pair_plants",
                  json::array({{{"count", 120}, {"tag", "R3"}, {"median_A", 2.77},
                                {"z_lo", 42.0}, {"z_hi", 132.0}},
                               {{"count", 40}, {"tag", "R18"}, {"median_A", 2.35},
                                {"z_lo", 42.0}, {"z_hi", 132.0}}})}};
    const json synth_cfg = {{"kind", "specimen"}, {"seed", 88}, {"spec", spec}};
    cli::CommandArgs synth_args;
    synth_args.config_path = write_config(dir, "synth.json", synth_cfg);
    synth_args.out_dir = dir.str();
    cli::cmd_synth(synth_args);

    const json cfg = {{"epos", dir.str("specimen.epos")},
                      {"ranges", dir.str("ranges.rrng")},
                      {"scale_A_per_mm", 277.0},
                      {"min_pts", 4},
                      {"seed", 9}};
    cli::CommandArgs args;
    args.config_path = write_config(dir, "cluster.json", cfg);
    args.out_dir = dir.str("out");
    cli::cmd_cluster(args);
    const json summary = slurp_json(dir.str("out/cluster_summary.json"));
    CHECK(summary.at("eps").get<double>() > 0.0);
    CHECK(summary.at("n_rows").get<int>() == 160);
}

TEST_CASE("the config hash tracks semantic changes") {
    TempDir dir("pp_cmd_hash");
    make_specimen(dir, 31);
    const json base = {{"epos", dir.str("specimen.epos")},
                       {"ranges", dir.str("ranges.rrng")},
                       {"scale_A_per_mm", 277.0}};

    auto hash_of = [&](const json& cfg, const char* out) {
        cli::CommandArgs args;
        args.config_path = write_config(dir, "cfg.json", cfg);
        args.out_dir = dir.str(out);
        cli::cmd_pairs(args);
        return slurp_json(dir.str(std::string(out) + "/manifest.json"))
            .at("config_hash")
            .get<std::string>();
    };

    const std::string h1 = hash_of(base, "out1");
    const std::string h2 = hash_of(base, "out2");
    CHECK(h1 == h2);
    json changed = base;
    changed["scale_A_per_mm"] = 278.0;
    CHECK(hash_of(changed, "out3") != h1);
}
