#include <array>
#include <string>

#include <CLI11.hpp>

#include "phaseprobe/commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"phaseprobe: trilayer junction metrology pipelines"};
    app.require_subcommand(1);

    struct Sub {
        const char* name;
        const char* help;
    };
    static constexpr std::array<Sub, 8> subs = {{
        {"pairs", "double-hit pair separations, boxplots, U test"},
        {"cluster", "pair feature matrix -> PCA -> DBSCAN"},
        {"zseg", "depth-resolved phase fractions from homopairs"},
        {"concmap", "voxel ratio maps and 1D depth profiles"},
        {"fringe", "lattice-fringe d-spacings and k-means clusters"},
        {"iv", "I-V trace characterization"},
        {"ra", "resistance-area product fit"},
        {"synth", "seeded synthetic dataset generation"},
    }};

    std::string command;
    phaseprobe::cli::CommandArgs args;
    std::uint64_t seed_value = 0;
    std::array<CLI::Option*, subs.size()> seed_opts{};

    for (std::size_t i = 0; i < subs.size(); ++i) {
        CLI::App* sub = app.add_subcommand(subs[i].name, subs[i].help);
        sub->add_option("--config", args.config_path, "JSON config path")->required();
        sub->add_option("--out", args.out_dir, "output directory (default: .)");
        seed_opts[i] = sub->add_option("--seed", seed_value, "override the config seed");
        sub->callback([&command, name = subs[i].name] { command = name; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    for (const CLI::Option* opt : seed_opts) {
        if (opt->count() > 0) args.seed = seed_value;
    }

    return phaseprobe::cli::dispatch(command, args);
}
