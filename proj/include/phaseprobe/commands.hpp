#pragma once
#include <cstdint>
#include <optional>
#include <string>

namespace phaseprobe::cli {

inline constexpr const char* kToolVersion = "0.1.0";

struct CommandArgs {
    std::string config_path;
    std::string out_dir = ".";
    std::optional<std::uint64_t> seed; // overrides the config seed
};

// Each command reads a JSON config, runs its pipeline and writes CSV/JSON
// artifacts plus a manifest into out_dir. Failures throw; dispatch() maps
// them to exit codes.
void cmd_pairs(const CommandArgs& args);
void cmd_cluster(const CommandArgs& args);
void cmd_zseg(const CommandArgs& args);
void cmd_concmap(const CommandArgs& args);
void cmd_fringe(const CommandArgs& args);
void cmd_iv(const CommandArgs& args);
void cmd_ra(const CommandArgs& args);
void cmd_synth(const CommandArgs& args);

// 0 success, 1 analysis error, 2 I/O or config error; diagnostics on stderr.
int dispatch(const std::string& command, const CommandArgs& args);

} // namespace phaseprobe::cli
