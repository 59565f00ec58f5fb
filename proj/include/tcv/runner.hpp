#pragma once

#include <cstdint>
#include <optional>
#include <string>

// CLI orchestration: one entry point per subcommand, artifact files in the
// output directory, a machine-readable run manifest. Exit codes: 0 success,
// 2 config error, 3 numerical failure, 4 negative check verdict.

namespace tcv {

struct RunOptions {
    std::string subcommand;
    std::string config_path;
    std::string out_dir; // empty: use the config's output dir
    std::optional<std::uint64_t> seed_override;
    std::optional<std::size_t> paths_override;
    bool quiet = false;
};

int run(const RunOptions& opts);

} // namespace tcv
