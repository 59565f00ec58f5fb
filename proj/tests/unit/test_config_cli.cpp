#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tcv/config.hpp"
#include "tcv/errors.hpp"
#include "tcv/runner.hpp"

using namespace tcv;

namespace {

const char* kMinimalConfig = R"({
  "grid": {"T": 1.0, "steps": 16},
  "rate": {"B": {"kind": "constant", "level": 1.0}},
  "ensemble": {"paths": 2000, "seed": 7}
})";

std::string write_temp(const std::string& name, const std::string& text) {
    const std::string path = (std::filesystem::temp_directory_path() / name).string();
    std::ofstream out(path, std::ios::binary);
    out << text;
    return path;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("minimal config parses with defaults") {
    ExperimentConfig cfg = parse_config(kMinimalConfig);
    CHECK(cfg.T == 1.0);
    CHECK(cfg.steps == 16);
    CHECK(cfg.n_paths == 2000);
    CHECK(cfg.seed == 7);
    CHECK(cfg.marks.size() == 0);
    CHECK(cfg.condexp.degree == 2);
    CHECK(cfg.partition_level == 3);
}

TEST_CASE("unknown keys are rejected with their path") {
    const char* bad = R"({
      "grid": {"T": 1.0, "steps": 16, "stepz": 3},
      "rate": {"B": {"kind": "constant", "level": 1.0}},
      "ensemble": {"paths": 100, "seed": 1}
    })";
    CHECK_THROWS_WITH_AS(parse_config(bad), "grid: unknown key 'stepz'", ConfigError);
}

TEST_CASE("physical parameters are validated with the field named") {
    const char* bad = R"({
      "grid": {"T": 1.0, "steps": 16},
      "rate": {"B": {"kind": "constant", "level": 1.0}},
      "ensemble": {"paths": 100, "seed": 1},
      "harvest": {"K": -2.0, "delta": 0.2,
                  "r": {"kind": "constant", "value": 0.1},
                  "sigma": {"kind": "constant", "value": 0.2}}
    })";
    try {
        parse_config(bad);
        FAIL("expected a config error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("harvest.K") != std::string::npos);
    }
}

TEST_CASE("missing required sections are reported") {
    CHECK_THROWS_AS(parse_config(R"({"grid": {"T": 1.0, "steps": 4}})"), ConfigError);
    CHECK_THROWS_AS(parse_config("not json"), ConfigError);
}

TEST_CASE("config hash is stable under key reordering") {
    const char* a = R"({"grid": {"T": 1.0, "steps": 4}})";
    const char* b = R"({"steps_first_differs": 0})";
    const char* a2 = R"({"grid": {"steps": 4, "T": 1.0}})";
    CHECK(config_hash(a) == config_hash(a2));
    CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("simulate subcommand produces deterministic artifacts") {
    const std::string cfg_path = write_temp("tcv_test_sim.json", kMinimalConfig);
    const std::string out1 = (std::filesystem::temp_directory_path() / "tcv_out1").string();
    const std::string out2 = (std::filesystem::temp_directory_path() / "tcv_out2").string();

    RunOptions ro;
    ro.subcommand = "simulate";
    ro.config_path = cfg_path;
    ro.quiet = true;

    ro.out_dir = out1;
    CHECK(run(ro) == 0);
    ro.out_dir = out2;
    CHECK(run(ro) == 0);

    // byte-identical CSVs; the manifest differs only in its timestamp
    CHECK(slurp(out1 + "/moments.csv") == slurp(out2 + "/moments.csv"));
    CHECK(slurp(out1 + "/moment_pairs.csv") == slurp(out2 + "/moment_pairs.csv"));
    CHECK(!slurp(out1 + "/moments.csv").empty());
    CHECK(slurp(out1 + "/moments.csv").find("cell,stratum") == 0);

    // a different seed changes the artifacts
    ro.out_dir = out1 + "_seed";
    ro.seed_override = 8;
    CHECK(run(ro) == 0);
    CHECK(slurp(out1 + "/moments.csv") != slurp(out1 + "_seed/moments.csv"));
}

TEST_CASE("exit codes: config errors yield 2, unknown subcommand yields 2") {
    RunOptions ro;
    ro.subcommand = "simulate";
    ro.config_path = "/nonexistent/config.json";
    ro.quiet = true;
    CHECK(run(ro) == 2);

    const std::string cfg_path = write_temp("tcv_test_cfg2.json", kMinimalConfig);
    ro.config_path = cfg_path;
    ro.subcommand = "does-not-exist";
    CHECK(run(ro) == 2);

    // subcommand requiring a missing section
    ro.subcommand = "harvest";
    CHECK(run(ro) == 2);
}

TEST_CASE("forward subcommand cross-checks the solvers") {
    const char* cfg = R"({
      "grid": {"T": 1.0, "steps": 20},
      "rate": {"B": {"kind": "constant", "level": 1.0}},
      "ensemble": {"paths": 200, "seed": 3},
      "forward": {"model": "linear", "drift": 0.2, "sigma_x": 0.1, "x0": 1.0}
    })";
    const std::string cfg_path = write_temp("tcv_test_fwd.json", cfg);
    const std::string out = (std::filesystem::temp_directory_path() / "tcv_out_fwd").string();
    RunOptions ro;
    ro.subcommand = "forward";
    ro.config_path = cfg_path;
    ro.out_dir = out;
    ro.quiet = true;
    CHECK(run(ro) == 0);
    const std::string summary = slurp(out + "/forward_summary.csv");
    CHECK(summary.find("t,mean_direct") == 0);
    CHECK(!slurp(out + "/picard_diffs.csv").empty());
    CHECK(!slurp(out + "/manifest.json").empty());
}
