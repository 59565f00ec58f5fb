#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "tcv/condexp.hpp"
#include "tcv/grid.hpp"
#include "tcv/harvest.hpp"
#include "tcv/timechange.hpp"

// Experiment configuration: strict-schema JSON. Unknown keys are rejected
// with their JSON path; values are validated against the module
// preconditions with the offending field named.

namespace tcv {

struct ForwardConfig {
    std::string model = "linear"; // linear | exp_kernel | additive
    double x0 = 1.0;
    double drift = 0.25;     // linear growth rate / additive drift level
    double sigma_x = 0.1;    // state-proportional noise loading
    double kernel_rate = 1.0; // exp_kernel decay
    double control = 0.0;
    std::size_t picard_iters = 8;
    double picard_tol = 1e-12;
};

struct HarvestConfig {
    HarvestModel model;
    std::string r_kind = "constant";
    std::string sigma_kind = "constant";
    double fixed_control = 0.0; // deterministic control for the two-route run
    std::size_t scan_points = 21;
    double candidate_tol = 0.0; // <= 0: solve_candidate default
};

struct ExperimentConfig {
    double T = 1.0;
    std::size_t steps = 100;
    MarkGrid marks;
    RateModel rate;
    std::size_t n_paths = 10000;
    std::uint64_t seed = 1;
    FeatureOptions condexp;
    int partition_level = 3;
    bool bsde_driver_on_raw = false;
    std::optional<ForwardConfig> forward;
    std::optional<HarvestConfig> harvest;
    std::size_t mp_u_grid = 101;
    double mp_tol_max = 1e-6;
    double mp_tol_conc = 1e-8;
    std::string out_dir = "out";

    TimeGrid make_grid() const { return TimeGrid::build_uniform(T, steps); }
};

ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(const std::string& json_text);

// FNV-1a hash of the canonical serialized config (manifest reproducibility key).
std::uint64_t config_hash(const std::string& json_text);

} // namespace tcv
