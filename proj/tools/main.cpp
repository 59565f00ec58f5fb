#include <CLI11.hpp>

#include "tcv/runner.hpp"

int main(int argc, char** argv) {
    CLI::App app{"time-changed Volterra control toolkit"};
    app.require_subcommand(1);

    tcv::RunOptions opts;
    std::uint64_t seed = 0;
    std::size_t paths = 0;

    const std::vector<std::string> names = {"simulate", "forward", "naderiv",
                                            "bsde",     "check-mp", "harvest"};
    const std::vector<std::string> descs = {
        "sample the noise field and verify its conditional moments",
        "solve the forward Volterra equation three ways and cross-check",
        "non-anticipating derivative, representation and duality reports",
        "backward solver diagnostics on a linear-driver problem",
        "sufficient/necessary maximum-principle report for the quadratic toy",
        "full optimal-harvesting pipeline",
    };
    for (std::size_t k = 0; k < names.size(); ++k) {
        CLI::App* sub = app.add_subcommand(names[k], descs[k]);
        sub->add_option("--config", opts.config_path, "experiment config file")->required();
        sub->add_option("--out", opts.out_dir, "output directory (overrides config)");
        CLI::Option* os = sub->add_option("--seed", seed, "master seed override");
        CLI::Option* op = sub->add_option("--paths", paths, "path count override");
        sub->add_flag("--quiet", opts.quiet, "suppress progress output");
        sub->callback([&, k, os, op] {
            opts.subcommand = names[k];
            if (os->count()) opts.seed_override = seed;
            if (op->count()) opts.paths_override = paths;
        });
    }

    CLI11_PARSE(app, argc, argv);
    return tcv::run(opts);
}
