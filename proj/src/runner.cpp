#include "tcv/runner.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "tcv/config.hpp"
#include "tcv/csv.hpp"
#include "tcv/errors.hpp"
#include "tcv/naderiv.hpp"
#include "tcv/simd.hpp"

namespace tcv {

namespace {

using nlohmann::json;

struct RunContext {
    ExperimentConfig cfg;
    std::string cfg_text;
    std::string out_dir;
    bool quiet = false;
};

void note(const RunContext& rc, const std::string& msg) {
    if (!rc.quiet) std::cout << msg << "\n";
}

void write_manifest(const RunContext& rc, const std::string& subcommand) {
    json m;
    m["subcommand"] = subcommand;
    m["config_hash"] = config_hash(rc.cfg_text);
    m["seed"] = rc.cfg.seed;
    m["paths"] = rc.cfg.n_paths;
    m["grid_steps"] = rc.cfg.steps;
    m["simd_backend"] = simd::active_backend().name;
    m["version"] = "0.1.0";
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    m["timestamp_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
    std::ofstream out(rc.out_dir + "/manifest.json", std::ios::binary);
    out << m.dump(2) << "\n";
}

PathEnsemble build_ensemble(const RunContext& rc) {
    TimeGrid grid = rc.cfg.make_grid();
    rng::EnsembleHandle ens{rc.cfg.n_paths, rc.cfg.seed};
    return simulate_paths(grid, rc.cfg.marks, rc.cfg.rate, ens);
}

int cmd_simulate(const RunContext& rc) {
    PathEnsemble paths = build_ensemble(rc);
    const int level = std::min(rc.cfg.partition_level, max_partition_level(paths.grid));
    PartitionScheme part = PartitionScheme::build(paths.grid, paths.marks, level);
    MomentReport rep = check_conditional_moments(paths, part);

    CsvWriter cells(rc.out_dir + "/moments.csv",
                    {"cell", "stratum", "n", "mean_mu", "z_mean", "mean_musq_minus_lam", "z_var"});
    for (const auto& r : rep.cells)
        cells.row({CsvWriter::cell(r.cell), CsvWriter::cell(r.stratum), CsvWriter::cell(r.n),
                   CsvWriter::cell(r.mean_mu), CsvWriter::cell(r.z_mean),
                   CsvWriter::cell(r.mean_musq_minus_lam), CsvWriter::cell(r.z_var)});
    CsvWriter pairs(rc.out_dir + "/moment_pairs.csv", {"cell_a", "cell_b", "mean_product", "z"});
    for (const auto& r : rep.pairs)
        pairs.row({CsvWriter::cell(r.cell_a), CsvWriter::cell(r.cell_b),
                   CsvWriter::cell(r.mean_product), CsvWriter::cell(r.z)});

    note(rc, "simulate: " + std::to_string(rep.cells.size()) + " moment rows, max |z| = " +
                 format_double(rep.max_abs_z()) +
                 (rep.insufficient_sample ? " (insufficient sample)" : ""));
    write_manifest(rc, "simulate");
    return 0;
}

VolterraModel forward_model(const ForwardConfig& fc) {
    VolterraModel m;
    m.X0 = fc.x0;
    if (fc.model == "linear") {
        const double r = fc.drift, s = fc.sigma_x;
        m.b = [r](double, double, double, double, double, double x) { return r * x; };
        if (s != 0.0)
            m.kappa = [s](double, double, double z, double, double, double, double x) {
                return z == 0.0 ? s * x : 0.0;
            };
        m.convolution_free = true;
        m.noise_convolution_free = true;
    } else if (fc.model == "exp_kernel") {
        const double a = fc.kernel_rate;
        m.b = [a](double t, double s, double, double, double, double x) {
            return std::exp(-a * (t - s)) * x;
        };
        m.dt_b = [a](double t, double s, double, double, double, double x) {
            return -a * std::exp(-a * (t - s)) * x;
        };
        m.noise_convolution_free = true;
    } else { // additive
        const double r = fc.drift, s = fc.sigma_x;
        m.b = [r](double, double, double, double, double, double) { return r; };
        if (s != 0.0)
            m.kappa = [s](double, double, double, double, double, double, double) { return s; };
        m.convolution_free = true;
        m.noise_convolution_free = true;
    }
    return m;
}

int cmd_forward(const RunContext& rc) {
    if (!rc.cfg.forward) throw ConfigError("forward subcommand needs a 'forward' config section");
    const ForwardConfig& fc = *rc.cfg.forward;
    PathEnsemble paths = build_ensemble(rc);
    VolterraModel model = forward_model(fc);
    ControlPolicy policy = ControlPolicy::constant(fc.control, fc.control, fc.control + 1.0);

    std::vector<StatePath> direct = solve_direct(model, policy, paths);
    std::vector<StatePath> diff = solve_differential(model, policy, paths);
    PicardResult pic = solve_picard(model, policy, paths, fc.picard_iters, fc.picard_tol);

    const std::size_t M = paths.grid.steps();
    const std::size_t n = paths.n_paths();
    CsvWriter summary(rc.out_dir + "/forward_summary.csv",
                      {"t", "mean_direct", "mean_differential", "mean_picard", "sup_gap_diff",
                       "sup_gap_picard"});
    for (std::size_t i = 0; i <= M; ++i) {
        double md = 0, mf = 0, mp = 0, gd = 0, gp = 0;
        for (std::size_t p = 0; p < n; ++p) {
            md += direct[p].x[i];
            mf += diff[p].x[i];
            mp += pic.states[p].x[i];
            gd = std::max(gd, std::fabs(direct[p].x[i] - diff[p].x[i]));
            gp = std::max(gp, std::fabs(direct[p].x[i] - pic.states[p].x[i]));
        }
        summary.row({CsvWriter::cell(paths.grid.t[i]), CsvWriter::cell(md / double(n)),
                     CsvWriter::cell(mf / double(n)), CsvWriter::cell(mp / double(n)),
                     CsvWriter::cell(gd), CsvWriter::cell(gp)});
    }
    CsvWriter pd(rc.out_dir + "/picard_diffs.csv", {"iteration", "l2_diff"});
    for (std::size_t k = 0; k < pic.diag.diffs.size(); ++k)
        pd.row({CsvWriter::cell(k + 1), CsvWriter::cell(pic.diag.diffs[k])});

    note(rc, "forward: " + fc.model + ", picard " +
                 (pic.diag.converged ? "converged" : "not converged") + " in " +
                 std::to_string(pic.diag.iterations) + " iterations");
    write_manifest(rc, "forward");
    return 0;
}

int cmd_naderiv(const RunContext& rc) {
    PathEnsemble paths = build_ensemble(rc);
    const std::size_t n = paths.n_paths();
    const std::size_t M = paths.grid.steps();

    NaOptions na;
    na.features = rc.cfg.condexp;

    // representation targets: B(T), a smooth-in-time integrand, Lambda_T
    std::vector<double> bT(n), smoothI(n), lamT(n);
    for (std::size_t p = 0; p < n; ++p) {
        double b = 0.0, sI = 0.0;
        for (std::size_t i = 0; i < M; ++i) {
            b += paths.noise[p].dB[i];
            sI += paths.grid.t[i] * paths.noise[p].dB[i];
        }
        bT[p] = b;
        smoothI[p] = sI;
        lamT[p] = paths.rates[p].cum_B.back();
    }
    struct Target {
        const char* name;
        std::vector<double>* xi;
    } targets[] = {{"B_T", &bT}, {"int_t_dB", &smoothI}, {"Lambda_T", &lamT}};

    CsvWriter rep(rc.out_dir + "/naderiv_report.csv",
                  {"target", "level", "rel_l2_reconstruction", "duality_z"});
    const int max_level = std::min(rc.cfg.partition_level, max_partition_level(paths.grid));
    for (const auto& tgt : targets) {
        for (int lvl = 1; lvl <= max_level; ++lvl) {
            PartitionScheme part = PartitionScheme::build(paths.grid, paths.marks, lvl);
            NaField field = estimate_na_derivative(*tgt.xi, paths, part, na);
            Reconstruction rec = reconstruct(*tgt.xi, field, paths, na);
            DualityReport dual = duality_check(
                *tgt.xi, [](std::size_t, std::size_t, int mark) { return mark < 0 ? 1.0 : 0.0; },
                paths, part, na);
            rep.row({tgt.name, CsvWriter::cell(lvl), CsvWriter::cell(rec.rel_l2_error),
                     CsvWriter::cell(dual.z)});
        }
    }
    note(rc, "naderiv: report written for 3 targets");
    write_manifest(rc, "naderiv");
    return 0;
}

int cmd_bsde(const RunContext& rc) {
    PathEnsemble paths = build_ensemble(rc);
    const std::size_t n = paths.n_paths();

    BsdeSpec spec;
    spec.terminal.assign(n, 1.0);
    spec.driver_on_raw_target = rc.cfg.bsde_driver_on_raw;
    const double a = 0.5;
    spec.driver = [a](std::size_t, std::size_t, double, double, double, double p, const QView&) {
        return a * p;
    };
    BsdeOptions bo;
    bo.features = rc.cfg.condexp;
    BsdeSolution sol = solve_backward(spec, paths, bo);

    CsvWriter slices(rc.out_dir + "/bsde_slices.csv",
                     {"t", "mean_p", "sd_p", "mean_q0", "r2_p", "floor_hits", "q_norm"});
    for (std::size_t i = 0; i <= sol.n_steps; ++i) {
        auto ps = sol.p_slice(i);
        auto st = simd::mean_se(ps);
        double q0m = 0.0;
        if (i < sol.n_steps) {
            for (std::size_t p = 0; p < n; ++p) q0m += sol.q0_at(i, p);
            q0m /= double(n);
        }
        const SliceDiagnostics dg = i < sol.n_steps ? sol.diag[i] : SliceDiagnostics{};
        slices.row({CsvWriter::cell(paths.grid.t[i]), CsvWriter::cell(st.mean),
                    CsvWriter::cell(st.se * std::sqrt(double(n))), CsvWriter::cell(q0m),
                    CsvWriter::cell(dg.r2_p), CsvWriter::cell(dg.floor_hits),
                    CsvWriter::cell(dg.q_norm)});
    }
    note(rc, "bsde: linear-driver solve finished, p(0) mean = " +
                 format_double(simd::mean(sol.p_slice(0))));
    write_manifest(rc, "bsde");
    return 0;
}

int cmd_check_mp(const RunContext& rc) {
    PathEnsemble paths = build_ensemble(rc);

    // quadratic-cost linear-state toy with its analytic stationary control
    VolterraModel model;
    model.X0 = rc.cfg.forward ? rc.cfg.forward->x0 : 0.0;
    model.b = [](double, double, double, double, double u, double) { return u; };
    model.dx_b = [](double, double, double, double, double, double) { return 0.0; };
    model.du_b = [](double, double, double, double, double, double) { return 1.0; };
    model.convolution_free = true;
    model.noise_convolution_free = true;

    Objective obj;
    obj.F = [](double, double, double, double u, double) { return -u * u; };
    obj.dxF = [](double, double, double, double, double) { return 0.0; };
    obj.duF = [](double, double, double, double u, double) { return -2.0 * u; };
    obj.G = [](double x) { return x; };
    obj.dxG = [](double) { return 1.0; };

    ControlPolicy u_hat = ControlPolicy::constant(0.5, 0.0, 1.0);
    std::vector<StatePath> states = solve_direct(model, u_hat, paths);

    BsdeSpec spec = make_adjoint_spec(model, obj, paths, states);
    BsdeOptions bo;
    bo.features = rc.cfg.condexp;
    BsdeSolution sol = solve_backward(spec, paths, bo);
    auto slices = state_slices(states);
    AdjointSlices proj = project_to_F(sol, paths, rc.cfg.condexp, &slices);

    HamiltonianInputs in;
    in.model = &model;
    in.objective = &obj;
    in.paths = &paths;
    in.states = &states;
    in.adjoint = &proj;

    MpOptions mo;
    mo.u_grid_points = rc.cfg.mp_u_grid;
    mo.tol_max = rc.cfg.mp_tol_max;
    mo.tol_conc = rc.cfg.mp_tol_conc;
    mo.x_probe_pairs = {{model.X0 - 1.0, model.X0 + 1.0}, {model.X0, model.X0 + 0.5}};
    MpReport rep = check_sufficient(u_hat, in, mo);

    CsvWriter out(rc.out_dir + "/mp_report.csv", {"t", "max_gap", "mean_gap"});
    for (const auto& row : rep.per_time)
        out.row({CsvWriter::cell(row.t), CsvWriter::cell(row.max_gap),
                 CsvWriter::cell(row.mean_gap)});

    note(rc, std::string("check-mp: verdict ") + (rep.verdict ? "pass" : "FAIL") +
                 ", max gap " + format_double(rep.max_gap));
    write_manifest(rc, "check-mp");
    return rep.verdict ? 0 : 4;
}

int cmd_harvest(const RunContext& rc) {
    if (!rc.cfg.harvest) throw ConfigError("harvest subcommand needs a 'harvest' config section");
    const HarvestConfig& hc = *rc.cfg.harvest;
    PathEnsemble paths = build_ensemble(rc);
    const std::size_t M = paths.grid.steps();
    const std::size_t n = paths.n_paths();

    HarvestOptions ho;
    ho.g_features = rc.cfg.condexp;
    ho.f_features = rc.cfg.condexp;

    CandidateOptions copts;
    copts.harvest = ho;
    copts.tol = hc.candidate_tol;
    HarvestSolution sol = solve_candidate(hc.model, paths, copts);

    // two-route adjoint at the candidate
    FormulaAdjoint fa = adjoint_formula(hc.model, sol.u_hat, paths, ho);
    BsdeSolution bs = harvest_bsde(hc.model, sol.u_hat, paths, ho);
    AdjointSlices bsF = project_to_F(bs, paths, rc.cfg.condexp, nullptr);

    CsvWriter curve(rc.out_dir + "/harvest_uhat.csv",
                    {"t", "u_hat", "target", "pF_formula", "pF_bsde", "residual"});
    for (std::size_t i = 0; i <= M; ++i) {
        double pf = 0.0, pb = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            pf += fa.pF_at(i, p);
            pb += bsF.p_at(i, p);
        }
        pf /= double(n);
        pb /= double(n);
        curve.row({CsvWriter::cell(paths.grid.t[i]),
                   CsvWriter::cell(i < M ? sol.u_hat[i] : sol.u_hat.back()),
                   CsvWriter::cell(sol.target[i]), CsvWriter::cell(pf), CsvWriter::cell(pb),
                   CsvWriter::cell(sol.residual[i])});
    }

    // simulated constant-control scan (informational; oracle comparisons
    // live in the acceptance suite)
    JEstimate j_hat = evaluate_J(hc.model, sol.u_hat, paths);
    CsvWriter scan(rc.out_dir + "/harvest_scan.csv", {"u", "J_mean", "J_se"});
    for (std::size_t k = 0; k < hc.scan_points; ++k) {
        const double u = hc.model.u_max * double(k) / double(hc.scan_points - 1);
        JEstimate je = evaluate_J(hc.model, std::vector<double>(M, u), paths);
        scan.row({CsvWriter::cell(u), CsvWriter::cell(je.mean), CsvWriter::cell(je.se)});
    }

    // route discrepancy in ensemble L2 over the grid
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i <= M; ++i) {
        for (std::size_t p = 0; p < n; ++p) {
            const double d = fa.pF_at(i, p) - bsF.p_at(i, p);
            num += d * d;
            den += fa.pF_at(i, p) * fa.pF_at(i, p);
        }
    }
    const double route_gap = den > 0.0 ? std::sqrt(num / den) : 0.0;

    CsvWriter summary(rc.out_dir + "/harvest_summary.csv",
                      {"converged", "iterations", "sup_residual", "J_uhat", "J_se",
                       "route_rel_l2_gap"});
    summary.row({CsvWriter::cell(std::size_t(sol.converged ? 1 : 0)),
                 CsvWriter::cell(sol.iterations), CsvWriter::cell(sol.sup_residual),
                 CsvWriter::cell(j_hat.mean), CsvWriter::cell(j_hat.se),
                 CsvWriter::cell(route_gap)});

    note(rc, std::string("harvest: candidate ") +
                 (sol.converged ? "converged" : "DID NOT CONVERGE") + ", sup residual " +
                 format_double(sol.sup_residual) + ", two-route gap " +
                 format_double(route_gap));
    write_manifest(rc, "harvest");
    return sol.converged ? 0 : 4;
}

} // namespace

int run(const RunOptions& opts) {
    RunContext rc;
    rc.quiet = opts.quiet;
    try {
        std::ifstream in(opts.config_path);
        if (!in) throw ConfigError("cannot read config file " + opts.config_path);
        std::stringstream ss;
        ss << in.rdbuf();
        rc.cfg_text = ss.str();
        rc.cfg = parse_config(rc.cfg_text);
        if (opts.seed_override) rc.cfg.seed = *opts.seed_override;
        if (opts.paths_override) rc.cfg.n_paths = *opts.paths_override;
        rc.out_dir = opts.out_dir.empty() ? rc.cfg.out_dir : opts.out_dir;
        std::filesystem::create_directories(rc.out_dir);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (opts.subcommand == "simulate") return cmd_simulate(rc);
        if (opts.subcommand == "forward") return cmd_forward(rc);
        if (opts.subcommand == "naderiv") return cmd_naderiv(rc);
        if (opts.subcommand == "bsde") return cmd_bsde(rc);
        if (opts.subcommand == "check-mp") return cmd_check_mp(rc);
        if (opts.subcommand == "harvest") return cmd_harvest(rc);
        std::cerr << "unknown subcommand '" << opts.subcommand << "'\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalBlowup& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const SingularRegression& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

} // namespace tcv
