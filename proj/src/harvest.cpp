#include "tcv/harvest.hpp"

#include <cmath>
#include <stdexcept>

#include "tcv/errors.hpp"
#include "tcv/parallel.hpp"
#include "tcv/simd.hpp"

namespace tcv {

void HarvestModel::validate(const TimeGrid& grid) const {
    if (!(K > 0.0)) throw std::invalid_argument("catchability K must be positive");
    if (!(X0 > 0.0)) throw std::invalid_argument("initial biomass X0 must be positive");
    if (!(delta > 0.0)) throw std::invalid_argument("discount rate delta must be positive");
    if (!(u_max > 0.0)) throw std::invalid_argument("u_max must be positive");
    if (!r || !sigma) throw std::invalid_argument("growth kernel and volatility are required");
    for (double t : grid.t)
        if (!(sigma(t) > -1.0))
            throw std::invalid_argument("volatility must satisfy sigma(t) > -1 on the grid");
}

VolterraModel HarvestModel::to_volterra() const {
    VolterraModel m;
    m.X0 = X0;
    const auto rk = r;
    const auto drk = dt_r;
    const auto sg = sigma;
    const double k = K;
    m.b = [rk, k](double t, double s, double, double, double u, double x) {
        return (rk(t, s) - k * u) * x;
    };
    if (drk)
        m.dt_b = [drk](double t, double s, double, double, double, double x) {
            return drk(t, s) * x;
        };
    m.kappa = [sg](double, double s, double z, double, double, double, double x) {
        return z == 0.0 ? sg(s) * x : 0.0;
    };
    m.dx_b = [rk, k](double t, double s, double, double, double u, double) {
        return rk(t, s) - k * u;
    };
    m.du_b = [k](double, double, double, double, double, double x) { return -k * x; };
    m.dx_kappa = [sg](double, double s, double z, double, double, double, double) {
        return z == 0.0 ? sg(s) : 0.0;
    };
    m.du_kappa = [](double, double, double, double, double, double, double) { return 0.0; };
    if (drk)
        m.dtdx_b = [drk](double t, double s, double, double, double, double) {
            return drk(t, s);
        };
    m.dtdu_b = nullptr; // d/du of the drift has no t-dependence
    m.noise_convolution_free = true; // kappa = sigma(s) x carries no running-time memory
    m.convolution_free = !static_cast<bool>(drk);
    return m;
}

Objective HarvestModel::to_objective(double horizon) const {
    Objective obj;
    const double d = delta;
    obj.F = [d, horizon](double t, double, double, double u, double x) {
        return std::exp(-d * (horizon - t)) * u * x;
    };
    obj.dxF = [d, horizon](double t, double, double, double u, double) {
        return std::exp(-d * (horizon - t)) * u;
    };
    obj.duF = [d, horizon](double t, double, double, double, double x) {
        return std::exp(-d * (horizon - t)) * x;
    };
    obj.G = nullptr;
    obj.dxG = nullptr;
    return obj;
}

std::vector<double> tilde_r_curve(const HarvestModel& model, const TimeGrid& grid) {
    const std::size_t M = grid.steps();
    std::vector<double> out(M + 1);
    for (std::size_t i = 0; i <= M; ++i) {
        const double t = grid.t[i];
        double integral = 0.0;
        if (model.dt_r) {
            for (std::size_t j = 0; j < i; ++j)
                integral += 0.5 * (model.dt_r(t, grid.t[j]) + model.dt_r(t, grid.t[j + 1])) *
                            grid.dt(j);
        }
        out[i] = model.r(t, t) + integral;
    }
    return out;
}

double tilde_r(const HarvestModel& model, const TimeGrid& grid, double t) {
    double integral = 0.0;
    if (model.dt_r) {
        for (std::size_t j = 0; j < grid.steps() && grid.t[j] < t; ++j) {
            const double hi = std::min(grid.t[j + 1], t);
            integral += 0.5 * (model.dt_r(t, grid.t[j]) + model.dt_r(t, hi)) * (hi - grid.t[j]);
        }
    }
    return model.r(t, t) + integral;
}

namespace {

std::vector<StatePath> simulate_impl(const HarvestModel& model, const PathEnsemble& paths,
                                     const std::function<double(std::size_t p, std::size_t i)>& u) {
    model.validate(paths.grid);
    const std::size_t n = paths.n_paths();
    const std::size_t M = paths.grid.steps();
    std::vector<StatePath> out(n);
    parallel_for_paths(n, [&](std::size_t p) {
        StatePath& sp = out[p];
        sp.x.resize(M + 1);
        sp.u.resize(M);
        sp.x[0] = model.X0;
        const RatePath& rp = paths.rates[p];
        for (std::size_t i = 0; i < M; ++i) {
            const double t = paths.grid.t[i];
            const double dt = paths.grid.dt(i);
            sp.u[i] = u(p, i);
            // transformation-rule drift: diagonal part plus the kernel memory
            double mem = 0.0;
            if (model.dt_r) {
                for (std::size_t s = 0; s < i; ++s)
                    mem += model.dt_r(t, paths.grid.t[s]) * sp.x[s] * paths.grid.dt(s);
            }
            const double sg = model.sigma(t);
            const double dlam = rp.dlam_B(i);
            const double expo = (model.r(t, t) - model.K * sp.u[i] + mem / sp.x[i]) * dt -
                                0.5 * sg * sg * dlam + sg * paths.noise[p].dB[i];
            sp.x[i + 1] = sp.x[i] * std::exp(expo);
        }
    });
    return out;
}

} // namespace

std::vector<StatePath> simulate_state(const HarvestModel& model,
                                      const std::vector<double>& u_steps,
                                      const PathEnsemble& paths) {
    if (u_steps.size() != paths.grid.steps())
        throw std::invalid_argument("control vector must have one value per step");
    return simulate_impl(model, paths,
                         [&](std::size_t, std::size_t i) { return u_steps[i]; });
}

std::vector<StatePath> simulate_state_matrix(const HarvestModel& model,
                                             const std::vector<double>& u_matrix,
                                             const PathEnsemble& paths) {
    const std::size_t M = paths.grid.steps();
    if (u_matrix.size() != paths.n_paths() * M)
        throw std::invalid_argument("control matrix must be n_paths x steps");
    return simulate_impl(model, paths,
                         [&](std::size_t p, std::size_t i) { return u_matrix[p * M + i]; });
}

std::vector<std::size_t> positivity_stop_index(const std::vector<StatePath>& states) {
    std::vector<std::size_t> tau(states.size());
    for (std::size_t p = 0; p < states.size(); ++p) {
        const auto& x = states[p].x;
        std::size_t i = 0;
        while (i < x.size() && x[i] > 0.0) ++i;
        tau[p] = i < x.size() ? i : x.size() - 1;
    }
    return tau;
}

namespace {

FormulaAdjoint adjoint_formula_impl(const HarvestModel& model, const PathEnsemble& paths,
                                    const std::function<double(std::size_t, std::size_t)>& u,
                                    bool deterministic_u, const HarvestOptions& opts) {
    model.validate(paths.grid);
    const std::size_t n = paths.n_paths();
    const std::size_t M = paths.grid.steps();
    const double T = paths.grid.horizon();

    const std::vector<double> tr = tilde_r_curve(model, paths.grid);
    std::vector<double> R(M + 1, 0.0); // cumulative integral of r~
    for (std::size_t i = 0; i < M; ++i)
        R[i + 1] = R[i] + 0.5 * (tr[i] + tr[i + 1]) * paths.grid.dt(i);

    // inner pathwise integral I_i = int_t^T exp(int_t^s r~) e^{-delta(T-s)} u(s) ds,
    // left-endpoint quadrature, by backward recursion
    std::vector<double> I((M + 1) * n);
    parallel_for_paths(n, [&](std::size_t p) {
        double acc = 0.0;
        I[M * n + p] = 0.0;
        for (std::size_t i = M; i-- > 0;) {
            acc = u(p, i) * paths.grid.dt(i) * std::exp(-model.delta * (T - paths.grid.t[i])) +
                  std::exp(R[i + 1] - R[i]) * acc;
            I[i * n + p] = acc;
        }
    });

    FormulaAdjoint fa;
    fa.n_paths = n;
    fa.n_steps = M;
    fa.pG.resize((M + 1) * n);
    fa.pF.resize((M + 1) * n);

    if (deterministic_u) {
        // constant targets: the weighted and plain regressions both return
        // the constant exactly, so skip the fits
        fa.pG = I;
        fa.pF = I;
        return fa;
    }

    // Q-expectation by likelihood-ratio weighting M(T)/M(t), then the
    // observable projection
    const auto Mgir = girsanov_density([&](double t) { return model.sigma(t); }, paths);
    std::vector<double> slice(n), w(n);
    for (std::size_t i = 0; i <= M; ++i) {
        for (std::size_t p = 0; p < n; ++p) {
            slice[p] = I[i * n + p];
            w[p] = Mgir[p][M] / Mgir[p][i];
        }
        FeatureSet gs = build_features(paths, Flow::G, i, opts.g_features);
        FitOptions fo = opts.fit;
        fo.weights = std::span<const double>(w.data(), n);
        fo.where = "harvest adjoint formula (Q) at step " + std::to_string(i);
        RegressionFit fg = fit_conditional(slice, gs, fo);
        std::vector<double> pg = predict(fg, gs);
        for (std::size_t p = 0; p < n; ++p) fa.pG[i * n + p] = pg[p];

        FeatureSet fsF = build_features(paths, Flow::F, i, opts.f_features);
        FitOptions ff = opts.fit;
        ff.where = "harvest adjoint formula (F) at step " + std::to_string(i);
        RegressionFit fF = fit_conditional(pg, fsF, ff);
        std::vector<double> pf = predict(fF, fsF);
        for (std::size_t p = 0; p < n; ++p) fa.pF[i * n + p] = pf[p];
    }
    return fa;
}

} // namespace

FormulaAdjoint adjoint_formula(const HarvestModel& model, const std::vector<double>& u_steps,
                               const PathEnsemble& paths, const HarvestOptions& opts) {
    if (u_steps.size() != paths.grid.steps())
        throw std::invalid_argument("control vector must have one value per step");
    return adjoint_formula_impl(model, paths,
                                [&](std::size_t, std::size_t i) { return u_steps[i]; }, true,
                                opts);
}

FormulaAdjoint adjoint_formula_matrix(const HarvestModel& model,
                                      const std::vector<double>& u_matrix,
                                      const PathEnsemble& paths, const HarvestOptions& opts) {
    const std::size_t M = paths.grid.steps();
    if (u_matrix.size() != paths.n_paths() * M)
        throw std::invalid_argument("control matrix must be n_paths x steps");
    return adjoint_formula_impl(model, paths,
                                [&](std::size_t p, std::size_t i) { return u_matrix[p * M + i]; },
                                false, opts);
}

BsdeSolution harvest_bsde(const HarvestModel& model, const std::vector<double>& u_steps,
                          const PathEnsemble& paths, const HarvestOptions& opts) {
    model.validate(paths.grid);
    const std::size_t M = paths.grid.steps();
    if (u_steps.size() != M)
        throw std::invalid_argument("control vector must have one value per step");
    const double T = paths.grid.horizon();
    const std::vector<double> tr = tilde_r_curve(model, paths.grid);

    BsdeSpec spec;
    spec.terminal.assign(paths.n_paths(), 0.0);
    spec.driver = [&model, u_steps, tr, T](std::size_t, std::size_t step, double t, double lamB,
                                           double, double p, const QView& q) {
        return std::exp(-model.delta * (T - t)) * u_steps[step] + tr[step] * p +
               model.sigma(t) * q.q0 * lamB;
    };

    BsdeOptions bo;
    bo.features = opts.g_features;
    bo.fit = opts.fit;
    return solve_backward(spec, paths, bo);
}

HarvestSolution solve_candidate(const HarvestModel& model, const PathEnsemble& paths,
                                const CandidateOptions& opts) {
    model.validate(paths.grid);
    const std::size_t M = paths.grid.steps();
    const std::size_t n = paths.n_paths();
    const double T = paths.grid.horizon();

    HarvestSolution sol;
    sol.u_hat.assign(M, 0.0);
    sol.target.resize(M + 1);
    for (std::size_t i = 0; i <= M; ++i)
        sol.target[i] = std::exp(-model.delta * (T - paths.grid.t[i])) / model.K;
    // the terminal slice is pinned by p(T) = 0, not by the characterization
    sol.target[M] = 0.0;

    const double tol = opts.tol > 0.0
                           ? opts.tol
                           : 0.01 * std::exp(-model.delta * paths.grid.dt(M - 1)) / model.K;

    sol.residual.assign(M + 1, 0.0);
    sol.pF_mean.assign(M + 1, 0.0);

    for (std::size_t it = 0; it < opts.max_iter; ++it) {
        FormulaAdjoint fa = adjoint_formula(model, sol.u_hat, paths, opts.harvest);
        double sup = 0.0;
        for (std::size_t i = 0; i <= M; ++i) {
            double mean = 0.0;
            for (std::size_t p = 0; p < n; ++p) mean += fa.pF_at(i, p);
            mean /= static_cast<double>(n);
            sol.pF_mean[i] = mean;
            sol.residual[i] = std::fabs(mean - sol.target[i]);
            sup = std::max(sup, sol.residual[i]);
        }
        sol.sup_residual = sup;
        sol.residual_history.push_back(sup);
        sol.iterations = it + 1;
        if (sup <= tol) {
            sol.converged = true;
            break;
        }
        // damped diagonal correction: dp(t_i)/du_i = e^{-delta(T-t_i)} dt_i
        for (std::size_t i = 0; i < M; ++i) {
            const double sens = std::exp(-model.delta * (T - paths.grid.t[i])) * paths.grid.dt(i);
            const double step = opts.damping * (sol.target[i] - sol.pF_mean[i]) / sens;
            sol.u_hat[i] = std::clamp(sol.u_hat[i] + step, 0.0, model.u_max);
        }
    }
    return sol;
}

std::vector<double> evaluate_J_paths(const HarvestModel& model,
                                     const std::vector<double>& u_steps,
                                     const PathEnsemble& paths) {
    std::vector<StatePath> states = simulate_state(model, u_steps, paths);
    const std::size_t n = paths.n_paths();
    const std::size_t M = paths.grid.steps();
    const double T = paths.grid.horizon();
    std::vector<double> j(n);
    parallel_for_paths(n, [&](std::size_t p) {
        double acc = 0.0;
        for (std::size_t i = 0; i < M; ++i)
            acc += std::exp(-model.delta * (T - paths.grid.t[i])) * states[p].x[i] *
                   u_steps[i] * paths.grid.dt(i);
        j[p] = acc;
    });
    return j;
}

JEstimate evaluate_J(const HarvestModel& model, const std::vector<double>& u_steps,
                     const PathEnsemble& paths) {
    std::vector<double> j = evaluate_J_paths(model, u_steps, paths);
    auto st = simd::mean_se(j);
    return {st.mean, st.se};
}

} // namespace tcv
