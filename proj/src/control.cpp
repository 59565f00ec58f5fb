#include "tcv/control.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "tcv/errors.hpp"
#include "tcv/parallel.hpp"
#include "tcv/simd.hpp"

namespace tcv {

AdjointSlices adjoint_slices(const BsdeSolution& sol) {
    AdjointSlices a;
    a.n_paths = sol.n_paths;
    a.n_steps = sol.n_steps;
    a.n_marks = sol.n_marks;
    a.p = sol.p;
    a.q0 = sol.q0;
    a.qz = sol.qz;
    return a;
}

std::vector<std::vector<double>> state_slices(const std::vector<StatePath>& states) {
    const std::size_t n = states.size();
    const std::size_t m = states.empty() ? 0 : states[0].x.size();
    std::vector<std::vector<double>> out(m, std::vector<double>(n));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < n; ++p) out[i][p] = states[p].x[i];
    return out;
}

AdjointSlices project_to_F(const BsdeSolution& sol, const PathEnsemble& paths,
                           const FeatureOptions& fopts,
                           const std::vector<std::vector<double>>* slices,
                           const FitOptions& fit) {
    AdjointSlices a;
    a.n_paths = sol.n_paths;
    a.n_steps = sol.n_steps;
    a.n_marks = sol.n_marks;
    a.p.assign(sol.p.size(), 0.0);
    a.q0.assign(sol.q0.size(), 0.0);
    a.qz.assign(sol.qz.size(), 0.0);

    const std::size_t n = sol.n_paths;
    std::vector<double> tgt(n);
    for (std::size_t i = 0; i <= sol.n_steps; ++i) {
        ExtraColumns extras;
        if (slices) extras.emplace_back("X_t", &(*slices)[i]);
        FeatureSet fs = build_features(paths, Flow::F, i, fopts, extras);

        FitOptions fo = fit;
        fo.where = "F-projection of p at step " + std::to_string(i);
        for (std::size_t p = 0; p < n; ++p) tgt[p] = sol.p_at(i, p);
        RegressionFit fp = fit_conditional(tgt, fs, fo);
        std::vector<double> pp = predict(fp, fs);
        for (std::size_t p = 0; p < n; ++p) a.p[i * n + p] = pp[p];

        if (i < sol.n_steps) {
            fo.where = "F-projection of q0 at step " + std::to_string(i);
            for (std::size_t p = 0; p < n; ++p) tgt[p] = sol.q0_at(i, p);
            RegressionFit fq = fit_conditional(tgt, fs, fo);
            std::vector<double> qq = predict(fq, fs);
            for (std::size_t p = 0; p < n; ++p) a.q0[i * n + p] = qq[p];
            for (std::size_t j = 0; j < sol.n_marks; ++j) {
                fo.where = "F-projection of q(z) at step " + std::to_string(i);
                for (std::size_t p = 0; p < n; ++p) tgt[p] = sol.qz_at(i, p, j);
                RegressionFit fz = fit_conditional(tgt, fs, fo);
                std::vector<double> zz = predict(fz, fs);
                for (std::size_t p = 0; p < n; ++p)
                    a.qz[(i * n + p) * sol.n_marks + j] = zz[p];
            }
        }
    }
    return a;
}

NaOfAdjoint estimate_na_of_adjoint(const BsdeSolution& sol, const PathEnsemble& paths,
                                   const PartitionScheme& part, const NaOptions& opts,
                                   std::size_t slice_stride) {
    NaOfAdjoint out;
    for (std::size_t i = 0; i <= sol.n_steps; i += std::max<std::size_t>(1, slice_stride)) {
        std::span<const double> slice = sol.p_slice(i);
        out.at_slice.emplace(i, estimate_na_derivative(slice, paths, part, opts));
    }
    return out;
}

bool HamiltonianInputs::require_na_p() const {
    return model && model->kappa && !model->convolution_free && !model->noise_convolution_free;
}

namespace {

double eval_F(const Objective& obj, double t, double lamB, double lamH, double u, double x) {
    return obj.F ? obj.F(t, lamB, lamH, u, x) : 0.0;
}

const NaField* nearest_field(const NaOfAdjoint& na, std::size_t step) {
    if (na.at_slice.empty()) return nullptr;
    auto it = na.at_slice.lower_bound(step);
    if (it == na.at_slice.end()) return &std::prev(it)->second;
    if (it->first == step || it == na.at_slice.begin()) return &it->second;
    auto prev = std::prev(it);
    return (step - prev->first) <= (it->first - step) ? &prev->second : &it->second;
}

} // namespace

double hamiltonian(const HamiltonianInputs& in, std::size_t step, std::size_t path, double u) {
    const PathEnsemble& pe = *in.paths;
    const VolterraModel& m = *in.model;
    const StatePath& sp = (*in.states)[path];
    const RatePath& rp = pe.rates[path];
    const double t = pe.grid.t[step];
    const double x = sp.x[step];
    const double lB = rp.lam_B[step];
    const double lH = rp.lam_H[step];
    const double p = in.adjoint->p_at(step, path);

    double h = eval_F(*in.objective, t, lB, lH, u, x);
    if (m.b) h += m.b(t, t, lB, lH, u, x) * p;
    if (m.kappa && step < in.adjoint->n_steps) {
        h += m.kappa(t, t, 0.0, lB, lH, u, x) * in.adjoint->q0_at(step, path) * lB;
        for (std::size_t j = 0; j < pe.marks.size(); ++j)
            h += m.kappa(t, t, pe.marks.z[j], lB, lH, u, x) *
                 in.adjoint->qz_at(step, path, j) * lH * pe.marks.weight[j];
    }

    // memory component: drift part always, noise part through D p
    if (!m.convolution_free) {
        double drift_mem = 0.0;
        for (std::size_t s = 0; s < step; ++s) {
            if (m.dt_b) {
                drift_mem += m.dt_b(t, pe.grid.t[s], rp.lam_B[s], rp.lam_H[s], sp.u[s],
                                    sp.x[s]) *
                             pe.grid.dt(s);
            } else if (m.b) {
                const double hfd = 0.1 * pe.grid.dt(s);
                drift_mem += (m.b(t + hfd, pe.grid.t[s], rp.lam_B[s], rp.lam_H[s], sp.u[s],
                                  sp.x[s]) -
                              m.b(t - hfd, pe.grid.t[s], rp.lam_B[s], rp.lam_H[s], sp.u[s],
                                  sp.x[s])) /
                             (2.0 * hfd) * pe.grid.dt(s);
            }
        }
        h += drift_mem * p;

        if (m.kappa && !m.noise_convolution_free) {
            if (!in.na_p)
                throw UnsupportedModel(
                    "noise-memory Hamiltonian term needs the NA-derivative of p; declare the "
                    "model convolution-free or supply the experimental estimate");
            const NaField* f = nearest_field(*in.na_p, step);
            if (f) {
                const std::size_t nc = f->part.cells.size();
                for (std::size_t s = 0; s < step; ++s) {
                    const double gcell =
                        f->value[path * nc + f->part.cell_index(s, 0)];
                    double dk = m.dt_kappa
                                    ? m.dt_kappa(t, pe.grid.t[s], 0.0, rp.lam_B[s], rp.lam_H[s],
                                                 sp.u[s], sp.x[s])
                                    : 0.0;
                    h += dk * gcell * rp.dlam_B(s);
                    for (std::size_t j = 0; j < pe.marks.size(); ++j) {
                        const double fj =
                            f->value[path * nc + f->part.cell_index(s, 1 + j)];
                        const double dkj =
                            m.dt_kappa ? m.dt_kappa(t, pe.grid.t[s], pe.marks.z[j], rp.lam_B[s],
                                                    rp.lam_H[s], sp.u[s], sp.x[s])
                                       : 0.0;
                        h += dkj * fj * rp.dlam_H(s) * pe.marks.weight[j];
                    }
                }
            }
        }
    }
    return h;
}

namespace {

// Hamiltonian with the diagonal state value overridden (concavity probes).
double hamiltonian_x(const HamiltonianInputs& in, std::size_t step, std::size_t path, double u,
                     double x_override) {
    const PathEnsemble& pe = *in.paths;
    const VolterraModel& m = *in.model;
    const RatePath& rp = pe.rates[path];
    const double t = pe.grid.t[step];
    const double lB = rp.lam_B[step];
    const double lH = rp.lam_H[step];
    const double p = in.adjoint->p_at(step, path);

    double h = eval_F(*in.objective, t, lB, lH, u, x_override);
    if (m.b) h += m.b(t, t, lB, lH, u, x_override) * p;
    if (m.kappa && step < in.adjoint->n_steps) {
        h += m.kappa(t, t, 0.0, lB, lH, u, x_override) * in.adjoint->q0_at(step, path) * lB;
        for (std::size_t j = 0; j < pe.marks.size(); ++j)
            h += m.kappa(t, t, pe.marks.z[j], lB, lH, u, x_override) *
                 in.adjoint->qz_at(step, path, j) * lH * pe.marks.weight[j];
    }
    return h; // memory terms do not involve the diagonal state
}

} // namespace

double du_hamiltonian(const HamiltonianInputs& in, std::size_t step, std::size_t path, double u,
                      double fd_step) {
    const PathEnsemble& pe = *in.paths;
    const VolterraModel& m = *in.model;
    const StatePath& sp = (*in.states)[path];
    const RatePath& rp = pe.rates[path];
    const double t = pe.grid.t[step];
    const double x = sp.x[step];
    const double lB = rp.lam_B[step];
    const double lH = rp.lam_H[step];

    double v;
    const bool analytic = (in.objective->duF || !in.objective->F) && (m.du_b || !m.b) &&
                          (m.du_kappa || !m.kappa);
    if (analytic) {
        v = in.objective->duF ? in.objective->duF(t, lB, lH, u, x) : 0.0;
        if (m.du_b) v += m.du_b(t, t, lB, lH, u, x) * in.adjoint->p_at(step, path);
        if (m.du_kappa && step < in.adjoint->n_steps) {
            v += m.du_kappa(t, t, 0.0, lB, lH, u, x) * in.adjoint->q0_at(step, path) * lB;
            for (std::size_t j = 0; j < pe.marks.size(); ++j)
                v += m.du_kappa(t, t, pe.marks.z[j], lB, lH, u, x) *
                     in.adjoint->qz_at(step, path, j) * lH * pe.marks.weight[j];
        }
    } else {
        v = (hamiltonian(in, step, path, u + fd_step) -
             hamiltonian(in, step, path, u - fd_step)) /
            (2.0 * fd_step);
    }

    // Volterra memory correction: future Hamiltonians depend on u(t) through
    // the dt-kernels of their memory integrals.
    if (m.dtdu_b) {
        const std::size_t M = pe.grid.steps();
        double mem = 0.0;
        for (std::size_t fut = step + 1; fut <= M; ++fut)
            mem += m.dtdu_b(pe.grid.t[fut], t, lB, lH, u, x) * in.adjoint->p_at(fut, path) *
                   pe.grid.dt(fut - 1);
        v += mem;
    }
    if (m.dtdu_kappa) {
        if (!in.na_p)
            throw UnsupportedModel(
                "du Hamiltonian with dt-du noise kernel needs the NA-derivative of p");
        const std::size_t M = pe.grid.steps();
        double mem = 0.0;
        for (std::size_t fut = step + 1; fut <= M; ++fut) {
            const NaField* f = nearest_field(*in.na_p, fut);
            if (!f) continue;
            const std::size_t nc = f->part.cells.size();
            const double g0 = f->value[path * nc + f->part.cell_index(step, 0)];
            mem += m.dtdu_kappa(pe.grid.t[fut], t, 0.0, lB, lH, u, x) * g0 * rp.dlam_B(step) /
                   pe.grid.dt(step) * pe.grid.dt(fut - 1);
            for (std::size_t j = 0; j < pe.marks.size(); ++j) {
                const double gj = f->value[path * nc + f->part.cell_index(step, 1 + j)];
                mem += m.dtdu_kappa(pe.grid.t[fut], t, pe.marks.z[j], lB, lH, u, x) * gj *
                       rp.dlam_H(step) * pe.marks.weight[j] / pe.grid.dt(step) *
                       pe.grid.dt(fut - 1);
            }
        }
        v += mem;
    }
    return v;
}

MpReport check_sufficient(const ControlPolicy& candidate, const HamiltonianInputs& in,
                          const MpOptions& opts) {
    const PathEnsemble& pe = *in.paths;
    const std::size_t M = pe.grid.steps();
    const std::size_t np = std::min<std::size_t>(opts.path_sample, pe.n_paths());
    const std::size_t ng = std::max<std::size_t>(opts.u_grid_points, 2);

    MpReport rep;
    double gap_sum = 0.0;
    std::size_t gap_count = 0;

    for (std::size_t i = 0; i < M; i += std::max<std::size_t>(1, opts.time_stride)) {
        double t_max_gap = 0.0, t_gap_sum = 0.0;
        for (std::size_t p = 0; p < np; ++p) {
            const double u_hat = (*in.states)[p].u[i];
            const double h_hat = hamiltonian(in, i, p, u_hat);
            double best = hamiltonian(in, i, p, candidate.lo);
            double best_u = candidate.lo;
            for (std::size_t k = 1; k < ng; ++k) {
                const double u = candidate.lo + (candidate.hi - candidate.lo) *
                                                    static_cast<double>(k) /
                                                    static_cast<double>(ng - 1);
                const double h = hamiltonian(in, i, p, u);
                if (h > best + 1e-15 * std::fabs(best)) { // tie-break: smallest u
                    best = h;
                    best_u = u;
                }
            }
            if (best_u == candidate.lo || best_u == candidate.hi)
                ++rep.argmax_ties_at_boundary;
            const double gap = best - h_hat;
            t_max_gap = std::max(t_max_gap, gap);
            t_gap_sum += gap;
            gap_sum += gap;
            ++gap_count;
        }
        rep.per_time.push_back({pe.grid.t[i], t_max_gap, t_gap_sum / static_cast<double>(np)});
        rep.max_gap = std::max(rep.max_gap, t_max_gap);
    }
    rep.mean_gap = gap_count ? gap_sum / static_cast<double>(gap_count) : 0.0;
    rep.maximality_ok = rep.max_gap <= opts.tol_max;

    // midpoint concavity probes
    if (in.objective->G) {
        for (const auto& [x1, x2] : opts.x_probe_pairs) {
            const double v = 0.5 * (in.objective->G(x1) + in.objective->G(x2)) -
                             in.objective->G(0.5 * (x1 + x2));
            rep.worst_g_violation = std::max(rep.worst_g_violation, v);
        }
        rep.g_concave_ok = rep.worst_g_violation <= opts.tol_conc;
    }
    if (!opts.x_probe_pairs.empty()) {
        auto esssup = [&](std::size_t i, std::size_t p, double x) {
            double best = hamiltonian_x(in, i, p, candidate.lo, x);
            for (std::size_t k = 1; k < ng; ++k) {
                const double u = candidate.lo + (candidate.hi - candidate.lo) *
                                                    static_cast<double>(k) /
                                                    static_cast<double>(ng - 1);
                best = std::max(best, hamiltonian_x(in, i, p, u, x));
            }
            return best;
        };
        const std::size_t stride = std::max<std::size_t>(M / 4, 1);
        for (std::size_t i = 0; i < M; i += stride) {
            for (std::size_t p = 0; p < std::min<std::size_t>(np, 8); ++p) {
                for (const auto& [x1, x2] : opts.x_probe_pairs) {
                    const double v = 0.5 * (esssup(i, p, x1) + esssup(i, p, x2)) -
                                     esssup(i, p, 0.5 * (x1 + x2));
                    rep.worst_esssup_violation = std::max(rep.worst_esssup_violation, v);
                }
            }
        }
        rep.esssup_concave_ok = rep.worst_esssup_violation <= opts.tol_conc;
    }
    rep.verdict = rep.maximality_ok && rep.g_concave_ok && rep.esssup_concave_ok;
    return rep;
}

StatePath first_variation(const VolterraModel& model, const StatePath& base,
                          const std::vector<double>& beta, const RatePath& rate,
                          const NoisePath& noise, const TimeGrid& grid, const MarkGrid& marks,
                          const SolveOptions& opts) {
    if (model.b && (!model.dx_b || !model.du_b))
        throw UnsupportedModel("first variation needs dx and du drift kernels");
    if (model.kappa && (!model.dx_kappa || !model.du_kappa))
        throw UnsupportedModel("first variation needs dx and du noise kernels");

    const std::size_t M = grid.steps();
    StatePath chi;
    chi.x.assign(M + 1, 0.0);
    chi.u = beta;
    for (std::size_t m = 1; m <= M; ++m) {
        const double tm = grid.t[m];
        double acc = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const double lB = rate.lam_B[i];
            const double lH = rate.lam_H[i];
            const double ui = base.u[i];
            const double xi = base.x[i];
            const double bi = i < beta.size() ? beta[i] : 0.0;
            if (model.b)
                acc += (model.dx_b(tm, grid.t[i], lB, lH, ui, xi) * chi.x[i] +
                        model.du_b(tm, grid.t[i], lB, lH, ui, xi) * bi) *
                       grid.dt(i);
            if (model.kappa) {
                acc += (model.dx_kappa(tm, grid.t[i], 0.0, lB, lH, ui, xi) * chi.x[i] +
                        model.du_kappa(tm, grid.t[i], 0.0, lB, lH, ui, xi) * bi) *
                       noise.dB[i];
                for (std::size_t j = 0; j < marks.size(); ++j)
                    acc += (model.dx_kappa(tm, grid.t[i], marks.z[j], lB, lH, ui, xi) * chi.x[i] +
                            model.du_kappa(tm, grid.t[i], marks.z[j], lB, lH, ui, xi) * bi) *
                           noise.dH(i, j);
            }
        }
        if (!(std::fabs(acc) <= opts.blowup_guard)) throw NumericalBlowup(0, m, acc);
        chi.x[m] = acc;
    }
    return chi;
}

GradientEstimate evaluate_objective(const VolterraModel& model, const Objective& objective,
                                    const ControlPolicy& policy, const PathEnsemble& paths,
                                    const SolveOptions& opts) {
    std::vector<StatePath> states = solve_direct(model, policy, paths, opts);
    const std::size_t n = paths.n_paths();
    std::vector<double> j(n);
    parallel_for_paths(n, [&](std::size_t p) {
        double acc = 0.0;
        for (std::size_t i = 0; i < paths.grid.steps(); ++i)
            acc += eval_F(objective, paths.grid.t[i], paths.rates[p].lam_B[i],
                          paths.rates[p].lam_H[i], states[p].u[i], states[p].x[i]) *
                   paths.grid.dt(i);
        if (objective.G) acc += objective.G(states[p].x.back());
        j[p] = acc;
    });
    auto st = simd::mean_se(j);
    return {st.mean, st.se};
}

BsdeSpec make_adjoint_spec(const VolterraModel& model, const Objective& objective,
                           const PathEnsemble& paths, const std::vector<StatePath>& states,
                           const NaOfAdjoint* na_p) {
    if (model.b && !model.dx_b)
        throw UnsupportedModel("adjoint driver needs the dx drift kernel");
    if (model.kappa && !model.dx_kappa)
        throw UnsupportedModel("adjoint driver needs the dx noise kernel");
    if (model.kappa && !model.convolution_free && !model.noise_convolution_free && !na_p)
        throw UnsupportedModel(
            "adjoint driver with t-dependent noise kernel needs the NA-derivative of p "
            "(experimental mode)");

    BsdeSpec spec;
    const std::size_t n = paths.n_paths();
    spec.terminal.resize(n);
    for (std::size_t p = 0; p < n; ++p)
        spec.terminal[p] = objective.dxG ? objective.dxG(states[p].x.back()) : 0.0;

    const VolterraModel* m = &model;
    const Objective* obj = &objective;
    const PathEnsemble* pe = &paths;
    const std::vector<StatePath>* st = &states;
    spec.driver = [m, obj, pe, st, na_p](std::size_t path, std::size_t step, double t,
                                         double lamB, double lamH, double p,
                                         const QView& q) {
        const StatePath& sp = (*st)[path];
        const double u = sp.u[step];
        const double x = sp.x[step];
        double g = obj->dxF ? obj->dxF(t, lamB, lamH, u, x) : 0.0;
        if (m->b) g += m->dx_b(t, t, lamB, lamH, u, x) * p;
        if (m->kappa) {
            g += m->dx_kappa(t, t, 0.0, lamB, lamH, u, x) * q.q0 * lamB;
            for (std::size_t j = 0; j < pe->marks.size(); ++j)
                g += m->dx_kappa(t, t, pe->marks.z[j], lamB, lamH, u, x) * q.qz[j] * lamH *
                     pe->marks.weight[j];
        }
        // drift memory: d/dx of the dt-b integral
        if (!m->convolution_free && m->b) {
            double mem = 0.0;
            for (std::size_t s = 0; s < step; ++s) {
                const double ts = pe->grid.t[s];
                const double lBs = pe->rates[path].lam_B[s];
                const double lHs = pe->rates[path].lam_H[s];
                double v;
                if (m->dtdx_b) {
                    v = m->dtdx_b(t, ts, lBs, lHs, sp.u[s], sp.x[s]);
                } else {
                    const double h = 1e-5 * (1.0 + std::fabs(sp.x[s]));
                    auto dtb = [&](double xx) {
                        if (m->dt_b) return m->dt_b(t, ts, lBs, lHs, sp.u[s], xx);
                        const double hf = 0.1 * pe->grid.dt(s);
                        return (m->b(t + hf, ts, lBs, lHs, sp.u[s], xx) -
                                m->b(t - hf, ts, lBs, lHs, sp.u[s], xx)) /
                               (2.0 * hf);
                    };
                    v = (dtb(sp.x[s] + h) - dtb(sp.x[s] - h)) / (2.0 * h);
                }
                mem += v * pe->grid.dt(s);
            }
            g += mem * p;
        }
        // noise memory through D p; zero for convolution-free kernels
        if (!m->convolution_free && !m->noise_convolution_free && m->kappa && na_p) {
            const NaField* f = nearest_field(*na_p, step);
            if (f) {
                const std::size_t nc = f->part.cells.size();
                const RatePath& rp = pe->rates[path];
                double mem = 0.0;
                for (std::size_t s = 0; s < step; ++s) {
                    const double dkx =
                        m->dtdx_kappa
                            ? m->dtdx_kappa(t, pe->grid.t[s], 0.0, rp.lam_B[s], rp.lam_H[s],
                                            sp.u[s], sp.x[s])
                            : 0.0;
                    mem += dkx * f->value[path * nc + f->part.cell_index(s, 0)] * rp.dlam_B(s);
                    for (std::size_t j = 0; j < pe->marks.size(); ++j) {
                        const double dkzj =
                            m->dtdx_kappa
                                ? m->dtdx_kappa(t, pe->grid.t[s], pe->marks.z[j], rp.lam_B[s],
                                                rp.lam_H[s], sp.u[s], sp.x[s])
                                : 0.0;
                        mem += dkzj * f->value[path * nc + f->part.cell_index(s, 1 + j)] *
                               rp.dlam_H(s) * pe->marks.weight[j];
                    }
                }
                g += mem;
            }
        }
        return g;
    };
    return spec;
}

GradientReport perturbation_gradient(const VolterraModel& model, const Objective& objective,
                                     const ControlPolicy& policy, const std::vector<double>& beta,
                                     const PathEnsemble& paths, const GradientOptions& opts) {
    GradientReport rep;
    const std::size_t n = paths.n_paths();
    const std::size_t M = paths.grid.steps();

    // route 1: central finite difference along the same noise
    {
        ControlPolicy up = ControlPolicy::perturbed(policy, beta, opts.eps);
        ControlPolicy dn = ControlPolicy::perturbed(policy, beta, -opts.eps);
        // widen the box so the bump is not clipped
        const double width = opts.eps * 2.0;
        up.lo -= width;
        up.hi += width;
        dn.lo -= width;
        dn.hi += width;
        std::vector<StatePath> sup = solve_direct(model, up, paths);
        std::vector<StatePath> sdn = solve_direct(model, dn, paths);
        std::vector<double> fd(n);
        parallel_for_paths(n, [&](std::size_t p) {
            double jp = 0.0, jm = 0.0;
            for (std::size_t i = 0; i < M; ++i) {
                jp += eval_F(objective, paths.grid.t[i], paths.rates[p].lam_B[i],
                             paths.rates[p].lam_H[i], sup[p].u[i], sup[p].x[i]) *
                      paths.grid.dt(i);
                jm += eval_F(objective, paths.grid.t[i], paths.rates[p].lam_B[i],
                             paths.rates[p].lam_H[i], sdn[p].u[i], sdn[p].x[i]) *
                      paths.grid.dt(i);
            }
            if (objective.G) {
                jp += objective.G(sup[p].x.back());
                jm += objective.G(sdn[p].x.back());
            }
            fd[p] = (jp - jm) / (2.0 * opts.eps);
        });
        auto st = simd::mean_se(fd);
        rep.finite_difference = {st.mean, st.se};
    }

    std::vector<StatePath> base = solve_direct(model, policy, paths);

    // route 2: first-variation formula
    {
        std::vector<double> v(n);
        parallel_for_paths(n, [&](std::size_t p) {
            StatePath chi = first_variation(model, base[p], beta, paths.rates[p], paths.noise[p],
                                            paths.grid, paths.marks);
            double acc = 0.0;
            for (std::size_t i = 0; i < M; ++i) {
                const double bi = i < beta.size() ? beta[i] : 0.0;
                if (objective.dxF)
                    acc += objective.dxF(paths.grid.t[i], paths.rates[p].lam_B[i],
                                         paths.rates[p].lam_H[i], base[p].u[i], base[p].x[i]) *
                           chi.x[i] * paths.grid.dt(i);
                if (objective.duF)
                    acc += objective.duF(paths.grid.t[i], paths.rates[p].lam_B[i],
                                         paths.rates[p].lam_H[i], base[p].u[i], base[p].x[i]) *
                           bi * paths.grid.dt(i);
            }
            if (objective.dxG) acc += objective.dxG(base[p].x.back()) * chi.x.back();
            v[p] = acc;
        });
        auto st = simd::mean_se(v);
        rep.variation = {st.mean, st.se};
    }

    // route 3: Hamiltonian integral with the F-projected adjoint
    {
        BsdeSpec spec = make_adjoint_spec(model, objective, paths, base);
        BsdeOptions bo;
        bo.features = opts.g_features;
        bo.fit = opts.fit;
        auto slices = state_slices(base);
        bo.extra_slices = &slices;
        BsdeSolution sol = solve_backward(spec, paths, bo);
        AdjointSlices proj = project_to_F(sol, paths, opts.f_features, &slices, opts.fit);

        HamiltonianInputs in;
        in.model = &model;
        in.objective = &objective;
        in.paths = &paths;
        in.states = &base;
        in.adjoint = &proj;

        std::vector<double> v(n);
        parallel_for_paths(n, [&](std::size_t p) {
            double acc = 0.0;
            for (std::size_t i = 0; i < M; ++i) {
                const double bi = i < beta.size() ? beta[i] : 0.0;
                if (bi != 0.0)
                    acc += du_hamiltonian(in, i, p, base[p].u[i], opts.fd_u_step) * bi *
                           paths.grid.dt(i);
            }
            v[p] = acc;
        });
        auto st = simd::mean_se(v);
        rep.hamiltonian = {st.mean, st.se};
    }
    return rep;
}

} // namespace tcv
