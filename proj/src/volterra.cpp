#include "tcv/volterra.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tcv/errors.hpp"
#include "tcv/parallel.hpp"
#include "tcv/simd.hpp"

namespace tcv {

ControlPolicy ControlPolicy::constant(double v, double lo, double hi) {
    ControlPolicy p;
    p.lo = lo;
    p.hi = hi;
    p.rule = [v](std::size_t, double, double, double, double) { return v; };
    return p;
}

ControlPolicy ControlPolicy::deterministic(std::function<double(double)> f, double lo, double hi) {
    ControlPolicy p;
    p.lo = lo;
    p.hi = hi;
    p.rule = [f = std::move(f)](std::size_t, double t, double, double, double) { return f(t); };
    return p;
}

ControlPolicy ControlPolicy::deterministic_steps(std::vector<double> u, double lo, double hi) {
    ControlPolicy p;
    p.lo = lo;
    p.hi = hi;
    p.rule = [u = std::move(u)](std::size_t step, double, double, double, double) {
        return step < u.size() ? u[step] : u.back();
    };
    return p;
}

ControlPolicy ControlPolicy::feedback(
    std::function<double(double, double, double, double)> f, double lo, double hi) {
    ControlPolicy p;
    p.lo = lo;
    p.hi = hi;
    p.rule = [f = std::move(f)](std::size_t, double t, double x, double lamB, double lamH) {
        return f(t, x, lamB, lamH);
    };
    return p;
}

ControlPolicy ControlPolicy::perturbed(const ControlPolicy& base, std::vector<double> beta,
                                       double eps) {
    ControlPolicy p;
    p.lo = base.lo;
    p.hi = base.hi;
    p.rule = [base, beta = std::move(beta), eps](std::size_t step, double t, double x,
                                                 double lamB, double lamH) {
        const double bump = step < beta.size() ? beta[step] : 0.0;
        return base.value(step, t, x, lamB, lamH) + eps * bump;
    };
    return p;
}

double ControlPolicy::value(std::size_t step, double t, double x, double lamB,
                            double lamH) const {
    const double v = rule ? rule(step, t, x, lamB, lamH) : 0.0;
    return std::clamp(v, lo, hi);
}

namespace {

struct KernelEval {
    const VolterraModel& m;
    const SolveOptions& opts;

    double b(double t, double s, double lamB, double lamH, double u, double x) const {
        return m.b ? m.b(t, s, lamB, lamH, u, x) : 0.0;
    }
    double kappa(double t, double s, double z, double lamB, double lamH, double u,
                 double x) const {
        return m.kappa ? m.kappa(t, s, z, lamB, lamH, u, x) : 0.0;
    }
    double dt_b(double t, double s, double lamB, double lamH, double u, double x,
                double dt) const {
        if (m.convolution_free) return 0.0;
        if (m.dt_b) return m.dt_b(t, s, lamB, lamH, u, x);
        if (!m.b) return 0.0;
        if (!opts.allow_fd_dt)
            throw UnsupportedModel("model lacks analytic d/dt kernels and the finite-difference fallback is disabled");
        const double h = opts.fd_step_fraction * dt;
        return (m.b(t + h, s, lamB, lamH, u, x) - m.b(t - h, s, lamB, lamH, u, x)) / (2.0 * h);
    }
    double dt_kappa(double t, double s, double z, double lamB, double lamH, double u, double x,
                    double dt) const {
        if (m.convolution_free) return 0.0;
        if (m.dt_kappa) return m.dt_kappa(t, s, z, lamB, lamH, u, x);
        if (!m.kappa) return 0.0;
        if (!opts.allow_fd_dt)
            throw UnsupportedModel("model lacks analytic d/dt kernels and the finite-difference fallback is disabled");
        const double h = opts.fd_step_fraction * dt;
        return (m.kappa(t + h, s, z, lamB, lamH, u, x) -
                m.kappa(t - h, s, z, lamB, lamH, u, x)) /
               (2.0 * h);
    }
};

void guard(double x, std::size_t path, std::size_t step, double cap) {
    if (!(std::fabs(x) <= cap)) throw NumericalBlowup(path, step, x);
}

// shared direct recursion; x_src supplies the state plugged into the kernels
// (the current iterate for Picard, the output itself otherwise)
void direct_sweep(const VolterraModel& model, const ControlPolicy& policy, const RatePath& rate,
                  const NoisePath& noise, const TimeGrid& grid, const MarkGrid& marks,
                  std::size_t path_index, const SolveOptions& opts,
                  const std::vector<double>* x_src, StatePath& out) {
    const std::size_t M = grid.steps();
    const bool has_kappa = static_cast<bool>(model.kappa);
    KernelEval k{model, opts};

    out.x.resize(M + 1);
    out.u.resize(M);
    out.x[0] = model.X0;

    auto state_at = [&](std::size_t i) { return x_src ? (*x_src)[i] : out.x[i]; };

    // with a fixed source iterate the controls are known up front; otherwise
    // they are filled as the frontier advances
    std::vector<double> u(M);
    if (x_src) {
        for (std::size_t i = 0; i < M; ++i)
            u[i] = policy.value(i, grid.t[i], (*x_src)[i], rate.lam_B[i], rate.lam_H[i]);
    }

    for (std::size_t m = 1; m <= M; ++m) {
        if (!x_src) {
            const std::size_t i = m - 1;
            out.u[i] = policy.value(i, grid.t[i], out.x[i], rate.lam_B[i], rate.lam_H[i]);
        }
        const double tm = grid.t[m];
        double acc = model.X0;
        for (std::size_t i = 0; i < m; ++i) {
            const double ui = x_src ? u[i] : out.u[i];
            const double xi = state_at(i);
            const double lB = rate.lam_B[i];
            const double lH = rate.lam_H[i];
            acc += k.b(tm, grid.t[i], lB, lH, ui, xi) * grid.dt(i);
            if (has_kappa) {
                acc += k.kappa(tm, grid.t[i], 0.0, lB, lH, ui, xi) * noise.dB[i];
                for (std::size_t j = 0; j < marks.size(); ++j)
                    acc += k.kappa(tm, grid.t[i], marks.z[j], lB, lH, ui, xi) * noise.dH(i, j);
            }
        }
        guard(acc, path_index, m, opts.blowup_guard);
        out.x[m] = acc;
    }
    if (x_src) out.u = u;
}

} // namespace

StatePath solve_direct(const VolterraModel& model, const ControlPolicy& policy,
                       const RatePath& rate, const NoisePath& noise, const TimeGrid& grid,
                       const MarkGrid& marks, std::size_t path_index, const SolveOptions& opts) {
    StatePath sp;
    direct_sweep(model, policy, rate, noise, grid, marks, path_index, opts, nullptr, sp);
    return sp;
}

std::vector<StatePath> solve_direct(const VolterraModel& model, const ControlPolicy& policy,
                                    const PathEnsemble& paths, const SolveOptions& opts) {
    std::vector<StatePath> out(paths.n_paths());
    parallel_for_paths(paths.n_paths(), [&](std::size_t p) {
        out[p] = solve_direct(model, policy, paths.rates[p], paths.noise[p], paths.grid,
                              paths.marks, p, opts);
    });
    return out;
}

PicardResult solve_picard(const VolterraModel& model, const ControlPolicy& policy,
                          const PathEnsemble& paths, std::size_t n_iter, double tol,
                          const SolveOptions& opts) {
    const std::size_t N = paths.n_paths();
    const std::size_t M = paths.grid.steps();

    PicardResult res;
    res.states.resize(N);
    for (auto& sp : res.states) {
        sp.x.assign(M + 1, model.X0);
        sp.u.assign(M, 0.0);
    }

    std::vector<double> sup(N);
    for (std::size_t it = 0; it < n_iter; ++it) {
        std::vector<StatePath> next(N);
        parallel_for_paths(N, [&](std::size_t p) {
            direct_sweep(model, policy, paths.rates[p], paths.noise[p], paths.grid, paths.marks,
                         p, opts, &res.states[p].x, next[p]);
            sup[p] = simd::max_abs_diff(next[p].x, res.states[p].x);
        });
        double msq = 0.0;
        for (double s : sup) msq += s * s;
        const double diff = std::sqrt(msq / static_cast<double>(N));
        res.diag.diffs.push_back(diff);
        res.states = std::move(next);
        res.diag.iterations = it + 1;
        if (diff < tol) {
            res.diag.converged = true;
            break;
        }
    }
    if (!res.diag.converged && !res.diag.diffs.empty() && res.diag.diffs.back() < tol)
        res.diag.converged = true;
    return res;
}

StatePath solve_differential(const VolterraModel& model, const ControlPolicy& policy,
                             const RatePath& rate, const NoisePath& noise, const TimeGrid& grid,
                             const MarkGrid& marks, std::size_t path_index,
                             const SolveOptions& opts) {
    const std::size_t M = grid.steps();
    const bool has_kappa = static_cast<bool>(model.kappa);
    KernelEval k{model, opts};

    StatePath sp;
    sp.x.resize(M + 1);
    sp.u.resize(M);
    sp.x[0] = model.X0;

    for (std::size_t m = 0; m < M; ++m) {
        const double tm = grid.t[m];
        const double dtm = grid.dt(m);
        sp.u[m] = policy.value(m, tm, sp.x[m], rate.lam_B[m], rate.lam_H[m]);

        // memory accumulators, re-evaluated exactly each step
        double acc_b = 0.0, acc_k = 0.0;
        if (!model.convolution_free) {
            for (std::size_t i = 0; i < m; ++i) {
                const double lB = rate.lam_B[i];
                const double lH = rate.lam_H[i];
                acc_b += k.dt_b(tm, grid.t[i], lB, lH, sp.u[i], sp.x[i], dtm) * grid.dt(i);
                if (has_kappa) {
                    acc_k += k.dt_kappa(tm, grid.t[i], 0.0, lB, lH, sp.u[i], sp.x[i], dtm) *
                             noise.dB[i];
                    for (std::size_t j = 0; j < marks.size(); ++j)
                        acc_k += k.dt_kappa(tm, grid.t[i], marks.z[j], lB, lH, sp.u[i], sp.x[i],
                                            dtm) *
                                 noise.dH(i, j);
                }
            }
        }

        const double lB = rate.lam_B[m];
        const double lH = rate.lam_H[m];
        double inc = (k.b(tm, tm, lB, lH, sp.u[m], sp.x[m]) + acc_b + acc_k) * dtm;
        if (has_kappa) {
            inc += k.kappa(tm, tm, 0.0, lB, lH, sp.u[m], sp.x[m]) * noise.dB[m];
            for (std::size_t j = 0; j < marks.size(); ++j)
                inc += k.kappa(tm, tm, marks.z[j], lB, lH, sp.u[m], sp.x[m]) * noise.dH(m, j);
        }
        const double xn = sp.x[m] + inc;
        guard(xn, path_index, m + 1, opts.blowup_guard);
        sp.x[m + 1] = xn;
    }
    return sp;
}

std::vector<StatePath> solve_differential(const VolterraModel& model, const ControlPolicy& policy,
                                          const PathEnsemble& paths, const SolveOptions& opts) {
    std::vector<StatePath> out(paths.n_paths());
    parallel_for_paths(paths.n_paths(), [&](std::size_t p) {
        out[p] = solve_differential(model, policy, paths.rates[p], paths.noise[p], paths.grid,
                                    paths.marks, p, opts);
    });
    return out;
}

} // namespace tcv
