#include "tcv/bsde.hpp"

#include <cmath>
#include <stdexcept>

#include "tcv/parallel.hpp"
#include "tcv/simd.hpp"

namespace tcv {

BsdeSolution solve_backward(const BsdeSpec& spec, const PathEnsemble& paths,
                            const BsdeOptions& opts) {
    const std::size_t n = paths.n_paths();
    const std::size_t M = paths.grid.steps();
    const std::size_t nm = paths.marks.size();
    if (spec.terminal.size() != n)
        throw std::invalid_argument("terminal condition length does not match ensemble");
    if (opts.extra_slices && opts.extra_slices->size() != M + 1)
        throw std::invalid_argument("extra feature slices must cover every grid point");

    BsdeSolution sol;
    sol.n_paths = n;
    sol.n_steps = M;
    sol.n_marks = nm;
    sol.p.assign((M + 1) * n, 0.0);
    sol.q0.assign(M * n, 0.0);
    sol.qz.assign(M * n * nm, 0.0);
    if (opts.store_raw) sol.p_raw.assign((M + 1) * n, 0.0);
    sol.diag.assign(M, SliceDiagnostics{});

    // p(T) is the terminal value exactly, per path
    for (std::size_t p = 0; p < n; ++p) sol.p[M * n + p] = spec.terminal[p];
    if (opts.store_raw)
        for (std::size_t p = 0; p < n; ++p) sol.p_raw[M * n + p] = spec.terminal[p];

    std::vector<double> y(n), yhat(n), target(n), qtarget(n);

    for (std::size_t i = M; i-- > 0;) {
        const double t = paths.grid.t[i];
        const double dt = paths.grid.dt(i);
        SliceDiagnostics& dg = sol.diag[i];

        for (std::size_t p = 0; p < n; ++p) y[p] = sol.p[(i + 1) * n + p];

        ExtraColumns extras;
        if (opts.extra_slices)
            extras.emplace_back(opts.extra_name, &(*opts.extra_slices)[i]);
        FeatureSet fs = build_features(paths, Flow::G, i, opts.features, extras);

        FitOptions fo = opts.fit;
        fo.where = "bsde p at step " + std::to_string(i);
        RegressionFit fy = fit_conditional(y, fs, fo);
        yhat = predict(fy, fs);

        // q extraction: centered one-step value against normalized increments.
        // Centering removes the G_t-measurable part exactly, a variance
        // reduction that leaves the conditional expectation unchanged.
        std::size_t hits = 0;
        for (std::size_t p = 0; p < n; ++p) {
            const double denom = paths.rates[p].dlam_B(i);
            if (denom > opts.denom_floor) {
                qtarget[p] = (y[p] - yhat[p]) * paths.noise[p].dB[i] / denom;
            } else {
                qtarget[p] = 0.0;
                ++hits;
            }
        }
        fo.where = "bsde q0 at step " + std::to_string(i);
        RegressionFit fq = fit_conditional(qtarget, fs, fo);
        std::vector<double> q0 = predict(fq, fs);
        for (std::size_t p = 0; p < n; ++p) sol.q0[i * n + p] = q0[p];

        for (std::size_t j = 0; j < nm; ++j) {
            for (std::size_t p = 0; p < n; ++p) {
                const double denom = paths.rates[p].dlam_H(i) * paths.marks.weight[j];
                if (denom > opts.denom_floor) {
                    qtarget[p] = (y[p] - yhat[p]) * paths.noise[p].dH(i, j) / denom;
                } else {
                    qtarget[p] = 0.0;
                    ++hits;
                }
            }
            fo.where = "bsde q(z" + std::to_string(j) + ") at step " + std::to_string(i);
            RegressionFit fqz = fit_conditional(qtarget, fs, fo);
            std::vector<double> qj = predict(fqz, fs);
            for (std::size_t p = 0; p < n; ++p) sol.qz[(i * n + p) * nm + j] = qj[p];
        }
        dg.floor_hits = hits;

        // driver-augmented target, then one more projection for p(t_i)
        for (std::size_t p = 0; p < n; ++p) {
            double g = 0.0;
            if (spec.driver) {
                QView qv{sol.q0[i * n + p],
                         nm > 0 ? std::span<const double>(&sol.qz[(i * n + p) * nm], nm)
                                : std::span<const double>{}};
                const double parg = spec.driver_on_raw_target ? y[p] : yhat[p];
                g = spec.driver(p, i, t, paths.rates[p].lam_B[i], paths.rates[p].lam_H[i],
                                parg, qv);
            }
            target[p] = y[p] + g * dt;
        }
        if (opts.store_raw)
            for (std::size_t p = 0; p < n; ++p) sol.p_raw[i * n + p] = target[p];

        if (spec.driver) {
            fo.where = "bsde p at step " + std::to_string(i);
            RegressionFit fp = fit_conditional(target, fs, fo);
            std::vector<double> pi = predict(fp, fs);
            for (std::size_t p = 0; p < n; ++p) sol.p[i * n + p] = pi[p];
            dg.r2_p = fp.r2;
            dg.cond_p = fp.cond;
        } else {
            for (std::size_t p = 0; p < n; ++p) sol.p[i * n + p] = yhat[p];
            dg.r2_p = fy.r2;
            dg.cond_p = fy.cond;
        }

        // integrability surrogate for the q-space condition
        double qn = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            double v = sol.q0[i * n + p] * sol.q0[i * n + p] * paths.rates[p].dlam_B(i);
            for (std::size_t j = 0; j < nm; ++j) {
                const double qj = sol.qz[(i * n + p) * nm + j];
                v += qj * qj * paths.rates[p].dlam_H(i) * paths.marks.weight[j];
            }
            qn += v;
        }
        dg.q_norm = qn / static_cast<double>(n);
    }
    return sol;
}

std::vector<std::vector<double>> girsanov_density(const std::function<double(double)>& sigma,
                                                  const PathEnsemble& paths) {
    const std::size_t n = paths.n_paths();
    const std::size_t M = paths.grid.steps();
    std::vector<std::vector<double>> out(n, std::vector<double>(M + 1, 1.0));
    parallel_for_paths(n, [&](std::size_t p) {
        double logm = 0.0;
        for (std::size_t i = 0; i < M; ++i) {
            const double s = sigma(paths.grid.t[i]);
            logm += s * paths.noise[p].dB[i] - 0.5 * s * s * paths.rates[p].dlam_B(i);
            out[p][i + 1] = std::exp(logm);
        }
    });
    return out;
}

std::vector<std::vector<double>> drift_adjusted_increments(
    const std::function<double(double)>& sigma, const PathEnsemble& paths) {
    const std::size_t n = paths.n_paths();
    const std::size_t M = paths.grid.steps();
    std::vector<std::vector<double>> out(n, std::vector<double>(M));
    parallel_for_paths(n, [&](std::size_t p) {
        for (std::size_t i = 0; i < M; ++i) {
            const double s = sigma(paths.grid.t[i]);
            out[p][i] = paths.noise[p].dB[i] - s * paths.rates[p].lam_B[i] * paths.grid.dt(i);
        }
    });
    return out;
}

} // namespace tcv
