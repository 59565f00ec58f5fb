#include "tcv/naderiv.hpp"

#include <cmath>
#include <stdexcept>

#include "tcv/errors.hpp"
#include "tcv/parallel.hpp"
#include "tcv/simd.hpp"

namespace tcv {

namespace {

// mu and Lambda per (path, cell), path-major
void cell_statistics(const PathEnsemble& paths, const PartitionScheme& part,
                     std::vector<double>& mu, std::vector<double>& lam) {
    const std::size_t n = paths.n_paths();
    const std::size_t nc = part.cells.size();
    mu.resize(n * nc);
    lam.resize(n * nc);
    parallel_for_paths(n, [&](std::size_t p) {
        MuIncrements mi = mu_of_cells(paths.noise[p], part);
        std::vector<double> li = lambda_of_cells(paths.rates[p], paths.grid, paths.marks, part);
        for (std::size_t c = 0; c < nc; ++c) {
            mu[p * nc + c] = mi.value[c];
            lam[p * nc + c] = li[c];
        }
    });
}

} // namespace

NaField estimate_na_derivative(std::span<const double> xi, const PathEnsemble& paths,
                               const PartitionScheme& part, const NaOptions& opts) {
    const std::size_t n = paths.n_paths();
    if (xi.size() != n) throw std::invalid_argument("xi length does not match ensemble");
    if (!std::isfinite(simd::variance(xi)))
        throw std::invalid_argument("xi is not square-integrable empirically");

    NaField f;
    f.part = part;
    f.n_paths = n;
    const std::size_t nc = part.cells.size();
    f.value.assign(n * nc, 0.0);
    f.cell_r2.assign(nc, 0.0);
    cell_statistics(paths, part, f.mu_cell, f.lam_cell);

    // cells are time-major, so consecutive cells share their left endpoint
    // and the feature set can be reused across the mark sets of one interval
    std::vector<double> target(n);
    FeatureSet fs;
    std::size_t fs_edge = static_cast<std::size_t>(-1);
    for (std::size_t c = 0; c < nc; ++c) {
        const Cell& cell = part.cells[c];
        if (cell.step_lo != fs_edge) {
            fs = build_features(paths, Flow::G, cell.step_lo, opts.features);
            fs_edge = cell.step_lo;
        }
        // Under G the conditional Lambda-mass of a cell is known pathwise, so
        // the Definition's denominator is the pathwise value, floored.
        for (std::size_t p = 0; p < n; ++p) {
            const double lam = f.lam_cell[p * nc + c];
            target[p] = lam > opts.lambda_floor ? xi[p] * f.mu_cell[p * nc + c] / lam : 0.0;
        }
        FitOptions fo = opts.fit;
        fo.where = "na-derivative cell " + std::to_string(c);
        RegressionFit fit = fit_conditional(target, fs, fo);
        std::vector<double> pred = predict(fit, fs);
        f.cell_r2[c] = fit.r2;
        for (std::size_t p = 0; p < n; ++p) {
            const double lam = f.lam_cell[p * nc + c];
            f.value[p * nc + c] = lam > opts.lambda_floor ? pred[p] : 0.0;
        }
    }
    return f;
}

std::vector<double> conditional_on_lambda(std::span<const double> xi, const PathEnsemble& paths,
                                          const NaOptions& opts) {
    FeatureOptions fopts = opts.features;
    fopts.include_noise = false; // at time 0 the mu-history is empty anyway
    FeatureSet fs = build_features(paths, Flow::G, 0, fopts);
    FitOptions fo = opts.fit;
    fo.where = "E[.|F^Lambda]";
    RegressionFit fit = fit_conditional(xi, fs, fo);
    return predict(fit, fs);
}

Reconstruction reconstruct(std::span<const double> xi, const NaField& field,
                           const PathEnsemble& paths, const NaOptions& opts) {
    const std::size_t n = paths.n_paths();
    Reconstruction rec;
    rec.xi0 = conditional_on_lambda(xi, paths, opts);
    rec.xi_hat = rec.xi0;
    const std::size_t nc = field.part.cells.size();
    parallel_for_paths(n, [&](std::size_t p) {
        double acc = rec.xi_hat[p];
        for (std::size_t c = 0; c < nc; ++c)
            acc += field.value[p * nc + c] * field.mu_cell[p * nc + c];
        rec.xi_hat[p] = acc;
    });
    double num = 0.0, den = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
        const double d = rec.xi_hat[p] - xi[p];
        num += d * d;
        den += xi[p] * xi[p];
    }
    rec.rel_l2_error = den > 0.0 ? std::sqrt(num / den) : std::sqrt(num / static_cast<double>(n));
    return rec;
}

DualityReport duality_check(std::span<const double> xi, const PathField& phi,
                            const PathEnsemble& paths, const PartitionScheme& part,
                            const NaOptions& opts) {
    const std::size_t n = paths.n_paths();
    NaField field = estimate_na_derivative(xi, paths, part, opts);

    std::vector<double> lhs(n), rhs(n);
    const std::size_t nc = part.cells.size();
    parallel_for_paths(n, [&](std::size_t p) {
        lhs[p] = xi[p] * ito_integral(
                             [&](std::size_t step, int mark) { return phi(p, step, mark); },
                             paths.noise[p]);
        // int phi * (D xi) dLambda, cell by cell with phi resolved per step
        double acc = 0.0;
        const RatePath& rp = paths.rates[p];
        for (std::size_t c = 0; c < nc; ++c) {
            const Cell& cell = part.cells[c];
            const MarkSet& ms = part.mark_sets[cell.mark_set];
            const double fv = field.value[p * nc + c];
            if (fv == 0.0) continue;
            for (std::size_t i = cell.step_lo; i < cell.step_hi; ++i) {
                if (ms.gaussian) {
                    acc += phi(p, i, -1) * fv * rp.dlam_B(i);
                } else {
                    for (std::size_t a : ms.atoms)
                        acc += phi(p, i, static_cast<int>(a)) * fv * rp.dlam_H(i) *
                               paths.marks.weight[a];
                }
            }
        }
        rhs[p] = acc;
    });

    DualityReport rep;
    auto ls = simd::mean_se(lhs);
    auto rs = simd::mean_se(rhs);
    rep.lhs = ls.mean;
    rep.rhs = rs.mean;
    std::vector<double> diff(n);
    for (std::size_t p = 0; p < n; ++p) diff[p] = lhs[p] - rhs[p];
    auto ds = simd::mean_se(diff);
    rep.se_diff = ds.se;
    rep.z = ds.se > 0.0 ? ds.mean / ds.se : 0.0;
    return rep;
}

MartingaleRepresentation martingale_representation(std::span<const double> m_terminal,
                                                   const PathEnsemble& paths,
                                                   const PartitionScheme& part,
                                                   const NaOptions& opts) {
    const std::size_t n = paths.n_paths();
    MartingaleRepresentation mr;
    mr.field = estimate_na_derivative(m_terminal, paths, part, opts);
    mr.xi0 = conditional_on_lambda(m_terminal, paths, opts);

    const std::size_t ne = part.time_edges.size();
    const std::size_t nc = part.cells.size();
    mr.running.assign(ne, std::vector<double>(n));
    mr.direct.assign(ne, std::vector<double>(n));
    mr.rel_l2_gap.assign(ne, 0.0);

    for (std::size_t e = 0; e < ne; ++e) {
        const std::size_t edge_step = part.time_edges[e];
        // partial stochastic integral over cells ending at or before the edge
        parallel_for_paths(n, [&](std::size_t p) {
            double acc = mr.xi0[p];
            for (std::size_t c = 0; c < nc; ++c) {
                const Cell& cell = part.cells[c];
                if (cell.step_hi > edge_step) continue;
                acc += mr.field.value[p * nc + c] * mr.field.mu_cell[p * nc + c];
            }
            mr.running[e][p] = acc;
        });
        FeatureSet fs = build_features(paths, Flow::G, edge_step, opts.features);
        FitOptions fo = opts.fit;
        fo.where = "martingale representation at edge " + std::to_string(e);
        RegressionFit fit = fit_conditional(m_terminal, fs, fo);
        mr.direct[e] = predict(fit, fs);

        double num = 0.0, den = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            const double d = mr.running[e][p] - mr.direct[e][p];
            num += d * d;
            den += mr.direct[e][p] * mr.direct[e][p];
        }
        mr.rel_l2_gap[e] = den > 0.0 ? std::sqrt(num / den) : std::sqrt(num / static_cast<double>(n));
    }
    return mr;
}

} // namespace tcv
