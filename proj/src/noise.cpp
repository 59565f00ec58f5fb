#include "tcv/noise.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tcv/parallel.hpp"
#include "tcv/simd.hpp"

namespace tcv {

std::vector<NoisePath> sample_noise(const std::vector<RatePath>& rates, const TimeGrid& grid,
                                    const MarkGrid& marks, const rng::EnsembleHandle& ens) {
    if (rates.size() != ens.n_paths)
        throw std::invalid_argument("rate path count does not match ensemble");
    const std::size_t steps = grid.steps();
    const std::size_t nm = marks.size();
    std::vector<NoisePath> out(ens.n_paths);
    parallel_for_paths(ens.n_paths, [&](std::size_t p) {
        const RatePath& rp = rates[p];
        if (rp.lam_B.size() != steps + 1)
            throw std::invalid_argument("rate path not on the given grid");
        NoisePath& np = out[p];
        np.n_marks = nm;
        np.dB.resize(steps);
        np.counts.assign(steps * nm, 0.0);
        np.comp.assign(steps * nm, 0.0);

        rng::Substream gs(ens, p, "gauss");
        for (std::size_t i = 0; i < steps; ++i) {
            const double var = rp.dlam_B(i);
            np.dB[i] = var > 0.0 ? std::sqrt(var) * gs.gaussian() : 0.0;
        }
        if (nm > 0) {
            rng::Substream js(ens, p, "jumps");
            for (std::size_t i = 0; i < steps; ++i) {
                const double dH = rp.dlam_H(i);
                for (std::size_t j = 0; j < nm; ++j) {
                    const double m = dH * marks.weight[j];
                    np.comp[i * nm + j] = m;
                    np.counts[i * nm + j] = static_cast<double>(js.poisson(m));
                }
            }
        }
    });
    return out;
}

PathEnsemble simulate_paths(const TimeGrid& grid, const MarkGrid& marks,
                            const RateModel& model, const rng::EnsembleHandle& ens) {
    PathEnsemble pe;
    pe.grid = grid;
    pe.marks = marks;
    pe.ens = ens;
    pe.rates = sample_rate_paths(model, grid, ens);
    pe.noise = sample_noise(pe.rates, grid, marks, ens);
    return pe;
}

MuIncrements mu_of_cells(const NoisePath& noise, const PartitionScheme& part) {
    MuIncrements mu;
    mu.value.resize(part.cells.size());
    for (std::size_t c = 0; c < part.cells.size(); ++c) {
        const Cell& cell = part.cells[c];
        if (cell.step_hi > noise.dB.size())
            throw std::invalid_argument("partition not aligned with the noise grid");
        const MarkSet& ms = part.mark_sets[cell.mark_set];
        double v = 0.0;
        if (ms.gaussian) {
            for (std::size_t i = cell.step_lo; i < cell.step_hi; ++i) v += noise.dB[i];
        } else {
            for (std::size_t i = cell.step_lo; i < cell.step_hi; ++i)
                for (std::size_t a : ms.atoms) v += noise.dH(i, a);
        }
        mu.value[c] = v;
    }
    return mu;
}

std::vector<double> lambda_of_cells(const RatePath& rate, const TimeGrid& grid,
                                    const MarkGrid& marks, const PartitionScheme& part) {
    std::vector<double> lam(part.cells.size());
    for (std::size_t c = 0; c < part.cells.size(); ++c)
        lam[c] = measure_of_cell(rate, grid, marks, part, c);
    return lam;
}

double ito_integral(const PredictableField& phi, const NoisePath& noise) {
    double acc = 0.0;
    const std::size_t steps = noise.dB.size();
    for (std::size_t i = 0; i < steps; ++i) {
        acc += phi(i, -1) * noise.dB[i];
        for (std::size_t j = 0; j < noise.n_marks; ++j)
            acc += phi(i, static_cast<int>(j)) * noise.dH(i, j);
    }
    return acc;
}

double lambda_quadratic(const PredictableField& phi, const RatePath& rate,
                        const TimeGrid& grid, const MarkGrid& marks) {
    double acc = 0.0;
    for (std::size_t i = 0; i < grid.steps(); ++i) {
        const double g = phi(i, -1);
        acc += g * g * rate.dlam_B(i);
        const double dH = rate.dlam_H(i);
        for (std::size_t j = 0; j < marks.size(); ++j) {
            const double v = phi(i, static_cast<int>(j));
            acc += v * v * dH * marks.weight[j];
        }
    }
    return acc;
}

double MomentReport::max_abs_z() const {
    double m = 0.0;
    for (const auto& r : cells) m = std::max({m, std::fabs(r.z_mean), std::fabs(r.z_var)});
    for (const auto& r : pairs) m = std::max(m, std::fabs(r.z));
    return m;
}

namespace {

double safe_z(double mean, double se) { return se > 0.0 ? mean / se : 0.0; }

} // namespace

MomentReport check_conditional_moments(const PathEnsemble& paths, const PartitionScheme& part,
                                       const MomentCheckOptions& opts) {
    MomentReport rep;
    const std::size_t n = paths.n_paths();
    if (n < 1000) rep.insufficient_sample = true;

    const std::size_t nc = part.cells.size();
    // per-cell mu and Lambda across paths
    std::vector<std::vector<double>> mu(nc, std::vector<double>(n));
    std::vector<std::vector<double>> lam(nc, std::vector<double>(n));
    parallel_for_paths(n, [&](std::size_t p) {
        MuIncrements mi = mu_of_cells(paths.noise[p], part);
        std::vector<double> li = lambda_of_cells(paths.rates[p], paths.grid, paths.marks, part);
        for (std::size_t c = 0; c < nc; ++c) {
            mu[c][p] = mi.value[c];
            lam[c][p] = li[c];
        }
    });

    auto emit = [&](std::size_t c, int stratum, const std::vector<std::size_t>& idx) {
        if (idx.size() < 2) return;
        CellMomentRow row;
        row.cell = c;
        row.stratum = stratum;
        row.n = idx.size();
        std::vector<double> m(idx.size()), v(idx.size());
        for (std::size_t k = 0; k < idx.size(); ++k) {
            m[k] = mu[c][idx[k]];
            v[k] = m[k] * m[k] - lam[c][idx[k]];
        }
        auto ms = simd::mean_se(m);
        auto vs = simd::mean_se(v);
        row.mean_mu = ms.mean;
        row.z_mean = safe_z(ms.mean, ms.se);
        row.mean_musq_minus_lam = vs.mean;
        row.z_var = safe_z(vs.mean, vs.se);
        rep.cells.push_back(row);
    };

    std::vector<std::size_t> all(n);
    for (std::size_t p = 0; p < n; ++p) all[p] = p;

    for (std::size_t c = 0; c < nc; ++c) {
        emit(c, -1, all);
        // stratify by Lambda(cell) unless it is degenerate
        if (opts.n_strata >= 2 && simd::variance(lam[c]) > 1e-14) {
            std::vector<std::size_t> order = all;
            std::sort(order.begin(), order.end(),
                      [&](std::size_t a, std::size_t b) { return lam[c][a] < lam[c][b]; });
            const std::size_t per = n / opts.n_strata;
            for (std::size_t s = 0; s < opts.n_strata; ++s) {
                const std::size_t lo = s * per;
                const std::size_t hi = (s + 1 == opts.n_strata) ? n : (s + 1) * per;
                std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                             order.begin() + static_cast<std::ptrdiff_t>(hi));
                emit(c, static_cast<int>(s), idx);
            }
        }
    }

    // disjoint-cell products (same-level cells are pairwise disjoint)
    std::size_t emitted = 0;
    std::vector<double> prod(n);
    for (std::size_t a = 0; a < nc && emitted < opts.max_pairs; ++a) {
        for (std::size_t b = a + 1; b < nc && emitted < opts.max_pairs; ++b) {
            for (std::size_t p = 0; p < n; ++p) prod[p] = mu[a][p] * mu[b][p];
            auto st = simd::mean_se(prod);
            rep.pairs.push_back({a, b, st.mean, safe_z(st.mean, st.se)});
            ++emitted;
        }
    }
    return rep;
}

} // namespace tcv
