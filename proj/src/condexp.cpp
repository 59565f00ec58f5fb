#include "tcv/condexp.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tcv/errors.hpp"
#include "tcv/parallel.hpp"
#include "tcv/simd.hpp"

namespace tcv {

FeatureSet build_features(const PathEnsemble& paths, Flow flow, std::size_t step,
                          const FeatureOptions& opts, const ExtraColumns& extras) {
    const std::size_t n = paths.n_paths();
    const std::size_t steps = paths.grid.steps();
    if (step > steps) throw std::invalid_argument("feature step beyond the grid");

    FeatureSet fs;
    fs.flow = flow;
    fs.step = step;
    fs.degree = opts.degree;
    fs.n_paths = n;

    auto add = [&](const std::string& name, std::vector<double> col) {
        fs.names.push_back(name);
        fs.cols.push_back(std::move(col));
    };

    // without a jump channel the H-side of the time change never enters any
    // estimator, so its columns are omitted rather than dropped later
    const bool has_marks = paths.marks.size() > 0;

    if (opts.include_noise) {
        std::vector<double> bcum(n), hcum;
        if (has_marks) hcum.resize(n);
        parallel_for_paths(n, [&](std::size_t p) {
            const NoisePath& np = paths.noise[p];
            double b = 0.0;
            for (std::size_t i = 0; i < step; ++i) b += np.dB[i];
            bcum[p] = b;
            if (has_marks) {
                double h = 0.0;
                for (std::size_t i = 0; i < step; ++i)
                    for (std::size_t j = 0; j < np.n_marks; ++j) h += np.dH(i, j);
                hcum[p] = h;
            }
        });
        add("B_t", std::move(bcum));
        if (has_marks) add("Hc_t", std::move(hcum));
    }
    if (opts.include_rates) {
        std::vector<double> lb(n), lh(n);
        for (std::size_t p = 0; p < n; ++p) {
            lb[p] = paths.rates[p].lam_B[step];
            lh[p] = paths.rates[p].lam_H[step];
        }
        add("lamB_t", std::move(lb));
        if (has_marks) add("lamH_t", std::move(lh));
    }
    if (opts.include_cums) {
        std::vector<double> cb(n), ch(n);
        for (std::size_t p = 0; p < n; ++p) {
            cb[p] = paths.rates[p].cum_B[step];
            ch[p] = paths.rates[p].cum_H[step];
        }
        add("LamB_t", std::move(cb));
        if (has_marks) add("LamH_t", std::move(ch));
    }

    if (flow == Flow::G) {
        std::vector<double> cb(n), ch(n);
        for (std::size_t p = 0; p < n; ++p) {
            cb[p] = paths.rates[p].cum_B.back();
            ch[p] = paths.rates[p].cum_H.back();
        }
        add("LamB_T", std::move(cb));
        if (has_marks) add("LamH_T", std::move(ch));
        const int k = std::max(0, opts.lambda_samples);
        for (int q = 1; q <= k; ++q) {
            const std::size_t idx =
                static_cast<std::size_t>(std::llround(static_cast<double>(q) *
                                                      static_cast<double>(steps) /
                                                      static_cast<double>(k)));
            std::vector<double> sb(n), sh(n);
            for (std::size_t p = 0; p < n; ++p) {
                sb[p] = paths.rates[p].lam_B[idx];
                sh[p] = paths.rates[p].lam_H[idx];
            }
            add("lamB_s" + std::to_string(q), std::move(sb));
            if (has_marks) add("lamH_s" + std::to_string(q), std::move(sh));
        }
    }

    for (const auto& [name, col] : extras) {
        if (col->size() != n) throw std::invalid_argument("extra feature column has wrong length");
        add(name, *col);
    }
    return fs;
}

namespace {

std::vector<RegressionFit::Term> enumerate_terms(std::size_t n_base, int degree) {
    std::vector<RegressionFit::Term> terms;
    for (std::size_t a = 0; a < n_base; ++a) terms.push_back({1, a, 0});
    if (degree >= 2) {
        for (std::size_t a = 0; a < n_base; ++a) terms.push_back({2, a, 0});
        for (std::size_t a = 0; a < n_base; ++a)
            for (std::size_t b = a + 1; b < n_base; ++b) terms.push_back({3, a, b});
    }
    return terms;
}

void term_column(const FeatureSet& fs, const RegressionFit::Term& t, std::vector<double>& out) {
    const std::size_t n = fs.n_paths;
    out.resize(n);
    const std::vector<double>& ca = fs.cols[t.a];
    switch (t.kind) {
        case 1:
            std::copy(ca.begin(), ca.end(), out.begin());
            break;
        case 2:
            for (std::size_t p = 0; p < n; ++p) out[p] = ca[p] * ca[p];
            break;
        case 3: {
            const std::vector<double>& cb = fs.cols[t.b];
            for (std::size_t p = 0; p < n; ++p) out[p] = ca[p] * cb[p];
            break;
        }
    }
}

std::string term_name(const FeatureSet& fs, const RegressionFit::Term& t) {
    switch (t.kind) {
        case 2: return fs.names[t.a] + "^2";
        case 3: return fs.names[t.a] + "*" + fs.names[t.b];
        default: return fs.names[t.a];
    }
}

} // namespace

RegressionFit fit_conditional(std::span<const double> target, const FeatureSet& fs,
                              const FitOptions& opts) {
    const std::size_t n = fs.n_paths;
    if (target.size() != n) throw std::invalid_argument("target length does not match ensemble");
    if (!opts.weights.empty() && opts.weights.size() != n)
        throw std::invalid_argument("weight length does not match ensemble");

    RegressionFit fit;
    fit.n = n;

    const bool weighted = !opts.weights.empty();
    double wsum = weighted ? simd::sum(opts.weights) : static_cast<double>(n);
    if (!(wsum > 0.0)) throw std::invalid_argument("weights must have positive mass");

    auto wmean = [&](std::span<const double> col) {
        if (!weighted) return simd::mean(col);
        return simd::dot(col, opts.weights) / wsum;
    };

    const double ybar = wmean(target);
    double yvar = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
        const double d = target[p] - ybar;
        yvar += (weighted ? opts.weights[p] : 1.0) * d * d;
    }
    yvar /= wsum;

    // constant targets are in the span of the intercept; R^2 is 1 by convention
    if (yvar <= 1e-24 * (1.0 + ybar * ybar)) {
        fit.intercept = ybar;
        fit.r2 = 1.0;
        fit.constant_target = true;
        return fit;
    }

    auto all_terms = enumerate_terms(fs.cols.size(), fs.degree);

    // build, center and scale term columns, dropping degenerate ones
    std::vector<std::vector<double>> cols;
    std::vector<double> work;
    for (const auto& t : all_terms) {
        term_column(fs, t, work);
        const double m = wmean(work);
        double v = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            const double d = work[p] - m;
            v += (weighted ? opts.weights[p] : 1.0) * d * d;
        }
        v /= wsum;
        const double sd = std::sqrt(v);
        if (sd <= 1e-12 * (1.0 + std::fabs(m))) {
            fit.dropped.push_back(term_name(fs, t));
            continue;
        }
        std::vector<double> col(n);
        const double inv = 1.0 / sd;
        for (std::size_t p = 0; p < n; ++p) col[p] = (work[p] - m) * inv;
        cols.push_back(std::move(col));
        fit.terms.push_back(t);
        fit.mean.push_back(m);
        fit.scale.push_back(sd);
    }

    const std::size_t d = cols.size();
    if (static_cast<double>(n) < opts.min_paths_per_dim * static_cast<double>(d + 1))
        throw std::invalid_argument("too few paths for the basis dimension (need >= " +
                                    std::to_string(opts.min_paths_per_dim * static_cast<double>(d + 1)) +
                                    ")");
    if (d == 0) {
        fit.intercept = ybar;
        fit.r2 = 0.0;
        return fit;
    }

    std::vector<double> yc(n);
    for (std::size_t p = 0; p < n; ++p)
        yc[p] = (target[p] - ybar) * (weighted ? opts.weights[p] : 1.0);

    Eigen::MatrixXd G(d, d);
    Eigen::VectorXd rhs(d);
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    pairs.reserve(d * (d + 1) / 2);
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) pairs.emplace_back(a, b);
    std::vector<double> gv(pairs.size());
    parallel_for_paths(pairs.size(), [&](std::size_t k) {
        const auto [a, b] = pairs[k];
        gv[k] = weighted ? simd::triple_dot(cols[a], cols[b], opts.weights)
                         : simd::dot(cols[a], cols[b]);
    }, 8);
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        const auto [a, b] = pairs[k];
        G(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = gv[k] / wsum;
        G(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = gv[k] / wsum;
    }
    for (std::size_t a = 0; a < d; ++a)
        rhs(static_cast<Eigen::Index>(a)) = simd::dot(cols[a], yc) / wsum;

    const double ridge = opts.ridge_scale * G.trace() / static_cast<double>(d);
    Eigen::MatrixXd Gr = G;
    for (std::size_t a = 0; a < d; ++a)
        Gr(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a)) += ridge;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Gr, Eigen::EigenvaluesOnly);
    const double emax = es.eigenvalues().maxCoeff();
    const double emin = es.eigenvalues().minCoeff();
    fit.cond = emax / std::max(emin, 1e-300);
    if (!(emin > 0.0) || fit.cond > 1e14)
        throw SingularRegression(fit.cond, opts.where);

    Eigen::VectorXd beta = Gr.ldlt().solve(rhs);
    if (!beta.allFinite()) throw SingularRegression(fit.cond, opts.where);

    fit.beta.assign(beta.data(), beta.data() + d);
    fit.intercept = ybar;

    // in-sample R^2
    double ssr = 0.0;
    std::vector<double> pred(n, 0.0);
    for (std::size_t a = 0; a < d; ++a) simd::axpy(fit.beta[a], cols[a], pred);
    for (std::size_t p = 0; p < n; ++p) {
        const double resid = (target[p] - ybar) - pred[p];
        ssr += (weighted ? opts.weights[p] : 1.0) * resid * resid;
    }
    ssr /= wsum;
    fit.r2 = 1.0 - ssr / yvar;
    return fit;
}

std::vector<double> predict(const RegressionFit& fit, const FeatureSet& fs) {
    const std::size_t n = fs.n_paths;
    std::vector<double> out(n, fit.intercept);
    if (fit.constant_target || fit.terms.empty()) return out;
    std::vector<double> work;
    for (std::size_t k = 0; k < fit.terms.size(); ++k) {
        term_column(fs, fit.terms[k], work);
        const double c = fit.beta[k] / fit.scale[k];
        const double m = fit.mean[k];
        for (std::size_t p = 0; p < n; ++p) out[p] += c * (work[p] - m);
    }
    return out;
}

TowerReport tower_check(std::span<const double> target, const FeatureSet& at_t1,
                        const FeatureSet& at_t2, const FitOptions& opts) {
    RegressionFit f2 = fit_conditional(target, at_t2, opts);
    std::vector<double> inner = predict(f2, at_t2);
    RegressionFit f1d = fit_conditional(target, at_t1, opts);
    std::vector<double> direct = predict(f1d, at_t1);
    std::vector<double> composed;
    if (at_t1.step == at_t2.step && at_t1.flow == at_t2.flow) {
        // conditioning twice on the same information set is the identity
        composed = inner;
    } else {
        RegressionFit f1c = fit_conditional(inner, at_t1, opts);
        composed = predict(f1c, at_t1);
    }

    TowerReport rep;
    rep.distance = std::sqrt(simd::sq_diff_sum(composed, direct) /
                             static_cast<double>(target.size()));
    double rms = 0.0;
    for (double v : direct) rms += v * v;
    rms = std::sqrt(rms / static_cast<double>(direct.size()));
    rep.rel_distance = rms > 0.0 ? rep.distance / rms : rep.distance;
    // scale of the regression sampling noise in the two fits
    const double vy = simd::variance(std::span<const double>(target.data(), target.size()));
    rep.noise_tol = 3.0 * std::sqrt(vy * static_cast<double>(f1d.dim()) /
                                    static_cast<double>(target.size()));
    return rep;
}

} // namespace tcv
