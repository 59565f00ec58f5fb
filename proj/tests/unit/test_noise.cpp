#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "tcv/noise.hpp"
#include "tcv/simd.hpp"

using namespace tcv;

namespace {

PathEnsemble unit_rate_ensemble(std::size_t n_paths, std::uint64_t seed,
                                std::size_t steps = 20, MarkGrid marks = MarkGrid::none()) {
    TimeGrid g = TimeGrid::build_uniform(1.0, steps);
    RateModel m; // lambda^B = lambda^H = 1
    return simulate_paths(g, marks, m, {n_paths, seed});
}

} // namespace

TEST_CASE("zero-variance steps give exactly zero Gaussian increments") {
    TimeGrid g = TimeGrid::build_uniform(1.0, 10);
    RateModel m;
    m.B.kind = RateKind::PiecewiseConstant;
    m.B.knots = {0.0, 0.5};
    m.B.levels = {1.0, 0.0};
    PathEnsemble pe = simulate_paths(g, MarkGrid::none(), m, {32, 11});
    for (const auto& np : pe.noise) {
        // on (0.6, 1.0] both trapezoid endpoints are zero
        for (std::size_t i = 6; i < 10; ++i) CHECK(np.dB[i] == 0.0);
    }
}

TEST_CASE("ensemble mean of B([0,1] x {0}) vanishes within 3 SE") {
    PathEnsemble pe = unit_rate_ensemble(20000, 42);
    std::vector<double> bT(pe.n_paths());
    for (std::size_t p = 0; p < pe.n_paths(); ++p)
        bT[p] = simd::sum(pe.noise[p].dB);
    auto st = simd::mean_se(bT);
    CHECK(std::fabs(st.mean) <= 3.0 * st.se);
}

TEST_CASE("Poisson counts have the compensator mean") {
    MarkGrid marks = MarkGrid::atoms({1.0}, {0.3});
    PathEnsemble pe = unit_rate_ensemble(20000, 7, 10, marks);
    // per-step mean count = dLambda^H * nu(bin) = 0.1 * 0.3 = 0.03
    std::vector<double> c0(pe.n_paths());
    for (std::size_t p = 0; p < pe.n_paths(); ++p) {
        c0[p] = pe.noise[p].count(0, 0);
        CHECK(pe.noise[p].compensator(0, 0) == doctest::Approx(0.03));
        CHECK(c0[p] >= 0.0);
        CHECK(c0[p] == std::floor(c0[p]));
    }
    auto st = simd::mean_se(c0);
    CHECK(std::fabs(st.mean - 0.03) <= 3.0 * st.se);
}

TEST_CASE("Wiener reduction: variance of B([0,t] x {0}) is t") {
    PathEnsemble pe = unit_rate_ensemble(20000, 1234, 20);
    for (std::size_t cut : {5, 10, 20}) {
        std::vector<double> b(pe.n_paths());
        for (std::size_t p = 0; p < pe.n_paths(); ++p) {
            double acc = 0.0;
            for (std::size_t i = 0; i < cut; ++i) acc += pe.noise[p].dB[i];
            b[p] = acc;
        }
        const double t = pe.grid.t[cut];
        const double v = simd::variance(b);
        const double se_var = t * std::sqrt(2.0 / static_cast<double>(pe.n_paths()));
        CHECK(std::fabs(v - t) <= 3.0 * se_var);
    }
}

TEST_CASE("mu of cells aggregates increments and centered counts") {
    MarkGrid marks = MarkGrid::atoms({2.0}, {0.5});
    TimeGrid g = TimeGrid::build_uniform(1.0, 4);
    PartitionScheme part = PartitionScheme::build(g, marks, 0);

    NoisePath np;
    np.n_marks = 1;
    np.dB = {0.1, -0.3, 0.0, 0.0};
    np.counts = {1.0, 0.0, 0.0, 0.0};
    np.comp = {0.05, 0.05, 0.05, 0.05};

    MuIncrements mu = mu_of_cells(np, part);
    CHECK(mu.value[0] == doctest::Approx(-0.2)); // Gaussian cell: 0.1 - 0.3
    CHECK(mu.value[1] == doctest::Approx(1.0 - 0.2)); // one jump minus compensator 4*0.05

    NoisePath zero;
    zero.n_marks = 1;
    zero.dB.assign(4, 0.0);
    zero.counts.assign(4, 0.0);
    zero.comp.assign(4, 0.0);
    MuIncrements mz = mu_of_cells(zero, part);
    for (double v : mz.value) CHECK(v == 0.0);
}

TEST_CASE("ito integral: zero and telescoping integrands") {
    MarkGrid marks = MarkGrid::atoms({1.5}, {0.4});
    PathEnsemble pe = unit_rate_ensemble(16, 5, 12, marks);
    for (std::size_t p = 0; p < pe.n_paths(); ++p) {
        const NoisePath& np = pe.noise[p];
        CHECK(ito_integral([](std::size_t, int) { return 0.0; }, np) == 0.0);
        const double bT = simd::sum(np.dB);
        const double got =
            ito_integral([](std::size_t, int mark) { return mark < 0 ? 1.0 : 0.0; }, np);
        CHECK(got == doctest::Approx(bT).epsilon(1e-14));
    }
}

TEST_CASE("Ito isometry within 3 SE for a jump-weighted integrand") {
    MarkGrid marks = MarkGrid::atoms({-0.5, 1.0}, {0.6, 0.4});
    PathEnsemble pe = unit_rate_ensemble(20000, 77, 10, marks);
    // phi(t, z) = z on the jump channel, 0 on the Gaussian one
    auto phi = [&](std::size_t, int mark) {
        return mark < 0 ? 0.0 : pe.marks.z[static_cast<std::size_t>(mark)];
    };
    std::vector<double> diff(pe.n_paths());
    for (std::size_t p = 0; p < pe.n_paths(); ++p) {
        const double lhs = ito_integral(phi, pe.noise[p]);
        const double rhs = lambda_quadratic(phi, pe.rates[p], pe.grid, pe.marks);
        diff[p] = lhs * lhs - rhs;
    }
    auto st = simd::mean_se(diff);
    CHECK(std::fabs(st.mean) <= 3.0 * st.se);
}

TEST_CASE("conditional moment report under a stochastic rate") {
    TimeGrid g = TimeGrid::build_uniform(1.0, 8);
    MarkGrid marks = MarkGrid::atoms({1.0}, {0.5});
    RateModel m;
    m.B.kind = RateKind::MeanRevertingSqrt;
    m.B.speed = 2.0;
    m.B.mean = 1.0;
    m.B.vol = 0.6;
    m.B.init = 1.0;
    m.H = m.B;
    PathEnsemble pe = simulate_paths(g, marks, m, {20000, 99});
    PartitionScheme part = PartitionScheme::build(g, marks, 1);

    MomentReport rep = check_conditional_moments(pe, part);
    CHECK(!rep.insufficient_sample);
    CHECK(rep.cells.size() >= part.cells.size()); // stratified rows added
    CHECK(rep.max_abs_z() < 4.0);
    CHECK(!rep.pairs.empty());
}

TEST_CASE("one-path ensemble flags insufficient sample") {
    PathEnsemble pe = unit_rate_ensemble(1, 3, 4);
    PartitionScheme part = PartitionScheme::build(pe.grid, pe.marks, 1);
    MomentReport rep = check_conditional_moments(pe, part);
    CHECK(rep.insufficient_sample);
}

TEST_CASE("martingale property: increments after t are uncorrelated with the past") {
    PathEnsemble pe = unit_rate_ensemble(20000, 314, 16);
    // mu((t,T] x {0}) against B(t)
    std::vector<double> prod(pe.n_paths());
    for (std::size_t p = 0; p < pe.n_paths(); ++p) {
        double past = 0.0, fut = 0.0;
        for (std::size_t i = 0; i < 8; ++i) past += pe.noise[p].dB[i];
        for (std::size_t i = 8; i < 16; ++i) fut += pe.noise[p].dB[i];
        prod[p] = past * fut;
    }
    auto st = simd::mean_se(prod);
    CHECK(std::fabs(st.mean) <= 3.0 * st.se);
}

TEST_CASE("noise sampling rejects mismatched rate paths") {
    TimeGrid g = TimeGrid::build_uniform(1.0, 4);
    RateModel m;
    auto rates = sample_rate_paths(m, g, {4, 1});
    CHECK_THROWS_AS(sample_noise(rates, g, MarkGrid::none(), rng::EnsembleHandle{8, 1}),
                    std::invalid_argument);
}
