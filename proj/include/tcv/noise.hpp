#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "tcv/grid.hpp"
#include "tcv/rng.hpp"
#include "tcv/timechange.hpp"

namespace tcv {

// Conditional Gaussian / centered Poisson increments for one path, sampled
// given its rate path. Layout: dB per time step; jump counts and their
// compensators per (step, mark atom), row-major.
struct NoisePath {
    std::vector<double> dB;
    std::vector<double> counts;
    std::vector<double> comp;
    std::size_t n_marks = 0;

    double count(std::size_t step, std::size_t mark) const {
        return counts[step * n_marks + mark];
    }
    double compensator(std::size_t step, std::size_t mark) const {
        return comp[step * n_marks + mark];
    }
    // centered jump increment
    double dH(std::size_t step, std::size_t mark) const {
        return count(step, mark) - compensator(step, mark);
    }
};

std::vector<NoisePath> sample_noise(const std::vector<RatePath>& rates, const TimeGrid& grid,
                                    const MarkGrid& marks, const rng::EnsembleHandle& ens);

// Everything one simulation works with: grids plus the sampled rate and
// noise paths.
struct PathEnsemble {
    TimeGrid grid;
    MarkGrid marks;
    rng::EnsembleHandle ens;
    std::vector<RatePath> rates;
    std::vector<NoisePath> noise;

    std::size_t n_paths() const { return ens.n_paths; }
};

PathEnsemble simulate_paths(const TimeGrid& grid, const MarkGrid& marks,
                            const RateModel& model, const rng::EnsembleHandle& ens);

// Per-cell values of mu for one path on a partition level.
struct MuIncrements {
    std::vector<double> value; // one per cell
};

MuIncrements mu_of_cells(const NoisePath& noise, const PartitionScheme& part);

// Lambda-mass of every cell for one path.
std::vector<double> lambda_of_cells(const RatePath& rate, const TimeGrid& grid,
                                    const MarkGrid& marks, const PartitionScheme& part);

// Predictable integrand on grid x marks: mark < 0 addresses the Gaussian
// channel, mark >= 0 the jump atoms. Values must be measurable at the left
// endpoint of step `step`.
using PredictableField = std::function<double(std::size_t step, int mark)>;

double ito_integral(const PredictableField& phi, const NoisePath& noise);

// phi^2 against Lambda for the same field (isometry right-hand side).
double lambda_quadratic(const PredictableField& phi, const RatePath& rate,
                        const TimeGrid& grid, const MarkGrid& marks);

// Conditional-moment verification of the sampled field: per cell and
// Lambda-stratum, z-scores for E[mu] = 0 and E[mu^2 - Lambda] = 0, plus
// disjoint-cell product z-scores.
struct CellMomentRow {
    std::size_t cell = 0;
    int stratum = -1; // -1 = all paths
    std::size_t n = 0;
    double mean_mu = 0, z_mean = 0;
    double mean_musq_minus_lam = 0, z_var = 0;
};

struct PairMomentRow {
    std::size_t cell_a = 0, cell_b = 0;
    double mean_product = 0, z = 0;
};

struct MomentReport {
    bool insufficient_sample = false;
    std::vector<CellMomentRow> cells;
    std::vector<PairMomentRow> pairs;
    double max_abs_z() const;
};

struct MomentCheckOptions {
    std::size_t n_strata = 4;
    std::size_t max_pairs = 128; // cap on reported disjoint-cell products
};

MomentReport check_conditional_moments(const PathEnsemble& paths, const PartitionScheme& part,
                                       const MomentCheckOptions& opts = {});

} // namespace tcv
