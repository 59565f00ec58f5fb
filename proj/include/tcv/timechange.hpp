#pragma once

#include <vector>

#include "tcv/grid.hpp"
#include "tcv/rng.hpp"

namespace tcv {

enum class RateKind { Constant, PiecewiseConstant, MeanRevertingSqrt };

// One component of the time-change rate. All three kinds keep the sampled
// rate nonnegative pathwise and integrable on [0, T].
struct RateComponent {
    RateKind kind = RateKind::Constant;
    double level = 1.0;                 // Constant
    std::vector<double> knots;          // PiecewiseConstant: knots[0] = 0
    std::vector<double> levels;         // value on [knots[k], knots[k+1])
    double speed = 0.0, mean = 0.0, vol = 0.0, init = 0.0; // MeanRevertingSqrt

    void validate() const;
    bool deterministic() const { return kind != RateKind::MeanRevertingSqrt; }
};

struct RateModel {
    RateComponent B;
    RateComponent H;
    bool shared_substream = false; // lambda^B and lambda^H drawn from one stream
};

// One realization of (lambda^B, lambda^H) on the grid plus trapezoid
// cumulatives Lambda.
struct RatePath {
    std::vector<double> lam_B, lam_H;  // grid points
    std::vector<double> cum_B, cum_H;  // trapezoid integrals, cum[0] = 0

    double dlam_B(std::size_t step) const { return cum_B[step + 1] - cum_B[step]; }
    double dlam_H(std::size_t step) const { return cum_H[step + 1] - cum_H[step]; }
};

std::vector<RatePath> sample_rate_paths(const RateModel& model, const TimeGrid& grid,
                                        const rng::EnsembleHandle& ens);

// Lambda-mass of one partition cell for one path. Gaussian cells integrate
// lambda^B over the time span; jump cells integrate lambda^H times the
// nu-mass of the cell's atoms.
double measure_of_cell(const RatePath& path, const TimeGrid& grid, const MarkGrid& marks,
                       const PartitionScheme& part, std::size_t cell);

} // namespace tcv
