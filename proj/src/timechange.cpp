#include "tcv/timechange.hpp"

#include <cmath>
#include <stdexcept>

#include "tcv/parallel.hpp"

namespace tcv {

void RateComponent::validate() const {
    switch (kind) {
        case RateKind::Constant:
            if (!(level >= 0.0)) throw std::invalid_argument("constant rate level must be >= 0");
            break;
        case RateKind::PiecewiseConstant:
            if (knots.empty() || knots.size() != levels.size())
                throw std::invalid_argument("piecewise rate needs matching knots and levels");
            if (knots.front() != 0.0)
                throw std::invalid_argument("piecewise rate knots must start at 0");
            for (std::size_t k = 0; k + 1 < knots.size(); ++k)
                if (!(knots[k] < knots[k + 1]))
                    throw std::invalid_argument("piecewise rate knots must increase");
            for (double v : levels)
                if (!(v >= 0.0)) throw std::invalid_argument("piecewise rate levels must be >= 0");
            break;
        case RateKind::MeanRevertingSqrt:
            if (!(speed >= 0.0 && mean >= 0.0 && vol >= 0.0 && init >= 0.0))
                throw std::invalid_argument("mean-reverting rate parameters must be nonnegative");
            break;
    }
}

namespace {

double piecewise_value(const RateComponent& c, double t) {
    std::size_t k = 0;
    while (k + 1 < c.knots.size() && t >= c.knots[k + 1]) ++k;
    return c.levels[k];
}

// Full-truncation Euler for the square-root model; stored values are floored
// at 0 so lambda >= 0 holds pathwise.
void sample_component(const RateComponent& c, const TimeGrid& grid, rng::Substream& rs,
                      std::vector<double>& out) {
    const std::size_t n = grid.t.size();
    out.resize(n);
    switch (c.kind) {
        case RateKind::Constant:
            for (std::size_t i = 0; i < n; ++i) out[i] = c.level;
            break;
        case RateKind::PiecewiseConstant:
            for (std::size_t i = 0; i < n; ++i) out[i] = piecewise_value(c, grid.t[i]);
            break;
        case RateKind::MeanRevertingSqrt: {
            double state = c.init;
            out[0] = state > 0.0 ? state : 0.0;
            for (std::size_t i = 0; i + 1 < n; ++i) {
                const double dt = grid.dt(i);
                const double pos = state > 0.0 ? state : 0.0;
                state += c.speed * (c.mean - pos) * dt +
                         c.vol * std::sqrt(pos * dt) * rs.gaussian();
                out[i + 1] = state > 0.0 ? state : 0.0;
            }
            break;
        }
    }
}

void trapezoid_cum(const TimeGrid& grid, const std::vector<double>& lam,
                   std::vector<double>& cum) {
    cum.resize(lam.size());
    cum[0] = 0.0;
    for (std::size_t i = 0; i + 1 < lam.size(); ++i)
        cum[i + 1] = cum[i] + 0.5 * (lam[i] + lam[i + 1]) * grid.dt(i);
}

} // namespace

std::vector<RatePath> sample_rate_paths(const RateModel& model, const TimeGrid& grid,
                                        const rng::EnsembleHandle& ens) {
    model.B.validate();
    model.H.validate();
    std::vector<RatePath> out(ens.n_paths);
    parallel_for_paths(ens.n_paths, [&](std::size_t p) {
        RatePath& rp = out[p];
        rng::Substream rb(ens, p, "rate_B");
        sample_component(model.B, grid, rb, rp.lam_B);
        if (model.shared_substream) {
            sample_component(model.H, grid, rb, rp.lam_H);
        } else {
            rng::Substream rh(ens, p, "rate_H");
            sample_component(model.H, grid, rh, rp.lam_H);
        }
        trapezoid_cum(grid, rp.lam_B, rp.cum_B);
        trapezoid_cum(grid, rp.lam_H, rp.cum_H);
    });
    return out;
}

double measure_of_cell(const RatePath& path, const TimeGrid& grid, const MarkGrid& marks,
                       const PartitionScheme& part, std::size_t cell) {
    if (cell >= part.cells.size()) throw std::invalid_argument("cell index out of range");
    const Cell& c = part.cells[cell];
    if (c.step_hi > grid.steps() || c.step_lo >= c.step_hi)
        throw std::invalid_argument("cell outside grid support");
    const MarkSet& ms = part.mark_sets[c.mark_set];
    if (ms.gaussian) return path.cum_B[c.step_hi] - path.cum_B[c.step_lo];
    double mass = 0.0;
    for (std::size_t a : ms.atoms) {
        if (a >= marks.size()) throw std::invalid_argument("cell references unknown mark atom");
        mass += marks.weight[a];
    }
    return (path.cum_H[c.step_hi] - path.cum_H[c.step_lo]) * mass;
}

} // namespace tcv
