#include "tcv/grid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tcv {

TimeGrid TimeGrid::build_uniform(double T, std::size_t n_steps) {
    if (!(T > 0.0)) throw std::invalid_argument("time horizon must be positive");
    if (n_steps < 1) throw std::invalid_argument("need at least one time step");
    TimeGrid g;
    g.t.resize(n_steps + 1);
    const double dt = T / static_cast<double>(n_steps);
    for (std::size_t i = 0; i <= n_steps; ++i) g.t[i] = static_cast<double>(i) * dt;
    g.t.back() = T;
    g.uniform = true;
    return g;
}

TimeGrid TimeGrid::from_points(std::vector<double> points) {
    if (points.size() < 2) throw std::invalid_argument("grid needs at least two points");
    if (points.front() != 0.0) throw std::invalid_argument("grid must start at 0");
    for (std::size_t i = 0; i + 1 < points.size(); ++i) {
        if (!(points[i] < points[i + 1]))
            throw std::invalid_argument("grid points must be strictly increasing");
    }
    TimeGrid g;
    g.t = std::move(points);
    const double dt0 = g.t[1] - g.t[0];
    g.uniform = true;
    for (std::size_t i = 0; i + 1 < g.t.size(); ++i) {
        if (std::fabs(g.t[i + 1] - g.t[i] - dt0) > 1e-12 * std::max(1.0, dt0)) {
            g.uniform = false;
            break;
        }
    }
    return g;
}

MarkGrid MarkGrid::atoms(std::vector<double> marks, std::vector<double> weights) {
    if (marks.size() != weights.size())
        throw std::invalid_argument("mark points and weights must have equal length");
    for (double z : marks)
        if (z == 0.0) throw std::invalid_argument("marks live on R \\ {0}");
    for (double w : weights)
        if (!(w >= 0.0)) throw std::invalid_argument("mark weights must be nonnegative");
    MarkGrid m;
    m.z = std::move(marks);
    m.weight = std::move(weights);
    return m;
}

double MarkGrid::total_mass() const {
    double s = 0.0;
    for (double w : weight) s += w;
    return s;
}

int max_partition_level(const TimeGrid& grid) {
    int n = 0;
    std::size_t s = grid.steps();
    while (s % 2 == 0 && s > 1) {
        s /= 2;
        ++n;
    }
    return n;
}

PartitionScheme PartitionScheme::build(const TimeGrid& grid, const MarkGrid& marks, int level) {
    if (level < 0) throw std::invalid_argument("refinement level must be nonnegative");
    const std::size_t intervals = std::size_t{1} << level;
    if (grid.steps() % intervals != 0)
        throw std::invalid_argument("refinement level incompatible with grid: 2^n must divide the step count");

    PartitionScheme p;
    p.level = level;
    p.mark_sets.push_back(MarkSet{true, {}});
    for (std::size_t j = 0; j < marks.size(); ++j)
        p.mark_sets.push_back(MarkSet{false, {j}});

    const std::size_t stride = grid.steps() / intervals;
    p.time_edges.resize(intervals + 1);
    for (std::size_t k = 0; k <= intervals; ++k) p.time_edges[k] = k * stride;

    p.cells.reserve(intervals * p.mark_sets.size());
    for (std::size_t k = 0; k < intervals; ++k)
        for (std::size_t m = 0; m < p.mark_sets.size(); ++m)
            p.cells.push_back(Cell{p.time_edges[k], p.time_edges[k + 1], m});
    return p;
}

std::size_t PartitionScheme::cell_index(std::size_t step, std::size_t mark_set) const {
    auto it = std::upper_bound(time_edges.begin(), time_edges.end(), step);
    if (it == time_edges.begin() || it == time_edges.end())
        throw std::invalid_argument("step outside the partition");
    const std::size_t interval = static_cast<std::size_t>(it - time_edges.begin()) - 1;
    return interval * mark_sets.size() + mark_set;
}

bool PartitionScheme::contains(const TimeGrid& grid, const MarkGrid& marks, std::size_t cell,
                               double t, double z) const {
    const Cell& c = cells.at(cell);
    if (!(t > grid.t[c.step_lo] && t <= grid.t[c.step_hi])) return false;
    const MarkSet& ms = mark_sets[c.mark_set];
    if (z == 0.0) return ms.gaussian;
    if (ms.gaussian) return false;
    for (std::size_t a : ms.atoms)
        if (marks.z[a] == z) return true;
    return false;
}

} // namespace tcv
