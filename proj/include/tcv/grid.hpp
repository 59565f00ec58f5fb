#pragma once

#include <cstddef>
#include <vector>

namespace tcv {

// Discretization of [0, T]. Step i covers the interval (t[i], t[i+1]].
struct TimeGrid {
    std::vector<double> t;
    bool uniform = false;

    static TimeGrid build_uniform(double T, std::size_t n_steps);
    static TimeGrid from_points(std::vector<double> points);

    std::size_t steps() const { return t.size() - 1; }
    double horizon() const { return t.back(); }
    double dt(std::size_t i) const { return t[i + 1] - t[i]; }
};

// Finite set of nonzero mark atoms with their nu-masses.
struct MarkGrid {
    std::vector<double> z;
    std::vector<double> weight;

    static MarkGrid atoms(std::vector<double> marks, std::vector<double> weights);
    static MarkGrid none() { return MarkGrid{}; }

    std::size_t size() const { return z.size(); }
    double total_mass() const;
};

// Either the Gaussian channel {0} or a union of mark atoms.
struct MarkSet {
    bool gaussian = false;
    std::vector<std::size_t> atoms;
};

// Time interval (t[step_lo], t[step_hi]] crossed with mark_sets[mark_set].
struct Cell {
    std::size_t step_lo = 0;
    std::size_t step_hi = 0;
    std::size_t mark_set = 0;
};

// Dyadic partition at refinement n: 2^n left-open time intervals crossed
// with {0} and with each mark atom. Level n+1 cells refine level n cells.
struct PartitionScheme {
    int level = 0;
    std::vector<MarkSet> mark_sets;
    std::vector<Cell> cells; // time-major, mark sets inner
    std::vector<std::size_t> time_edges;

    static PartitionScheme build(const TimeGrid& grid, const MarkGrid& marks, int level);

    std::size_t n_time_intervals() const { return time_edges.size() - 1; }
    std::size_t n_mark_sets() const { return mark_sets.size(); }
    // cell holding (time step, mark set)
    std::size_t cell_index(std::size_t step, std::size_t mark_set) const;
    // true when the point (t, z) lies in the given cell (z = 0 means the
    // Gaussian channel, matched against the atom set otherwise)
    bool contains(const TimeGrid& grid, const MarkGrid& marks, std::size_t cell,
                  double t, double z) const;
};

int max_partition_level(const TimeGrid& grid);

} // namespace tcv
