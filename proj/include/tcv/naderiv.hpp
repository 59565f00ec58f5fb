#pragma once

#include <span>
#include <vector>

#include "tcv/condexp.hpp"
#include "tcv/noise.hpp"

// Non-anticipating derivative estimation on a partition level, the integral
// representation xi = E[xi | F^Lambda] + integral of D xi against mu, the
// duality with the Ito integral, and the running martingale representation.

namespace tcv {

// Piecewise-constant predictable field on a partition level: one value per
// (path, cell), the regression prediction measurable at the cell's left
// time endpoint. Per-path cell Lambda-masses are cached for reuse.
struct NaField {
    PartitionScheme part;
    std::size_t n_paths = 0;
    std::vector<double> value;    // path-major [p * n_cells + c]
    std::vector<double> lam_cell; // path-major Lambda(cell)
    std::vector<double> mu_cell;  // path-major mu(cell)
    std::vector<double> cell_r2;  // per-cell fit diagnostics

    double at(std::size_t path, std::size_t cell) const {
        return value[path * part.cells.size() + cell];
    }
};

struct NaOptions {
    FeatureOptions features{};  // G-flow features at each cell's left endpoint
    double lambda_floor = 1e-12;
    FitOptions fit{};
};

NaField estimate_na_derivative(std::span<const double> xi, const PathEnsemble& paths,
                               const PartitionScheme& part, const NaOptions& opts = {});

// E[xi | F^Lambda] estimated by regression on the whole-path lambda summary
// (G-flow features at time 0).
std::vector<double> conditional_on_lambda(std::span<const double> xi, const PathEnsemble& paths,
                                          const NaOptions& opts = {});

struct Reconstruction {
    std::vector<double> xi_hat; // per path
    std::vector<double> xi0;    // per path E[xi | F^Lambda] estimate
    double rel_l2_error = 0.0;  // ||xi_hat - xi|| / ||xi||
};

Reconstruction reconstruct(std::span<const double> xi, const NaField& field,
                           const PathEnsemble& paths, const NaOptions& opts = {});

struct DualityReport {
    double lhs = 0.0;     // E[xi * int(phi dmu)]
    double rhs = 0.0;     // E[int(phi * D xi dLambda)]
    double se_diff = 0.0; // pathwise SE of the two-sided difference
    double z = 0.0;
};

// phi is evaluated per (step, mark) as in ito_integral; it must be
// deterministic or predictable per path (callable receives the path index).
using PathField = std::function<double(std::size_t path, std::size_t step, int mark)>;

DualityReport duality_check(std::span<const double> xi, const PathField& phi,
                            const PathEnsemble& paths, const PartitionScheme& part,
                            const NaOptions& opts = {});

struct MartingaleRepresentation {
    NaField field;
    std::vector<double> xi0;
    // slice s: running reconstruction E[M_T|F^Lambda] + int_0^{t_s} D M_T dmu
    std::vector<std::vector<double>> running;  // per partition edge, per path
    std::vector<std::vector<double>> direct;   // G-regression of M_T at the same times
    std::vector<double> rel_l2_gap;            // per partition edge
};

MartingaleRepresentation martingale_representation(std::span<const double> m_terminal,
                                                   const PathEnsemble& paths,
                                                   const PartitionScheme& part,
                                                   const NaOptions& opts = {});

} // namespace tcv
