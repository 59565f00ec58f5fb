#pragma once

#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "tcv/bsde.hpp"
#include "tcv/naderiv.hpp"
#include "tcv/volterra.hpp"

// Stochastic Hamiltonians under the enlarged and the observable flow,
// sufficient-maximum-principle probes, the first-variation process and the
// perturbation-gradient identity used by the necessary principle.

namespace tcv {

struct Objective {
    std::function<double(double t, double lamB, double lamH, double u, double x)> F;
    std::function<double(double t, double lamB, double lamH, double u, double x)> dxF, duF;
    std::function<double(double x)> G, dxG;
};

// Adjoint pair on the grid, either the raw backward solution (enlarged flow)
// or its slice-wise projection onto the observable flow.
struct AdjointSlices {
    std::size_t n_paths = 0, n_steps = 0, n_marks = 0;
    std::vector<double> p;  // (steps+1) x paths
    std::vector<double> q0; // steps x paths
    std::vector<double> qz; // steps x paths x marks

    double p_at(std::size_t step, std::size_t path) const { return p[step * n_paths + path]; }
    double q0_at(std::size_t step, std::size_t path) const { return q0[step * n_paths + path]; }
    double qz_at(std::size_t step, std::size_t path, std::size_t mark) const {
        return qz[(step * n_paths + path) * n_marks + mark];
    }
};

AdjointSlices adjoint_slices(const BsdeSolution& sol);

// E[p|F_t], E[q|F_t] by per-slice regression on F-flow features.
AdjointSlices project_to_F(const BsdeSolution& sol, const PathEnsemble& paths,
                           const FeatureOptions& fopts,
                           const std::vector<std::vector<double>>* state_slices = nullptr,
                           const FitOptions& fit = {});

std::vector<std::vector<double>> state_slices(const std::vector<StatePath>& states);

// D_{s,z} p(t) estimated slice-wise by the NA-derivative of the regressed
// adjoint; only needed when the noise kernel has genuine t-dependence.
// Flagged approximate in reports.
struct NaOfAdjoint {
    std::map<std::size_t, NaField> at_slice;
    bool approximate = true;
};

NaOfAdjoint estimate_na_of_adjoint(const BsdeSolution& sol, const PathEnsemble& paths,
                                   const PartitionScheme& part, const NaOptions& opts = {},
                                   std::size_t slice_stride = 1);

struct HamiltonianInputs {
    const VolterraModel* model = nullptr;
    const Objective* objective = nullptr;
    const PathEnsemble* paths = nullptr;
    const std::vector<StatePath>* states = nullptr; // controlled state and control history
    const AdjointSlices* adjoint = nullptr;         // raw (G) or projected (F)
    const NaOfAdjoint* na_p = nullptr;              // optional H1 jump-memory term
    bool require_na_p() const;
};

// Hamiltonian at (t_i, path) with the control at time t_i replaced by u.
// The memory terms use the recorded control history before t_i.
double hamiltonian(const HamiltonianInputs& in, std::size_t step, std::size_t path, double u);

// d/du of the observable Hamiltonian at (t_i, path), analytic kernels first,
// central differences on the u-grid spacing otherwise. Includes the Volterra
// memory correction from the dt-du kernels when the model provides them
// (paired with the adjoint at later times).
double du_hamiltonian(const HamiltonianInputs& in, std::size_t step, std::size_t path, double u,
                      double fd_step);

struct MpOptions {
    std::size_t u_grid_points = 101;
    double tol_max = 1e-6;
    double tol_conc = 1e-8;
    std::size_t path_sample = 64;   // deterministic prefix of the ensemble
    std::size_t time_stride = 1;
    std::vector<std::pair<double, double>> x_probe_pairs;
};

struct MpReport {
    double max_gap = 0.0;   // worst maximality gap over sampled (t, path)
    double mean_gap = 0.0;
    std::size_t argmax_ties_at_boundary = 0;
    bool maximality_ok = false;
    bool g_concave_ok = true;
    bool esssup_concave_ok = true;
    double worst_g_violation = 0.0;
    double worst_esssup_violation = 0.0;
    bool verdict = false;
    struct Row {
        double t;
        double max_gap;
        double mean_gap;
    };
    std::vector<Row> per_time;
};

MpReport check_sufficient(const ControlPolicy& candidate, const HamiltonianInputs& in,
                          const MpOptions& opts);

// First-variation process: the linear Volterra equation driven by the
// control bump beta along the same noise path.
StatePath first_variation(const VolterraModel& model, const StatePath& base,
                          const std::vector<double>& beta, const RatePath& rate,
                          const NoisePath& noise, const TimeGrid& grid, const MarkGrid& marks,
                          const SolveOptions& opts = {});

struct GradientEstimate {
    double value = 0.0;
    double se = 0.0;
};

struct GradientReport {
    GradientEstimate finite_difference; // (J(u+eps b) - J(u-eps b)) / 2eps
    GradientEstimate variation;         // dxF chi + duF beta + dxG chi(T)
    GradientEstimate hamiltonian;       // E int du H^F beta dt
};

struct GradientOptions {
    double eps = 1e-4;
    FeatureOptions g_features{};
    FeatureOptions f_features{};
    FitOptions fit{};
    double fd_u_step = 1e-4;
};

// Expected objective for a policy on the ensemble (left-endpoint quadrature).
GradientEstimate evaluate_objective(const VolterraModel& model, const Objective& objective,
                                    const ControlPolicy& policy, const PathEnsemble& paths,
                                    const SolveOptions& opts = {});

// The adjoint BSDE driver dx H for (model, objective) along given states.
BsdeSpec make_adjoint_spec(const VolterraModel& model, const Objective& objective,
                           const PathEnsemble& paths, const std::vector<StatePath>& states,
                           const NaOfAdjoint* na_p = nullptr);

GradientReport perturbation_gradient(const VolterraModel& model, const Objective& objective,
                                     const ControlPolicy& policy, const std::vector<double>& beta,
                                     const PathEnsemble& paths,
                                     const GradientOptions& opts = {});

} // namespace tcv
