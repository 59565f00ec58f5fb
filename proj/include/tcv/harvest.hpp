#pragma once

#include <functional>
#include <vector>

#include "tcv/bsde.hpp"
#include "tcv/control.hpp"
#include "tcv/volterra.hpp"

// Optimal-harvesting case study: growth-kernel Volterra dynamics with the
// conditional Gaussian channel, the discounted revenue objective, the
// closed-form conditional adjoint, and the fixed-point construction of the
// candidate control from the optimality characterization.

namespace tcv {

struct HarvestModel {
    std::function<double(double t, double s)> r;    // growth kernel, C1
    std::function<double(double t, double s)> dt_r; // d/dt r
    std::function<double(double t)> sigma;          // volatility, sigma > -1
    double K = 1.0;     // catchability
    double X0 = 1.0;    // initial biomass
    double delta = 0.1; // discount rate
    double u_max = 1.0; // control interval [0, u_max]

    void validate(const TimeGrid& grid) const;
    VolterraModel to_volterra() const;
    Objective to_objective(double horizon) const;
};

// r~(t) = r(t,t) + int_0^t dt_r(t,s) ds, trapezoid in s, per grid point.
std::vector<double> tilde_r_curve(const HarvestModel& model, const TimeGrid& grid);
double tilde_r(const HarvestModel& model, const TimeGrid& grid, double t);

// Log-Euler forward scheme: exactly positive, with the Volterra drift memory
// folded in through the transformation-rule form. u is per step; pass a
// per-path matrix (path-major, n x steps) for stochastic controls.
std::vector<StatePath> simulate_state(const HarvestModel& model,
                                      const std::vector<double>& u_steps,
                                      const PathEnsemble& paths);
std::vector<StatePath> simulate_state_matrix(const HarvestModel& model,
                                             const std::vector<double>& u_matrix,
                                             const PathEnsemble& paths);

// First grid index with X <= 0 (steps() when the path stays positive).
std::vector<std::size_t> positivity_stop_index(const std::vector<StatePath>& states);

struct HarvestOptions {
    FeatureOptions g_features{};
    FeatureOptions f_features{};
    FitOptions fit{};
};

// Conditional adjoint through the closed form: the inner pathwise integral
// by quadrature, the Q-expectation by likelihood-ratio weighted regression
// under the enlarged flow, then the slice-wise projection onto the
// observable flow. For deterministic controls both regressions reduce to
// the constant and are exact.
struct FormulaAdjoint {
    std::size_t n_paths = 0, n_steps = 0;
    std::vector<double> pG; // (steps+1) x paths
    std::vector<double> pF; // (steps+1) x paths

    double pG_at(std::size_t i, std::size_t p) const { return pG[i * n_paths + p]; }
    double pF_at(std::size_t i, std::size_t p) const { return pF[i * n_paths + p]; }
};

FormulaAdjoint adjoint_formula(const HarvestModel& model, const std::vector<double>& u_steps,
                               const PathEnsemble& paths, const HarvestOptions& opts = {});
FormulaAdjoint adjoint_formula_matrix(const HarvestModel& model,
                                      const std::vector<double>& u_matrix,
                                      const PathEnsemble& paths,
                                      const HarvestOptions& opts = {});

// Backward-solver route for the same adjoint equation.
BsdeSolution harvest_bsde(const HarvestModel& model, const std::vector<double>& u_steps,
                          const PathEnsemble& paths, const HarvestOptions& opts = {});

struct CandidateOptions {
    double tol = 0.0;          // <= 0 means 1% of the target's sup
    std::size_t max_iter = 50;
    double damping = 0.5;
    HarvestOptions harvest{};
};

struct HarvestSolution {
    std::vector<double> u_hat;      // per step
    std::vector<double> target;     // per grid point; terminal entry pinned to 0
    std::vector<double> pF_mean;    // per grid point, formula route
    std::vector<double> residual;   // |pF_mean - target|
    double sup_residual = 0.0;
    bool converged = false;
    std::size_t iterations = 0;
    std::vector<double> residual_history; // sup residual per iteration
};

// Damped fixed-point construction of the candidate control driving the
// observable adjoint onto the optimality target curve K^{-1} e^{-delta(T-t)}.
// The construction is an addition over the source characterization and may
// legitimately fail to converge; the flag says so.
HarvestSolution solve_candidate(const HarvestModel& model, const PathEnsemble& paths,
                                const CandidateOptions& opts = {});

struct JEstimate {
    double mean = 0.0;
    double se = 0.0;
};

JEstimate evaluate_J(const HarvestModel& model, const std::vector<double>& u_steps,
                     const PathEnsemble& paths);

// Pathwise objective samples (for scans and diagnostics).
std::vector<double> evaluate_J_paths(const HarvestModel& model,
                                     const std::vector<double>& u_steps,
                                     const PathEnsemble& paths);

} // namespace tcv
