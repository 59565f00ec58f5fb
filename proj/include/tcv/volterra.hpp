#pragma once

#include <functional>
#include <vector>

#include "tcv/noise.hpp"

namespace tcv {

// Kernel signature: (t, s, z, lamB, lamH, u, x). The drift kernel ignores z.
using DriftKernel = std::function<double(double t, double s, double lamB, double lamH,
                                         double u, double x)>;
using NoiseKernel = std::function<double(double t, double s, double z, double lamB,
                                         double lamH, double u, double x)>;

// Coefficients of the forward Volterra equation. Partial derivatives in the
// first time argument may be supplied analytically; otherwise they fall back
// to central differences with h = dt/10. A model declaring convolution_free
// promises dt-kernels are identically zero.
struct VolterraModel {
    double X0 = 0.0;
    DriftKernel b;       // null means 0
    NoiseKernel kappa;   // null means 0
    DriftKernel dt_b;    // optional analytic d/dt kernels
    NoiseKernel dt_kappa;
    DriftKernel dx_b, du_b;             // optional; needed for first variation / MP
    NoiseKernel dx_kappa, du_kappa;
    DriftKernel dtdx_b, dtdu_b;         // optional Volterra-memory derivatives
    NoiseKernel dtdx_kappa, dtdu_kappa;
    bool convolution_free = false;       // both kernels independent of the first t
    bool noise_convolution_free = false; // dt kappa identically 0 (drift may remember)
};

// Admissible control: predictable (evaluated on left-endpoint information),
// values clamped to the closed interval [lo, hi].
struct ControlPolicy {
    std::function<double(std::size_t step, double t, double x, double lamB, double lamH)> rule;
    double lo = 0.0;
    double hi = 1.0;

    static ControlPolicy constant(double v, double lo = 0.0, double hi = 1.0);
    static ControlPolicy deterministic(std::function<double(double t)> f, double lo, double hi);
    static ControlPolicy deterministic_steps(std::vector<double> u, double lo, double hi);
    static ControlPolicy feedback(
        std::function<double(double t, double x, double lamB, double lamH)> f, double lo,
        double hi);
    // base control bumped by a per-step perturbation (u + eps*beta)
    static ControlPolicy perturbed(const ControlPolicy& base, std::vector<double> beta,
                                   double eps);

    double value(std::size_t step, double t, double x, double lamB, double lamH) const;
};

struct StatePath {
    std::vector<double> x; // grid points
    std::vector<double> u; // steps (left endpoints)
};

struct SolveOptions {
    double blowup_guard = 1e12;
    double fd_step_fraction = 0.1; // h = fraction * dt for d/dt fallback
    bool allow_fd_dt = true;       // false turns a missing d/dt kernel into an error
};

StatePath solve_direct(const VolterraModel& model, const ControlPolicy& policy,
                       const RatePath& rate, const NoisePath& noise, const TimeGrid& grid,
                       const MarkGrid& marks, std::size_t path_index = 0,
                       const SolveOptions& opts = {});

std::vector<StatePath> solve_direct(const VolterraModel& model, const ControlPolicy& policy,
                                    const PathEnsemble& paths, const SolveOptions& opts = {});

struct PicardDiagnostics {
    std::vector<double> diffs; // ensemble L2 of sup-grid successive differences
    bool converged = false;
    std::size_t iterations = 0;
};

struct PicardResult {
    std::vector<StatePath> states;
    PicardDiagnostics diag;
};

PicardResult solve_picard(const VolterraModel& model, const ControlPolicy& policy,
                          const PathEnsemble& paths, std::size_t n_iter, double tol,
                          const SolveOptions& opts = {});

StatePath solve_differential(const VolterraModel& model, const ControlPolicy& policy,
                             const RatePath& rate, const NoisePath& noise, const TimeGrid& grid,
                             const MarkGrid& marks, std::size_t path_index = 0,
                             const SolveOptions& opts = {});

std::vector<StatePath> solve_differential(const VolterraModel& model, const ControlPolicy& policy,
                                          const PathEnsemble& paths,
                                          const SolveOptions& opts = {});

} // namespace tcv
