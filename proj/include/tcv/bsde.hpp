#pragma once

#include <functional>
#include <span>
#include <vector>

#include "tcv/condexp.hpp"
#include "tcv/noise.hpp"

// Backward SDE solver under the enlarged flow via least-squares Monte Carlo:
// p(t) = xi + int_t^T g(s, lambda_s, p, q) ds - int_t^T q dmu.
// q is extracted by covariance regression of the centered one-step-ahead
// value against the normalized noise increments; p by regressing the
// driver-augmented target. Girsanov reweighting utilities live here too.

namespace tcv {

struct QView {
    double q0 = 0.0;
    std::span<const double> qz{};
};

using BsdeDriver = std::function<double(std::size_t path, std::size_t step, double t,
                                        double lamB, double lamH, double p, const QView& q)>;

struct BsdeSpec {
    std::vector<double> terminal; // xi per path
    BsdeDriver driver;            // null means g = 0
    bool driver_on_raw_target = false; // evaluate g at the raw one-step value instead
                                       // of the regression-smoothed one
};

struct SliceDiagnostics {
    double r2_p = 0.0;
    double cond_p = 1.0;
    std::size_t floor_hits = 0;
    double q_norm = 0.0; // mean of q0^2 dLamB + sum_j qz^2 nu_j dLamH
};

struct BsdeSolution {
    std::size_t n_paths = 0;
    std::size_t n_steps = 0;
    std::size_t n_marks = 0;
    std::vector<double> p;     // (steps+1) x paths, slice-major
    std::vector<double> q0;    // steps x paths
    std::vector<double> qz;    // steps x paths x marks
    std::vector<double> p_raw; // optional raw regression targets, same shape as p
    std::vector<SliceDiagnostics> diag; // per step

    double p_at(std::size_t step, std::size_t path) const { return p[step * n_paths + path]; }
    double q0_at(std::size_t step, std::size_t path) const { return q0[step * n_paths + path]; }
    double qz_at(std::size_t step, std::size_t path, std::size_t mark) const {
        return qz[(step * n_paths + path) * n_marks + mark];
    }
    std::span<const double> p_slice(std::size_t step) const {
        return {p.data() + step * n_paths, n_paths};
    }
};

struct BsdeOptions {
    FeatureOptions features{}; // G-flow
    FitOptions fit{};
    double denom_floor = 1e-12;
    bool store_raw = false;
    // extra per-slice feature columns (e.g. the forward state), slice-major
    const std::vector<std::vector<double>>* extra_slices = nullptr;
    std::string extra_name = "X_t";
};

BsdeSolution solve_backward(const BsdeSpec& spec, const PathEnsemble& paths,
                            const BsdeOptions& opts = {});

// Girsanov density M(t) = exp(int sigma dB - 1/2 int sigma^2 lamB ds) on the
// grid, left-endpoint sums, one row per path.
std::vector<std::vector<double>> girsanov_density(const std::function<double(double)>& sigma,
                                                  const PathEnsemble& paths);

// dB^sigma_i = dB_i - sigma(t_i) lamB(t_i) dt_i
std::vector<std::vector<double>> drift_adjusted_increments(
    const std::function<double(double)>& sigma, const PathEnsemble& paths);

} // namespace tcv
