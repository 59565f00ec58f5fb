#pragma once

#include <cstddef>
#include <span>
#include <string>

// Reduction kernels for the Monte Carlo inner loops. A scalar reference
// implementation always exists; an AVX2 variant is selected at runtime when
// the CPU supports it. Set TCV_SIMD=scalar in the environment to force the
// reference path. Within one process the active backend never changes, so
// repeated runs reduce in the same order.

namespace tcv::simd {

struct Backend {
    double (*dot)(const double*, const double*, std::size_t);
    double (*sum)(const double*, std::size_t);
    // sum of a[i]*b[i]*c[i]
    double (*triple_dot)(const double*, const double*, const double*, std::size_t);
    // sum of (a[i]-b[i])^2
    double (*sq_diff_sum)(const double*, const double*, std::size_t);
    double (*max_abs_diff)(const double*, const double*, std::size_t);
    // y[i] += alpha*x[i]
    void (*axpy)(double, const double*, double*, std::size_t);
    const char* name;
};

const Backend& scalar_backend();
const Backend& active_backend();
bool avx2_available();

inline double dot(std::span<const double> a, std::span<const double> b) {
    return active_backend().dot(a.data(), b.data(), a.size());
}
inline double sum(std::span<const double> a) {
    return active_backend().sum(a.data(), a.size());
}
inline double triple_dot(std::span<const double> a, std::span<const double> b,
                         std::span<const double> c) {
    return active_backend().triple_dot(a.data(), b.data(), c.data(), a.size());
}
inline double sq_diff_sum(std::span<const double> a, std::span<const double> b) {
    return active_backend().sq_diff_sum(a.data(), b.data(), a.size());
}
inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    return active_backend().max_abs_diff(a.data(), b.data(), a.size());
}
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    active_backend().axpy(alpha, x.data(), y.data(), x.size());
}

inline double mean(std::span<const double> a) {
    return a.empty() ? 0.0 : sum(a) / static_cast<double>(a.size());
}

// Sample variance (divides by n-1).
double variance(std::span<const double> a);

// Mean and standard error of the mean.
struct MeanSE {
    double mean;
    double se;
};
MeanSE mean_se(std::span<const double> a);

} // namespace tcv::simd
