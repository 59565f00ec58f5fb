#include "tcv/simd.hpp"

#include <cmath>
#include <cstdlib>

namespace tcv::simd {

#if defined(TCV_HAVE_AVX2_TU)
const Backend& detail_avx2_backend(); // defined in simd_avx2.cpp
#endif

namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double sum_scalar(const double* a, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i];
    return acc;
}

double triple_dot_scalar(const double* a, const double* b, const double* c, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i] * c[i];
    return acc;
}

double sq_diff_sum_scalar(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

double max_abs_diff_scalar(const double* a, const double* b, std::size_t n) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = std::fabs(a[i] - b[i]);
        if (d > m) m = d;
    }
    return m;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

const Backend kScalar = {
    dot_scalar, sum_scalar, triple_dot_scalar, sq_diff_sum_scalar,
    max_abs_diff_scalar, axpy_scalar, "scalar",
};

const Backend* select_backend() {
    if (const char* env = std::getenv("TCV_SIMD")) {
        if (std::string(env) == "scalar") return &kScalar;
    }
#if defined(TCV_HAVE_AVX2_TU)
    if (avx2_available()) return &detail_avx2_backend();
#endif
    return &kScalar;
}

} // namespace

bool avx2_available() {
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2") != 0;
#else
    return false;
#endif
}

const Backend& scalar_backend() { return kScalar; }

const Backend& active_backend() {
    static const Backend* chosen = select_backend();
    return *chosen;
}

double variance(std::span<const double> a) {
    const std::size_t n = a.size();
    if (n < 2) return 0.0;
    const double m = mean(a);
    double acc = 0.0;
    for (double v : a) {
        const double d = v - m;
        acc += d * d;
    }
    return acc / static_cast<double>(n - 1);
}

MeanSE mean_se(std::span<const double> a) {
    const double m = mean(a);
    const double v = variance(a);
    const double se = a.size() > 1 ? std::sqrt(v / static_cast<double>(a.size())) : 0.0;
    return {m, se};
}

} // namespace tcv::simd
