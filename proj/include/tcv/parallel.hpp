#pragma once

#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <thread>
#include <vector>

// Blocked parallel map over path indices. Work is split into fixed-size
// blocks independent of the thread count and each block writes only its own
// slots, so outputs are identical for any TCV_THREADS setting.

namespace tcv {

inline unsigned worker_count() {
    if (const char* env = std::getenv("TCV_THREADS")) {
        const long v = std::atol(env);
        if (v >= 1) return static_cast<unsigned>(v);
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? hc : 1;
}

template <typename Fn>
void parallel_for_paths(std::size_t n, Fn&& fn, std::size_t block = 1024) {
    const unsigned workers = worker_count();
    if (workers <= 1 || n <= block) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t n_blocks = (n + block - 1) / block;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::atomic<std::size_t> next{0};
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t b = next.fetch_add(1);
                if (b >= n_blocks) return;
                const std::size_t lo = b * block;
                const std::size_t hi = lo + block < n ? lo + block : n;
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            }
        });
    }
    for (auto& t : pool) t.join();
}

} // namespace tcv
