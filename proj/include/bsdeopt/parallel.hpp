#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <thread>
#include <vector>

namespace bsdeopt::exec {

inline std::atomic<int>& thread_cap() {
    static std::atomic<int> cap{1};
    return cap;
}

inline void set_max_threads(int n) { thread_cap().store(n < 1 ? 1 : n); }
inline int max_threads() { return thread_cap().load(); }

/// Runs fn(i) for i in [0, n). Per-index work must be independent; callers
/// keep reductions index-ordered and outside this helper so results are
/// identical for every thread count.
template <class Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
    const int threads = std::min<std::int64_t>(max_threads(), n);
    if (threads <= 1 || n < 1024) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    const std::int64_t chunk = (n + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
        const std::int64_t lo = t * chunk;
        const std::int64_t hi = std::min<std::int64_t>(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::int64_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace bsdeopt::exec
