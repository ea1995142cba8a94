#pragma once
#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace sal {

// Worker count for batch-parallel sections; SAL_NUM_WORKERS overrides.
inline int num_workers() {
    static const int n = [] {
        if (const char* env = std::getenv("SAL_NUM_WORKERS")) {
            const int v = std::atoi(env);
            if (v >= 1) return v;
        }
        const unsigned hc = std::thread::hardware_concurrency();
        return static_cast<int>(std::clamp(hc, 1u, 4u));
    }();
    return n;
}

// Contiguous static partition; every index is processed by exactly one worker
// and writes only its own slots, so results do not depend on the worker count.
inline void parallel_for(int n, const std::function<void(int)>& fn) {
    const int workers = std::min(num_workers(), n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(workers));
    const int chunk = (n + workers - 1) / workers;
    for (int t = 0; t < workers; ++t) {
        const int lo = t * chunk, hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        threads.emplace_back([lo, hi, &fn] {
            for (int i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : threads) th.join();
}

} // namespace sal
