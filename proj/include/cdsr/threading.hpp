#pragma once

#include <functional>
#include <thread>
#include <vector>

namespace cdsr {

/// Static-partition parallel loop. Results must be written to disjoint,
/// index-addressed slots so the outcome is identical for any worker count;
/// reductions happen afterwards in index order. workers <= 1 runs inline.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t nw = std::min<std::size_t>(workers, n);
    std::vector<std::thread> threads;
    threads.reserve(nw);
    for (std::size_t w = 0; w < nw; ++w) {
        const std::size_t lo = n * w / nw;
        const std::size_t hi = n * (w + 1) / nw;
        threads.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : threads) t.join();
}

}  // namespace cdsr
