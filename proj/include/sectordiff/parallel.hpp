#pragma once

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace sectordiff {

inline int thread_count() {
    if (const char* s = std::getenv("SECTORDIFF_THREADS")) {
        int n = std::atoi(s);
        if (n > 0) return n;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc ? int(hc) : 1;
}

// Static partition of [0, n). Work items must write disjoint outputs; the
// partition is a pure function of (n, thread count), so results never depend
// on scheduling. Reductions belong after the join, in index order.
template <typename Fn>
void parallel_for(int n, Fn&& fn) {
    const int nt = std::min(thread_count(), n);
    if (nt <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(size_t(nt));
    for (int t = 0; t < nt; ++t) {
        pool.emplace_back([&fn, t, nt, n] {
            for (int i = t; i < n; i += nt) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace sectordiff
