#pragma once
// Static-partition parallel for. Each worker owns a contiguous index range,
// so any per-worker accumulation can be reduced in a fixed order afterwards
// and results stay identical for every worker count.

#include <cstddef>
#include <thread>
#include <vector>

namespace conmax {

// fn(i) is called exactly once for every i in [0, n).
template <class Fn>
void parallel_for(size_t n, int workers, Fn&& fn) {
    if (workers <= 1 || n <= 1) {
        for (size_t i = 0; i < n; i++) fn(i);
        return;
    }
    size_t w = (size_t)workers < n ? (size_t)workers : n;
    std::vector<std::thread> pool;
    pool.reserve(w);
    for (size_t t = 0; t < w; t++) {
        size_t lo = n * t / w;
        size_t hi = n * (t + 1) / w;
        pool.emplace_back([lo, hi, &fn] {
            for (size_t i = lo; i < hi; i++) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

// Variant exposing the worker slot, for per-worker scratch buffers.
// Slot assignment is static: index i always lands in the same slot for a
// given (n, workers), and slot s covers [n*s/w, n*(s+1)/w).
template <class Fn>
void parallel_for_slots(size_t n, int workers, Fn&& fn) {
    size_t w = workers <= 1 ? 1 : ((size_t)workers < n ? (size_t)workers : n);
    if (n == 0) return;
    if (w <= 1) {
        for (size_t i = 0; i < n; i++) fn(i, (size_t)0);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(w);
    for (size_t t = 0; t < w; t++) {
        size_t lo = n * t / w;
        size_t hi = n * (t + 1) / w;
        pool.emplace_back([lo, hi, t, &fn] {
            for (size_t i = lo; i < hi; i++) fn(i, t);
        });
    }
    for (auto& th : pool) th.join();
}

inline size_t n_slots(size_t n, int workers) {
    if (n == 0) return 0;
    size_t w = workers <= 1 ? 1 : ((size_t)workers < n ? (size_t)workers : n);
    return w;
}

}  // namespace conmax
