#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace avatar_forge {

// Splits [0, n) into `workers` contiguous bands and runs fn(begin, end, worker)
// on each. Band boundaries depend only on (n, workers), so per-worker partial
// results reduced in worker order are deterministic.
template <class Fn>
void parallel_bands(int n, int workers, Fn&& fn) {
    workers = std::max(1, std::min(workers, n));
    if (workers == 1) {
        fn(0, n, 0);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        const int begin = static_cast<int>(static_cast<long long>(n) * w / workers);
        const int end = static_cast<int>(static_cast<long long>(n) * (w + 1) / workers);
        pool.emplace_back([&, begin, end, w] {
            try {
                fn(begin, end, w);
            } catch (...) {
                errors[static_cast<size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline int band_count(int n, int workers) { return std::max(1, std::min(workers, n)); }

}  // namespace avatar_forge
