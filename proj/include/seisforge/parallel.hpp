#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace seisforge {

/// Worker cap: SEISFORGE_THREADS when set, hardware concurrency otherwise.
inline unsigned worker_count() {
    if (const char* env = std::getenv("SEISFORGE_THREADS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n >= 1) return static_cast<unsigned>(n);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? hw : 1;
}

/// Parallel map over [0, n): the body must be a pure function of the index
/// (results land in pre-sized slots), so the schedule cannot change outputs.
template <class F>
void parallel_for(std::size_t n, F&& body) {
    const unsigned workers = worker_count();
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    const unsigned used = static_cast<unsigned>(std::min<std::size_t>(workers, n));
    for (unsigned w = 0; w < used; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += used) body(i);
        });
    }
    for (auto& t : pool) t.join();
}

} // namespace seisforge
