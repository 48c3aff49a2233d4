#pragma once

#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace corwa {

/// Worker count: CORWA_THREADS if set and positive, else the hardware count.
inline int thread_count() {
    if (const char* env = std::getenv("CORWA_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(k) for k in [0, n). Results must be written to per-index slots;
/// the first exception thrown by any task is rethrown.
inline void parallel_for(int n, const std::function<void(int)>& fn) {
    const int workers = std::min(thread_count(), n);
    if (workers <= 1) {
        for (int k = 0; k < n; ++k) fn(k);
        return;
    }
    std::mutex mu;
    int next = 0;
    std::exception_ptr error;
    auto run = [&] {
        for (;;) {
            int k;
            {
                std::lock_guard<std::mutex> lock(mu);
                if (next >= n || error) return;
                k = next++;
            }
            try {
                fn(k);
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (!error) error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(run);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace corwa
