#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace xlf {

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Items are claimed
/// dynamically; callers that need deterministic output write into slot i and
/// merge afterwards. The first exception thrown by any item is rethrown after
/// all threads join.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn)
{
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto run = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error)
                    error = std::current_exception();
                next = n;
            }
        }
    };
    std::vector<std::jthread> pool;
    const std::size_t count = std::min(workers, n);
    pool.reserve(count);
    for (std::size_t t = 0; t < count; ++t)
        pool.emplace_back(run);
    pool.clear();
    if (error)
        std::rethrow_exception(error);
}

}  // namespace xlf
