#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace hsnct {

namespace detail {
inline std::atomic<unsigned>& thread_limit()
{
    static std::atomic<unsigned> limit{0};
    return limit;
}
} // namespace detail

/// Caps internal parallelism. 0 restores the hardware default.
inline void set_thread_count(unsigned n) { detail::thread_limit().store(n); }

inline unsigned thread_count()
{
    unsigned n = detail::thread_limit().load();
    if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
    return n;
}

/// Runs fn(i) for i in [begin, end) over contiguous static chunks.
///
/// Each index is visited exactly once, so callers that write only to
/// index-owned outputs get results independent of the thread count.
template <class Fn>
void parallel_for(std::size_t begin, std::size_t end, Fn&& fn)
{
    if (end <= begin) return;
    const std::size_t n = end - begin;
    const std::size_t workers = std::min<std::size_t>(thread_count(), n);
    if (workers <= 1) {
        for (std::size_t i = begin; i < end; ++i) fn(i);
        return;
    }

    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t lo = begin + w * chunk;
        const std::size_t hi = std::min(end, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&, lo, hi] {
            try {
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

} // namespace hsnct
