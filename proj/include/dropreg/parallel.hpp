// SPDX-License-Identifier: Apache-2.0
//---------------------------------------------------------------------------//
//! \file dropreg/parallel.hpp
//! Static-partition parallel loop; callers keep results index-addressed so
//! output never depends on the thread count.
//---------------------------------------------------------------------------//
#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace dropreg
{

//! Process-wide default worker count (the CLI's --threads).
inline std::atomic<int>& default_threads_storage()
{
    static std::atomic<int> threads{1};
    return threads;
}

inline int default_threads()
{
    return default_threads_storage().load();
}

inline void set_default_threads(int n)
{
    default_threads_storage().store(std::max(1, n));
}

/*!
 * Call fn(i) for every i in [0, n) using up to \c threads workers.
 *
 * The first exception thrown by any worker is rethrown after all workers
 * have joined.
 */
template<class F>
void parallel_for(std::size_t n, int threads, F&& fn)
{
    auto workers = static_cast<std::size_t>(std::max(1, threads));
    workers = std::min(workers, n);
    if (workers <= 1)
    {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
    {
        pool.emplace_back([&, w] {
            std::size_t begin = n * w / workers;
            std::size_t end = n * (w + 1) / workers;
            try
            {
                for (std::size_t i = begin; i < end; ++i)
                    fn(i);
            }
            catch (...)
            {
                std::lock_guard lock(error_mutex);
                if (!error)
                    error = std::current_exception();
            }
        });
    }
    for (auto& t : pool)
        t.join();
    if (error)
        std::rethrow_exception(error);
}

}  // namespace dropreg
