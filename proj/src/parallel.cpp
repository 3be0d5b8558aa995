#include "cpgd/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace cpgd {

std::size_t worker_count() {
    if (const char* env = std::getenv("CPGD_THREADS")) {
        try {
            long v = std::stol(env);
            if (v > 0) return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
            // fall through to the hardware default
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t begin, std::size_t end, const std::function<void(std::size_t)>& fn,
                  std::size_t workers) {
    if (end <= begin) return;
    const std::size_t n = end - begin;
    if (workers == 0) workers = worker_count();
    workers = std::min(workers, n);
    if (workers <= 1) {
        for (std::size_t i = begin; i < end; ++i) fn(i);
        return;
    }

    std::atomic<std::size_t> next{begin};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto run = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= end) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next.store(end);
                return;
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run);
    run();
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace cpgd
