#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <span>
#include <thread>
#include <type_traits>
#include <vector>

namespace triplet_debias {

inline std::size_t default_workers() { return std::max<std::size_t>(1, std::thread::hardware_concurrency()); }

/**
 * Applies fn to every item on up to `workers` threads. Output order matches
 * input order. If any call throws, the exception of the lowest failing index
 * is rethrown after all workers finish, so failures are scheduling-independent.
 */
template <typename In, typename F>
auto parallel_map(std::span<const In> items, std::size_t workers, F&& fn)
    -> std::vector<std::invoke_result_t<F&, const In&>> {
    using Out = std::invoke_result_t<F&, const In&>;
    const std::size_t n = items.size();
    std::vector<Out> results(n);
    std::vector<std::exception_ptr> errors(n);
    workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));

    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                results[i] = fn(items[i]);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (workers == 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return results;
}

} // namespace triplet_debias
